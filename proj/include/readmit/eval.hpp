#pragma once

// Evaluation metrics and reporting.  Everything here is a pure function of
// predictions (labels, scores, tags, attention weights) so each number in a
// report can be recomputed independently from the same inputs.

#include <string>
#include <vector>

#include "readmit/encoder.hpp"
#include "readmit/vocab.hpp"

namespace readmit {

// Area under the ROC curve via the rank-sum statistic with midranks for tied
// scores.  Throws SingleClassInput when labels are all 0 or all 1.
double roc_auc(const std::vector<int> &labels, const std::vector<double> &scores);

// A decision threshold with the sensitivity/specificity it achieves.
struct OperatingPoint {
    double threshold = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double gmean = 0.0;
};

// Picks the threshold maximizing the geometric mean of sensitivity and
// specificity.  Candidates are 0, 1, and the midpoints between adjacent
// distinct scores; predictions are positive when score > threshold; ties on
// the objective resolve to the smallest threshold.
OperatingPoint select_threshold(const std::vector<int> &labels,
                                const std::vector<double> &scores);

struct ClassificationMetrics {
    double auc = 0.0;
    double threshold = 0.0;
    double sensitivity = 0.0; // recall on the positive class
    double specificity = 0.0;
    double gmean = 0.0;
    double accuracy = 0.0;
    double positive_rate = 0.0; // fraction of true positives in the data
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    int64_t n = 0;
};

// All counting metrics at a fixed threshold, plus AUC when both classes are
// present (otherwise AUC is NaN and the caller decides how to report it).
ClassificationMetrics classification_metrics(const std::vector<int> &labels,
                                             const std::vector<double> &scores, double threshold);

// Threshold chosen on validation scores only, then applied unchanged to test.
struct EvalReport {
    OperatingPoint operating_point; // selected on validation
    ClassificationMetrics validation;
    ClassificationMetrics test;
};
EvalReport evaluate_split_scores(const std::vector<int> &val_labels,
                                 const std::vector<double> &val_scores,
                                 const std::vector<int> &test_labels,
                                 const std::vector<double> &test_scores);

// --- subgroup audit ---------------------------------------------------------

struct SubgroupMetrics {
    std::string group;
    ClassificationMetrics metrics;
};

struct BiasAuditReport {
    std::string attribute;
    double threshold = 0.0;
    ClassificationMetrics overall;
    std::vector<SubgroupMetrics> groups; // sorted by group name
    double sensitivity_range = 0.0;      // max minus min across groups
    double specificity_range = 0.0;
};

// Per-subgroup metrics at a shared threshold.  Throws MissingSubgroupTags when
// tags are absent or any tag is empty; subgroup AUC is NaN when a group has a
// single class.
BiasAuditReport bias_audit(const std::string &attribute, const std::vector<std::string> &tags,
                           const std::vector<int> &labels, const std::vector<double> &scores,
                           double threshold);

// Per-group metric movement when the demographics-masked retrain replaces the
// base model (masked minus base; NaN whenever either side is NaN).
struct SubgroupDelta {
    std::string group;
    double auc = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double gmean = 0.0;
};

struct BiasComparison {
    BiasAuditReport base;
    BiasAuditReport masked; // model retrained with race/gender tokens set to [UNK]
    std::vector<SubgroupDelta> deltas;
    SubgroupDelta overall; // group field left as "overall"
};

// Aligns the two reports by group name (they must cover the same groups) and
// fills in the masked-minus-base deltas.
BiasComparison compare_audits(const BiasAuditReport &base, const BiasAuditReport &masked);

// --- attention explanations ---------------------------------------------------

struct VariableAttention {
    std::string variable;
    double weight = 0.0;
};

struct AttentionExplanation {
    std::vector<VariableAttention> variables;     // descending weight
    std::vector<std::string> tokens;              // decoded input tokens
    std::vector<double> token_weights;            // per-position CLS attention
};

// Aggregates final-layer, head-averaged attention out of the [CLS] position
// into variable families.  PAD positions carry exactly zero weight.
template <typename S>
AttentionExplanation explain_attention(const EncoderOutputT<S> &out,
                                       const std::vector<int32_t> &tokens,
                                       const Vocabulary &vocab);

// Share of samples in which a variable family ranks among the top_k
// highest-attention families of its own explanation.  Input: one
// descending-sorted variable list per sample (as produced by
// explain_attention); the "special" family ([CLS]/[SEP]/[PAD]/[MASK]) is
// ignored.  Output is sorted by descending share, ties by name.
struct VariableShare {
    std::string variable;
    double share = 0.0;
};
constexpr int kAuditTopK = 3;
std::vector<VariableShare> top_variable_shares(
    const std::vector<std::vector<VariableAttention>> &per_sample, int top_k);

// --- report files ---------------------------------------------------------------

void write_eval_report_json(const std::string &path, const EvalReport &report);
void write_bias_report_json(const std::string &path, const BiasAuditReport &report);
void write_bias_comparison_json(const std::string &path, const BiasComparison &cmp);
void write_variable_share_json(const std::string &path, const std::vector<VariableShare> &shares,
                               int top_k, size_t n_samples);
void write_attention_html(const std::string &path, const std::string &beneficiary,
                          const AttentionExplanation &ex);
void write_attention_json(const std::string &path, const std::string &beneficiary,
                          const AttentionExplanation &ex);

struct ScalingRow {
    int64_t events = 0;
    double auc = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double gmean = 0.0;
};
void write_scaling_csv(const std::string &path, const std::vector<ScalingRow> &rows);
std::vector<ScalingRow> read_scaling_csv(const std::string &path);

} // namespace readmit
