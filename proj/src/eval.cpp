#include "readmit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "readmit/csv.hpp"
#include "readmit/errors.hpp"

namespace readmit {

namespace {

void require_paired(const std::vector<int> &labels, const std::vector<double> &scores) {
    if (labels.size() != scores.size())
        throw ShapeMismatch(std::to_string(labels.size()) + " labels for " +
                            std::to_string(scores.size()) + " scores");
    if (labels.empty()) throw ShapeMismatch("no predictions to evaluate");
}

std::pair<int64_t, int64_t> class_counts(const std::vector<int> &labels) {
    int64_t pos = 0;
    for (int y : labels) pos += (y != 0);
    return {pos, static_cast<int64_t>(labels.size()) - pos};
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace

double roc_auc(const std::vector<int> &labels, const std::vector<double> &scores) {
    require_paired(labels, scores);
    auto [pos, neg] = class_counts(labels);
    if (pos == 0 || neg == 0)
        throw SingleClassInput("AUC needs both classes; got " + std::to_string(pos) +
                               " positives out of " + std::to_string(labels.size()));

    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // midranks over tied scores, then the Mann-Whitney statistic
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) pos_rank_sum += midrank;
        i = j + 1;
    }
    double u = pos_rank_sum - 0.5 * static_cast<double>(pos) * (static_cast<double>(pos) + 1.0);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

OperatingPoint select_threshold(const std::vector<int> &labels,
                                const std::vector<double> &scores) {
    require_paired(labels, scores);
    auto [pos, neg] = class_counts(labels);
    if (pos == 0 || neg == 0)
        throw SingleClassInput("threshold selection needs both classes present");

    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // suffix counts of positives/negatives in score order let every candidate
    // threshold be scored with one binary search
    const size_t n = order.size();
    std::vector<int64_t> pos_suffix(n + 1, 0), neg_suffix(n + 1, 0);
    std::vector<double> sorted_scores(n);
    for (size_t k = 0; k < n; ++k) sorted_scores[k] = scores[order[k]];
    for (size_t k = n; k-- > 0;) {
        pos_suffix[k] = pos_suffix[k + 1] + (labels[order[k]] != 0);
        neg_suffix[k] = neg_suffix[k + 1] + (labels[order[k]] == 0);
    }

    std::vector<double> candidates;
    candidates.push_back(0.0);
    for (size_t k = 0; k + 1 < n; ++k)
        if (sorted_scores[k] != sorted_scores[k + 1])
            candidates.push_back(0.5 * (sorted_scores[k] + sorted_scores[k + 1]));
    candidates.push_back(1.0);
    std::sort(candidates.begin(), candidates.end());

    OperatingPoint best;
    best.gmean = -1.0;
    for (double alpha : candidates) {
        size_t first_above = static_cast<size_t>(
            std::upper_bound(sorted_scores.begin(), sorted_scores.end(), alpha) -
            sorted_scores.begin());
        double tp = static_cast<double>(pos_suffix[first_above]);
        double fp = static_cast<double>(neg_suffix[first_above]);
        double sens = tp / static_cast<double>(pos);
        double spec = (static_cast<double>(neg) - fp) / static_cast<double>(neg);
        double g = std::sqrt(sens * spec);
        if (g > best.gmean) { // strict: ties keep the smallest threshold
            best.threshold = alpha;
            best.sensitivity = sens;
            best.specificity = spec;
            best.gmean = g;
        }
    }
    return best;
}

ClassificationMetrics classification_metrics(const std::vector<int> &labels,
                                             const std::vector<double> &scores, double threshold) {
    require_paired(labels, scores);
    ClassificationMetrics m;
    m.threshold = threshold;
    m.n = static_cast<int64_t>(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        bool predicted = scores[i] > threshold;
        bool actual = labels[i] != 0;
        m.tp += (predicted && actual);
        m.fp += (predicted && !actual);
        m.tn += (!predicted && !actual);
        m.fn += (!predicted && actual);
    }
    int64_t pos = m.tp + m.fn, neg = m.fp + m.tn;
    m.positive_rate = static_cast<double>(pos) / static_cast<double>(m.n);
    m.sensitivity = pos ? static_cast<double>(m.tp) / static_cast<double>(pos)
                        : std::numeric_limits<double>::quiet_NaN();
    m.specificity = neg ? static_cast<double>(m.tn) / static_cast<double>(neg)
                        : std::numeric_limits<double>::quiet_NaN();
    m.gmean = std::sqrt(m.sensitivity * m.specificity);
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.n);
    m.auc = (pos && neg) ? roc_auc(labels, scores) : std::numeric_limits<double>::quiet_NaN();
    return m;
}

EvalReport evaluate_split_scores(const std::vector<int> &val_labels,
                                 const std::vector<double> &val_scores,
                                 const std::vector<int> &test_labels,
                                 const std::vector<double> &test_scores) {
    EvalReport r;
    r.operating_point = select_threshold(val_labels, val_scores);
    r.validation = classification_metrics(val_labels, val_scores, r.operating_point.threshold);
    r.test = classification_metrics(test_labels, test_scores, r.operating_point.threshold);
    return r;
}

BiasAuditReport bias_audit(const std::string &attribute, const std::vector<std::string> &tags,
                           const std::vector<int> &labels, const std::vector<double> &scores,
                           double threshold) {
    require_paired(labels, scores);
    if (tags.empty())
        throw MissingSubgroupTags("no '" + attribute + "' tags supplied for the audit");
    if (tags.size() != labels.size())
        throw ShapeMismatch(std::to_string(tags.size()) + " tags for " +
                            std::to_string(labels.size()) + " predictions");
    for (size_t i = 0; i < tags.size(); ++i)
        if (tags[i].empty())
            throw MissingSubgroupTags("prediction " + std::to_string(i) + " has no '" +
                                      attribute + "' tag");

    BiasAuditReport report;
    report.attribute = attribute;
    report.threshold = threshold;
    report.overall = classification_metrics(labels, scores, threshold);

    std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> by_group;
    for (size_t i = 0; i < tags.size(); ++i) {
        by_group[tags[i]].first.push_back(labels[i]);
        by_group[tags[i]].second.push_back(scores[i]);
    }
    double sens_lo = 1.0, sens_hi = 0.0, spec_lo = 1.0, spec_hi = 0.0;
    for (const auto &[group, data] : by_group) {
        SubgroupMetrics sg;
        sg.group = group;
        sg.metrics = classification_metrics(data.first, data.second, threshold);
        if (std::isfinite(sg.metrics.sensitivity)) {
            sens_lo = std::min(sens_lo, sg.metrics.sensitivity);
            sens_hi = std::max(sens_hi, sg.metrics.sensitivity);
        }
        if (std::isfinite(sg.metrics.specificity)) {
            spec_lo = std::min(spec_lo, sg.metrics.specificity);
            spec_hi = std::max(spec_hi, sg.metrics.specificity);
        }
        report.groups.push_back(std::move(sg));
    }
    report.sensitivity_range = std::max(0.0, sens_hi - sens_lo);
    report.specificity_range = std::max(0.0, spec_hi - spec_lo);
    return report;
}

BiasComparison compare_audits(const BiasAuditReport &base, const BiasAuditReport &masked) {
    if (base.attribute != masked.attribute)
        throw ShapeMismatch("comparing audits of '" + base.attribute + "' and '" +
                            masked.attribute + "'");
    std::map<std::string, const ClassificationMetrics *> masked_by_group;
    for (const auto &g : masked.groups) masked_by_group[g.group] = &g.metrics;
    if (masked_by_group.size() != base.groups.size())
        throw ShapeMismatch("audit group sets differ for '" + base.attribute + "'");

    auto delta_of = [](const std::string &name, const ClassificationMetrics &b,
                       const ClassificationMetrics &m) {
        SubgroupDelta d;
        d.group = name;
        d.auc = m.auc - b.auc;
        d.sensitivity = m.sensitivity - b.sensitivity;
        d.specificity = m.specificity - b.specificity;
        d.gmean = m.gmean - b.gmean;
        return d;
    };

    BiasComparison cmp;
    cmp.base = base;
    cmp.masked = masked;
    for (const auto &g : base.groups) {
        auto it = masked_by_group.find(g.group);
        if (it == masked_by_group.end())
            throw ShapeMismatch("group '" + g.group + "' missing from the masked audit");
        cmp.deltas.push_back(delta_of(g.group, g.metrics, *it->second));
    }
    cmp.overall = delta_of("overall", base.overall, masked.overall);
    return cmp;
}

std::vector<VariableShare> top_variable_shares(
    const std::vector<std::vector<VariableAttention>> &per_sample, int top_k) {
    if (top_k < 1) throw InvalidConfig("top_k must be at least 1");
    std::map<std::string, size_t> counts;
    for (const auto &variables : per_sample) {
        int taken = 0;
        for (const auto &v : variables) {
            if (taken == top_k) break;
            if (v.variable == "special") continue;
            ++counts[v.variable];
            ++taken;
        }
    }
    std::vector<VariableShare> out;
    const double n = per_sample.empty() ? 1.0 : static_cast<double>(per_sample.size());
    for (const auto &[variable, count] : counts)
        out.push_back({variable, static_cast<double>(count) / n});
    std::sort(out.begin(), out.end(), [](const VariableShare &a, const VariableShare &b) {
        if (a.share != b.share) return a.share > b.share;
        return a.variable < b.variable;
    });
    return out;
}

template <typename S>
AttentionExplanation explain_attention(const EncoderOutputT<S> &out,
                                       const std::vector<int32_t> &tokens,
                                       const Vocabulary &vocab) {
    if (out.attention.empty() || out.attention.back().empty())
        throw ShapeMismatch("encoder output carries no attention maps");
    const auto &final_layer = out.attention.back();
    const int L = final_layer.front().cols();
    if (static_cast<size_t>(L) != tokens.size())
        throw ShapeMismatch("attention width differs from token count");

    AttentionExplanation ex;
    ex.token_weights.assign(tokens.size(), 0.0);
    for (const auto &head : final_layer)
        for (int c = 0; c < L; ++c) ex.token_weights[c] += head(0, c);
    for (double &w : ex.token_weights) w /= static_cast<double>(final_layer.size());

    std::map<std::string, double> by_variable;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const std::string &tok = vocab.token(tokens[i]);
        ex.tokens.push_back(tok);
        by_variable[token_variable(tok)] += ex.token_weights[i];
    }
    for (const auto &[variable, weight] : by_variable)
        ex.variables.push_back({variable, weight});
    std::sort(ex.variables.begin(), ex.variables.end(), [](const auto &a, const auto &b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.variable < b.variable;
    });
    return ex;
}

template AttentionExplanation explain_attention<float>(const EncoderOutputT<float> &,
                                                       const std::vector<int32_t> &,
                                                       const Vocabulary &);
template AttentionExplanation explain_attention<double>(const EncoderOutputT<double> &,
                                                        const std::vector<int32_t> &,
                                                        const Vocabulary &);

// --- report files ---------------------------------------------------------------

namespace {

nlohmann::json metrics_json(const ClassificationMetrics &m) {
    return {{"auc", m.auc},
            {"threshold", m.threshold},
            {"sensitivity", m.sensitivity},
            {"specificity", m.specificity},
            {"gmean", m.gmean},
            {"accuracy", m.accuracy},
            {"positive_rate", m.positive_rate},
            {"tp", m.tp},
            {"fp", m.fp},
            {"tn", m.tn},
            {"fn", m.fn},
            {"n", m.n}};
}

void dump_json(const std::string &path, const nlohmann::json &j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw MissingArtifact("cannot open " + path + " for writing");
    f << j.dump(2) << '\n';
}

std::string html_escape(const std::string &s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

} // namespace

void write_eval_report_json(const std::string &path, const EvalReport &report) {
    nlohmann::json j{{"operating_point",
                      {{"threshold", report.operating_point.threshold},
                       {"sensitivity", report.operating_point.sensitivity},
                       {"specificity", report.operating_point.specificity},
                       {"gmean", report.operating_point.gmean}}},
                     {"validation", metrics_json(report.validation)},
                     {"test", metrics_json(report.test)}};
    dump_json(path, j);
}

namespace {

nlohmann::json bias_json(const BiasAuditReport &report) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto &g : report.groups)
        groups.push_back({{"group", g.group}, {"metrics", metrics_json(g.metrics)}});
    return {{"attribute", report.attribute},
            {"threshold", report.threshold},
            {"overall", metrics_json(report.overall)},
            {"groups", groups},
            {"sensitivity_range", report.sensitivity_range},
            {"specificity_range", report.specificity_range}};
}

nlohmann::json delta_json(const SubgroupDelta &d) {
    return {{"group", d.group},
            {"auc", d.auc},
            {"sensitivity", d.sensitivity},
            {"specificity", d.specificity},
            {"gmean", d.gmean}};
}

} // namespace

void write_bias_report_json(const std::string &path, const BiasAuditReport &report) {
    dump_json(path, bias_json(report));
}

void write_bias_comparison_json(const std::string &path, const BiasComparison &cmp) {
    nlohmann::json deltas = nlohmann::json::array();
    for (const auto &d : cmp.deltas) deltas.push_back(delta_json(d));
    nlohmann::json j{{"attribute", cmp.base.attribute},
                     {"base", bias_json(cmp.base)},
                     {"masked_retrain", bias_json(cmp.masked)},
                     {"deltas", deltas},
                     {"overall_delta", delta_json(cmp.overall)}};
    dump_json(path, j);
}

void write_variable_share_json(const std::string &path, const std::vector<VariableShare> &shares,
                               int top_k, size_t n_samples) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto &s : shares) rows.push_back({{"variable", s.variable}, {"share", s.share}});
    dump_json(path, nlohmann::json{{"top_k", top_k},
                                   {"n_samples", n_samples},
                                   {"frequencies", rows}});
}

void write_attention_json(const std::string &path, const std::string &beneficiary,
                          const AttentionExplanation &ex) {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto &v : ex.variables) vars.push_back({{"variable", v.variable}, {"weight", v.weight}});
    nlohmann::json toks = nlohmann::json::array();
    for (size_t i = 0; i < ex.tokens.size(); ++i)
        toks.push_back({{"token", ex.tokens[i]}, {"weight", ex.token_weights[i]}});
    dump_json(path, nlohmann::json{{"beneficiary", beneficiary},
                                   {"variables", vars},
                                   {"tokens", toks}});
}

void write_attention_html(const std::string &path, const std::string &beneficiary,
                          const AttentionExplanation &ex) {
    double max_w = 1e-12;
    for (double w : ex.token_weights) max_w = std::max(max_w, w);

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw MissingArtifact("cannot open " + path + " for writing");
    f << "<!doctype html>\n<html><head><meta charset=\"utf-8\">\n"
      << "<title>Attention for " << html_escape(beneficiary) << "</title>\n"
      << "<style>body{font-family:sans-serif;margin:2em;max-width:60em}"
      << ".tok{display:inline-block;margin:2px;padding:3px 6px;border-radius:4px;"
      << "font-family:monospace}</style></head><body>\n"
      << "<h1>Readmission attention &mdash; " << html_escape(beneficiary) << "</h1>\n"
      << "<h2>Most attended variables</h2>\n<ol>\n";
    for (size_t i = 0; i < ex.variables.size() && i < 10; ++i)
        f << "  <li>" << html_escape(ex.variables[i].variable) << " ("
          << fmt(ex.variables[i].weight) << ")</li>\n";
    f << "</ol>\n<h2>Token-level weights</h2>\n<p>\n";
    for (size_t i = 0; i < ex.tokens.size(); ++i) {
        double alpha = ex.token_weights[i] / max_w;
        f << "<span class=\"tok\" style=\"background:rgba(214,69,65," << fmt(0.85 * alpha)
          << ")\" title=\"" << fmt(ex.token_weights[i]) << "\">" << html_escape(ex.tokens[i])
          << "</span>\n";
    }
    f << "</p></body></html>\n";
}

void write_scaling_csv(const std::string &path, const std::vector<ScalingRow> &rows) {
    CsvTable t;
    t.header = {"events", "auc", "sensitivity", "specificity", "gmean"};
    for (const auto &r : rows)
        t.rows.push_back({std::to_string(r.events), fmt(r.auc), fmt(r.sensitivity),
                          fmt(r.specificity), fmt(r.gmean)});
    write_csv(path, t);
}

std::vector<ScalingRow> read_scaling_csv(const std::string &path) {
    CsvTable t = read_csv(path);
    int ce = t.find("events"), ca = t.find("auc"), cs = t.find("sensitivity"),
        cp = t.find("specificity"), cg = t.find("gmean");
    if (ce < 0 || ca < 0 || cs < 0 || cp < 0 || cg < 0)
        throw MissingColumn("scaling table " + path + " lacks a required column");
    std::vector<ScalingRow> rows;
    for (const auto &r : t.rows) {
        ScalingRow row;
        row.events = std::stoll(r[ce]);
        row.auc = std::stod(r[ca]);
        row.sensitivity = std::stod(r[cs]);
        row.specificity = std::stod(r[cp]);
        row.gmean = std::stod(r[cg]);
        rows.push_back(row);
    }
    return rows;
}

} // namespace readmit
