#pragma once

// End-to-end run orchestration.  A run directory accumulates stage outputs
// (cohort/, prep/, model/, reports/) plus a manifest recording a content hash
// for every artifact a stage produced, so later stages can refuse to run on
// missing or silently modified inputs.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "readmit/eval.hpp"
#include "readmit/synthgen.hpp"
#include "readmit/trainer.hpp"

namespace readmit {

// --- configuration -----------------------------------------------------------------

struct PipelineConfig {
    CohortConfig cohort;
    EncoderConfig encoder;   // vocab_size is derived from the fitted vocabulary
    TrainConfig pretrain;
    TrainConfig finetune;
    int l_max = kDefaultLMax;
    size_t vocab_cap = kDefaultVocabCap;
    int vocab_min_count = kDefaultMinCount;
    int quantizer_bins = 10;
    uint64_t split_seed = 1;             // one beneficiary split shared by all stages
    std::string finetune_init = "pretrained"; // or "scratch"
    double drift_shift_strength = 0.2;
    double drift_threshold = 0.03;
    std::vector<int64_t> scale_sizes = {10000, 50000, 100000};
};

// key=value lines; '#' starts a comment; section prefixes like cohort.seed,
// encoder.d_model, pretrain.lr, finetune.max_epochs, prep.l_max, drift.*,
// scale.sizes.  Unknown keys are rejected.
PipelineConfig load_pipeline_config(const std::string &path);
PipelineConfig pipeline_config_from_pairs(
    const std::vector<std::pair<std::string, std::string>> &pairs);

// One seed to steer the whole run: cohort generation, splits, and both
// training loops.
void apply_seed_override(PipelineConfig &cfg, uint64_t seed);

std::vector<int64_t> parse_sizes(const std::string &csv);

// --- manifest -----------------------------------------------------------------------

uint64_t file_content_hash(const std::string &path); // MissingArtifact when absent

class RunManifest {
  public:
    static RunManifest load_or_empty(const std::string &run_dir);
    void save(const std::string &run_dir) const;

    // hash and remember the given run-relative files as this stage's outputs
    void record_stage(const std::string &stage, const std::string &run_dir,
                      const std::vector<std::string> &rel_paths);

    // MissingArtifact when the stage never ran or a recorded file is gone;
    // HashMismatch when a recorded file changed on disk
    void require_stage(const std::string &stage, const std::string &run_dir) const;

    bool has_stage(const std::string &stage) const { return stages_.count(stage) > 0; }
    const std::map<std::string, std::string> &stage_files(const std::string &stage) const;

  private:
    std::map<std::string, std::map<std::string, std::string>> stages_;
};

// --- stages --------------------------------------------------------------------------

void run_synth(const std::string &run_dir, const PipelineConfig &cfg);
void run_prep(const std::string &run_dir, const PipelineConfig &cfg);
void run_pretrain(const std::string &run_dir, const PipelineConfig &cfg);
void run_finetune(const std::string &run_dir, const PipelineConfig &cfg);
EvalReport run_eval(const std::string &run_dir, const PipelineConfig &cfg);
std::vector<ScalingRow> run_scale(const std::string &run_dir, const PipelineConfig &cfg);

struct DriftReport {
    double baseline_auc = 0.0;
    double shifted_auc = 0.0;
    double drop = 0.0;
    double threshold = 0.0;
    double shift_strength = 0.0;
    bool flagged = false;
};
DriftReport run_drift(const std::string &run_dir, const PipelineConfig &cfg);

void run_explain(const std::string &run_dir, const PipelineConfig &cfg,
                 const std::string &beneficiary);

struct AuditOutput {
    BiasComparison race;   // base model vs demographics-masked retrain
    BiasComparison gender;
    std::vector<VariableShare> attention; // top-3 attention families over test samples
    TrainResult masked_retrain;
};
AuditOutput run_audit(const std::string &run_dir, const PipelineConfig &cfg);

// --- shared artifact access (used by stages, bindings, and tests) -------------------

struct PrepArtifacts {
    Vocabulary vocab;
    QuantizerSpec quantizers;
    std::vector<LabeledSample> samples;
    SampleSplits splits;
};
PrepArtifacts load_prep_artifacts(const std::string &run_dir, const PipelineConfig &cfg);

} // namespace readmit
