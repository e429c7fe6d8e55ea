#pragma once

// Deterministic single-threaded training: beneficiary-level splits, masked
// token corruption, AdamW with cosine decay, and early-stopped loops for
// masked-token pretraining and readmission fine-tuning.

#include <cstdint>
#include <string>
#include <vector>

#include "readmit/encoder.hpp"
#include "readmit/vocab.hpp"

namespace readmit {

// --- splits --------------------------------------------------------------------

enum class Split { train = 0, validation = 1, test = 2 };

// Stable hash split: every sample of a beneficiary lands in the same split,
// and membership depends only on (beneficiary_id, seed).
Split split_of(const std::string &beneficiary_id, uint64_t seed);

struct SampleSplits {
    std::vector<size_t> train, validation, test; // indices into the sample vector
};

// Throws TooFewBeneficiaries when any split comes out empty.
SampleSplits split_samples(const std::vector<LabeledSample> &samples, uint64_t seed);

// --- masked corruption ----------------------------------------------------------

enum class CorruptionScheme {
    standard,       // of the masked picks: 80% [MASK], 10% random token, 10% unchanged
    mask_or_random, // 80% [MASK], 20% random token
};
CorruptionScheme corruption_from_string(const std::string &name);

struct MaskedSequence {
    std::vector<int32_t> input_ids; // corrupted copy of the sample tokens
    std::vector<int32_t> positions; // ascending positions that were selected
    std::vector<int32_t> targets;   // original token at each selected position
};

// Selects round(fraction * #maskable) positions (at least one) among
// non-special tokens.  Throws NothingToMask when a sequence has no maskable
// content.
MaskedSequence mask_tokens(const std::vector<int32_t> &tokens, double fraction,
                           CorruptionScheme scheme, int32_t vocab_size, Rng &rng);

// --- optimization -----------------------------------------------------------------

struct TrainConfig {
    int batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double warmup_fraction = 0.1; // fraction of total steps spent in linear warmup
    int max_epochs = 20;
    int patience = 3; // stop after this many epochs without validation improvement
    double mask_fraction = 0.15;
    CorruptionScheme corruption = CorruptionScheme::standard;
    uint64_t seed = 1;

    void validate() const;
};

// Decoupled weight decay Adam with bias correction; moment accumulators are
// kept in double so update order never bleeds float rounding across runs.
class AdamW {
  public:
    AdamW(const TrainConfig &cfg) : cfg_(cfg) {}
    void step(EncoderState &state, const EncoderBoundT<float> &bound, TapeT<float> &tape,
              double lr_now);

  private:
    TrainConfig cfg_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Linear warmup into a half-cosine decay; step counts from 0.
double cosine_lr(int64_t step, int64_t total_steps, double base_lr, double warmup_fraction);

// --- training loops ----------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0; // masked accuracy or AUC depending on the loop
};

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = -1;
    double best_val_metric = 0.0;
    std::vector<EpochStats> history;
};

// Masked-token pretraining on the train split, early-stopped on validation
// masked accuracy.  The state is left at the best validation epoch.
TrainResult pretrain_masked(EncoderState &state, const std::vector<LabeledSample> &samples,
                            const SampleSplits &splits, const TrainConfig &cfg);

// Readmission fine-tuning, early-stopped on validation AUC.
TrainResult finetune_classifier(EncoderState &state, const std::vector<LabeledSample> &samples,
                                const SampleSplits &splits, const TrainConfig &cfg);

// Readmission probabilities for the given sample indices (no dropout, no tape).
std::vector<double> predict_scores(EncoderState &state,
                                   const std::vector<LabeledSample> &samples,
                                   const std::vector<size_t> &subset);

// Masked accuracy on a subset under the fixed validation masking, plus the
// always-predict-the-most-frequent-target floor it is compared against.
double masked_accuracy(EncoderState &state, const std::vector<LabeledSample> &samples,
                       const std::vector<size_t> &subset, const TrainConfig &cfg);
double majority_masked_accuracy(const std::vector<LabeledSample> &samples,
                                const std::vector<size_t> &subset, int32_t vocab_size,
                                const TrainConfig &cfg);

std::vector<int> labels_of(const std::vector<LabeledSample> &samples,
                           const std::vector<size_t> &subset);

} // namespace readmit
