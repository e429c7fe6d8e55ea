#include "readmit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <set>

#include "readmit/errors.hpp"
#include "readmit/eval.hpp"

namespace readmit {

// --- splits --------------------------------------------------------------------

Split split_of(const std::string &beneficiary_id, uint64_t seed) {
    uint64_t st = fnv1a64(beneficiary_id) ^ seed;
    uint64_t h = splitmix64(st);
    double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < 0.8) return Split::train;
    if (u < 0.9) return Split::validation;
    return Split::test;
}

SampleSplits split_samples(const std::vector<LabeledSample> &samples, uint64_t seed) {
    SampleSplits s;
    std::set<std::string> beneficiaries;
    for (size_t i = 0; i < samples.size(); ++i) {
        beneficiaries.insert(samples[i].beneficiary_id);
        switch (split_of(samples[i].beneficiary_id, seed)) {
        case Split::train: s.train.push_back(i); break;
        case Split::validation: s.validation.push_back(i); break;
        case Split::test: s.test.push_back(i); break;
        }
    }
    if (s.train.empty() || s.validation.empty() || s.test.empty())
        throw TooFewBeneficiaries(
            std::to_string(beneficiaries.size()) + " beneficiaries across " +
            std::to_string(samples.size()) + " samples split into " +
            std::to_string(s.train.size()) + "/" + std::to_string(s.validation.size()) + "/" +
            std::to_string(s.test.size()) + "; every split needs at least one sample");
    return s;
}

std::vector<int> labels_of(const std::vector<LabeledSample> &samples,
                           const std::vector<size_t> &subset) {
    std::vector<int> out;
    out.reserve(subset.size());
    for (size_t i : subset) out.push_back(samples[i].label);
    return out;
}

// --- masked corruption ----------------------------------------------------------

CorruptionScheme corruption_from_string(const std::string &name) {
    if (name == "standard") return CorruptionScheme::standard;
    if (name == "mask_or_random") return CorruptionScheme::mask_or_random;
    throw InvalidConfig("unknown corruption scheme '" + name + "'");
}

MaskedSequence mask_tokens(const std::vector<int32_t> &tokens, double fraction,
                           CorruptionScheme scheme, int32_t vocab_size, Rng &rng) {
    std::vector<int32_t> candidates;
    for (size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] >= kNumSpecials) candidates.push_back(static_cast<int32_t>(i));
    if (candidates.empty())
        throw NothingToMask("sequence of " + std::to_string(tokens.size()) +
                            " tokens has no maskable content");

    size_t n_mask = static_cast<size_t>(
        std::lround(fraction * static_cast<double>(candidates.size())));
    n_mask = std::min(std::max<size_t>(n_mask, 1), candidates.size());

    rng.shuffle(candidates);
    candidates.resize(n_mask);
    std::sort(candidates.begin(), candidates.end());

    MaskedSequence out;
    out.input_ids = tokens;
    for (int32_t pos : candidates) {
        out.positions.push_back(pos);
        out.targets.push_back(tokens[pos]);
        double u = rng.uniform();
        auto random_token = [&]() {
            return kNumSpecials +
                   static_cast<int32_t>(rng.below(static_cast<uint64_t>(vocab_size - kNumSpecials)));
        };
        if (scheme == CorruptionScheme::standard) {
            if (u < 0.8) out.input_ids[pos] = kMaskId;
            else if (u < 0.9) out.input_ids[pos] = random_token();
            // else: keep the original token; the model must still predict it
        } else {
            if (u < 0.8) out.input_ids[pos] = kMaskId;
            else out.input_ids[pos] = random_token();
        }
    }
    return out;
}

// --- optimization -----------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidConfig("batch_size must be positive");
    if (lr <= 0) throw InvalidConfig("learning rate must be positive");
    if (weight_decay < 0) throw InvalidConfig("weight decay cannot be negative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw InvalidConfig("Adam betas must lie in [0, 1)");
    if (adam_eps <= 0) throw InvalidConfig("Adam epsilon must be positive");
    if (warmup_fraction < 0 || warmup_fraction >= 1)
        throw InvalidConfig("warmup fraction must lie in [0, 1)");
    if (max_epochs < 1) throw InvalidConfig("max_epochs must be positive");
    if (patience < 1) throw InvalidConfig("patience must be positive");
    if (mask_fraction <= 0 || mask_fraction >= 1)
        throw InvalidConfig("mask fraction must lie in (0, 1)");
}

void AdamW::step(EncoderState &state, const EncoderBoundT<float> &bound, TapeT<float> &tape,
                 double lr_now) {
    if (m_.empty()) {
        m_.resize(state.params.size());
        v_.resize(state.params.size());
        for (size_t i = 0; i < state.params.size(); ++i) {
            m_[i].assign(static_cast<size_t>(state.params[i].second.size()), 0.0);
            v_[i].assign(static_cast<size_t>(state.params[i].second.size()), 0.0);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < state.params.size(); ++i) {
        std::vector<float> g = tape.grad(bound.watched[i].second);
        float *p = state.params[i].second.data();
        for (size_t j = 0; j < g.size(); ++j) {
            double grad = g[j];
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * grad;
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * grad * grad;
            double mhat = m_[i][j] / bc1;
            double vhat = v_[i][j] / bc2;
            double update = mhat / (std::sqrt(vhat) + cfg_.adam_eps) +
                            cfg_.weight_decay * static_cast<double>(p[j]);
            p[j] = static_cast<float>(static_cast<double>(p[j]) - lr_now * update);
        }
    }
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr, double warmup_fraction) {
    if (total_steps < 1) throw InvalidConfig("schedule needs at least one step");
    if (step < 0 || step >= total_steps)
        throw InvalidConfig("schedule step " + std::to_string(step) + " outside " +
                            std::to_string(total_steps) + " total");
    int64_t warmup = static_cast<int64_t>(std::llround(warmup_fraction *
                                                       static_cast<double>(total_steps)));
    if (warmup > 0 && step < warmup)
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    int64_t tail = std::max<int64_t>(1, total_steps - warmup);
    double progress = static_cast<double>(step - warmup) / static_cast<double>(tail);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// --- training loops ----------------------------------------------------------------

namespace {

std::vector<std::vector<float>> snapshot_params(const EncoderState &state) {
    std::vector<std::vector<float>> snap;
    snap.reserve(state.params.size());
    for (const auto &[name, t] : state.params)
        snap.emplace_back(t.data(), t.data() + t.size());
    return snap;
}

void restore_params(EncoderState &state, const std::vector<std::vector<float>> &snap) {
    for (size_t i = 0; i < state.params.size(); ++i)
        std::memcpy(state.params[i].second.data(), snap[i].data(),
                    snap[i].size() * sizeof(float));
}

// shared epoch/batch/early-stopping skeleton for both objectives
TrainResult run_training(
    EncoderState &state, const std::vector<size_t> &train_indices, const TrainConfig &cfg,
    const std::function<TensorT<float>(TapeT<float> &, const EncoderBoundT<float> &, size_t,
                                       Rng &)> &item_loss,
    const std::function<double()> &val_metric) {
    cfg.validate();
    state.config.validate();
    if (train_indices.empty()) throw TooFewBeneficiaries("no training samples");

    const Rng root(cfg.seed);
    const int64_t batches_per_epoch =
        (static_cast<int64_t>(train_indices.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = batches_per_epoch * cfg.max_epochs;

    AdamW optimizer(cfg);
    TrainResult result;
    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_params = snapshot_params(state);
    int bad_epochs = 0;
    int64_t global_step = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<size_t> order = train_indices;
        Rng order_rng = root.derive("order").derive(static_cast<uint64_t>(epoch));
        order_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (int64_t b = 0; b < batches_per_epoch; ++b) {
            size_t lo = static_cast<size_t>(b) * cfg.batch_size;
            size_t hi = std::min(order.size(), lo + cfg.batch_size);
            const float inv_n = 1.0f / static_cast<float>(hi - lo);

            TapeT<float> tape;
            EncoderBoundT<float> bound = bind(&tape, state);
            TensorT<float> batch_loss = TensorT<float>::scalar(0.0f);
            for (size_t k = lo; k < hi; ++k) {
                // per-sample stream keyed by (seed, epoch, original index):
                // identical regardless of how batches tile the epoch
                Rng srng = root.derive("sample").derive(static_cast<uint64_t>(epoch))
                               .derive(static_cast<uint64_t>(order[k]));
                TensorT<float> item = item_loss(tape, bound, order[k], srng);
                batch_loss = add_scalars(&tape, batch_loss, 1.0f, item, inv_n);
            }
            epoch_loss += static_cast<double>(batch_loss.item()) * static_cast<double>(hi - lo);
            tape.backward(batch_loss);
            optimizer.step(state, bound, tape, cosine_lr(global_step, total_steps, cfg.lr,
                                                         cfg.warmup_fraction));
            ++global_step;
        }
        epoch_loss /= static_cast<double>(train_indices.size());

        double metric = val_metric();
        result.history.push_back({epoch, epoch_loss, metric});
        result.epochs_run = epoch + 1;
        if (metric > best) {
            best = metric;
            result.best_epoch = epoch;
            result.best_val_metric = metric;
            best_params = snapshot_params(state);
            bad_epochs = 0;
        } else if (++bad_epochs >= cfg.patience) {
            break;
        }
    }
    restore_params(state, best_params);
    return result;
}

} // namespace

double masked_accuracy(EncoderState &state, const std::vector<LabeledSample> &samples,
                       const std::vector<size_t> &subset, const TrainConfig &cfg) {
    const Rng root(cfg.seed);
    EncoderBoundT<float> bound = bind(static_cast<TapeT<float> *>(nullptr), state);
    int64_t correct = 0, total = 0;
    for (size_t idx : subset) {
        const LabeledSample &s = samples[idx];
        Rng rng = root.derive("valmask").derive(static_cast<uint64_t>(idx));
        MaskedSequence ms =
            mask_tokens(s.tokens, cfg.mask_fraction, cfg.corruption, state.config.vocab_size, rng);
        auto enc = encode(static_cast<TapeT<float> *>(nullptr), bound, ms.input_ids,
                          s.segment_ids, s.time_bucket_ids, rng, /*training=*/false);
        TensorT<float> logits = vocabulary_logits(static_cast<TapeT<float> *>(nullptr), bound,
                                                  enc.hidden, ms.positions);
        for (int r = 0; r < logits.rows(); ++r) {
            int32_t argmax = 0;
            float best_v = logits(r, 0);
            for (int c = 1; c < logits.cols(); ++c)
                if (logits(r, c) > best_v) {
                    best_v = logits(r, c);
                    argmax = c;
                }
            correct += (argmax == ms.targets[static_cast<size_t>(r)]);
            ++total;
        }
    }
    if (total == 0) throw NothingToMask("no masked positions in the evaluation subset");
    return static_cast<double>(correct) / static_cast<double>(total);
}

double majority_masked_accuracy(const std::vector<LabeledSample> &samples,
                                const std::vector<size_t> &subset, int32_t vocab_size,
                                const TrainConfig &cfg) {
    const Rng root(cfg.seed);
    std::vector<int64_t> counts(static_cast<size_t>(vocab_size), 0);
    int64_t total = 0;
    for (size_t idx : subset) {
        Rng rng = root.derive("valmask").derive(static_cast<uint64_t>(idx));
        MaskedSequence ms = mask_tokens(samples[idx].tokens, cfg.mask_fraction, cfg.corruption,
                                        vocab_size, rng);
        for (int32_t t : ms.targets) {
            ++counts[static_cast<size_t>(t)];
            ++total;
        }
    }
    if (total == 0) throw NothingToMask("no masked positions in the evaluation subset");
    int64_t top = *std::max_element(counts.begin(), counts.end());
    return static_cast<double>(top) / static_cast<double>(total);
}

TrainResult pretrain_masked(EncoderState &state, const std::vector<LabeledSample> &samples,
                            const SampleSplits &splits, const TrainConfig &cfg) {
    auto item_loss = [&](TapeT<float> &tape, const EncoderBoundT<float> &bound, size_t idx,
                         Rng &srng) {
        const LabeledSample &s = samples[idx];
        MaskedSequence ms = mask_tokens(s.tokens, cfg.mask_fraction, cfg.corruption,
                                        state.config.vocab_size, srng);
        auto enc = encode(&tape, bound, ms.input_ids, s.segment_ids, s.time_bucket_ids, srng,
                          /*training=*/true);
        TensorT<float> logits = vocabulary_logits(&tape, bound, enc.hidden, ms.positions);
        return cross_entropy(&tape, logits, ms.targets);
    };
    auto val_metric = [&]() { return masked_accuracy(state, samples, splits.validation, cfg); };
    return run_training(state, splits.train, cfg, item_loss, val_metric);
}

TrainResult finetune_classifier(EncoderState &state, const std::vector<LabeledSample> &samples,
                                const SampleSplits &splits, const TrainConfig &cfg) {
    auto item_loss = [&](TapeT<float> &tape, const EncoderBoundT<float> &bound, size_t idx,
                         Rng &srng) {
        const LabeledSample &s = samples[idx];
        auto enc = encode(&tape, bound, s.tokens, s.segment_ids, s.time_bucket_ids, srng,
                          /*training=*/true);
        TensorT<float> logit = classification_logit(&tape, bound, enc.hidden);
        return binary_cross_entropy(&tape, logit, {s.label});
    };
    auto val_metric = [&]() {
        std::vector<double> scores = predict_scores(state, samples, splits.validation);
        return roc_auc(labels_of(samples, splits.validation), scores);
    };
    return run_training(state, splits.train, cfg, item_loss, val_metric);
}

std::vector<double> predict_scores(EncoderState &state,
                                   const std::vector<LabeledSample> &samples,
                                   const std::vector<size_t> &subset) {
    EncoderBoundT<float> bound = bind(static_cast<TapeT<float> *>(nullptr), state);
    Rng rng(0); // unused: dropout is inactive outside training
    std::vector<double> scores;
    scores.reserve(subset.size());
    for (size_t idx : subset) {
        const LabeledSample &s = samples[idx];
        auto enc = encode(static_cast<TapeT<float> *>(nullptr), bound, s.tokens, s.segment_ids,
                          s.time_bucket_ids, rng, /*training=*/false);
        float logit = classification_logit(static_cast<TapeT<float> *>(nullptr), bound,
                                           enc.hidden)(0, 0);
        scores.push_back(sigmoid_value(static_cast<double>(logit)));
    }
    return scores;
}

} // namespace readmit
