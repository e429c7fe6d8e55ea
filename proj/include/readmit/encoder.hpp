#pragma once

// A small bidirectional transformer over claim-token sequences.  Templated on
// the scalar type so the full network can be gradient-checked in double
// precision while production training runs in float.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "readmit/errors.hpp"
#include "readmit/rng.hpp"
#include "readmit/tensor.hpp"
#include "readmit/vocab.hpp"

namespace readmit {

struct EncoderConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int d_ff = 0; // 0 means 4 * d_model
    int max_len = kDefaultLMax;
    int vocab_size = 0;
    int n_segments = kNumSegments;
    int n_time_buckets = kNumTimeBuckets;
    double dropout = 0.1;

    int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }

    void validate() const {
        if (vocab_size <= kNumSpecials) throw InvalidConfig("vocab_size must exceed the specials");
        if (n_layers < 1) throw InvalidConfig("n_layers must be positive");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw InvalidConfig("d_model " + std::to_string(d_model) +
                                " must divide evenly into " + std::to_string(n_heads) + " heads");
        if (max_len < 4) throw InvalidConfig("max_len too small for any assembled sequence");
        if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfig("dropout must be in [0, 1)");
    }

    std::map<std::string, std::string> to_map() const {
        return {{"n_layers", std::to_string(n_layers)},
                {"n_heads", std::to_string(n_heads)},
                {"d_model", std::to_string(d_model)},
                {"d_ff", std::to_string(d_ff)},
                {"max_len", std::to_string(max_len)},
                {"vocab_size", std::to_string(vocab_size)},
                {"n_segments", std::to_string(n_segments)},
                {"n_time_buckets", std::to_string(n_time_buckets)},
                {"dropout", std::to_string(dropout)}};
    }
    static EncoderConfig from_map(const std::map<std::string, std::string> &m) {
        EncoderConfig c;
        auto get = [&](const char *key) -> const std::string & {
            auto it = m.find(key);
            if (it == m.end()) throw InvalidConfig(std::string("missing encoder field ") + key);
            return it->second;
        };
        c.n_layers = std::stoi(get("n_layers"));
        c.n_heads = std::stoi(get("n_heads"));
        c.d_model = std::stoi(get("d_model"));
        c.d_ff = std::stoi(get("d_ff"));
        c.max_len = std::stoi(get("max_len"));
        c.vocab_size = std::stoi(get("vocab_size"));
        c.n_segments = std::stoi(get("n_segments"));
        c.n_time_buckets = std::stoi(get("n_time_buckets"));
        c.dropout = std::stod(get("dropout"));
        return c;
    }
};

// Ordered, name-addressable parameter registry.
template <typename S> struct EncoderStateT {
    EncoderConfig config;
    uint64_t vocab_hash = 0; // hash of the vocabulary the embeddings were built for
    std::vector<std::pair<std::string, TensorT<S>>> params;

    TensorT<S> &param(const std::string &name) {
        for (auto &[n, t] : params)
            if (n == name) return t;
        throw GradMissing("unknown parameter '" + name + "'");
    }
    const TensorT<S> &param(const std::string &name) const {
        for (const auto &[n, t] : params)
            if (n == name) return t;
        throw GradMissing("unknown parameter '" + name + "'");
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto &[name, t] : params) n += t.size();
        return n;
    }

    static EncoderStateT init(const EncoderConfig &cfg, uint64_t seed) {
        cfg.validate();
        EncoderStateT s;
        s.config = cfg;
        Rng root(seed);
        auto normal = [&](const std::string &name, int r, int c) {
            TensorT<S> t(r, c);
            Rng rng = root.derive(name); // per-parameter stream: order-independent
            for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.normal() * 0.02);
            s.params.emplace_back(name, std::move(t));
        };
        auto zeros = [&](const std::string &name, int r, int c) {
            s.params.emplace_back(name, TensorT<S>(r, c));
        };
        auto ones = [&](const std::string &name, int r, int c) {
            TensorT<S> t(r, c);
            for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = S(1);
            s.params.emplace_back(name, std::move(t));
        };

        const int d = cfg.d_model, ff = cfg.ff_dim();
        normal("tok_embed", cfg.vocab_size, d);
        normal("pos_embed", cfg.max_len, d);
        normal("seg_embed", cfg.n_segments, d);
        normal("time_embed", cfg.n_time_buckets + 1, d);
        ones("embed_ln_gain", 1, d);
        zeros("embed_ln_bias", 1, d);
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            for (const char *w : {"wq", "wk", "wv", "wo"}) normal(p + "attn." + w, d, d);
            for (const char *b : {"bq", "bk", "bv", "bo"}) zeros(p + "attn." + b, 1, d);
            ones(p + "attn.ln_gain", 1, d);
            zeros(p + "attn.ln_bias", 1, d);
            normal(p + "ffn.w1", d, ff);
            zeros(p + "ffn.b1", 1, ff);
            normal(p + "ffn.w2", ff, d);
            zeros(p + "ffn.b2", 1, d);
            ones(p + "ffn.ln_gain", 1, d);
            zeros(p + "ffn.ln_bias", 1, d);
        }
        zeros("vocab_bias", 1, cfg.vocab_size); // bias of the tied vocabulary head
        normal("cls_w", d, 1);
        zeros("cls_b", 1, 1);
        return s;
    }
};

// Parameters bound to a tape for one forward/backward pass.  When the tape is
// null the raw tensors pass through (pure inference).
template <typename S> struct EncoderBoundT {
    EncoderConfig config;
    std::vector<std::pair<std::string, TensorT<S>>> watched;

    const TensorT<S> &operator[](const std::string &name) const {
        for (const auto &[n, t] : watched)
            if (n == name) return t;
        throw GradMissing("unknown parameter '" + name + "'");
    }
};

template <typename S> EncoderBoundT<S> bind(TapeT<S> *tape, EncoderStateT<S> &state) {
    EncoderBoundT<S> b;
    b.config = state.config;
    b.watched.reserve(state.params.size());
    for (auto &[name, t] : state.params)
        b.watched.emplace_back(name, tape ? tape->watch(t) : t);
    return b;
}

template <typename S> struct EncoderOutputT {
    TensorT<S> hidden;                               // [L, d_model]
    std::vector<std::vector<TensorT<S>>> attention;  // [layer][head] -> [L, L]
};

// runs the encoder over one sequence; PAD columns are masked out of every
// attention row with a large negative additive term, which makes their
// post-softmax probability exactly zero
template <typename S>
EncoderOutputT<S> encode(TapeT<S> *tape, const EncoderBoundT<S> &m,
                         const std::vector<int32_t> &tokens,
                         const std::vector<int32_t> &segments,
                         const std::vector<int32_t> &time_buckets, Rng &dropout_rng,
                         bool training) {
    const EncoderConfig &cfg = m.config;
    const int L = static_cast<int>(tokens.size());
    if (L == 0) throw ShapeMismatch("cannot encode an empty sequence");
    if (L > cfg.max_len)
        throw PositionOutOfRange("sequence length " + std::to_string(L) + " exceeds max_len " +
                                 std::to_string(cfg.max_len));
    if (segments.size() != tokens.size() || time_buckets.size() != tokens.size())
        throw ShapeMismatch("tokens, segments and time buckets must have equal length");
    for (int32_t s : segments)
        if (s < 0 || s >= cfg.n_segments)
            throw IdOutOfRange("segment id " + std::to_string(s));
    for (int32_t t : time_buckets)
        if (t < 0 || t > cfg.n_time_buckets)
            throw IdOutOfRange("time bucket id " + std::to_string(t));

    std::vector<int32_t> positions(L);
    for (int i = 0; i < L; ++i) positions[i] = i;

    TensorT<S> x = add(tape, add(tape, embedding_lookup(tape, m["tok_embed"], tokens),
                                 embedding_lookup(tape, m["pos_embed"], positions)),
                       add(tape, embedding_lookup(tape, m["seg_embed"], segments),
                           embedding_lookup(tape, m["time_embed"], time_buckets)));
    x = layer_norm(tape, x, m["embed_ln_gain"], m["embed_ln_bias"]);
    x = dropout(tape, x, cfg.dropout, dropout_rng, training);

    // additive column mask: -1e9 on PAD key positions
    TensorT<S> mask(L, L);
    bool any_pad = false;
    for (int c = 0; c < L; ++c)
        if (tokens[c] == kPadId) {
            any_pad = true;
            for (int r = 0; r < L; ++r) mask(r, c) = S(-1e9);
        }

    const int d = cfg.d_model, dh = d / cfg.n_heads;
    const S inv_sqrt_dh = S(1.0 / std::sqrt(static_cast<double>(dh)));
    EncoderOutputT<S> out;
    out.attention.resize(cfg.n_layers);

    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        TensorT<S> q = add_row(tape, matmul(tape, x, m[p + "attn.wq"]), m[p + "attn.bq"]);
        TensorT<S> k = add_row(tape, matmul(tape, x, m[p + "attn.wk"]), m[p + "attn.bk"]);
        TensorT<S> v = add_row(tape, matmul(tape, x, m[p + "attn.wv"]), m[p + "attn.bv"]);

        std::vector<TensorT<S>> heads;
        for (int h = 0; h < cfg.n_heads; ++h) {
            TensorT<S> qh = slice_cols(tape, q, h * dh, (h + 1) * dh);
            TensorT<S> kh = slice_cols(tape, k, h * dh, (h + 1) * dh);
            TensorT<S> vh = slice_cols(tape, v, h * dh, (h + 1) * dh);
            TensorT<S> scores = scale(tape, matmul_nt(tape, qh, kh), inv_sqrt_dh);
            TensorT<S> probs = softmax_rows(tape, scores, any_pad ? &mask : nullptr);
            out.attention[l].push_back(probs);
            heads.push_back(matmul(tape, probs, vh));
        }
        TensorT<S> ctx = concat_cols(tape, heads);
        TensorT<S> attn_out = add_row(tape, matmul(tape, ctx, m[p + "attn.wo"]), m[p + "attn.bo"]);
        attn_out = dropout(tape, attn_out, cfg.dropout, dropout_rng, training);
        x = layer_norm(tape, add(tape, x, attn_out), m[p + "attn.ln_gain"], m[p + "attn.ln_bias"]);

        TensorT<S> h1 = gelu(tape, add_row(tape, matmul(tape, x, m[p + "ffn.w1"]), m[p + "ffn.b1"]));
        TensorT<S> h2 = add_row(tape, matmul(tape, h1, m[p + "ffn.w2"]), m[p + "ffn.b2"]);
        h2 = dropout(tape, h2, cfg.dropout, dropout_rng, training);
        x = layer_norm(tape, add(tape, x, h2), m[p + "ffn.ln_gain"], m[p + "ffn.ln_bias"]);
    }
    out.hidden = x;
    return out;
}

// logits over the vocabulary at selected positions; the projection is tied to
// the token embedding, with a separate per-token bias
template <typename S>
TensorT<S> vocabulary_logits(TapeT<S> *tape, const EncoderBoundT<S> &m, const TensorT<S> &hidden,
                             const std::vector<int32_t> &positions) {
    TensorT<S> at = take_rows(tape, hidden, positions);
    return add_row(tape, matmul_nt(tape, at, m["tok_embed"]), m["vocab_bias"]);
}

// single readmission logit from the aggregate [CLS] position
template <typename S>
TensorT<S> classification_logit(TapeT<S> *tape, const EncoderBoundT<S> &m,
                                const TensorT<S> &hidden) {
    TensorT<S> cls = take_rows(tape, hidden, std::vector<int32_t>{0});
    return add_row(tape, matmul(tape, cls, m["cls_w"]), m["cls_b"]);
}

using EncoderState = EncoderStateT<float>;
using EncoderBound = EncoderBoundT<float>;
using EncoderOutput = EncoderOutputT<float>;

} // namespace readmit
