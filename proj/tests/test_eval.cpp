#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unistd.h>

#include "readmit/eval.hpp"
#include "readmit/rng.hpp"

using namespace readmit;

namespace {

// Oracle 1: AUC as the trapezoidal area under the empirical ROC curve.  The
// curve is swept over distinct score values with the >= decision rule; tied
// blocks become diagonal segments whose trapezoids equal the midrank
// correction, so this must agree with the rank-sum implementation to
// round-off.
double trapezoid_auc(const std::vector<int> &labels, const std::vector<double> &scores) {
    std::vector<double> distinct(scores);
    std::sort(distinct.begin(), distinct.end(), std::greater<>());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    double pos = 0, neg = 0;
    for (int y : labels) (y ? pos : neg) += 1;

    double area = 0.0, prev_fpr = 0.0, prev_tpr = 0.0;
    for (double t : distinct) {
        double tp = 0, fp = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (scores[i] >= t) (labels[i] ? tp : fp) += 1;
        }
        double tpr = tp / pos, fpr = fp / neg;
        area += 0.5 * (tpr + prev_tpr) * (fpr - prev_fpr);
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    area += 0.5 * (1.0 + prev_tpr) * (1.0 - prev_fpr);
    return area;
}

// Oracle 2: exhaustive threshold scan on a dense grid
OperatingPoint grid_threshold(const std::vector<int> &labels, const std::vector<double> &scores,
                              int grid = 10000) {
    double pos = 0, neg = 0;
    for (int y : labels) (y ? pos : neg) += 1;
    OperatingPoint best;
    best.gmean = -1;
    for (int g = 0; g <= grid; ++g) {
        double alpha = static_cast<double>(g) / grid;
        double tp = 0, fp = 0;
        for (size_t i = 0; i < labels.size(); ++i)
            if (scores[i] > alpha) (labels[i] ? tp : fp) += 1;
        double sens = tp / pos, spec = (neg - fp) / neg;
        double gm = std::sqrt(sens * spec);
        if (gm > best.gmean) {
            best = {alpha, sens, spec, gm};
        }
    }
    return best;
}

std::pair<std::vector<int>, std::vector<double>> random_case(Rng &rng, int n, bool ties) {
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = rng.bernoulli(0.3) ? 1 : 0;
        double s = rng.uniform();
        if (ties) s = std::round(s * 8.0) / 8.0; // heavy tying
        scores[i] = labels[i] ? std::min(1.0, s + 0.15 * rng.uniform()) : s;
    }
    // guarantee both classes
    labels[0] = 1;
    labels[1] = 0;
    return {labels, scores};
}

std::string temp_path(const char *stem) {
    return std::string("/tmp/readmit_eval_") + stem + "_" + std::to_string(::getpid());
}

} // namespace

TEST_CASE("rank-sum AUC equals trapezoidal ROC area to 1e-9") {
    Rng rng(20);
    for (int trial = 0; trial < 400; ++trial) {
        auto [labels, scores] = random_case(rng, 3 + static_cast<int>(rng.below(120)),
                                            /*ties=*/trial % 2 == 0);
        double a = roc_auc(labels, scores);
        double b = trapezoid_auc(labels, scores);
        CAPTURE(trial);
        CHECK(std::abs(a - b) < 1e-9);
    }
}

TEST_CASE("AUC handles edge patterns") {
    // perfect separation
    CHECK(roc_auc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == doctest::Approx(1.0));
    // inverted
    CHECK(roc_auc({1, 1, 0, 0}, {0.1, 0.2, 0.8, 0.9}) == doctest::Approx(0.0));
    // all scores identical: midranks give exactly one half
    CHECK(roc_auc({0, 1, 0, 1}, {0.5, 0.5, 0.5, 0.5}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(roc_auc({1, 1}, {0.2, 0.3}), SingleClassInput);
    CHECK_THROWS_AS(roc_auc({0, 0}, {0.2, 0.3}), SingleClassInput);
    CHECK_THROWS_AS(roc_auc({0, 1}, {0.2}), ShapeMismatch);
    CHECK_THROWS_AS(roc_auc({}, {}), ShapeMismatch);
}

TEST_CASE("selected threshold beats or matches a 10k-point grid scan") {
    Rng rng(21);
    for (int trial = 0; trial < 120; ++trial) {
        auto [labels, scores] = random_case(rng, 5 + static_cast<int>(rng.below(80)),
                                            /*ties=*/trial % 3 == 0);
        OperatingPoint mine = select_threshold(labels, scores);
        OperatingPoint grid = grid_threshold(labels, scores);
        CAPTURE(trial);
        // candidate midpoints realize every achievable confusion matrix, so
        // the exact optimum can never lose to a grid
        CHECK(mine.gmean >= grid.gmean - 1e-12);
        // and the grid must be able to get arbitrarily close elsewhere
        CHECK(std::abs(mine.gmean - grid.gmean) < 1e-3);
    }
}

TEST_CASE("a 90/80 operating point yields a geometric mean of exactly sqrt(0.72)") {
    std::vector<int> labels;
    std::vector<double> scores;
    for (int i = 0; i < 9; ++i) { labels.push_back(1); scores.push_back(0.8); }
    labels.push_back(1); scores.push_back(0.2);
    for (int i = 0; i < 2; ++i) { labels.push_back(0); scores.push_back(0.8); }
    for (int i = 0; i < 8; ++i) { labels.push_back(0); scores.push_back(0.2); }

    OperatingPoint op = select_threshold(labels, scores);
    CHECK(op.threshold == doctest::Approx(0.5));
    CHECK(op.sensitivity == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(op.specificity == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(op.gmean == doctest::Approx(std::sqrt(0.72)).epsilon(1e-12));
}

TEST_CASE("threshold ties resolve to the smallest candidate") {
    // two thresholds achieve the same confusion matrix; the midpoint below
    // the tied block must win over any larger candidate
    std::vector<int> labels{0, 0, 1, 1};
    std::vector<double> scores{0.1, 0.2, 0.7, 0.9};
    OperatingPoint op = select_threshold(labels, scores);
    // perfect separation is reachable from alpha in (0.2, 0.7); the smallest
    // candidate in that region is the midpoint 0.45
    CHECK(op.gmean == doctest::Approx(1.0));
    CHECK(op.threshold == doctest::Approx(0.45));
}

TEST_CASE("classification metrics recount the confusion matrix") {
    std::vector<int> labels{1, 0, 1, 0, 1, 1, 0, 0, 0, 1};
    std::vector<double> scores{0.9, 0.8, 0.7, 0.3, 0.6, 0.2, 0.1, 0.4, 0.45, 0.55};
    auto m = classification_metrics(labels, scores, 0.5);
    CHECK(m.tp == 4);
    CHECK(m.fp == 1);
    CHECK(m.fn == 1);
    CHECK(m.tn == 4);
    CHECK(m.sensitivity == doctest::Approx(0.8));
    CHECK(m.specificity == doctest::Approx(0.8));
    CHECK(m.accuracy == doctest::Approx(0.8));
    CHECK(m.positive_rate == doctest::Approx(0.5));
    CHECK(m.n == 10);
    CHECK(m.auc == doctest::Approx(roc_auc(labels, scores)));
}

TEST_CASE("validation picks the threshold and test inherits it") {
    std::vector<int> vl{1, 1, 0, 0, 1, 0};
    std::vector<double> vs{0.9, 0.8, 0.3, 0.2, 0.7, 0.4};
    std::vector<int> tl{1, 0, 1, 0};
    std::vector<double> ts{0.85, 0.15, 0.35, 0.45};
    auto r = evaluate_split_scores(vl, vs, tl, ts);
    CHECK(r.validation.threshold == r.operating_point.threshold);
    CHECK(r.test.threshold == r.operating_point.threshold);
    auto manual = classification_metrics(tl, ts, r.operating_point.threshold);
    CHECK(r.test.sensitivity == doctest::Approx(manual.sensitivity));
    CHECK(r.test.auc == doctest::Approx(manual.auc));
}

TEST_CASE("bias audit equals a direct per-group recomputation") {
    Rng rng(22);
    int n = 400;
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    std::vector<std::string> tags(n);
    const char *groups[] = {"white", "black", "hispanic", "other"};
    for (int i = 0; i < n; ++i) {
        labels[i] = rng.bernoulli(0.3) ? 1 : 0;
        scores[i] = rng.uniform();
        tags[i] = groups[rng.below(4)];
    }
    auto report = bias_audit("race", tags, labels, scores, 0.5);
    CHECK(report.groups.size() == 4);
    CHECK(report.overall.n == n);

    for (const auto &g : report.groups) {
        std::vector<int> gl;
        std::vector<double> gs;
        for (int i = 0; i < n; ++i)
            if (tags[i] == g.group) {
                gl.push_back(labels[i]);
                gs.push_back(scores[i]);
            }
        auto manual = classification_metrics(gl, gs, 0.5);
        CHECK(g.metrics.n == manual.n);
        CHECK(g.metrics.tp == manual.tp);
        CHECK(g.metrics.sensitivity == doctest::Approx(manual.sensitivity));
        CHECK(g.metrics.auc == doctest::Approx(manual.auc));
    }

    double lo = 1, hi = 0;
    for (const auto &g : report.groups) {
        lo = std::min(lo, g.metrics.sensitivity);
        hi = std::max(hi, g.metrics.sensitivity);
    }
    CHECK(report.sensitivity_range == doctest::Approx(hi - lo));

    CHECK_THROWS_AS(bias_audit("race", {}, labels, scores, 0.5), MissingSubgroupTags);
    auto bad_tags = tags;
    bad_tags[7] = "";
    CHECK_THROWS_AS(bias_audit("race", bad_tags, labels, scores, 0.5), MissingSubgroupTags);
    auto short_tags = tags;
    short_tags.pop_back();
    CHECK_THROWS_AS(bias_audit("race", short_tags, labels, scores, 0.5), ShapeMismatch);
}

TEST_CASE("audit comparison reports masked-minus-base deltas per group") {
    Rng rng(23);
    int n = 300;
    std::vector<int> labels(n);
    std::vector<double> base_scores(n), masked_scores(n);
    std::vector<std::string> tags(n);
    const char *groups[] = {"female", "male"};
    for (int i = 0; i < n; ++i) {
        labels[i] = rng.bernoulli(0.3) ? 1 : 0;
        base_scores[i] = rng.uniform();
        masked_scores[i] = rng.uniform();
        tags[i] = groups[rng.below(2)];
    }
    auto base = bias_audit("gender", tags, labels, base_scores, 0.5);
    auto masked = bias_audit("gender", tags, labels, masked_scores, 0.4);
    auto cmp = compare_audits(base, masked);

    REQUIRE(cmp.deltas.size() == base.groups.size());
    for (size_t i = 0; i < cmp.deltas.size(); ++i) {
        CHECK(cmp.deltas[i].group == base.groups[i].group);
        CHECK(cmp.deltas[i].auc ==
              doctest::Approx(masked.groups[i].metrics.auc - base.groups[i].metrics.auc));
        CHECK(cmp.deltas[i].sensitivity ==
              doctest::Approx(masked.groups[i].metrics.sensitivity -
                              base.groups[i].metrics.sensitivity));
    }
    CHECK(cmp.overall.group == "overall");
    CHECK(cmp.overall.auc == doctest::Approx(masked.overall.auc - base.overall.auc));

    // attribute or group-set mismatches are rejected
    auto other = bias_audit("race", tags, labels, masked_scores, 0.4);
    CHECK_THROWS_AS(compare_audits(base, other), ShapeMismatch);
    std::vector<std::string> third = tags;
    third[0] = "unknown";
    auto extra = bias_audit("gender", third, labels, masked_scores, 0.4);
    CHECK_THROWS_AS(compare_audits(base, extra), ShapeMismatch);
}

TEST_CASE("top-variable shares count top-k appearances and skip specials") {
    std::vector<std::vector<VariableAttention>> per_sample = {
        {{"special", 0.5}, {"diagnosis", 0.3}, {"payment_amount", 0.1}, {"age_years", 0.05}},
        {{"diagnosis", 0.6}, {"special", 0.2}, {"age_years", 0.1}, {"time_gap", 0.05}},
        {{"procedure", 0.9}, {"diagnosis", 0.05}},
    };
    auto shares = top_variable_shares(per_sample, 2);

    // diagnosis appears in the top-2 non-special families of all three samples
    REQUIRE(!shares.empty());
    CHECK(shares[0].variable == "diagnosis");
    CHECK(shares[0].share == doctest::Approx(1.0));
    for (const auto &s : shares) {
        CHECK(s.variable != "special");
        CHECK(s.share >= 0.0);
        CHECK(s.share <= 1.0);
    }
    // payment_amount ranked second in sample 1 only
    auto find = [&](const std::string &v) {
        for (const auto &s : shares)
            if (s.variable == v) return s.share;
        return -1.0;
    };
    CHECK(find("payment_amount") == doctest::Approx(1.0 / 3.0));
    CHECK(find("age_years") == doctest::Approx(1.0 / 3.0));
    CHECK(find("procedure") == doctest::Approx(1.0 / 3.0));
    CHECK(find("time_gap") == -1.0); // never in a top-2

    CHECK_THROWS_AS(top_variable_shares(per_sample, 0), InvalidConfig);
    CHECK(top_variable_shares({}, 3).empty());
}

TEST_CASE("attention explanation aggregates the final-layer CLS row by variable") {
    EncoderConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.max_len = 32;
    cfg.vocab_size = 16;
    cfg.dropout = 0.0;
    auto state = EncoderStateT<float>::init(cfg, 5);

    Vocabulary vocab;
    for (int i = 0; i < kNumSpecials; ++i)
        vocab.id_to_token.push_back(special_token_string(i));
    vocab.id_to_token.insert(vocab.id_to_token.end(),
                             {"INP", "ICD_CH_03", "ICD_CH_07", "payment_amount_Q2",
                              "payment_amount_Q7", "age_Q4", "GAP_1_7", "county_obesity_Q5",
                              "HCPCS_SURG", "DSTATUS_home", "los_days_Q3"});
    for (size_t i = 0; i < vocab.id_to_token.size(); ++i)
        vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int32_t>(i);

    std::vector<int32_t> tokens{kClsId, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, kSepId};
    std::vector<int32_t> segments(tokens.size(), 0);
    std::vector<int32_t> buckets(tokens.size(), 0);
    Rng rng(1);
    auto bound = bind<float>(nullptr, state);
    auto out = encode<float>(nullptr, bound, tokens, segments, buckets, rng, false);
    auto ex = explain_attention(out, tokens, vocab);

    REQUIRE(ex.tokens.size() == tokens.size());
    // weights recompute as the head-mean of row 0 in the final layer
    for (size_t c = 0; c < tokens.size(); ++c) {
        double manual = (static_cast<double>(out.attention[1][0](0, static_cast<int>(c))) +
                         static_cast<double>(out.attention[1][1](0, static_cast<int>(c)))) /
                        2.0;
        CHECK(ex.token_weights[c] == doctest::Approx(manual).epsilon(1e-12));
    }
    // variable weights sum to ~1 (the CLS row is a distribution)
    double total = 0;
    for (const auto &v : ex.variables) total += v.weight;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    // ranking is weight-descending
    for (size_t i = 1; i < ex.variables.size(); ++i)
        CHECK(ex.variables[i - 1].weight >= ex.variables[i].weight);
    // payment tokens collapse into one family
    int payment_rows = 0;
    for (const auto &v : ex.variables) payment_rows += (v.variable == "payment_amount");
    CHECK(payment_rows == 1);

    auto hp = temp_path("attn.html");
    auto ap = temp_path("attn.json");
    write_attention_html(hp, "B0000001", ex);
    write_attention_json(ap, "B0000001", ex);
    {
        std::ifstream f(hp);
        std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        CHECK(body.find("B0000001") != std::string::npos);
        CHECK(body.find("payment_amount") != std::string::npos);
        CHECK(body.find("<span") != std::string::npos);
    }
    std::remove(hp.c_str());
    std::remove(ap.c_str());
}

TEST_CASE("report files are written and the scaling table round-trips") {
    std::vector<int> vl{1, 1, 0, 0}, tl{1, 0, 1, 0};
    std::vector<double> vs{0.9, 0.7, 0.2, 0.3}, ts{0.8, 0.4, 0.6, 0.1};
    auto report = evaluate_split_scores(vl, vs, tl, ts);
    auto jp = temp_path("eval.json");
    write_eval_report_json(jp, report);
    {
        std::ifstream f(jp);
        std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        CHECK(body.find("\"operating_point\"") != std::string::npos);
        CHECK(body.find("\"test\"") != std::string::npos);
    }
    std::remove(jp.c_str());

    std::vector<ScalingRow> rows{{10000, 0.86, 0.81, 0.75, 0.78},
                                 {50000, 0.88, 0.83, 0.77, 0.80},
                                 {100000, 0.895, 0.84, 0.78, 0.81}};
    auto sp = temp_path("scaling.csv");
    write_scaling_csv(sp, rows);
    auto back = read_scaling_csv(sp);
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back[i].events == rows[i].events);
        CHECK(back[i].auc == doctest::Approx(rows[i].auc).epsilon(1e-12));
        CHECK(back[i].gmean == doctest::Approx(rows[i].gmean).epsilon(1e-12));
    }
    std::remove(sp.c_str());
}
