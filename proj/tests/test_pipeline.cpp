#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "readmit/errors.hpp"
#include "readmit/pipeline.hpp"

using namespace readmit;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string &tag) {
    std::string d = "/tmp/readmit_pipe_" + tag + "_" + std::to_string(getpid());
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// tiny but non-degenerate: ~160 beneficiaries over two years
PipelineConfig tiny_config() {
    PipelineConfig cfg = pipeline_config_from_pairs({
        {"cohort.n_beneficiaries", "160"},
        {"cohort.start_date", "2009-01-01"},
        {"cohort.end_date", "2010-12-31"},
        {"cohort.seed", "7"},
        {"cohort.base_readmission_rate", "0.01"},
        {"encoder.n_layers", "1"},
        {"encoder.n_heads", "2"},
        {"encoder.d_model", "16"},
        {"encoder.dropout", "0.0"},
        {"prep.l_max", "64"},
        {"prep.quantizer_bins", "4"},
        {"prep.split_seed", "7"},
        {"pretrain.batch_size", "16"},
        {"pretrain.lr", "3e-3"},
        {"pretrain.max_epochs", "2"},
        {"pretrain.patience", "2"},
        {"pretrain.seed", "7"},
        {"finetune.batch_size", "16"},
        {"finetune.lr", "1e-3"},
        {"finetune.max_epochs", "2"},
        {"finetune.patience", "2"},
        {"finetune.seed", "7"},
        {"drift.shift_strength", "0.5"},
        {"drift.threshold", "0.03"},
        {"scale.sizes", "60, 120"},
    });
    return cfg;
}

} // namespace

TEST_CASE("pipeline config: parsing, defaults, overrides, rejects") {
    PipelineConfig def;
    CHECK(def.cohort.n_beneficiaries == 1000);
    CHECK(def.encoder.d_model == 64);
    CHECK(def.finetune_init == "pretrained");
    CHECK(def.scale_sizes == std::vector<int64_t>{10000, 50000, 100000});

    SUBCASE("file round trip with comments and blanks") {
        std::string path = "/tmp/readmit_cfg_" + std::to_string(getpid()) + ".cfg";
        {
            std::ofstream f(path, std::ios::trunc);
            f << "# demo configuration\n"
              << "cohort.n_beneficiaries = 500   # inline comment\n"
              << "\n"
              << "encoder.d_model=32\n"
              << "pretrain.lr = 0.005\n"
              << "finetune.init = scratch\n"
              << "scale.sizes = 100,200,300\n"
              << "drift.threshold = 0.05\n";
        }
        PipelineConfig cfg = load_pipeline_config(path);
        CHECK(cfg.cohort.n_beneficiaries == 500);
        CHECK(cfg.encoder.d_model == 32);
        CHECK(cfg.pretrain.lr == doctest::Approx(0.005));
        CHECK(cfg.finetune_init == "scratch");
        CHECK(cfg.scale_sizes == std::vector<int64_t>{100, 200, 300});
        CHECK(cfg.drift_threshold == doctest::Approx(0.05));
        std::remove(path.c_str());
    }

    SUBCASE("unknown keys and malformed values are rejected") {
        CHECK_THROWS_AS(pipeline_config_from_pairs({{"cohort.banana", "1"}}), InvalidConfig);
        CHECK_THROWS_AS(pipeline_config_from_pairs({{"nonsense", "1"}}), InvalidConfig);
        CHECK_THROWS_AS(pipeline_config_from_pairs({{"pretrain.lr", "fast"}}), InvalidConfig);
        CHECK_THROWS_AS(pipeline_config_from_pairs({{"cohort.n_beneficiaries", "10x"}}),
                        InvalidConfig);
        CHECK_THROWS_AS(pipeline_config_from_pairs({{"finetune.init", "warm"}}), InvalidConfig);
        CHECK_THROWS_AS(pipeline_config_from_pairs({{"scale.sizes", ""}}), InvalidConfig);
        CHECK_THROWS_AS(pipeline_config_from_pairs({{"scale.sizes", "100,-5"}}), InvalidConfig);
        CHECK_THROWS_AS(load_pipeline_config("/tmp/definitely_absent.cfg"), MissingArtifact);
    }

    SUBCASE("seed override steers every stage seed") {
        PipelineConfig cfg;
        apply_seed_override(cfg, 99);
        CHECK(cfg.cohort.seed == 99);
        CHECK(cfg.pretrain.seed == 99);
        CHECK(cfg.finetune.seed == 99);
        CHECK(cfg.split_seed == 99);
    }

    SUBCASE("sizes parser") {
        CHECK(parse_sizes("10") == std::vector<int64_t>{10});
        CHECK(parse_sizes(" 1 , 2 ,3 ") == std::vector<int64_t>{1, 2, 3});
        CHECK_THROWS_AS(parse_sizes("a,b"), InvalidConfig);
    }
}

TEST_CASE("manifest: stage gating, hash verification, tamper detection") {
    std::string dir = fresh_dir("manifest");
    {
        std::ofstream f(dir + "/a.txt");
        f << "alpha\n";
    }
    RunManifest m;
    m.record_stage("synth", dir, {"a.txt"});
    m.save(dir);

    RunManifest loaded = RunManifest::load_or_empty(dir);
    CHECK(loaded.has_stage("synth"));
    CHECK_FALSE(loaded.has_stage("prep"));
    CHECK_NOTHROW(loaded.require_stage("synth", dir));
    CHECK_THROWS_AS(loaded.require_stage("prep", dir), MissingArtifact);
    CHECK_THROWS_AS(loaded.stage_files("prep"), MissingArtifact);
    CHECK(loaded.stage_files("synth").count("a.txt") == 1);

    SUBCASE("tampering with a recorded file is caught") {
        std::ofstream f(dir + "/a.txt", std::ios::trunc);
        f << "beta\n";
        f.close();
        CHECK_THROWS_AS(loaded.require_stage("synth", dir), HashMismatch);
    }
    SUBCASE("deleting a recorded file is caught") {
        fs::remove(dir + "/a.txt");
        CHECK_THROWS_AS(loaded.require_stage("synth", dir), MissingArtifact);
    }
    fs::remove_all(dir);
}

TEST_CASE("pipeline: end-to-end on a tiny cohort") {
    std::string dir = fresh_dir("e2e");
    PipelineConfig cfg = tiny_config();

    // stages must refuse to run out of order
    CHECK_THROWS_AS(run_prep(dir + "/nothing", cfg), MissingArtifact);

    run_synth(dir, cfg);
    CHECK(fs::exists(dir + "/cohort/beneficiaries.csv"));
    CHECK(fs::exists(dir + "/manifest.json"));

    CHECK_THROWS_AS(run_pretrain(dir, cfg), MissingArtifact); // prep not run yet

    run_prep(dir, cfg);
    CHECK(fs::exists(dir + "/prep/vocab.tsv"));
    CHECK(fs::exists(dir + "/prep/samples.csv"));
    CHECK(fs::exists(dir + "/prep/quantizers.csv"));
    CHECK(fs::exists(dir + "/prep/labels.csv"));
    CHECK(fs::exists(dir + "/prep/stats.json"));

    PrepArtifacts prep = load_prep_artifacts(dir, cfg);
    CHECK(prep.vocab.size() > kNumSpecials);
    CHECK(prep.samples.size() > 50);
    CHECK_FALSE(prep.splits.train.empty());
    CHECK_FALSE(prep.splits.validation.empty());
    CHECK_FALSE(prep.splits.test.empty());

    // stats.json carries the compression ratio and split sizes
    std::string stats = slurp(dir + "/prep/stats.json");
    CHECK(stats.find("compression_ratio") != std::string::npos);
    CHECK(stats.find("split_sizes") != std::string::npos);

    CHECK_THROWS_AS(run_eval(dir, cfg), MissingArtifact); // model not trained yet

    run_pretrain(dir, cfg);
    CHECK(fs::exists(dir + "/model/pretrained.ckpt"));
    run_finetune(dir, cfg);
    CHECK(fs::exists(dir + "/model/model.ckpt"));

    EvalReport report = run_eval(dir, cfg);
    CHECK(report.test.n == static_cast<int64_t>(prep.splits.test.size()));
    CHECK(report.validation.auc >= 0.0);
    CHECK(report.validation.auc <= 1.0);
    CHECK(fs::exists(dir + "/reports/eval.json"));

    // explanations for the beneficiary owning the first sample
    std::string bene = prep.samples.front().beneficiary_id;
    run_explain(dir, cfg, bene);
    CHECK(fs::exists(dir + "/reports/explain_" + bene + ".html"));
    CHECK(fs::exists(dir + "/reports/explain_" + bene + ".json"));
    CHECK_THROWS_AS(run_explain(dir, cfg, "BENE_NOT_REAL"), UnknownBeneficiary);

    AuditOutput audit = run_audit(dir, cfg);
    CHECK(audit.race.base.groups.size() >= 2);
    CHECK(audit.gender.base.groups.size() >= 2);
    REQUIRE(audit.race.masked.groups.size() == audit.race.base.groups.size());
    REQUIRE(audit.race.deltas.size() == audit.race.base.groups.size());
    for (size_t i = 0; i < audit.race.deltas.size(); ++i) {
        const auto &d = audit.race.deltas[i];
        const double want =
            audit.race.masked.groups[i].metrics.auc - audit.race.base.groups[i].metrics.auc;
        CHECK((d.auc == want || (std::isnan(d.auc) && std::isnan(want))));
    }
    CHECK(audit.masked_retrain.epochs_run >= 1);
    CHECK(!audit.attention.empty());
    for (const auto &share : audit.attention) {
        CHECK(share.share >= 0.0);
        CHECK(share.share <= 1.0);
        CHECK(share.variable != "special");
    }
    CHECK(fs::exists(dir + "/reports/audit_race.json"));
    CHECK(fs::exists(dir + "/reports/audit_gender.json"));
    CHECK(fs::exists(dir + "/reports/audit_attention.json"));
    CHECK(fs::exists(dir + "/reports/audit_retrain.json"));
    CHECK(fs::exists(dir + "/model/demographics_masked.ckpt"));

    DriftReport drift = run_drift(dir, cfg);
    CHECK(drift.shift_strength == doctest::Approx(0.5));
    CHECK(drift.baseline_auc > 0.0);
    CHECK(drift.shifted_auc > 0.0);
    CHECK(drift.drop == doctest::Approx(drift.baseline_auc - drift.shifted_auc));
    CHECK(fs::exists(dir + "/reports/drift.json"));

    std::vector<ScalingRow> rows = run_scale(dir, cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].events == 60);
    CHECK(rows[1].events == 120);
    CHECK(fs::exists(dir + "/reports/scaling.csv"));

    // zero drift shift regenerates a bitwise-identical cohort, so the scores
    // and hence the AUC cannot move
    PipelineConfig zero = cfg;
    zero.drift_shift_strength = 0.0;
    DriftReport none = run_drift(dir, zero);
    CHECK(none.drop == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(none.flagged);

    // a flipped bit in the fine-tuned checkpoint must be refused (run last:
    // this corrupts the model file)
    {
        std::fstream f(dir + "/model/model.ckpt",
                       std::ios::in | std::ios::out | std::ios::binary);
        REQUIRE(bool(f));
        f.seekg(-7, std::ios::end);
        char c = 0;
        f.read(&c, 1);
        f.seekp(-7, std::ios::end);
        c = static_cast<char>(c ^ 0x01);
        f.write(&c, 1);
    }
    CHECK_THROWS_AS(run_eval(dir, cfg), HashMismatch);

    fs::remove_all(dir);
}

TEST_CASE("pipeline: scratch initialization trains without a pretraining stage") {
    std::string dir = fresh_dir("scratch");
    PipelineConfig cfg = tiny_config();
    cfg.finetune_init = "scratch";
    run_synth(dir, cfg);
    run_prep(dir, cfg);
    run_finetune(dir, cfg); // no pretrain required
    CHECK(fs::exists(dir + "/model/model.ckpt"));
    EvalReport report = run_eval(dir, cfg);
    CHECK(report.test.n > 0);
    fs::remove_all(dir);
}

TEST_CASE("pipeline: identical seeds reproduce artifacts byte for byte") {
    PipelineConfig cfg = tiny_config();
    cfg.scale_sizes = {}; // unused here
    std::string d1 = fresh_dir("rep1");
    std::string d2 = fresh_dir("rep2");
    for (const std::string &d : {d1, d2}) {
        run_synth(d, cfg);
        run_prep(d, cfg);
        run_pretrain(d, cfg);
        run_finetune(d, cfg);
        run_eval(d, cfg);
    }
    CHECK(slurp(d1 + "/cohort/beneficiaries.csv") == slurp(d2 + "/cohort/beneficiaries.csv"));
    CHECK(slurp(d1 + "/prep/vocab.tsv") == slurp(d2 + "/prep/vocab.tsv"));
    CHECK(slurp(d1 + "/prep/samples.csv") == slurp(d2 + "/prep/samples.csv"));
    CHECK(slurp(d1 + "/model/pretrained.ckpt") == slurp(d2 + "/model/pretrained.ckpt"));
    CHECK(slurp(d1 + "/model/model.ckpt") == slurp(d2 + "/model/model.ckpt"));
    CHECK(slurp(d1 + "/reports/eval.json") == slurp(d2 + "/reports/eval.json"));

    // a different seed must actually change the model
    PipelineConfig other = cfg;
    apply_seed_override(other, 1234);
    std::string d3 = fresh_dir("rep3");
    run_synth(d3, other);
    run_prep(d3, other);
    run_pretrain(d3, other);
    CHECK(slurp(d1 + "/model/pretrained.ckpt") != slurp(d3 + "/model/pretrained.ckpt"));

    fs::remove_all(d1);
    fs::remove_all(d2);
    fs::remove_all(d3);
}
