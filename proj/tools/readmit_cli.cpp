// Command-line front end for the readmission pipeline.  Every subcommand
// operates on a run directory: synth writes the cohort, prep tokenizes it,
// pretrain/finetune produce checkpoints, and the rest read those artifacts
// to produce reports.  A manifest in the run directory records a content
// hash for every stage output, so stale or edited inputs are refused rather
// than silently reused.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "readmit/errors.hpp"
#include "readmit/eval.hpp"
#include "readmit/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string run_dir = "run";
    int64_t seed = -1; // -1 means "use the configuration file's seeds"
};

void add_common(CLI::App *cmd, CommonArgs &args) {
    cmd->add_option("-c,--config", args.config_path,
                    "key=value configuration file (defaults apply when omitted)");
    cmd->add_option("-o,--out", args.run_dir, "run directory for artifacts and reports")
        ->capture_default_str();
    cmd->add_option("-s,--seed", args.seed,
                    "override every stage seed (cohort, splits, training) at once");
}

readmit::PipelineConfig resolve_config(const CommonArgs &args) {
    readmit::PipelineConfig cfg = args.config_path.empty()
                                      ? readmit::PipelineConfig{}
                                      : readmit::load_pipeline_config(args.config_path);
    if (args.seed >= 0) readmit::apply_seed_override(cfg, static_cast<uint64_t>(args.seed));
    return cfg;
}

void print_metrics(const char *split, const readmit::ClassificationMetrics &m) {
    std::printf("%-11s auc=%.4f sens=%.4f spec=%.4f gmean=%.4f acc=%.4f n=%lld\n", split,
                m.auc, m.sensitivity, m.specificity, m.gmean, m.accuracy,
                static_cast<long long>(m.n));
}

void print_audit(const readmit::BiasComparison &cmp) {
    const readmit::BiasAuditReport &r = cmp.base;
    std::printf("audit by %s (threshold %.4f, masked retrain %.4f)\n", r.attribute.c_str(),
                r.threshold, cmp.masked.threshold);
    for (size_t i = 0; i < r.groups.size(); ++i) {
        const auto &g = r.groups[i];
        std::printf("  %-12s n=%-6lld sens=%.4f spec=%.4f auc=%.4f (masked auc delta %+.4f)\n",
                    g.group.c_str(), static_cast<long long>(g.metrics.n), g.metrics.sensitivity,
                    g.metrics.specificity, g.metrics.auc, cmp.deltas[i].auc);
    }
    std::printf("  range: sensitivity %.4f, specificity %.4f\n", r.sensitivity_range,
                r.specificity_range);
}

void print_attention_shares(const std::vector<readmit::VariableShare> &shares) {
    std::printf("top-%d attention variables (share of test samples)\n", readmit::kAuditTopK);
    for (size_t i = 0; i < shares.size() && i < 8; ++i)
        std::printf("  %-22s %.1f%%\n", shares[i].variable.c_str(), 100.0 * shares[i].share);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"30-day readmission modeling pipeline over synthetic claims"};
    app.require_subcommand(1);
    app.fallthrough(false);

    CommonArgs args;
    std::string beneficiary;
    std::string sizes_csv;

    CLI::App *synth = app.add_subcommand("synth", "generate a synthetic claims cohort");
    add_common(synth, args);

    CLI::App *prep = app.add_subcommand(
        "prep", "label admissions, fit quantizers and vocabulary, assemble sequences");
    add_common(prep, args);

    CLI::App *pretrain =
        app.add_subcommand("pretrain", "masked-token pretraining on the train split");
    add_common(pretrain, args);

    CLI::App *finetune =
        app.add_subcommand("finetune", "readmission fine-tuning from the pretrained encoder");
    add_common(finetune, args);

    CLI::App *eval_cmd =
        app.add_subcommand("eval", "validation/test metrics at the selected threshold");
    add_common(eval_cmd, args);

    CLI::App *scale =
        app.add_subcommand("scale", "retrain on nested subsets and tabulate test AUC");
    add_common(scale, args);
    scale->add_option("--sizes", sizes_csv, "comma-separated event counts (overrides config)");

    CLI::App *drift = app.add_subcommand(
        "drift", "score a code-shifted cohort and compare against the baseline AUC");
    add_common(drift, args);

    CLI::App *explain = app.add_subcommand(
        "explain", "attention heat map for one beneficiary's latest admission");
    add_common(explain, args);
    explain->add_option("-b,--beneficiary", beneficiary, "beneficiary id to explain")
        ->required();

    CLI::App *audit =
        app.add_subcommand("audit", "subgroup sensitivity/specificity audit on the test split");
    add_common(audit, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        // surface unknown subcommand words through the shared error taxonomy
        if (argc > 1 && argv[1][0] != '-' &&
            app.get_subcommand_no_throw(argv[1]) == nullptr) {
            std::fprintf(stderr, "UnknownSubcommand: '%s' is not a pipeline stage\n", argv[1]);
            return 2;
        }
        return app.exit(e);
    }

    try {
        readmit::PipelineConfig cfg = resolve_config(args);

        if (synth->parsed()) {
            readmit::run_synth(args.run_dir, cfg);
            std::printf("cohort written to %s/cohort\n", args.run_dir.c_str());
        } else if (prep->parsed()) {
            readmit::run_prep(args.run_dir, cfg);
            std::printf("prep artifacts written to %s/prep\n", args.run_dir.c_str());
        } else if (pretrain->parsed()) {
            readmit::run_pretrain(args.run_dir, cfg);
            std::printf("pretrained checkpoint written to %s/model/pretrained.ckpt\n",
                        args.run_dir.c_str());
        } else if (finetune->parsed()) {
            readmit::run_finetune(args.run_dir, cfg);
            std::printf("fine-tuned checkpoint written to %s/model/model.ckpt\n",
                        args.run_dir.c_str());
        } else if (eval_cmd->parsed()) {
            readmit::EvalReport report = readmit::run_eval(args.run_dir, cfg);
            std::printf("threshold %.6f (validation G-mean %.4f)\n",
                        report.operating_point.threshold, report.operating_point.gmean);
            print_metrics("validation", report.validation);
            print_metrics("test", report.test);
        } else if (scale->parsed()) {
            if (!sizes_csv.empty()) cfg.scale_sizes = readmit::parse_sizes(sizes_csv);
            std::vector<readmit::ScalingRow> rows = readmit::run_scale(args.run_dir, cfg);
            std::printf("%-10s %-8s %-8s %-8s %-8s\n", "events", "auc", "sens", "spec",
                        "gmean");
            for (const auto &r : rows)
                std::printf("%-10lld %-8.4f %-8.4f %-8.4f %-8.4f\n",
                            static_cast<long long>(r.events), r.auc, r.sensitivity,
                            r.specificity, r.gmean);
        } else if (drift->parsed()) {
            readmit::DriftReport r = readmit::run_drift(args.run_dir, cfg);
            std::printf("baseline auc %.4f, shifted auc %.4f, drop %.4f (threshold %.4f)\n",
                        r.baseline_auc, r.shifted_auc, r.drop, r.threshold);
            std::printf(r.flagged ? "DRIFT FLAGGED: retrain before further use\n"
                                  : "no actionable drift\n");
        } else if (explain->parsed()) {
            readmit::run_explain(args.run_dir, cfg, beneficiary);
            std::printf("explanation written to %s/reports/explain_%s.html\n",
                        args.run_dir.c_str(), beneficiary.c_str());
        } else if (audit->parsed()) {
            readmit::AuditOutput out = readmit::run_audit(args.run_dir, cfg);
            print_audit(out.race);
            print_audit(out.gender);
            print_attention_shares(out.attention);
        }
        return 0;
    } catch (const readmit::Error &e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 3;
    }
}
