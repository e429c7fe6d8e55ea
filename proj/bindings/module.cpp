// Python bindings for the readmission pipeline.  The surface mirrors the
// command-line stages (synth/prep/pretrain/finetune/eval/scale/drift/
// explain/audit) plus the handful of analysis primitives (AUC, threshold
// selection, subgroup audit) that are useful from a notebook.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "readmit/errors.hpp"
#include "readmit/eval.hpp"
#include "readmit/labeler.hpp"
#include "readmit/pipeline.hpp"
#include "readmit/synthgen.hpp"
#include "readmit/vocab.hpp"

namespace py = pybind11;
using namespace readmit;

namespace {

PipelineConfig config_from_dict(const py::dict &d) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto &item : d)
        pairs.emplace_back(py::str(item.first).cast<std::string>(),
                           py::str(item.second).cast<std::string>());
    return pipeline_config_from_pairs(pairs);
}

PipelineConfig resolve(const py::object &config, long long seed) {
    PipelineConfig cfg;
    if (!config.is_none()) {
        if (py::isinstance<py::dict>(config)) cfg = config_from_dict(config.cast<py::dict>());
        else cfg = load_pipeline_config(config.cast<std::string>());
    }
    if (seed >= 0) apply_seed_override(cfg, static_cast<uint64_t>(seed));
    return cfg;
}

py::dict metrics_dict(const ClassificationMetrics &m) {
    py::dict d;
    d["auc"] = m.auc;
    d["threshold"] = m.threshold;
    d["sensitivity"] = m.sensitivity;
    d["specificity"] = m.specificity;
    d["gmean"] = m.gmean;
    d["accuracy"] = m.accuracy;
    d["positive_rate"] = m.positive_rate;
    d["tp"] = m.tp;
    d["fp"] = m.fp;
    d["tn"] = m.tn;
    d["fn"] = m.fn;
    d["n"] = m.n;
    return d;
}

py::dict audit_dict(const BiasAuditReport &r) {
    py::dict d;
    d["attribute"] = r.attribute;
    d["threshold"] = r.threshold;
    d["overall"] = metrics_dict(r.overall);
    py::list groups;
    for (const auto &g : r.groups) {
        py::dict gd;
        gd["group"] = g.group;
        gd["metrics"] = metrics_dict(g.metrics);
        groups.append(gd);
    }
    d["groups"] = groups;
    d["sensitivity_range"] = r.sensitivity_range;
    d["specificity_range"] = r.specificity_range;
    return d;
}

py::dict delta_dict(const SubgroupDelta &d) {
    py::dict out;
    out["group"] = d.group;
    out["auc"] = d.auc;
    out["sensitivity"] = d.sensitivity;
    out["specificity"] = d.specificity;
    out["gmean"] = d.gmean;
    return out;
}

py::dict comparison_dict(const BiasComparison &cmp) {
    py::dict d;
    d["attribute"] = cmp.base.attribute;
    d["base"] = audit_dict(cmp.base);
    d["masked_retrain"] = audit_dict(cmp.masked);
    py::list deltas;
    for (const auto &delta : cmp.deltas) deltas.append(delta_dict(delta));
    d["deltas"] = deltas;
    d["overall_delta"] = delta_dict(cmp.overall);
    return d;
}

py::list shares_list(const std::vector<VariableShare> &shares) {
    py::list out;
    for (const auto &s : shares) {
        py::dict d;
        d["variable"] = s.variable;
        d["share"] = s.share;
        out.append(d);
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "claims-sequence readmission modeling pipeline";

    py::register_exception<Error>(m, "PipelineError");

    // --- pipeline stages over a run directory -------------------------------
    m.def(
        "synth",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            run_synth(run_dir, resolve(config, seed));
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Generate a synthetic claims cohort into <run_dir>/cohort.");

    m.def(
        "prep",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            run_prep(run_dir, resolve(config, seed));
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Label admissions, fit quantizers/vocabulary on the train split, assemble sequences.");

    m.def(
        "pretrain",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            run_pretrain(run_dir, resolve(config, seed));
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Masked-token pretraining; writes <run_dir>/model/pretrained.ckpt.");

    m.def(
        "finetune",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            run_finetune(run_dir, resolve(config, seed));
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Readmission fine-tuning; writes <run_dir>/model/model.ckpt.");

    m.def(
        "evaluate",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            EvalReport r = run_eval(run_dir, resolve(config, seed));
            py::dict d;
            py::dict op;
            op["threshold"] = r.operating_point.threshold;
            op["sensitivity"] = r.operating_point.sensitivity;
            op["specificity"] = r.operating_point.specificity;
            op["gmean"] = r.operating_point.gmean;
            d["operating_point"] = op;
            d["validation"] = metrics_dict(r.validation);
            d["test"] = metrics_dict(r.test);
            return d;
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Validation/test metrics at the G-mean threshold; writes reports/eval.json.");

    m.def(
        "scale",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            std::vector<ScalingRow> rows = run_scale(run_dir, resolve(config, seed));
            py::list out;
            for (const auto &r : rows) {
                py::dict d;
                d["events"] = r.events;
                d["auc"] = r.auc;
                d["sensitivity"] = r.sensitivity;
                d["specificity"] = r.specificity;
                d["gmean"] = r.gmean;
                out.append(d);
            }
            return out;
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Retrain on nested subsets; writes reports/scaling.csv.");

    m.def(
        "drift",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            DriftReport r = run_drift(run_dir, resolve(config, seed));
            py::dict d;
            d["baseline_auc"] = r.baseline_auc;
            d["shifted_auc"] = r.shifted_auc;
            d["drop"] = r.drop;
            d["threshold"] = r.threshold;
            d["shift_strength"] = r.shift_strength;
            d["flagged"] = r.flagged;
            return d;
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Score a code-shifted cohort against the baseline; writes reports/drift.json.");

    m.def(
        "explain",
        [](const std::string &run_dir, const std::string &beneficiary,
           const py::object &config, long long seed) {
            run_explain(run_dir, resolve(config, seed), beneficiary);
        },
        py::arg("run_dir"), py::arg("beneficiary"), py::arg("config") = py::none(),
        py::arg("seed") = -1,
        "Attention heat map for one beneficiary; writes reports/explain_<id>.html/.json.");

    m.def(
        "audit",
        [](const std::string &run_dir, const py::object &config, long long seed) {
            AuditOutput out = run_audit(run_dir, resolve(config, seed));
            py::dict d;
            d["race"] = comparison_dict(out.race);
            d["gender"] = comparison_dict(out.gender);
            d["attention"] = shares_list(out.attention);
            return d;
        },
        py::arg("run_dir"), py::arg("config") = py::none(), py::arg("seed") = -1,
        "Subgroup audit with a demographics-masked retrain and top-3 attention "
        "variable shares; writes reports/audit_*.json.");

    // --- analysis primitives -------------------------------------------------
    m.def(
        "roc_auc",
        [](const std::vector<int> &labels, const std::vector<double> &scores) {
            return roc_auc(labels, scores);
        },
        py::arg("labels"), py::arg("scores"),
        "Mann-Whitney AUC with midrank tie handling.");

    m.def(
        "select_threshold",
        [](const std::vector<int> &labels, const std::vector<double> &scores) {
            OperatingPoint op = select_threshold(labels, scores);
            py::dict d;
            d["threshold"] = op.threshold;
            d["sensitivity"] = op.sensitivity;
            d["specificity"] = op.specificity;
            d["gmean"] = op.gmean;
            return d;
        },
        py::arg("labels"), py::arg("scores"),
        "Threshold maximizing the G-mean of sensitivity and specificity.");

    m.def(
        "classification_metrics",
        [](const std::vector<int> &labels, const std::vector<double> &scores,
           double threshold) {
            return metrics_dict(classification_metrics(labels, scores, threshold));
        },
        py::arg("labels"), py::arg("scores"), py::arg("threshold"),
        "Confusion-matrix metrics of 1(score > threshold).");

    m.def(
        "bias_audit",
        [](const std::string &attribute, const std::vector<std::string> &tags,
           const std::vector<int> &labels, const std::vector<double> &scores,
           double threshold) {
            return audit_dict(bias_audit(attribute, tags, labels, scores, threshold));
        },
        py::arg("attribute"), py::arg("tags"), py::arg("labels"), py::arg("scores"),
        py::arg("threshold"), "Per-subgroup metrics at a fixed threshold.");
}
