"""End-to-end smoke tests for the Python bindings.

These run the full pipeline on a deliberately tiny cohort; the goal is to
prove the bindings wire through to the native stages, not to reach any
particular model quality.
"""

import json
import math
import os
import shutil

import pytest

import readmit

TINY = {
    "cohort.n_beneficiaries": "160",
    "cohort.start_date": "2009-01-01",
    "cohort.end_date": "2010-12-31",
    "cohort.base_readmission_rate": "0.01",
    "encoder.n_layers": "1",
    "encoder.n_heads": "2",
    "encoder.d_model": "16",
    "encoder.dropout": "0.0",
    "prep.l_max": "64",
    "prep.quantizer_bins": "4",
    "pretrain.max_epochs": "2",
    "pretrain.batch_size": "16",
    "finetune.max_epochs": "2",
    "finetune.batch_size": "16",
    "drift.shift_strength": "0.5",
    "scale.sizes": "60",
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("readmit_run")
    run = str(d / "run")
    readmit.synth(run, config=TINY, seed=7)
    readmit.prep(run, config=TINY, seed=7)
    readmit.pretrain(run, config=TINY, seed=7)
    readmit.finetune(run, config=TINY, seed=7)
    yield run
    shutil.rmtree(run, ignore_errors=True)


def test_stage_artifacts_exist(run_dir):
    for rel in (
        "cohort/beneficiaries.csv",
        "prep/vocab.tsv",
        "prep/samples.csv",
        "model/pretrained.ckpt",
        "model/model.ckpt",
        "manifest.json",
    ):
        assert os.path.exists(os.path.join(run_dir, rel)), rel


def test_evaluate_reports_both_splits(run_dir):
    report = readmit.evaluate(run_dir, config=TINY, seed=7)
    assert 0.0 <= report["validation"]["auc"] <= 1.0
    assert 0.0 <= report["test"]["auc"] <= 1.0
    assert report["test"]["n"] > 0
    assert report["operating_point"]["threshold"] == report["test"]["threshold"]
    with open(f"{run_dir}/reports/eval.json") as f:
        on_disk = json.load(f)
    assert on_disk["test"]["auc"] == pytest.approx(report["test"]["auc"])


def test_drift_zero_shift_is_exactly_flat(run_dir):
    cfg = dict(TINY, **{"drift.shift_strength": "0.0"})
    report = readmit.drift(run_dir, config=cfg, seed=7)
    assert report["drop"] == pytest.approx(0.0, abs=1e-12)
    assert not report["flagged"]


def test_audit_covers_race_and_gender(run_dir):
    out = readmit.audit(run_dir, config=TINY, seed=7)
    assert out["race"]["attribute"] == "race"
    assert out["gender"]["attribute"] == "gender"
    assert len(out["gender"]["base"]["groups"]) >= 2
    assert out["race"]["base"]["sensitivity_range"] >= 0.0
    # the demographics-masked retrain produced aligned per-group deltas
    race = out["race"]
    assert len(race["masked_retrain"]["groups"]) == len(race["base"]["groups"])
    assert len(race["deltas"]) == len(race["base"]["groups"])
    for delta, base, masked in zip(
        race["deltas"], race["base"]["groups"], race["masked_retrain"]["groups"]
    ):
        assert delta["group"] == base["group"] == masked["group"]
    # top-3 attention variable table with shares in [0, 1]
    assert out["attention"]
    for row in out["attention"]:
        assert 0.0 <= row["share"] <= 1.0
        assert row["variable"] != "special"


def test_explain_writes_heat_map(run_dir):
    with open(f"{run_dir}/prep/labels.csv") as f:
        next(f)
        bene = next(f).split(",")[1]
    readmit.explain(run_dir, bene, config=TINY, seed=7)
    html = open(f"{run_dir}/reports/explain_{bene}.html").read()
    assert bene in html
    data = json.load(open(f"{run_dir}/reports/explain_{bene}.json"))
    total = sum(v["weight"] for v in data["variables"])
    assert total == pytest.approx(1.0, abs=1e-3)


def test_unknown_beneficiary_raises(run_dir):
    with pytest.raises(readmit.PipelineError):
        readmit.explain(run_dir, "NOT_A_REAL_ID", config=TINY, seed=7)


def test_bad_config_key_raises():
    with pytest.raises(readmit.PipelineError):
        readmit.synth("/tmp/never_created", config={"cohort.banana": "1"}, seed=7)


def test_analysis_primitives_match_each_other():
    labels = [1, 1, 1, 0, 0, 0, 1, 0]
    scores = [0.9, 0.8, 0.4, 0.3, 0.2, 0.7, 0.6, 0.1]
    auc = readmit.roc_auc(labels, scores)
    assert 0.0 <= auc <= 1.0
    op = readmit.select_threshold(labels, scores)
    m = readmit.classification_metrics(labels, scores, op["threshold"])
    assert m["gmean"] == pytest.approx(op["gmean"])
    assert m["gmean"] == pytest.approx(math.sqrt(m["sensitivity"] * m["specificity"]))
    audit = readmit.bias_audit(
        "site", ["a", "a", "b", "b", "a", "b", "a", "b"], labels, scores, op["threshold"]
    )
    assert {g["group"] for g in audit["groups"]} == {"a", "b"}
