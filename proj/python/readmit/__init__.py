"""Claims-sequence readmission modeling pipeline.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports its stages and analysis helpers under stable names.  A typical
session::

    import readmit

    readmit.synth("run", config={"cohort.n_beneficiaries": 500}, seed=7)
    readmit.prep("run", seed=7)
    readmit.pretrain("run", seed=7)
    readmit.finetune("run", seed=7)
    print(readmit.evaluate("run", seed=7)["test"]["auc"])

``config`` accepts either a path to a ``key=value`` file or a dict with the
same keys (``cohort.*``, ``encoder.*``, ``pretrain.*``, ``finetune.*``,
``prep.*``, ``drift.*``, ``scale.sizes``).  ``seed`` overrides every stage
seed at once; omit it to use the seeds from the configuration.
"""

from readmit._core import (
    PipelineError,
    audit,
    bias_audit,
    classification_metrics,
    drift,
    evaluate,
    explain,
    finetune,
    prep,
    pretrain,
    roc_auc,
    scale,
    select_threshold,
    synth,
)

__all__ = [
    "PipelineError",
    "audit",
    "bias_audit",
    "classification_metrics",
    "drift",
    "evaluate",
    "explain",
    "finetune",
    "prep",
    "pretrain",
    "roc_auc",
    "scale",
    "select_threshold",
    "synth",
]

__version__ = "1.0.0"
