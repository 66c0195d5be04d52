"""Focus-rectified logistic regression: losses, diagnostics, and a training harness.

The package centers on one family of classification objectives: plain
per-class logistic regression (`lr`), its hard- and soft-focused variants
(`hs-lr`, `ss-lr`, `hs-sr`), and softmax regression (`sr`) as the baseline.
Everything else (model, data generators, metrics, config, CLI) exists to
train these losses on synthetic tasks and measure how they behave.
"""

from .config import RunConfig, dump_toml, load_config, loads_config
from .data import (
    Dataset,
    RetrievalSplit,
    gen_blobs,
    gen_retrieval,
    gen_sparse_multilabel,
    load_delimited,
    save_delimited,
    split_dataset,
    standardize,
)
from .diagnostics import (
    CSV_COLUMNS,
    TraceRecord,
    TrainingTrace,
    export_trace,
    gradient_focus_ratio,
    import_trace,
    summarize_ncd,
)
from .errors import (
    ConfigError,
    FocusLRError,
    InsufficientData,
    InvalidInput,
    TrainingDiverged,
)
from .harness import run_compare, run_seeds, run_train
from .losses import (
    GRAD_CHECK_TOLERANCE,
    LossConfig,
    Variant,
    evaluate,
    evaluate_batch,
    grad_check,
    hs_lr_loss,
    hs_sr_loss,
    lr_loss,
    sr_loss,
    ss_lr_loss,
)
from .metrics import (
    EvalReport,
    average_precision,
    balanced_accuracy,
    multilabel_report,
    retrieval_eval,
    top1_accuracy,
    wilcoxon_signed_rank,
)
from .model import (
    Adam,
    Mlp,
    SgdMomentum,
    TrainResult,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CSV_COLUMNS",
    "ConfigError",
    "Dataset",
    "EvalReport",
    "FocusLRError",
    "GRAD_CHECK_TOLERANCE",
    "InsufficientData",
    "InvalidInput",
    "LossConfig",
    "Mlp",
    "RetrievalSplit",
    "RunConfig",
    "SgdMomentum",
    "TraceRecord",
    "TrainResult",
    "TrainingDiverged",
    "TrainingTrace",
    "Variant",
    "average_precision",
    "balanced_accuracy",
    "dump_toml",
    "evaluate",
    "evaluate_batch",
    "export_trace",
    "gen_blobs",
    "gen_retrieval",
    "gen_sparse_multilabel",
    "grad_check",
    "gradient_focus_ratio",
    "hs_lr_loss",
    "hs_sr_loss",
    "import_trace",
    "load_checkpoint",
    "load_config",
    "load_delimited",
    "loads_config",
    "lr_loss",
    "make_optimizer",
    "multilabel_report",
    "retrieval_eval",
    "run_compare",
    "run_seeds",
    "run_train",
    "save_checkpoint",
    "save_delimited",
    "split_dataset",
    "sr_loss",
    "ss_lr_loss",
    "standardize",
    "summarize_ncd",
    "top1_accuracy",
    "train",
    "wilcoxon_signed_rank",
]
