"""Per-step training diagnostics: loss decomposition curves and the
positive-to-negative gradient focus ratio.

``grad_ratio`` is defined as the ratio of the batch-mean L2 norm of the
loss gradient restricted to positive classes over the batch-mean L2 norm
restricted to negative classes (plus 1e-12).  The definition is isolated
in :func:`gradient_focus_ratio` so alternative norms can be swapped in
one place.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InsufficientData, InvalidInput

__all__ = [
    "CSV_COLUMNS",
    "TraceRecord",
    "TrainingTrace",
    "gradient_focus_ratio",
    "record_step",
    "export_trace",
    "import_trace",
    "NcdSummary",
    "summarize_ncd",
]

CSV_COLUMNS = ("step", "epoch", "total_loss", "pos_loss", "neg_loss", "grad_ratio", "train_batch_acc", "lr")

GRAD_RATIO_EPS = 1e-12


@dataclass
class TraceRecord:
    step: int
    epoch: int
    total_loss: float
    pos_loss: float
    neg_loss: float
    grad_ratio: float
    train_batch_acc: float
    lr: float


@dataclass
class TrainingTrace:
    """Ordered per-step records plus the run metadata needed to re-run."""

    records: list = field(default_factory=list)
    run_meta: dict = field(default_factory=dict)

    def append(self, record):
        if self.records and record.step <= self.records[-1].step:
            raise InvalidInput(f"trace steps must be strictly increasing, got {record.step} after {self.records[-1].step}")
        self.records.append(record)

    def __len__(self):
        return len(self.records)


def gradient_focus_ratio(pos_grad_norms, neg_grad_norms):
    """mean(pos norms) / (mean(neg norms) + eps) over a batch."""
    return float(np.mean(pos_grad_norms) / (np.mean(neg_grad_norms) + GRAD_RATIO_EPS))


def record_step(trace, batch_out, *, step, epoch, lr, train_batch_acc):
    """Append one record with batch-mean loss terms and the focus ratio.

    Non-finite values are recorded as they are; aborting on them is the
    caller's policy (the train loop stops after a flagged row).
    """
    if batch_out.losses.size == 0:
        raise InvalidInput("cannot record an empty batch")
    rec = TraceRecord(
        step=int(step),
        epoch=int(epoch),
        total_loss=float(np.mean(batch_out.losses)),
        pos_loss=float(np.mean(batch_out.pos_losses)),
        neg_loss=float(np.mean(batch_out.neg_losses)),
        grad_ratio=gradient_focus_ratio(batch_out.pos_grad_norms, batch_out.neg_grad_norms),
        train_batch_acc=float(train_batch_acc),
        lr=float(lr),
    )
    trace.append(rec)
    return rec


def export_trace(trace, fmt, path):
    """Write a trace as ``csv`` (fixed 8-column schema) or ``json``.

    Floats are serialized with ``repr``, so a round-trip through
    :func:`import_trace` reproduces every value exactly.
    """
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rec in trace.records:
                row = [getattr(rec, c) for c in CSV_COLUMNS]
                writer.writerow([repr(float(v)) if isinstance(v, float) else int(v) for v in row])
    elif fmt == "json":
        payload = {"run_meta": trace.run_meta, "records": [asdict(r) for r in trace.records]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    else:
        raise InvalidInput(f"unknown trace format {fmt!r} (use 'csv' or 'json')")
    return path


def import_trace(path, fmt=None):
    """Read a trace written by :func:`export_trace`; format inferred from suffix."""
    if fmt is None:
        fmt = "json" if str(path).endswith(".json") else "csv"
    trace = TrainingTrace()
    if fmt == "csv":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(CSV_COLUMNS):
                raise InvalidInput(f"unexpected trace header {header}")
            for row in reader:
                vals = dict(zip(CSV_COLUMNS, row))
                trace.append(
                    TraceRecord(
                        step=int(vals["step"]),
                        epoch=int(vals["epoch"]),
                        **{k: float(vals[k]) for k in CSV_COLUMNS[2:]},
                    )
                )
    elif fmt == "json":
        with open(path) as fh:
            payload = json.load(fh)
        trace.run_meta = payload.get("run_meta", {})
        for rec in payload["records"]:
            trace.append(TraceRecord(**rec))
    else:
        raise InvalidInput(f"unknown trace format {fmt!r} (use 'csv' or 'json')")
    return trace


@dataclass
class NcdSummary:
    """Early-training summary: median focus ratio and loss-trend signs."""

    median_early_grad_ratio: float
    pos_loss_trend_sign: int
    neg_loss_trend_sign: int
    window: int = 0


def _trend_sign(xs, ys):
    slope = np.polyfit(xs, ys, 1)[0]
    scale = max(1.0, float(np.max(np.abs(ys))))
    if abs(slope) < 1e-12 * scale:
        return 0
    return 1 if slope > 0 else -1


def summarize_ncd(trace, early_fraction=0.1):
    """Summarize the first ``early_fraction`` of recorded steps.

    Needs at least 10 records; the window is clamped to >= 2 records so
    the least-squares slopes are defined.
    """
    n = len(trace.records)
    if n < 10:
        raise InsufficientData(f"need >= 10 trace records, got {n}")
    if not (0.0 < early_fraction <= 1.0):
        raise InvalidInput(f"early_fraction must be in (0, 1], got {early_fraction}")
    window = max(2, int(math.floor(early_fraction * n)))
    early = trace.records[:window]
    steps = np.array([r.step for r in early], dtype=float)
    return NcdSummary(
        median_early_grad_ratio=float(np.median([r.grad_ratio for r in early])),
        pos_loss_trend_sign=_trend_sign(steps, np.array([r.pos_loss for r in early])),
        neg_loss_trend_sign=_trend_sign(steps, np.array([r.neg_loss for r in early])),
        window=window,
    )
