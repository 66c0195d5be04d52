"""Experiment harness: turn a RunConfig into data, a trained model, metric
reports, and on-disk artifacts; run seed sweeps; run paired comparisons
with a significance test.

Seed substreams: a single run seed drives data generation (stream ()),
model init (stream 1), epoch shuffling (stream 2), and splitting
(stream 3), so two configs that share every non-loss section see the
same data, the same initial weights, and the same batch order.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .data import (
    apply_scaler,
    gen_blobs,
    gen_retrieval,
    gen_sparse_multilabel,
    load_delimited,
    scaler_stats,
    split_dataset,
)
from .diagnostics import export_trace
from .errors import ConfigError, InsufficientData, TrainingDiverged
from .losses import Variant
from .mathcore import seeded_rng
from .metrics import (
    EvalReport,
    balanced_accuracy,
    multilabel_report,
    retrieval_eval,
    top1_accuracy,
    wilcoxon_signed_rank,
)
from .model import Mlp, save_checkpoint, train
from .config import dump_toml

__all__ = [
    "TaskData",
    "prepare_data",
    "evaluate_task",
    "RunResult",
    "run_train",
    "run_seeds",
    "CompareReport",
    "run_compare",
    "PRIMARY_METRIC",
]

# the single headline number per task, used for seed summaries and compare
PRIMARY_METRIC = {"classify": "top1", "retrieve": "rank1", "multilabel": "per_class_acc_top5"}


@dataclass
class TaskData:
    task: str
    train: object
    eval_sets: dict
    scaler: tuple = None  # (mean, std) or None


def _maybe_standardize(cfg, train, others):
    if not cfg.data["standardize"]:
        return TaskDataParts(train, others, None)
    mean, std = scaler_stats(train)
    return TaskDataParts(apply_scaler(train, mean, std),
                         {k: apply_scaler(v, mean, std) for k, v in others.items()},
                         (mean, std))


@dataclass
class TaskDataParts:
    train: object
    others: dict
    scaler: tuple


def prepare_data(cfg, seed):
    """Build the config's dataset splits for one run seed."""
    d = cfg.data
    gen = d["generator"]
    data_seed = seed + d.get("seed_offset", 0)
    if gen == "blobs":
        ds = gen_blobs(d["k"], d["dim"], d["n_per_class"], d["separation"], seed=data_seed)
        train_ds, test_ds = split_dataset(ds, d["test_fraction"], seed=data_seed)
        parts = _maybe_standardize(cfg, train_ds, {"test": test_ds})
    elif gen == "retrieval":
        split = gen_retrieval(d["k_train"], d["k_test"], d["dim"], d["n_per_class"],
                              d["separation"], seed=data_seed)
        parts = _maybe_standardize(cfg, split.train,
                                   {"gallery": split.gallery, "query": split.query})
    elif gen == "sparse_multilabel":
        ds = gen_sparse_multilabel(d["k"], d["n"], d["avg_positives"], d["imbalance_ratio"],
                                   seed=data_seed, dim=d["dim"], noise_scale=d["noise_scale"])
        train_ds, test_ds = split_dataset(ds, d["test_fraction"], seed=data_seed)
        parts = _maybe_standardize(cfg, train_ds, {"test": test_ds})
    else:  # file
        k = d["k"] or None
        if cfg.task == "retrieve":
            train_ds = load_delimited(d["path"], K=k, split_tag="train")
            gallery = load_delimited(d["path_gallery"], K=k, split_tag="test")
            query = load_delimited(d["path_query"], K=k, split_tag="test")
            parts = _maybe_standardize(cfg, train_ds, {"gallery": gallery, "query": query})
        else:
            ds = load_delimited(d["path"], K=k, split_tag="train")
            train_ds, test_ds = split_dataset(ds, d["test_fraction"], seed=data_seed)
            parts = _maybe_standardize(cfg, train_ds, {"test": test_ds})
    return TaskData(cfg.task, parts.train, parts.others, parts.scaler)


def evaluate_task(model, task, eval_sets, top_t=5):
    """Populate exactly the metrics that make sense for the task."""
    if task == "classify":
        test = eval_sets["test"]
        logits = model.logits(test.features)
        preds = np.argmax(logits, axis=1)
        return EvalReport(
            top1=top1_accuracy(logits, test.labels),
            balanced_per_class_acc=balanced_accuracy(preds, test.labels, test.K),
        )
    if task == "retrieve":
        gallery, query = eval_sets["gallery"], eval_sets["query"]
        return retrieval_eval(model.embed(query.features), model.embed(gallery.features),
                              query.labels, gallery.labels, metric="cosine").as_eval_report()
    if task == "multilabel":
        test = eval_sets["test"]
        return multilabel_report(model.logits(test.features), test.labels, t=top_t).as_eval_report()
    raise ConfigError(f"unknown task {task!r}")


@dataclass
class RunResult:
    run_id: str
    seed: int
    task: str
    report: EvalReport
    trace: object
    model: Mlp
    diverged: bool = False
    reason: str = ""
    paths: dict = field(default_factory=dict)


def _default_run_id(cfg, seed):
    loss_cfg = cfg.loss_cfg()
    tag = loss_cfg.variant.value
    if loss_cfg.variant is Variant.SS_LR and loss_cfg.detach_weight:
        tag += "-det"
    return f"{tag}_s{seed}"


def run_train(cfg, seed=None, out_dir=None, run_id=None, write=True):
    """Train one run from a config; write checkpoint, trace CSV+JSON, eval
    report, and the resolved config echo into the output directory."""
    seed = cfg.training["seed"] if seed is None else int(seed)
    out_dir = cfg.output_dir() if out_dir is None else out_dir
    run_id = _default_run_id(cfg, seed) if run_id is None else run_id
    task_data = prepare_data(cfg, seed)
    train_ds = task_data.train
    model = Mlp([train_ds.dim, *cfg.model["hidden"], train_ds.K], seeded_rng(seed, 1))
    decay = cfg.training["lr_decay_epoch"]
    result = train(
        model, train_ds, cfg.loss_cfg(), cfg.make_optimizer(),
        epochs=cfg.training["epochs"], batch_size=cfg.training["batch_size"], seed=seed,
        lr_decay_epoch=None if decay < 0 else decay,
        lr_decay_factor=cfg.training["lr_decay_factor"],
        trace_stride=cfg.output["trace_stride"],
        extra_meta={"task": task_data.task, "generator": cfg.data["generator"],
                    "optimizer": cfg.optimizer["kind"], "lr": cfg.optimizer["lr"],
                    "run_id": run_id},
    )
    report = None
    if not result.diverged:
        report = evaluate_task(model, task_data.task, task_data.eval_sets)
    run = RunResult(run_id=run_id, seed=seed, task=task_data.task, report=report,
                    trace=result.trace, model=model,
                    diverged=result.diverged, reason=result.reason)
    if write:
        os.makedirs(out_dir, exist_ok=True)
        meta = {"task": task_data.task, "loss": cfg.loss_cfg().variant.value,
                "run_id": run_id}
        if task_data.scaler is not None:
            meta["scaler_mean"] = [float(v) for v in task_data.scaler[0]]
            meta["scaler_std"] = [float(v) for v in task_data.scaler[1]]
        paths = {
            "checkpoint": os.path.join(out_dir, f"{run_id}.checkpoint.json"),
            "trace_csv": os.path.join(out_dir, f"{run_id}.trace.csv"),
            "trace_json": os.path.join(out_dir, f"{run_id}.trace.json"),
            "config": os.path.join(out_dir, f"{run_id}.resolved.toml"),
        }
        save_checkpoint(model, paths["checkpoint"], seed=seed, meta=meta)
        export_trace(result.trace, "csv", paths["trace_csv"])
        export_trace(result.trace, "json", paths["trace_json"])
        resolved = cfg.resolved()
        resolved["training"]["seed"] = seed
        resolved["output"]["dir"] = str(out_dir)
        dump_toml(resolved, paths["config"])
        if report is not None:
            paths["eval"] = os.path.join(out_dir, f"{run_id}.eval.json")
            report.save(paths["eval"])
        run.paths = paths
    return run


def run_seeds(cfg, seeds, out_dir=None, write=True):
    """Sequential seed sweep; returns (results, summary dict) and writes
    per-seed artifacts plus summary.json/summary.csv."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("need at least one seed")
    out_dir = cfg.output_dir() if out_dir is None else out_dir
    results = [run_train(cfg, seed=s, out_dir=out_dir, write=write) for s in seeds]
    metric_keys = sorted({k for r in results if r.report for k in r.report.populated()})
    rows = []
    for r in results:
        row = {"seed": r.seed, "run_id": r.run_id, "diverged": r.diverged}
        if r.report is not None:
            row.update(r.report.populated())
        rows.append(row)
    summary = {"rows": rows, "metrics": {}, "diverged_seeds": [r.seed for r in results if r.diverged]}
    clean = [r for r in results if r.report is not None]
    for key in metric_keys:
        vals = np.array([getattr(r.report, key) for r in clean])
        summary["metrics"][key] = {"mean": float(vals.mean()), "std": float(vals.std()),
                                   "n": int(vals.size)}
    if write:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
            fh.write(",".join(["seed"] + metric_keys) + "\n")
            for r in clean:
                fh.write(",".join([str(r.seed)] + [repr(getattr(r.report, k)) for k in metric_keys]) + "\n")
            for agg in ("mean", "std"):
                fh.write(",".join([agg] + [repr(summary["metrics"][k][agg]) for k in metric_keys]) + "\n")
    return results, summary


@dataclass
class CompareReport:
    metric: str
    label_a: str
    label_b: str
    seeds: list
    values_a: list
    values_b: list
    mean_a: float
    mean_b: float
    mean_diff: float  # mean_b - mean_a
    wilcoxon_w: float = None
    p_value: float = None
    p_note: str = ""

    def to_dict(self):
        return {
            "metric": self.metric,
            "a": {"loss": self.label_a, "mean": self.mean_a, "per_seed": self.values_a},
            "b": {"loss": self.label_b, "mean": self.mean_b, "per_seed": self.values_b},
            "seeds": self.seeds,
            "mean_diff_b_minus_a": self.mean_diff,
            "wilcoxon": {"statistic": self.wilcoxon_w, "p_value": self.p_value,
                         "note": self.p_note},
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    def format_table(self):
        lines = [f"paired comparison on {self.metric} (a = {self.label_a}, b = {self.label_b})",
                 f"{'seed':>6} {'a':>12} {'b':>12} {'b - a':>12}"]
        for s, va, vb in zip(self.seeds, self.values_a, self.values_b):
            lines.append(f"{s:>6} {va:>12.6f} {vb:>12.6f} {vb - va:>+12.6f}")
        lines.append(f"{'mean':>6} {self.mean_a:>12.6f} {self.mean_b:>12.6f} {self.mean_diff:>+12.6f}")
        if self.p_value is not None:
            lines.append(f"wilcoxon: W = {self.wilcoxon_w}, two-sided p = {self.p_value:.6g}")
        else:
            lines.append(f"wilcoxon: {self.p_note}")
        return "\n".join(lines)


def check_comparable(cfg_a, cfg_b):
    """Confound guard: everything except the [loss] section must match."""
    ra, rb = cfg_a.resolved(), cfg_b.resolved()
    for section in ("data", "model", "optimizer", "training", "output"):
        if ra[section] != rb[section]:
            diff = sorted(k for k in ra[section]
                          if ra[section].get(k) != rb[section].get(k))
            raise ConfigError(
                f"configs differ outside [loss]: section [{section}], keys {diff}; "
                "paired comparison refused")


def run_compare(cfg_a, cfg_b, seeds, out_dir, write=True):
    """Paired per-seed comparison of two configs differing only in [loss].

    Each seed trains both configs on identical data with identical init
    and batch order, then scores the task's primary metric; the paired
    values feed a two-sided Wilcoxon signed-rank test.
    """
    check_comparable(cfg_a, cfg_b)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("need at least one seed")
    metric = PRIMARY_METRIC[cfg_a.task]
    vals_a, vals_b = [], []
    for s in seeds:
        res_a = run_train(cfg_a, seed=s, out_dir=os.path.join(out_dir, "a"), write=write)
        res_b = run_train(cfg_b, seed=s, out_dir=os.path.join(out_dir, "b"), write=write)
        for res, cfg in ((res_a, cfg_a), (res_b, cfg_b)):
            if res.diverged:
                raise TrainingDiverged(
                    f"run {res.run_id} diverged ({res.reason}); comparison aborted",
                    trace=res.trace)
        vals_a.append(getattr(res_a.report, metric))
        vals_b.append(getattr(res_b.report, metric))
    report = CompareReport(
        metric=metric,
        label_a=cfg_a.loss_cfg().variant.value,
        label_b=cfg_b.loss_cfg().variant.value,
        seeds=seeds,
        values_a=vals_a,
        values_b=vals_b,
        mean_a=float(np.mean(vals_a)),
        mean_b=float(np.mean(vals_b)),
        mean_diff=float(np.mean(vals_b) - np.mean(vals_a)),
    )
    try:
        w = wilcoxon_signed_rank(vals_b, vals_a)
        report.wilcoxon_w = w.statistic
        report.p_value = w.p_value
    except InsufficientData as exc:
        report.p_note = f"insufficient data: {exc}"
    if write:
        os.makedirs(out_dir, exist_ok=True)
        report.save(os.path.join(out_dir, "compare.json"))
    return report
