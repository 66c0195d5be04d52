"""Command-line interface.

Subcommands: gen-data, grad-check, train, eval, compare.  Exit codes:
0 success, 1 threshold/divergence failure, 2 usage or config error.
Output is deterministic for fixed flags, config, and seed: no timestamps,
no machine-specific paths beyond what the user passes in.
"""

import argparse
import os
import sys

import numpy as np

from .config import load_config
from .data import (
    Dataset,
    apply_scaler,
    gen_blobs,
    gen_retrieval,
    gen_sparse_multilabel,
    load_delimited,
    save_delimited,
)
from .errors import FocusLRError, InsufficientData, InvalidInput, TrainingDiverged
from .harness import evaluate_task, run_compare, run_seeds, run_train
from .losses import GRAD_CHECK_TOLERANCE, LossConfig, Variant, grad_check
from .model import load_checkpoint

__all__ = ["main", "build_parser"]


def parse_seeds(text):
    """Seed list syntax: '7', '0..9' (inclusive), or '1,4,9'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise InvalidInput(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s.strip() != ""]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="focuslr",
        description="Focus-rectified logistic regression: losses, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset as delimited text")
    gen_sub = gen.add_subparsers(dest="generator", required=True)
    blobs = gen_sub.add_parser("blobs", help="balanced Gaussian blobs (single-label)")
    blobs.add_argument("--k", type=int, default=100)
    blobs.add_argument("--dim", type=int, default=32)
    blobs.add_argument("--n-per-class", type=int, default=30)
    blobs.add_argument("--separation", type=float, default=6.0)
    blobs.add_argument("--seed", type=int, default=0)
    blobs.add_argument("--out", required=True, help="output csv path")
    retr = gen_sub.add_parser("retrieval", help="disjoint-class retrieval split (3 files)")
    retr.add_argument("--k-train", type=int, default=60)
    retr.add_argument("--k-test", type=int, default=40)
    retr.add_argument("--dim", type=int, default=32)
    retr.add_argument("--n-per-class", type=int, default=4)
    retr.add_argument("--separation", type=float, default=6.0)
    retr.add_argument("--seed", type=int, default=0)
    retr.add_argument("--out", required=True, help="output prefix; writes <prefix>.{train,gallery,query}.csv")
    ml = gen_sub.add_parser("sparse-multilabel", help="power-law sparse multi-label data")
    ml.add_argument("--k", type=int, default=200)
    ml.add_argument("--n", type=int, default=4000)
    ml.add_argument("--avg-positives", type=float, default=3.0)
    ml.add_argument("--imbalance-ratio", type=float, default=50.0)
    ml.add_argument("--dim", type=int, default=32)
    ml.add_argument("--noise-scale", type=float, default=0.5)
    ml.add_argument("--seed", type=int, default=0)
    ml.add_argument("--out", required=True, help="output csv path")

    gc = sub.add_parser("grad-check", help="finite-difference check of analytic gradients")
    gc.add_argument("--variant", default="all",
                    help="sr, lr, hs-lr, ss-lr, hs-sr, or all")
    gc.add_argument("--k", default="2,5,10,100", help="comma-separated class counts")
    gc.add_argument("--trials", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--threshold", type=float, default=GRAD_CHECK_TOLERANCE)

    tr = sub.add_parser("train", help="train from a TOML config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--seed", type=int, default=None, help="override training.seed")
    tr.add_argument("--seeds", default=None, help="seed sweep: 'a..b' or comma list")
    tr.add_argument("--out", default=None, help="override output directory")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--task", required=True, choices=["classify", "retrieve", "multilabel"])
    ev.add_argument("--data", default=None, help="dataset csv (classify/multilabel)")
    ev.add_argument("--gallery", default=None, help="gallery csv (retrieve)")
    ev.add_argument("--query", default=None, help="query csv (retrieve)")
    ev.add_argument("--k", type=int, default=None, help="declared class count")
    ev.add_argument("--out", default=None, help="report path (default: print only)")

    cp = sub.add_parser("compare", help="paired comparison of two configs differing only in [loss]")
    cp.add_argument("--config-a", required=True)
    cp.add_argument("--config-b", required=True)
    cp.add_argument("--seeds", default="0..9")
    cp.add_argument("--out", required=True)
    return parser


def cmd_gen_data(args):
    if args.generator == "blobs":
        ds = gen_blobs(args.k, args.dim, args.n_per_class, args.separation, seed=args.seed)
        save_delimited(ds, args.out)
        print(f"wrote {args.out} ({ds.n} rows, K={ds.K})")
        return 0
    if args.generator == "retrieval":
        split = gen_retrieval(args.k_train, args.k_test, args.dim, args.n_per_class,
                              args.separation, seed=args.seed)
        for name, ds in (("train", split.train), ("gallery", split.gallery), ("query", split.query)):
            path = f"{args.out}.{name}.csv"
            save_delimited(ds, path)
            print(f"wrote {path} ({ds.n} rows, K={ds.K})")
        return 0
    ds = gen_sparse_multilabel(args.k, args.n, args.avg_positives, args.imbalance_ratio,
                               seed=args.seed, dim=args.dim, noise_scale=args.noise_scale)
    save_delimited(ds, args.out)
    print(f"wrote {args.out} ({ds.n} rows, K={ds.K})")
    return 0


def _grad_check_configs(name):
    if name == "all":
        names = [v.value for v in Variant]
    else:
        names = [name]
    configs = []
    for n in names:
        variant = Variant.parse(n)
        if variant is Variant.SS_LR:
            configs.append((f"{n} (full)", LossConfig(variant)))
            configs.append((f"{n} (detached)", LossConfig(variant, detach_weight=True)))
        else:
            configs.append((n, LossConfig(variant)))
    return configs


def cmd_grad_check(args):
    ks = [int(v) for v in str(args.k).split(",") if v.strip() != ""]
    if not ks or args.trials < 1:
        raise InvalidInput("need at least one K and one trial")
    configs = _grad_check_configs(args.variant)
    failed = False
    for label, cfg in configs:
        for k in ks:
            err = grad_check(cfg, k=k, trials=args.trials, seed=args.seed)
            ok = err < args.threshold
            failed = failed or not ok
            print(f"{'PASS' if ok else 'FAIL'} {label:<18} K={k:<4} "
                  f"max_rel_err={err:.3e} (threshold {args.threshold:g})")
    print("grad-check:", "FAIL" if failed else "PASS")
    return 1 if failed else 0


def _print_report(report):
    for key, value in report.populated().items():
        print(f"{key} = {value:.6f}")
    for key, value in report.excluded.items():
        print(f"excluded: {key} = {value}")


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seeds is not None:
        results, summary = run_seeds(cfg, parse_seeds(args.seeds), out_dir=args.out)
        for row in summary["rows"]:
            metrics = {k: v for k, v in row.items() if k not in ("seed", "run_id", "diverged")}
            line = " ".join(f"{k}={v:.6f}" for k, v in sorted(metrics.items()))
            status = "DIVERGED" if row["diverged"] else line
            print(f"seed {row['seed']}: {status}")
        for key, agg in sorted(summary["metrics"].items()):
            print(f"{key}: mean={agg['mean']:.6f} std={agg['std']:.6f} n={agg['n']}")
        if summary["diverged_seeds"]:
            print(f"diverged seeds: {summary['diverged_seeds']}")
            return 1
        return 0
    result = run_train(cfg, seed=args.seed, out_dir=args.out)
    if result.diverged:
        print(f"run {result.run_id} diverged: {result.reason}", file=sys.stderr)
        print(f"partial trace: {result.paths.get('trace_csv')}", file=sys.stderr)
        return 1
    _print_report(result.report)
    for name, path in sorted(result.paths.items()):
        print(f"{name}: {path}")
    return 0


def _load_eval_dataset(path, k, scaler, expected_dim):
    ds = load_delimited(path, K=k)
    if ds.dim != expected_dim:
        raise InvalidInput(f"{path}: feature dim {ds.dim} does not match model input {expected_dim}")
    if scaler is not None:
        ds = apply_scaler(ds, *scaler)
    return ds


def cmd_eval(args):
    model, info = load_checkpoint(args.checkpoint)
    meta = info.get("meta", {})
    scaler = None
    if "scaler_mean" in meta:
        scaler = (np.array(meta["scaler_mean"]), np.array(meta["scaler_std"]))
    dim = model.layer_dims[0]
    if args.task == "retrieve":
        if not (args.gallery and args.query):
            raise InvalidInput("retrieve task needs --gallery and --query")
        gallery = _load_eval_dataset(args.gallery, args.k, scaler, dim)
        query = _load_eval_dataset(args.query, args.k, scaler, dim)
        report = evaluate_task(model, "retrieve", {"gallery": gallery, "query": query})
    else:
        if not args.data:
            raise InvalidInput(f"{args.task} task needs --data")
        ds = _load_eval_dataset(args.data, args.k, scaler, dim)
        if ds.K > model.n_classes:
            raise InvalidInput(
                f"dataset has labels up to {ds.K - 1} but the model scores {model.n_classes} classes")
        if args.task == "multilabel" and ds.is_single_label():
            raise InvalidInput("multilabel task refused: every row in the dataset is single-label")
        if args.task == "classify" and not ds.is_single_label():
            raise InvalidInput("classify task refused: dataset has multi-label rows")
        # rebuild with the model's class count so K-sensitive metrics line up
        ds = Dataset(ds.features, ds.labels, model.n_classes, split_tag=ds.split_tag, meta=ds.meta)
        report = evaluate_task(model, args.task, {"test": ds})
    _print_report(report)
    if args.out:
        report.save(args.out)
        print(f"report: {args.out}")
    return 0


def cmd_compare(args):
    cfg_a = load_config(args.config_a)
    cfg_b = load_config(args.config_b)
    report = run_compare(cfg_a, cfg_b, parse_seeds(args.seeds), out_dir=args.out)
    print(report.format_table())
    print(f"report: {os.path.join(args.out, 'compare.json')}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "grad-check": cmd_grad_check,
        "train": cmd_train,
        "eval": cmd_eval,
        "compare": cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FocusLRError, InsufficientData, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
