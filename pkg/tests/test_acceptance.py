"""Acceptance gate: nine checks covering gradient exactness, analytic loss
values, the soft/hard selection equivalence, the negative-class-distraction
reproduction on the reference configs, metric oracles, the significance
test, and byte-level determinism.

Each test registers one PASS/FAIL summary line (printed in the terminal
summary section) and then asserts at the stated tolerance, so a red run
still reports every criterion's measured numbers.
"""

import itertools
import json
import math
import os
import re
import time

import numpy as np
import pytest

from focuslr.cli import main
from focuslr.config import loads_config
from focuslr.diagnostics import import_trace, summarize_ncd
from focuslr.harness import run_train
from focuslr.losses import (
    GRAD_CHECK_TOLERANCE,
    LossConfig,
    Variant,
    evaluate,
    grad_check,
)
from focuslr.mathcore import seeded_rng
from focuslr.metrics import average_precision, retrieval_eval, wilcoxon_signed_rank

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
SEEDS = list(range(10))
LN2 = math.log(2.0)


def config_text(name, variant):
    """Reference config text with only the loss variant swapped."""
    with open(os.path.join(CONFIG_DIR, name)) as fh:
        text = fh.read()
    out, n = re.subn(r'variant = "[a-z-]+"', f'variant = "{variant}"', text)
    assert n == 1
    return out


def seed_means(name, variant, metric):
    cfg = loads_config(config_text(name, variant))
    vals = [getattr(run_train(cfg, seed=s, write=False).report, metric) for s in SEEDS]
    return np.array(vals)


def verdict(ok):
    return "PASS" if ok else "FAIL"


# --- expensive shared runs ---------------------------------------------------

@pytest.fixture(scope="session")
def blobs_compare(tmp_path_factory):
    """The paired lr vs ss-lr sweep on the blobs reference config, run once
    through the compare subcommand; both the trace files and compare.json
    feed the distraction and ordering checks."""
    root = tmp_path_factory.mktemp("blobs-compare")
    cfg_a = root / "lr.toml"
    cfg_b = root / "ss.toml"
    cfg_a.write_text(config_text("blobs100.toml", "lr"))
    cfg_b.write_text(config_text("blobs100.toml", "ss-lr"))
    out = root / "cmp"
    code = main(["compare", "--config-a", str(cfg_a), "--config-b", str(cfg_b),
                 "--seeds", "0..9", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="session")
def blobs_sr_mean():
    return float(seed_means("blobs100.toml", "sr", "top1").mean())


# --- criteria ----------------------------------------------------------------

def test_criterion_1_gradient_correctness(accept):
    configs = [
        ("sr", LossConfig(Variant.SR)),
        ("lr", LossConfig(Variant.LR)),
        ("hs-lr", LossConfig(Variant.HS_LR)),
        ("ss-lr full", LossConfig(Variant.SS_LR)),
        ("ss-lr detached", LossConfig(Variant.SS_LR, detach_weight=True)),
        ("hs-sr", LossConfig(Variant.HS_SR)),
    ]
    t0 = time.time()
    worst = 0.0
    for _, cfg in configs:
        for k in (2, 5, 10, 100):
            worst = max(worst, grad_check(cfg, k=k, trials=100, seed=0))
    elapsed = time.time() - t0
    ok = worst < 1e-5 and elapsed < 60.0
    accept(f"criterion 1 {verdict(ok)}: gradients vs central differences, "
           f"all variants, K in {{2,5,10,100}}, 100 trials: max rel err "
           f"{worst:.3e} < 1e-05, {elapsed:.1f}s < 60s")
    assert worst < 1e-5
    assert elapsed < 60.0
    assert GRAD_CHECK_TOLERANCE == 1e-5


def test_criterion_2_analytic_loss_values(accept):
    gaps = {}
    sr = evaluate(np.zeros(100), 7, LossConfig(Variant.SR))
    gaps["sr ln K"] = abs(sr.loss - math.log(100.0))
    lr = evaluate(np.zeros(100), 7, LossConfig(Variant.LR))
    gaps["lr K ln2"] = abs(lr.loss - 100.0 * LN2)
    gaps["lr neg/pos K-1"] = abs(lr.neg_loss / lr.pos_loss - 99.0)
    hs = evaluate(np.zeros(5), 2, LossConfig(Variant.HS_LR, m=25.0, beta=10.0))
    gaps["hs-lr 11 ln2"] = abs(hs.loss - 11.0 * LN2)
    ss = evaluate(np.zeros(10), 3, LossConfig(Variant.SS_LR, r=2.0, beta=10.0))
    gaps["ss-lr 3.5 ln2"] = abs(ss.loss - 3.5 * LN2)
    worst = max(gaps.values())
    ok = worst < 1e-10
    accept(f"criterion 2 {verdict(ok)}: zero-logit loss values "
           f"(ln K, K ln2 with neg/pos = K-1, 11 ln2, 3.5 ln2): "
           f"max gap {worst:.2e} < 1e-10")
    for name, gap in gaps.items():
        assert gap < 1e-10, name


def test_criterion_3_soft_selection_r0_equals_hard_selection_m100(accept):
    rng = seeded_rng(123)
    worst_val = worst_grad = 0.0
    for k in (5, 100):
        ss_cfg = LossConfig(Variant.SS_LR, r=0.0, beta=10.0)
        hs_cfg = LossConfig(Variant.HS_LR, m=100.0, beta=10.0)
        for _ in range(100):
            z = rng.standard_normal(k)
            y = int(rng.integers(k))
            a = evaluate(z, y, ss_cfg)
            b = evaluate(z, y, hs_cfg)
            worst_val = max(worst_val, abs(a.loss - b.loss))
            worst_grad = max(worst_grad, float(np.max(np.abs(a.grad - b.grad))))
    ok = worst_val < 1e-12 and worst_grad < 1e-12
    accept(f"criterion 3 {verdict(ok)}: ss-lr(r=0) == hs-lr(m=100) on 100 random "
           f"inputs, K in {{5,100}}: value gap {worst_val:.2e}, grad gap "
           f"{worst_grad:.2e}, both < 1e-12")
    assert worst_val < 1e-12
    assert worst_grad < 1e-12


def test_criterion_4_negative_class_distraction(accept, blobs_compare):
    lr_ratio, ss_ratio, neg_dominated = [], [], []
    for s in SEEDS:
        tr_lr = import_trace(os.path.join(blobs_compare, "a", f"lr_s{s}.trace.csv"))
        tr_ss = import_trace(os.path.join(blobs_compare, "b", f"ss-lr_s{s}.trace.csv"))
        lr_ratio.append(summarize_ncd(tr_lr).median_early_grad_ratio)
        ss_ratio.append(summarize_ncd(tr_ss).median_early_grad_ratio)
        first = tr_lr.records[0]
        neg_dominated.append(first.neg_loss > first.pos_loss)
    t0 = time.time()
    run_train(loads_config(config_text("blobs100.toml", "lr")), seed=0, write=False)
    per_run = time.time() - t0
    small = all(r < 0.2 for r in lr_ratio)
    start = all(neg_dominated)
    order = all(s > l for s, l in zip(ss_ratio, lr_ratio))
    ok = small and start and order and per_run < 300.0
    accept(f"criterion 4 {verdict(ok)}: lr early median grad ratio "
           f"max {max(lr_ratio):.3f} < 0.2, neg-loss-dominated start on "
           f"{sum(neg_dominated)}/10 seeds, ss-lr ratio > lr ratio on "
           f"{sum(s > l for s, l in zip(ss_ratio, lr_ratio))}/10 seeds, "
           f"{per_run:.1f}s/run < 300s")
    assert small, f"lr early grad ratios {lr_ratio}"
    assert start
    assert order, f"ss {ss_ratio} vs lr {lr_ratio}"
    assert per_run < 300.0


def test_criterion_5_accuracy_ordering(accept, blobs_compare, blobs_sr_mean):
    with open(os.path.join(blobs_compare, "compare.json")) as fh:
        cmp = json.load(fh)
    assert cmp["a"]["loss"] == "lr" and cmp["b"]["loss"] == "ss-lr"
    mean_lr = cmp["a"]["mean"]
    mean_ss = cmp["b"]["mean"]
    p = cmp["wilcoxon"]["p_value"]
    gap = mean_ss - mean_lr
    ok = gap >= 0.03 and mean_ss >= blobs_sr_mean - 0.01 and p < 0.05
    accept(f"criterion 5 {verdict(ok)}: mean top-1 over 10 seeds: ss-lr "
           f"{mean_ss:.4f} vs lr {mean_lr:.4f} (gap {gap:+.4f} >= 0.03), "
           f"sr {blobs_sr_mean:.4f} (ss-lr >= sr - 0.01), wilcoxon p {p:.4g} < 0.05")
    assert gap >= 0.03
    assert mean_ss >= blobs_sr_mean - 0.01
    assert p < 0.05


def loop_retrieval(query, gallery, qids, gids, metric):
    """Brute-force rank-1 and mAP: python loops and sorted(), no numpy ranking."""
    def dist(u, v):
        if metric == "euclidean":
            return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
        return 1.0 - sum(a * b for a, b in zip(u, v)) / (nu * nv)

    hits, aps = [], []
    for q, qid in zip(query, qids):
        if not any(g == qid for g in gids):
            continue
        order = sorted(range(len(gids)), key=lambda j: (dist(q, gallery[j]), j))
        hits.append(1.0 if gids[order[0]] == qid else 0.0)
        found, precisions = 0, []
        for rank, j in enumerate(order, start=1):
            if gids[j] == qid:
                found += 1
                precisions.append(found / rank)
        aps.append(sum(precisions) / len(precisions))
    return sum(hits) / len(hits), sum(aps) / len(aps)


def test_criterion_6_retrieval_metrics_and_ordering(accept):
    rng = seeded_rng(77)
    worst_map = 0.0
    rank1_mismatches = 0
    for trial in range(100):
        metric = "cosine" if trial % 2 == 0 else "euclidean"
        nq = int(rng.integers(1, 21))
        ng = int(rng.integers(2, 21))
        ids = int(rng.integers(2, 6))
        while True:
            qids = rng.integers(0, ids, nq)
            gids = rng.integers(0, ids, ng)
            if np.isin(qids, gids).any():
                break
        query = rng.standard_normal((nq, 4))
        gallery = rng.standard_normal((ng, 4))
        rep = retrieval_eval(query, gallery, qids, gids, metric=metric)
        oracle_rank1, oracle_map = loop_retrieval(query.tolist(), gallery.tolist(),
                                                  qids.tolist(), gids.tolist(), metric)
        if rep.rank1 != oracle_rank1:
            rank1_mismatches += 1
        worst_map = max(worst_map, abs(rep.map - oracle_map))

    lr_rank1 = seed_means("retrieval.toml", "lr", "rank1")
    hs_rank1 = seed_means("retrieval.toml", "hs-lr", "rank1")
    ordering = hs_rank1.mean() >= lr_rank1.mean()
    ok = rank1_mismatches == 0 and worst_map < 1e-12 and ordering
    accept(f"criterion 6 {verdict(ok)}: retrieval vs brute-force oracle on 100 "
           f"instances: rank-1 mismatches {rank1_mismatches}, mAP gap "
           f"{worst_map:.2e} < 1e-12; reference runs rank-1 hs-lr "
           f"{hs_rank1.mean():.4f} >= lr {lr_rank1.mean():.4f} over 10 seeds")
    assert rank1_mismatches == 0
    assert worst_map < 1e-12
    assert ordering


def loop_average_precision(rel):
    found, precisions = 0, []
    for i, r in enumerate(rel, start=1):
        if r:
            found += 1
            precisions.append(found / i)
    return sum(precisions) / len(precisions)


def test_criterion_7_multilabel_metrics_and_ordering(accept):
    worst_ap = 0.0
    checked = 0
    for length in range(1, 9):
        for rel in itertools.product((0, 1), repeat=length):
            if sum(rel) == 0:
                continue
            worst_ap = max(worst_ap, abs(average_precision(rel) - loop_average_precision(rel)))
            checked += 1

    lr_acc = seed_means("sparse-ml.toml", "lr", "per_class_acc_top5")
    hs_acc = seed_means("sparse-ml.toml", "hs-lr", "per_class_acc_top5")
    ss_acc = seed_means("sparse-ml.toml", "ss-lr", "per_class_acc_top5")
    ordering = hs_acc.mean() > lr_acc.mean() and ss_acc.mean() > lr_acc.mean()
    ok = worst_ap < 1e-12 and ordering
    accept(f"criterion 7 {verdict(ok)}: average precision vs exhaustive oracle on "
           f"{checked} binary lists (length <= 8): max gap {worst_ap:.2e} < 1e-12; "
           f"per-class acc hs-lr {hs_acc.mean():.4f} and ss-lr {ss_acc.mean():.4f} "
           f"> lr {lr_acc.mean():.4f} over 10 seeds")
    assert worst_ap < 1e-12
    assert hs_acc.mean() > lr_acc.mean()
    assert ss_acc.mean() > lr_acc.mean()


def test_criterion_8_wilcoxon_exactness(accept):
    res = wilcoxon_signed_rank(np.arange(1.0, 6.0), np.zeros(5))
    exact_5 = res.p_value
    rng = seeded_rng(2024)
    worst = 0.0
    for _ in range(10):
        a = rng.standard_normal(20) + 0.4
        b = rng.standard_normal(20)
        p_exact = wilcoxon_signed_rank(a, b, method="exact").p_value
        p_normal = wilcoxon_signed_rank(a, b, method="normal").p_value
        worst = max(worst, abs(p_exact - p_normal))
    ok = exact_5 == 0.0625 and worst < 0.02
    accept(f"criterion 8 {verdict(ok)}: exact p for 5 all-positive differences "
           f"= {exact_5} (expected 0.0625); exact vs normal at n=20: max gap "
           f"{worst:.4f} < 0.02")
    assert exact_5 == 0.0625
    assert worst < 0.02


def test_criterion_9_byte_determinism(accept, tmp_path, monkeypatch):
    monkeypatch.delenv("FOCUSLR_OUTPUT_ROOT", raising=False)
    cfg_path = os.path.join(CONFIG_DIR, "blobs100.toml")
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["train", "--config", cfg_path, "--out", out_a]) == 0
    assert main(["train", "--config", cfg_path, "--out", out_b]) == 0
    identical = {}
    for name in ("lr_s0.trace.csv", "lr_s0.eval.json"):
        with open(os.path.join(out_a, name), "rb") as fa, \
             open(os.path.join(out_b, name), "rb") as fb:
            identical[name] = fa.read() == fb.read()
    ok = all(identical.values())
    accept(f"criterion 9 {verdict(ok)}: repeated train run on the reference "
           f"config: trace CSV byte-identical = {identical['lr_s0.trace.csv']}, "
           f"eval report byte-identical = {identical['lr_s0.eval.json']}")
    assert all(identical.values()), identical
