"""Evaluation measures for the three task shapes, plus the paired
significance test.

All values are fractions in [0, 1].  Ties are broken by the lowest index
everywhere (argmax over classes, ranking positions, gallery order), so
every metric is a pure function of its inputs.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, InvalidInput

__all__ = [
    "EvalReport",
    "top1_accuracy",
    "balanced_accuracy",
    "average_precision",
    "MultilabelReport",
    "multilabel_report",
    "RetrievalReport",
    "retrieval_eval",
    "WilcoxonResult",
    "wilcoxon_signed_rank",
]

_REPORT_FIELDS = (
    "top1",
    "balanced_per_class_acc",
    "per_image_acc_top5",
    "per_class_acc_top5",
    "per_image_map",
    "per_class_map",
    "rank1",
    "map_retrieval",
)


@dataclass
class EvalReport:
    """Task-dependent metric bundle; absent metrics stay None, never 0."""

    top1: float = None
    balanced_per_class_acc: float = None
    per_image_acc_top5: float = None
    per_class_acc_top5: float = None
    per_image_map: float = None
    per_class_map: float = None
    rank1: float = None
    map_retrieval: float = None
    excluded: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in _REPORT_FIELDS:
            v = getattr(self, name)
            if v is None:
                continue
            v = float(v)
            if not (0.0 <= v <= 1.0):
                raise InvalidInput(f"{name} must be in [0, 1], got {v}")
            setattr(self, name, v)

    def populated(self):
        return {k: getattr(self, k) for k in _REPORT_FIELDS if getattr(self, k) is not None}

    def save(self, path):
        payload = dict(self.populated())
        if self.excluded:
            payload["excluded"] = self.excluded
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        excluded = payload.pop("excluded", {})
        unknown = set(payload) - set(_REPORT_FIELDS)
        if unknown:
            raise InvalidInput(f"unknown report keys {sorted(unknown)}")
        return cls(excluded=excluded, **payload)


def _single_labels(labels):
    out = []
    for i, row in enumerate(labels):
        if np.isscalar(row):
            out.append(int(row))
            continue
        row = tuple(row)
        if len(row) != 1:
            raise InvalidInput(f"row {i}: expected a single label, got {row}")
        out.append(int(row[0]))
    return np.array(out, dtype=np.int64)


def _labelsets(labels):
    return [frozenset((int(row),) if np.isscalar(row) else (int(c) for c in row)) for row in labels]


def top1_accuracy(logits, labels):
    """Fraction of rows whose highest logit (lowest index on ties) is the
    true class."""
    logits = np.asarray(logits, dtype=float)
    y = _single_labels(labels)
    if logits.ndim != 2 or logits.shape[0] != len(y):
        raise InvalidInput(f"logits shape {logits.shape} does not match {len(y)} labels")
    if logits.shape[0] == 0:
        raise InvalidInput("cannot score an empty batch")
    return float(np.mean(np.argmax(logits, axis=1) == y))


def balanced_accuracy(predictions, labels, k, detail=False):
    """Mean per-class recall over classes present in the ground truth.

    ``predictions`` may be one predicted class per row or a prediction set
    per row (top-t style); a class counts as recalled when it appears in
    the row's prediction set.  Absent classes are excluded from the mean;
    with detail=True the per-class recalls (NaN where absent) and the
    absent class list come back too.
    """
    truth = _labelsets(labels)
    preds = [frozenset((int(p),)) if np.isscalar(p) else frozenset(int(c) for c in p)
             for p in predictions]
    if len(preds) != len(truth):
        raise InvalidInput(f"{len(preds)} prediction rows but {len(truth)} label rows")
    support = np.zeros(k, dtype=np.int64)
    hits = np.zeros(k, dtype=np.int64)
    for t, p in zip(truth, preds):
        for c in t:
            if c >= k:
                raise InvalidInput(f"label {c} out of range for K={k}")
            support[c] += 1
            hits[c] += c in p
    present = support > 0
    if not present.any():
        raise InvalidInput("no class has any ground-truth row; balanced accuracy undefined")
    recalls = np.full(k, np.nan)
    recalls[present] = hits[present] / support[present]
    value = float(np.mean(recalls[present]))
    if detail:
        return value, recalls, tuple(int(c) for c in np.flatnonzero(~present))
    return value


def average_precision(ranked_relevance):
    """AP of a binary relevance list already in rank order: the mean of
    precision@i over the relevant positions i."""
    rel = np.asarray(ranked_relevance)
    if rel.ndim != 1 or rel.size == 0:
        raise InvalidInput(f"relevance must be a non-empty 1-D list, got shape {rel.shape}")
    if not np.all((rel == 0) | (rel == 1)):
        raise InvalidInput("relevance entries must be 0 or 1")
    rel = rel.astype(float)
    n_rel = rel.sum()
    if n_rel == 0:
        raise InvalidInput("no relevant item; AP undefined (caller should skip and count)")
    precision_at = np.cumsum(rel) / np.arange(1, rel.size + 1)
    return float(precision_at[rel == 1].sum() / n_rel)


def _rank_descending(scores):
    # argsort of -scores; kind="stable" keeps equal scores in index order
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


@dataclass
class MultilabelReport:
    per_image_acc: float
    per_class_acc: float
    per_image_map: float
    per_class_map: float
    t: int
    skipped_images: int = 0

    def as_eval_report(self):
        return EvalReport(
            per_image_acc_top5=self.per_image_acc,
            per_class_acc_top5=self.per_class_acc,
            per_image_map=self.per_image_map,
            per_class_map=self.per_class_map,
            excluded={"images_without_labels": self.skipped_images} if self.skipped_images else {},
        )


def multilabel_report(scores, labelsets, t=5):
    """Top-t prediction quality for multi-label data, four readings.

    per_image_acc: mean over images of |top-t and truth| / min(t, |truth|),
    so an image with fewer than t labels can still score 1.0.
    per_class_acc: mean over classes of recall within the top-t sets.
    per_image_map: each image ranks all K classes; AP against its truth set.
    per_class_map: each class ranks all images by its score column; AP
    against the images that carry the class.
    Images with an empty truth set are excluded and counted.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise InvalidInput(f"scores must be 2-D, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise InvalidInput("scores must be finite")
    n, k = scores.shape
    truth = _labelsets(labelsets)
    if len(truth) != n:
        raise InvalidInput(f"{n} score rows but {len(truth)} label rows")
    if t < 1:
        raise InvalidInput(f"t must be >= 1, got {t}")
    keep = [i for i, s in enumerate(truth) if s]
    skipped = n - len(keep)
    if not keep:
        raise InvalidInput("every image has an empty truth set")
    scores = scores[keep]
    truth = [truth[i] for i in keep]
    if any(max(s) >= k for s in truth):
        raise InvalidInput(f"label out of range for K={k}")

    img_acc = []
    img_ap = []
    top_sets = []
    for row, labels in zip(scores, truth):
        order = _rank_descending(row)
        top = frozenset(int(c) for c in order[:t])
        top_sets.append(top)
        img_acc.append(len(top & labels) / min(t, len(labels)))
        img_ap.append(average_precision([1 if int(c) in labels else 0 for c in order]))

    per_class_acc = balanced_accuracy(top_sets, [tuple(s) for s in truth], k)

    class_ap = []
    for c in range(k):
        positives = [c in labels for labels in truth]
        if not any(positives):
            continue
        order = _rank_descending(scores[:, c])
        class_ap.append(average_precision([1 if positives[i] else 0 for i in order]))

    return MultilabelReport(
        per_image_acc=float(np.mean(img_acc)),
        per_class_acc=per_class_acc,
        per_image_map=float(np.mean(img_ap)),
        per_class_map=float(np.mean(class_ap)),
        t=int(t),
        skipped_images=skipped,
    )


def _distance_matrix(query, gallery, metric):
    if metric == "euclidean":
        d2 = (np.sum(query**2, axis=1)[:, None] - 2.0 * query @ gallery.T
              + np.sum(gallery**2, axis=1)[None, :])
        return np.sqrt(np.maximum(d2, 0.0))
    if metric == "cosine":
        qn = np.linalg.norm(query, axis=1)
        gn = np.linalg.norm(gallery, axis=1)
        if np.any(qn < 1e-12) or np.any(gn < 1e-12):
            raise InvalidInput("cosine distance undefined for zero-norm embeddings")
        return 1.0 - (query / qn[:, None]) @ (gallery / gn[:, None]).T
    raise InvalidInput(f"unknown distance metric {metric!r} (use 'cosine' or 'euclidean')")


@dataclass
class RetrievalReport:
    rank1: float
    map: float
    metric: str
    skipped_queries: int = 0

    def as_eval_report(self):
        return EvalReport(
            rank1=self.rank1,
            map_retrieval=self.map,
            excluded={"queries_without_match": self.skipped_queries} if self.skipped_queries else {},
        )


def retrieval_eval(query_emb, gallery_emb, query_ids, gallery_ids, metric="cosine"):
    """Rank-1 and mAP for identity retrieval.

    Each query ranks the whole gallery by ascending distance (ties by
    gallery index); Rank-1 asks whether the nearest item shares the id,
    mAP averages AP of the ranked relevance lists.  Queries with no
    gallery match are excluded and counted.
    """
    query = np.asarray(query_emb, dtype=float)
    gallery = np.asarray(gallery_emb, dtype=float)
    if query.ndim != 2 or gallery.ndim != 2 or query.shape[1] != gallery.shape[1]:
        raise InvalidInput(f"embedding shapes incompatible: {query.shape} vs {gallery.shape}")
    qids = _single_labels(query_ids)
    gids = _single_labels(gallery_ids)
    if len(qids) != query.shape[0] or len(gids) != gallery.shape[0]:
        raise InvalidInput("id count does not match embedding rows")
    if query.shape[0] == 0 or gallery.shape[0] == 0:
        raise InvalidInput("query and gallery must be non-empty")
    dist = _distance_matrix(query, gallery, metric)
    rank1_hits = []
    aps = []
    skipped = 0
    for row, qid in zip(dist, qids):
        matches = gids == qid
        if not matches.any():
            skipped += 1
            continue
        order = np.argsort(row, kind="stable")
        rank1_hits.append(bool(matches[order[0]]))
        aps.append(average_precision(matches[order].astype(int)))
    if not aps:
        raise InvalidInput("no query has a gallery match")
    return RetrievalReport(
        rank1=float(np.mean(rank1_hits)),
        map=float(np.mean(aps)),
        metric=metric,
        skipped_queries=skipped,
    )


def _midranks(values):
    """Average ranks (1-based) with ties sharing their group mean."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str


def wilcoxon_signed_rank(paired_a, paired_b, method="auto"):
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped.  W = min(W+, W-).  For n <= 20 the
    p-value is exact: all 2^n sign assignments of the (mid)ranks are
    enumerated and p = P(min(W+, W-) <= observed).  For n > 20 a normal
    approximation with tie correction and continuity correction is used.
    ``method`` forces 'exact' or 'normal' (which needs no size limit); the
    default picks by n.
    """
    a = np.asarray(paired_a, dtype=float)
    b = np.asarray(paired_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInput(f"paired samples must be equal-length 1-D lists, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInput("paired samples must be finite")
    diff = a - b
    diff = diff[diff != 0.0]
    n = diff.size
    if n < 5:
        raise InsufficientData(f"need >= 5 non-zero differences, got {n}")
    ranks = _midranks(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    w = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if n <= 20 else "normal"
    if method == "exact":
        if n > 20:
            raise InvalidInput(f"exact enumeration limited to n <= 20, got {n}")
        masks = np.arange(2**n, dtype=np.uint32)
        w_pos = np.zeros(2**n)
        for j in range(n):
            w_pos += ((masks >> j) & 1) * ranks[j]
        total = ranks.sum()
        count = np.count_nonzero(np.minimum(w_pos, total - w_pos) <= w + 1e-12)
        p = count / 2.0**n
    elif method == "normal":
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        # tie correction: subtract sum(t^3 - t)/48 over tie groups
        _, tie_counts = np.unique(np.abs(diff), return_counts=True)
        var -= float(np.sum(tie_counts.astype(float)**3 - tie_counts)) / 48.0
        if var <= 0:
            raise InsufficientData("zero variance after tie correction")
        z = (w - mean + 0.5) / math.sqrt(var)
        p = min(1.0, math.erfc(-z / math.sqrt(2.0)))
    else:
        raise InvalidInput(f"unknown method {method!r} (use 'auto', 'exact', or 'normal')")
    return WilcoxonResult(statistic=w, p_value=float(p), n=int(n), method=method)
