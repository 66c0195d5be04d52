"""Multi-class objectives with exact logit gradients and loss decomposition.

Five variants over logits ``z`` of length K with ground-truth label set P:

* ``sr``    softmax cross-entropy, single label: ``-log softmax(z)_y``
* ``lr``    per-class Bernoulli log-likelihood summed over all K classes
* ``hs-lr`` logistic loss restricted to the hardest (highest-probability)
            negative classes, reweighted by ``alpha = beta / n_sel``
* ``ss-lr`` logistic loss with every negative class weighted by its own
            predicted probability to the power ``r`` and ``alpha = beta / n_neg``
* ``hs-sr`` the hard-selection structure applied on softmax probabilities

Every evaluation returns the scalar loss, the exact gradient w.r.t. the
logits, and the positive/negative decomposition (loss terms and gradient
norms split by ground-truth vs. other classes) used by the training
diagnostics.  All log-probability terms are computed through softplus /
log-sum-exp identities, never ``log(clamp(p))``.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, InvalidInput
from .mathcore import check_logits, log_softmax, seeded_rng, sigmoid, softmax

__all__ = [
    "GRAD_CHECK_TOLERANCE",
    "Variant",
    "LossConfig",
    "LossOutput",
    "BatchLossOutput",
    "positive_indices",
    "hard_selection_count",
    "select_hard_negatives",
    "sr_loss",
    "lr_loss",
    "hs_lr_loss",
    "ss_lr_loss",
    "hs_sr_loss",
    "evaluate",
    "evaluate_batch",
    "grad_check",
]


class Variant(str, Enum):
    SR = "sr"
    LR = "lr"
    HS_LR = "hs-lr"
    SS_LR = "ss-lr"
    HS_SR = "hs-sr"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower().replace("_", "-"))
        except ValueError:
            valid = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown loss variant {name!r} (valid: {valid})") from None


#: Variants that record a hard-selected negative set.
_HARD_VARIANTS = (Variant.HS_LR, Variant.HS_SR)
#: Variants restricted to exactly one positive label.
_SINGLE_LABEL_VARIANTS = (Variant.SR, Variant.HS_SR)


@dataclass(frozen=True)
class LossConfig:
    """Variant selector plus hyperparameters.

    ``m``             selection rate in percent for the hard variants
    ``beta``          focus weight numerator (alpha = beta / n_sel or beta / n_neg)
    ``r``             attending exponent of the soft weight (p_k)^r
    ``detach_weight`` soft-selection gradient mode: when True the weight
                      (p_k)^r is held constant during differentiation
    Parameters not used by a variant are ignored.
    """

    variant: Variant
    m: float = 25.0
    beta: float = 10.0
    r: float = 2.0
    detach_weight: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not (0.0 <= self.m <= 100.0):
            raise ConfigError(f"selection rate m must be in [0, 100], got {self.m}")
        if not self.beta > 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.r < 0.0:
            raise ConfigError(f"attending parameter r must be >= 0, got {self.r}")


@dataclass
class LossOutput:
    """Scalar loss, exact gradient, and positive/negative decomposition.

    ``loss == pos_loss + neg_loss`` up to rounding.  ``selected_negatives``
    is populated by the hard-selection variants only (descending
    probability, ties by ascending class index).
    """

    loss: float
    grad: np.ndarray
    pos_loss: float
    neg_loss: float
    pos_grad_norm: float
    neg_grad_norm: float
    selected_negatives: tuple = None


@dataclass
class BatchLossOutput:
    """Per-sample loss quantities for a batch, in row order."""

    losses: np.ndarray          # (B,)
    grads: np.ndarray           # (B, K) gradient of each sample's loss w.r.t. its logits
    pos_losses: np.ndarray      # (B,)
    neg_losses: np.ndarray      # (B,)
    pos_grad_norms: np.ndarray  # (B,)
    neg_grad_norms: np.ndarray  # (B,)
    selected: list = None       # per-row index arrays for hard variants

    @property
    def mean_loss(self):
        return float(np.mean(self.losses))

    def row(self, i):
        sel = None if self.selected is None else tuple(int(j) for j in self.selected[i])
        return LossOutput(
            loss=float(self.losses[i]),
            grad=self.grads[i],
            pos_loss=float(self.pos_losses[i]),
            neg_loss=float(self.neg_losses[i]),
            pos_grad_norm=float(self.pos_grad_norms[i]),
            neg_grad_norm=float(self.neg_grad_norms[i]),
            selected_negatives=sel,
        )


def positive_indices(y, k):
    """Canonicalize a label (int or iterable of ints) to a sorted index array.

    Raises InvalidInput on empty, duplicate, or out-of-range labels.
    """
    if np.isscalar(y) or isinstance(y, (int, np.integer)):
        idx = np.array([int(y)], dtype=np.int64)
    else:
        idx = np.array(sorted(int(i) for i in y), dtype=np.int64)
    if idx.size == 0:
        raise InvalidInput("label set must be non-empty")
    if np.unique(idx).size != idx.size:
        raise InvalidInput(f"label set has duplicate indices: {idx.tolist()}")
    if idx[0] < 0 or idx[-1] >= k:
        raise InvalidInput(f"label indices {idx.tolist()} out of range for K={k}")
    return idx


def hard_selection_count(m, n_neg):
    """Number of negatives kept at selection rate ``m``%: floor(m% * n_neg),
    clamped to at least 1 so the selection (and alpha) is always defined."""
    if not (0.0 <= m <= 100.0):
        raise ConfigError(f"selection rate m must be in [0, 100], got {m}")
    return max(1, int(np.floor(m * n_neg / 100.0)))


def select_hard_negatives(p, y, m):
    """Indices of the hardest negative classes under probabilities ``p``.

    Keeps the ``hard_selection_count(m, n_neg)`` negatives with highest
    probability; ties broken by ascending class index.  The result is
    ordered by descending probability, then ascending index.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidInput(f"probability vector must be 1-D, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidInput("probabilities must be finite")
    k = p.shape[0]
    pos = positive_indices(y, k)
    n_neg = k - pos.size
    if n_neg == 0:
        raise InvalidInput("no negative classes to select from (all classes positive)")
    n_sel = hard_selection_count(m, n_neg)
    key = -p.copy()
    key[pos] = np.inf  # positives sort last
    order = np.argsort(key, kind="stable")  # stable: equal p -> ascending index
    return order[:n_sel].astype(np.int64)


def _pos_mask(labels, k):
    """Boolean (B, K) mask from a sequence of labels (ints or index tuples)."""
    mask = np.zeros((len(labels), k), dtype=bool)
    for i, y in enumerate(labels):
        mask[i, positive_indices(y, k)] = True
    return mask


def _decompose(losses_per_class, grads, pos_mask):
    pos_losses = np.sum(np.where(pos_mask, losses_per_class, 0.0), axis=1)
    neg_losses = np.sum(np.where(pos_mask, 0.0, losses_per_class), axis=1)
    pos_norms = np.sqrt(np.sum(np.where(pos_mask, grads, 0.0) ** 2, axis=1))
    neg_norms = np.sqrt(np.sum(np.where(pos_mask, 0.0, grads) ** 2, axis=1))
    return pos_losses, neg_losses, pos_norms, neg_norms


def _check_batch(z, labels):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise InvalidInput(f"batch logits must be (B, K>=2), got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInput("logits must be finite, found NaN/Inf")
    if len(labels) != z.shape[0]:
        raise InvalidInput(f"{len(labels)} label rows for {z.shape[0]} logit rows")
    return z


def _require_single_label(pos_mask, variant):
    if np.any(pos_mask.sum(axis=1) != 1):
        raise InvalidInput(f"{variant.value} supports single-label targets only")


def _sr_batch(z, pos_mask):
    logp = log_softmax(z, axis=1)
    p = np.exp(logp)
    losses = -logp[pos_mask].reshape(-1)
    grads = p - pos_mask.astype(np.float64)
    pos_norms = np.abs(grads[pos_mask]).reshape(-1)
    neg_norms = np.sqrt(np.sum(np.where(pos_mask, 0.0, grads) ** 2, axis=1))
    # The softmax loss has no separable negative term: the whole value is
    # attributed to the positive class, only the gradient is split.
    return BatchLossOutput(
        losses=losses,
        grads=grads,
        pos_losses=losses.copy(),
        neg_losses=np.zeros_like(losses),
        pos_grad_norms=pos_norms,
        neg_grad_norms=neg_norms,
    )


def _lr_family_batch(z, pos_mask, cfg):
    sig_pos = sigmoid(z)            # sigma(z)
    sig_neg = sigmoid(-z)           # 1 - sigma(z), computed stably
    nll_pos = np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))  # -log sigma(z)
    nll_neg = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))   # -log(1 - sigma(z))
    n_neg = (~pos_mask).sum(axis=1)
    if np.any(n_neg == 0):
        raise InvalidInput("every sample needs at least one negative class")

    selected = None
    if cfg.variant is Variant.LR:
        per_class = np.where(pos_mask, nll_pos, nll_neg)
        grads = np.where(pos_mask, -sig_neg, sig_pos)
    elif cfg.variant is Variant.HS_LR:
        n_sel = np.array([hard_selection_count(cfg.m, n) for n in n_neg])
        alpha = cfg.beta / n_sel
        key = np.where(pos_mask, np.inf, -sig_pos)
        order = np.argsort(key, axis=1, kind="stable")
        ranks = np.argsort(order, axis=1, kind="stable")
        sel_mask = ranks < n_sel[:, None]
        per_class = np.where(pos_mask, nll_pos, np.where(sel_mask, alpha[:, None] * nll_neg, 0.0))
        grads = np.where(pos_mask, -sig_neg, np.where(sel_mask, alpha[:, None] * sig_pos, 0.0))
        selected = [order[i, : n_sel[i]].astype(np.int64) for i in range(z.shape[0])]
    elif cfg.variant is Variant.SS_LR:
        alpha = cfg.beta / n_neg
        w = np.power(sig_pos, cfg.r)  # 0**0 == 1 under IEEE pow
        per_class = np.where(pos_mask, nll_pos, alpha[:, None] * w * nll_neg)
        if cfg.detach_weight:
            grad_neg = alpha[:, None] * w * sig_pos
        else:
            grad_neg = alpha[:, None] * (cfg.r * w * sig_neg * nll_neg + w * sig_pos)
        grads = np.where(pos_mask, -sig_neg, grad_neg)
    else:  # pragma: no cover - guarded by evaluate_batch dispatch
        raise ConfigError(f"not a logistic-family variant: {cfg.variant}")

    losses = per_class.sum(axis=1)
    pos_losses, neg_losses, pos_norms, neg_norms = _decompose(per_class, grads, pos_mask)
    return BatchLossOutput(losses, grads, pos_losses, neg_losses, pos_norms, neg_norms, selected)


def _logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def _hs_sr_single(z, y, cfg):
    k = z.shape[0]
    logp = log_softmax(z)
    p = np.exp(logp)
    sel = select_hard_negatives(p, y, cfg.m)
    n_sel = sel.size
    alpha = cfg.beta / n_sel

    # log(1 - p_k) computed as lse(z without k) - lse(z): finite for finite z.
    lse = _logsumexp(z)
    z_minus = np.tile(z, (n_sel, 1))
    z_minus[np.arange(n_sel), sel] = -np.inf
    lse_minus = _logsumexp(z_minus, axis=1)

    pos_loss = float(-logp[y])
    neg_loss = float(alpha * np.sum(lse - lse_minus))

    # Chain rule through the full softmax: grad_j = a_j - p_j * sum(a),
    # a_y = -1 and a_k = alpha * p_k / (1 - p_k) for selected k.
    a = np.zeros(k)
    a[y] = -1.0
    a[sel] = alpha * np.exp(z[sel] - lse_minus)
    grad = a - p * a.sum()

    per_class = np.zeros(k)
    per_class[y] = pos_loss
    per_class[sel] = alpha * (lse - lse_minus)
    pos_mask = np.zeros(k, dtype=bool)
    pos_mask[y] = True
    pos_norm = float(np.abs(grad[y]))
    neg_norm = float(np.sqrt(np.sum(grad[~pos_mask] ** 2)))
    return LossOutput(
        loss=pos_loss + neg_loss,
        grad=grad,
        pos_loss=pos_loss,
        neg_loss=neg_loss,
        pos_grad_norm=pos_norm,
        neg_grad_norm=neg_norm,
        selected_negatives=tuple(int(j) for j in sel),
    )


def _hs_sr_batch(z, pos_mask, cfg):
    _require_single_label(pos_mask, Variant.HS_SR)
    ys = np.argmax(pos_mask, axis=1)
    outs = [_hs_sr_single(z[i], int(ys[i]), cfg) for i in range(z.shape[0])]
    return BatchLossOutput(
        losses=np.array([o.loss for o in outs]),
        grads=np.stack([o.grad for o in outs]),
        pos_losses=np.array([o.pos_loss for o in outs]),
        neg_losses=np.array([o.neg_loss for o in outs]),
        pos_grad_norms=np.array([o.pos_grad_norm for o in outs]),
        neg_grad_norms=np.array([o.neg_grad_norm for o in outs]),
        selected=[np.array(o.selected_negatives, dtype=np.int64) for o in outs],
    )


def evaluate_batch(z, labels, cfg):
    """Evaluate ``cfg.variant`` on a batch of logits (B, K).

    ``labels`` is a sequence of ints (single-label) or index tuples.
    Returns per-sample losses, gradients, and decompositions.
    """
    z = _check_batch(z, labels)
    pos_mask = _pos_mask(labels, z.shape[1])
    if cfg.variant in _SINGLE_LABEL_VARIANTS:
        _require_single_label(pos_mask, cfg.variant)
    if cfg.variant is Variant.SR:
        return _sr_batch(z, pos_mask)
    if cfg.variant is Variant.HS_SR:
        return _hs_sr_batch(z, pos_mask, cfg)
    return _lr_family_batch(z, pos_mask, cfg)


def evaluate(z, y, cfg):
    """Evaluate ``cfg.variant`` on a single sample. Returns a LossOutput."""
    z = check_logits(z)
    return evaluate_batch(z[None, :], [y], cfg).row(0)


def _checked_cfg(cfg, variant):
    if cfg is None:
        return LossConfig(variant)
    if cfg.variant is not variant:
        raise ConfigError(f"config variant {cfg.variant.value!r} passed to the {variant.value} loss")
    return cfg


def sr_loss(z, y):
    """Softmax cross-entropy ``-log softmax(z)_y`` with gradient ``p - onehot(y)``."""
    return evaluate(z, y, LossConfig(Variant.SR))


def lr_loss(z, y):
    """Sum of per-class binary cross-entropies over all K classes.

    ``pos_loss`` collects the ground-truth terms ``-log sigma(z_k)``,
    ``neg_loss`` the remaining ``-log(1 - sigma(z_k))``; the gradient is
    ``sigma(z) - q`` with q the label indicator.
    """
    return evaluate(z, y, LossConfig(Variant.LR))


def hs_lr_loss(z, y, cfg=None):
    """Hard-selection logistic loss.

    Keeps the ``n_sel = max(1, floor(m% * n_neg))`` highest-probability
    negative classes, each weighted by ``alpha = beta / n_sel``; unselected
    negatives contribute exactly zero loss and gradient.
    """
    return evaluate(z, y, _checked_cfg(cfg, Variant.HS_LR))


def ss_lr_loss(z, y, cfg=None):
    """Soft-selection logistic loss.

    Every negative class k is weighted by ``(p_k)^r`` with
    ``alpha = beta / n_neg``; at ``r = 0`` this coincides with hard
    selection at m = 100.  With ``detach_weight`` the weight is treated as
    a constant in the gradient; otherwise the product rule applies.
    """
    return evaluate(z, y, _checked_cfg(cfg, Variant.SS_LR))


def hs_sr_loss(z, y, cfg=None):
    """Hard selection applied on softmax probabilities (single label).

    ``loss = -log p_y - alpha * sum_{k selected} log(1 - p_k)`` with
    ``p = softmax(z)``; the gradient runs through the full softmax Jacobian.
    """
    return evaluate(z, y, _checked_cfg(cfg, Variant.HS_SR))


# ---------------------------------------------------------------------------
# Finite-difference validation harness


def _selection_gap(z, y, cfg):
    """Distance between the last-selected and first-unselected negative
    probability; np.inf when every negative is selected."""
    if cfg.variant is Variant.HS_SR:
        p = softmax(z)
    else:
        p = sigmoid(z)
    pos = positive_indices(y, z.shape[0])
    neg = np.setdiff1d(np.arange(z.shape[0]), pos)
    n_sel = hard_selection_count(cfg.m, neg.size)
    if n_sel >= neg.size:
        return np.inf
    q = np.sort(p[neg])[::-1]
    return float(q[n_sel - 1] - q[n_sel])


def _fd_target(z0, y, cfg):
    """Scalar function whose exact gradient the analytic path claims to compute.

    For the detached soft-selection mode that is the surrogate with the
    weights ``(p_k)^r`` frozen at ``z0``; for every other variant it is the
    loss itself.
    """
    if cfg.variant is Variant.SS_LR and cfg.detach_weight:
        k = z0.shape[0]
        pos = positive_indices(y, k)
        neg_mask = np.ones(k, dtype=bool)
        neg_mask[pos] = False
        w = np.power(sigmoid(z0)[neg_mask], cfg.r)
        alpha = cfg.beta / int(neg_mask.sum())

        def frozen(z):
            nll_pos = np.maximum(-z[pos], 0.0) + np.log1p(np.exp(-np.abs(z[pos])))
            nll_neg = np.maximum(z[neg_mask], 0.0) + np.log1p(np.exp(-np.abs(z[neg_mask])))
            return float(np.sum(nll_pos) + alpha * np.sum(w * nll_neg))

        return frozen
    return lambda z: evaluate(z, y, cfg).loss


# every variant's analytic gradient must beat this against central
# finite differences
GRAD_CHECK_TOLERANCE = 1e-5


def grad_check(cfg, k, trials=100, seed=0, step=1e-6):
    """Max relative gap between analytic and central finite-difference gradients.

    Draws ``z ~ N(0,1)^k`` with a uniform single label per trial.  Hard
    selection is non-differentiable where two negatives tie at the
    selection boundary, so draws whose boundary gap is below 1e-4 are
    rejected and redrawn (excluded subgradient points).  Returns
    ``max over trials of ||g - g_fd||_inf / (||g_fd||_inf + 1e-12)``.
    """
    if trials < 1:
        raise InvalidInput("trials must be >= 1")
    rng = seeded_rng(seed)
    worst = 0.0
    for _ in range(trials):
        for _attempt in range(500):
            z = rng.standard_normal(k)
            y = int(rng.integers(k))
            if cfg.variant not in _HARD_VARIANTS or _selection_gap(z, y, cfg) > 1e-4:
                break
        else:  # pragma: no cover - astronomically unlikely
            raise RuntimeError("could not draw a tie-free input for the hard selection")
        analytic = evaluate(z, y, cfg).grad
        f = _fd_target(z, y, cfg)
        g_fd = np.empty(k)
        for j in range(k):
            zp, zm = z.copy(), z.copy()
            zp[j] += step
            zm[j] -= step
            g_fd[j] = (f(zp) - f(zm)) / (2.0 * step)
        err = np.max(np.abs(analytic - g_fd)) / (np.max(np.abs(g_fd)) + 1e-12)
        worst = max(worst, float(err))
    return worst
