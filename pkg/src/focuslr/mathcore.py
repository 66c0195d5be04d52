"""Numerically stable scalar/vector primitives shared by every objective.

All arithmetic is float64. The log-domain helpers never evaluate
``log(p)`` on a clamped probability; they work directly on logits via
softplus / log-sum-exp identities, so they stay finite for any finite
input (|z| up to 1e6 and beyond).
"""

import numpy as np

from .errors import InvalidInput

__all__ = [
    "sigmoid",
    "log_sigmoid",
    "softplus",
    "softmax",
    "log_softmax",
    "check_logits",
    "seeded_rng",
]


def _as_finite_array(z, name):
    arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} must be finite, found NaN/Inf")
    return arr


def check_logits(z):
    """Validate a logit vector: 1-D, length >= 2, all entries finite.

    Returns the validated float64 array.
    """
    arr = _as_finite_array(z, "logits")
    if arr.ndim != 1:
        raise InvalidInput(f"logits must be 1-D, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise InvalidInput("logits need at least 2 classes")
    return arr


def sigmoid(z):
    """1 / (1 + exp(-z)), overflow-free on both tails.

    Computed from exp(-|z|) so the exponent argument is always <= 0.
    Accepts scalars or arrays; returns the matching shape.
    """
    arr = _as_finite_array(z, "z")
    e = np.exp(-np.abs(arr))
    out = np.where(arr >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def softplus(x):
    """log(1 + exp(x)) via max(x, 0) + log1p(exp(-|x|)); stable on both tails."""
    arr = _as_finite_array(x, "x")
    out = np.maximum(arr, 0.0) + np.log1p(np.exp(-np.abs(arr)))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def log_sigmoid(z):
    """log(sigmoid(z)) = -softplus(-z).

    Use ``log_sigmoid(-z)`` for log(1 - sigmoid(z)); both stay finite for
    any finite z (asymptotically ~ z on the negative tail, never -inf).
    """
    arr = _as_finite_array(z, "z")
    out = -(np.maximum(-arr, 0.0) + np.log1p(np.exp(-np.abs(arr))))
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def softmax(z, axis=-1):
    """exp(z_k) / sum_j exp(z_j) after subtracting max(z) along ``axis``.

    Output entries are in [0, 1] and sum to 1 along ``axis``.
    """
    arr = _as_finite_array(z, "logits")
    if arr.shape[axis] < 2:
        raise InvalidInput("softmax needs at least 2 classes")
    shifted = arr - np.max(arr, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    """z - max(z) - log(sum exp(z - max(z))); exp of it equals softmax."""
    arr = _as_finite_array(z, "logits")
    if arr.shape[axis] < 2:
        raise InvalidInput("log_softmax needs at least 2 classes")
    shifted = arr - np.max(arr, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def seeded_rng(seed, *stream):
    """Deterministic random stream: PCG64 seeded through a SeedSequence.

    The generator is numpy's PCG64 (O'Neill's permuted congruential
    generator); standard-normal draws use numpy's ziggurat sampler.  Both
    are specified algorithms with platform-independent streams, so the
    same ``(seed, *stream)`` yields bit-identical draws everywhere.

    Optional ``stream`` integers derive independent substreams from one
    run seed (e.g. ``seeded_rng(seed, 1)`` for shuffling vs. init).
    """
    # SeedSequence wants unsigned entropy; fold negative seeds into uint64.
    words = [int(w) & 0xFFFFFFFFFFFFFFFF for w in (seed, *stream)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
