"""Small fully connected ReLU networks with handwritten backprop, plus the
optimizers and deterministic training loop used throughout the package.

Everything here is plain numpy.  The backward pass consumes the cache
returned by the forward pass; caches are invalidated as soon as the
parameters change, which turns "backward through stale activations" from
a silent wrong answer into an error.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import TrainingTrace, record_step
from .errors import InvalidInput, TrainingDiverged
from .losses import evaluate_batch
from .mathcore import seeded_rng

__all__ = [
    "Mlp",
    "SgdMomentum",
    "Adam",
    "make_optimizer",
    "TrainResult",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_FORMAT = "focuslr.checkpoint"
CHECKPOINT_VERSION = 1


class Mlp:
    """Fully connected network: affine -> ReLU for each hidden layer, then a
    final affine layer producing logits.

    Weights are stored as (fan_in, fan_out) float64 matrices so a batch
    flows as ``a @ W + b``.  Hidden weights are drawn N(0, 2/fan_in) and
    the output layer N(0, 1/fan_in); biases start at zero.
    """

    def __init__(self, layer_dims, rng):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2:
            raise InvalidInput(f"need at least input and output dims, got {layer_dims}")
        if any(d < 1 for d in dims):
            raise InvalidInput(f"layer dims must be positive, got {layer_dims}")
        if dims[-1] < 2:
            raise InvalidInput(f"output layer must have >= 2 classes, got {dims[-1]}")
        self.layer_dims = dims
        self.weights = []
        self.biases = []
        last = len(dims) - 2
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            var = (1.0 if i == last else 2.0) / fan_in
            self.weights.append(rng.normal(0.0, np.sqrt(var), size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._version = 0

    @classmethod
    def from_arrays(cls, layer_dims, weights, biases):
        """Rebuild a network from explicit parameter arrays (checkpoint load)."""
        model = cls.__new__(cls)
        dims = [int(d) for d in layer_dims]
        if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
            raise InvalidInput("parameter count does not match layer_dims")
        model.layer_dims = dims
        model.weights = []
        model.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = np.asarray(weights[i], dtype=float)
            b = np.asarray(biases[i], dtype=float)
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise InvalidInput(f"layer {i}: expected shapes {(fan_in, fan_out)} and {(fan_out,)}, got {w.shape} and {b.shape}")
            model.weights.append(w)
            model.biases.append(b)
        model._version = 0
        return model

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_classes(self):
        return self.layer_dims[-1]

    def parameters(self):
        """Flat list of parameter arrays (weights then bias, layer by layer).

        The arrays are the live ones; optimizers update them in place and
        must be followed by :meth:`note_parameter_update`.
        """
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def note_parameter_update(self):
        """Invalidate outstanding forward caches after an in-place update."""
        self._version += 1

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise InvalidInput(f"expected inputs of shape (batch, {self.layer_dims[0]}), got {x.shape}")
        return x

    def forward(self, x):
        """Return (logits, cache).  The cache feeds :meth:`backward` and is
        only valid until the next parameter update."""
        a = self._check_input(x)
        inputs = [a]
        preacts = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            preacts.append(z)
            if i < self.n_layers - 1:
                a = np.maximum(z, 0.0)
                inputs.append(a)
        return preacts[-1], {"inputs": inputs, "preacts": preacts, "version": self._version}

    def logits(self, x):
        return self.forward(x)[0]

    def embed(self, x):
        """Activations of the last hidden layer (the input itself when the
        network is a single affine layer)."""
        a = self._check_input(x)
        for i in range(self.n_layers - 1):
            a = np.maximum(a @ self.weights[i] + self.biases[i], 0.0)
        return a

    def backward(self, cache, logit_grads):
        """Mean-over-batch parameter gradients from per-sample logit gradients.

        Returns a flat list aligned with :meth:`parameters`.  ReLU uses the
        0 subgradient at exactly 0.
        """
        if cache["version"] != self._version:
            raise InvalidInput("stale forward cache: parameters changed since forward()")
        g = np.asarray(logit_grads, dtype=float)
        batch = cache["inputs"][0].shape[0]
        if g.shape != (batch, self.n_classes):
            raise InvalidInput(f"expected logit grads of shape {(batch, self.n_classes)}, got {g.shape}")
        dz = g / batch
        grads = [None] * (2 * self.n_layers)
        for i in range(self.n_layers - 1, -1, -1):
            grads[2 * i] = cache["inputs"][i].T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            if i > 0:
                dz = (dz @ self.weights[i].T) * (cache["preacts"][i - 1] > 0.0)
        return grads


def _check_step_inputs(params, grads):
    if len(params) != len(grads):
        raise InvalidInput(f"got {len(grads)} gradients for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=float)
        if g.shape != p.shape:
            raise InvalidInput(f"parameter {i}: gradient shape {g.shape} != {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {i} (max |g| = {np.max(np.abs(g))})")


@dataclass
class SgdMomentum:
    """SGD with classical momentum and coupled L2 weight decay.

    velocity <- momentum * velocity + (grad + weight_decay * param)
    param    <- param - lr * velocity
    """

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    _velocity: list = field(default=None, repr=False)

    def __post_init__(self):
        # lr = 0 is legal: a frozen run must leave the model bit-identical
        if self.lr < 0:
            raise InvalidInput(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.momentum < 1.0):
            raise InvalidInput(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidInput(f"weight_decay must be >= 0, got {self.weight_decay}")

    def step(self, params, grads):
        _check_step_inputs(params, grads)
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for v, p, g in zip(self._velocity, params, grads):
            v *= self.momentum
            v += g + self.weight_decay * p
            p -= self.lr * v


@dataclass
class Adam:
    """Adam with bias correction; weight decay is added to the gradient
    (coupled), not applied as a separate decoupled shrink."""

    lr: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    _m: list = field(default=None, repr=False)
    _v: list = field(default=None, repr=False)
    _t: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidInput(f"lr must be >= 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            val = getattr(self, name)
            if not (0.0 <= val < 1.0):
                raise InvalidInput(f"{name} must be in [0, 1), got {val}")
        if self.eps <= 0:
            raise InvalidInput(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise InvalidInput(f"weight_decay must be >= 0, got {self.weight_decay}")

    def step(self, params, grads):
        _check_step_inputs(params, grads)
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        c1 = 1.0 - self.beta1**self._t
        c2 = 1.0 - self.beta2**self._t
        for m, v, p, g in zip(self._m, self._v, params, grads):
            g = g + self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind, **kwargs):
    kinds = {"sgd": SgdMomentum, "adam": Adam}
    if kind not in kinds:
        raise InvalidInput(f"unknown optimizer {kind!r} (use one of {sorted(kinds)})")
    return kinds[kind](**kwargs)


@dataclass
class TrainResult:
    model: Mlp
    trace: TrainingTrace
    diverged: bool = False
    reason: str = ""


def _batch_accuracy(logits, labelsets):
    preds = np.argmax(logits, axis=1)
    hits = sum(1 for p, labels in zip(preds, labelsets) if int(p) in labels)
    return hits / len(labelsets)


def train(model, dataset, loss_cfg, optimizer, *, epochs, batch_size, seed,
          lr_decay_epoch=None, lr_decay_factor=0.1, trace_stride=1, extra_meta=None):
    """Run minibatch training, returning the model and its full trace.

    Shuffling is a fresh permutation per epoch from a dedicated substream
    of ``seed``, so a (model init, dataset, seed) triple fixes the run
    bit-for-bit.  The last partial batch is kept.  Every trace_stride-th
    step (always including the first) is recorded.  A non-finite loss or
    gradient stops the run early; the partial trace (with the flagged
    final row when the loss itself went non-finite) comes back with
    ``diverged=True`` instead of being thrown away.
    """
    if epochs < 0:
        raise InvalidInput(f"epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise InvalidInput(f"batch_size must be >= 1, got {batch_size}")
    if trace_stride < 1:
        raise InvalidInput(f"trace_stride must be >= 1, got {trace_stride}")
    x = np.asarray(dataset.features, dtype=float)
    labelsets = [tuple(labels) for labels in dataset.labels]
    n = x.shape[0]
    if n == 0:
        raise InvalidInput("cannot train on an empty dataset")
    if len(labelsets) != n:
        raise InvalidInput(f"{n} feature rows but {len(labelsets)} label rows")

    trace = TrainingTrace(run_meta={
        "seed": int(seed),
        "epochs": int(epochs),
        "batch_size": int(batch_size),
        "loss": loss_cfg.variant.value,
        "layer_dims": list(model.layer_dims),
        **(extra_meta or {}),
    })
    shuffle_rng = seeded_rng(seed, 2)
    params = model.parameters()
    step = 0
    for epoch in range(epochs):
        if lr_decay_epoch is not None and epoch == lr_decay_epoch:
            optimizer.lr *= lr_decay_factor
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            logits, cache = model.forward(x[idx])
            if not np.all(np.isfinite(logits)):
                return TrainResult(model, trace, diverged=True,
                                   reason=f"non-finite logits at step {step + 1}")
            out = evaluate_batch(logits, [labelsets[i] for i in idx], loss_cfg)
            step += 1
            finite = bool(np.all(np.isfinite(out.losses)))
            if (step - 1) % trace_stride == 0 or not finite:
                record_step(trace, out, step=step, epoch=epoch, lr=optimizer.lr,
                            train_batch_acc=_batch_accuracy(logits, [labelsets[i] for i in idx]))
            if not finite:
                return TrainResult(model, trace, diverged=True,
                                   reason=f"non-finite loss at step {step}")
            grads = model.backward(cache, out.grads)
            try:
                optimizer.step(params, grads)
            except TrainingDiverged as exc:
                return TrainResult(model, trace, diverged=True,
                                   reason=f"step {step}: {exc}")
            model.note_parameter_update()
    return TrainResult(model, trace)


def save_checkpoint(model, path, *, seed=None, meta=None):
    """Write the model as versioned JSON (weights nested row-major)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(model.layer_dims),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "seed": None if seed is None else int(seed),
        "meta": dict(meta or {}),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    return path


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns (model, info) where info carries the stored seed and meta.
    Rejects unknown formats and newer versions instead of guessing.
    """
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInput(f"not a checkpoint file: format={payload.get('format')!r}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InvalidInput(f"unsupported checkpoint version {payload.get('version')!r}")
    model = Mlp.from_arrays(payload["layer_dims"], payload["weights"], payload["biases"])
    return model, {"seed": payload.get("seed"), "meta": payload.get("meta", {})}
