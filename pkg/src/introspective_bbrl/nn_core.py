"""Dense-network numeric core.

Plain numpy primitives (``dense_forward``, ``elu``, ``mse``, ...) are used for
inference.  Training goes through :class:`GradientTape`, which records each
primitive together with its vector-Jacobian product so a scalar loss can be
differentiated exactly in reverse mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------

@dataclass(eq=False)
class DenseLayer:
    """Affine map ``y = W x + b`` with ``W`` of shape (out_features, in_features)."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes: weights {self.weights.shape}, biases {self.biases.shape}"
            )

    @classmethod
    def initialized(cls, in_features: int, out_features: int, rng: np.random.Generator) -> "DenseLayer":
        # variance-preserving uniform init, zero biases
        limit = np.sqrt(6.0 / (in_features + out_features))
        w = rng.uniform(-limit, limit, size=(out_features, in_features))
        return cls(w, np.zeros(out_features))

    @classmethod
    def zeros(cls, in_features: int, out_features: int) -> "DenseLayer":
        return cls(np.zeros((out_features, in_features)), np.zeros(out_features))

    @property
    def in_features(self) -> int:
        return self.weights.shape[1]

    @property
    def out_features(self) -> int:
        return self.weights.shape[0]

    def parameters(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.weights": self.weights, f"{prefix}.biases": self.biases}


@dataclass(frozen=True, eq=False)
class GaussianLatent:
    """Diagonal Gaussian ``q(z|x)`` given by its mean and log-variance."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        logvar = np.asarray(self.logvar, dtype=np.float64)
        if mu.shape != logvar.shape:
            raise ValueError(f"mu {mu.shape} and logvar {logvar.shape} differ in shape")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
            raise ValueError("latent statistics must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "logvar", logvar)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


# --------------------------------------------------------------------------
# numpy primitives
# --------------------------------------------------------------------------

def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply ``layer`` to a vector or to a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_features:
        raise ValueError(f"dense layer expects {layer.in_features} inputs, got {x.shape[-1]}")
    if x.ndim == 1:
        return layer.weights @ x + layer.biases
    return x @ layer.weights.T + layer.biases


def elu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def mse(x_real: np.ndarray, x_recons: np.ndarray) -> float:
    x_real = np.asarray(x_real, dtype=np.float64)
    x_recons = np.asarray(x_recons, dtype=np.float64)
    if x_real.shape != x_recons.shape:
        raise ValueError(f"mse shape mismatch: {x_real.shape} vs {x_recons.shape}")
    d = x_real - x_recons
    return float(np.mean(d * d))


def squared_error(x_real: np.ndarray, x_recons: np.ndarray) -> float:
    """Squared error summed over the last axis, averaged over any leading batch axis."""
    x_real = np.asarray(x_real, dtype=np.float64)
    x_recons = np.asarray(x_recons, dtype=np.float64)
    if x_real.shape != x_recons.shape:
        raise ValueError(f"squared_error shape mismatch: {x_real.shape} vs {x_recons.shape}")
    d = x_real - x_recons
    per_row = np.sum(d * d, axis=-1)
    return float(np.mean(per_row))


def kl_std_normal(latent: GaussianLatent) -> float:
    """KL(q || N(0, I)) summed over latent dimensions (mean over a leading batch axis)."""
    lv = latent.logvar
    per_dim = 0.5 * (np.exp(lv) + latent.mu**2 - 1.0 - lv)
    total = per_dim.sum(axis=-1)
    return float(np.mean(total))


def clamp_logvar(logvar: np.ndarray) -> np.ndarray:
    return np.clip(logvar, LOGVAR_MIN, LOGVAR_MAX)


def reparameterized_sample(latent: GaussianLatent, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(latent.mu.shape)
    return latent.mu + np.exp(0.5 * clamp_logvar(latent.logvar)) * eps


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# reverse-mode tape
# --------------------------------------------------------------------------

class TapeConsumedError(RuntimeError):
    pass


@dataclass(eq=False)
class Var:
    """A value recorded on a tape."""

    value: np.ndarray
    index: int

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@dataclass(eq=False)
class _Record:
    forward: Callable | None
    backward: Callable | None
    parents: tuple[int, ...]
    leaf: np.ndarray | None = None


class GradientTape:
    """Ordered log of primitive operations for exact reverse-mode gradients.

    Parameters enter through :meth:`watch`; the same array watched twice maps
    to the same leaf so gradients accumulate across reuse.  A tape can be
    differentiated once.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._values: list[np.ndarray] = []
        self._leaves: dict[int, int] = {}
        self._consumed = False

    def __len__(self):
        return len(self._records)

    # -- recording ---------------------------------------------------------

    def _push(self, value: np.ndarray, record: _Record) -> Var:
        if self._consumed:
            raise TapeConsumedError("cannot record on a tape that has already been differentiated")
        self._records.append(record)
        self._values.append(value)
        return Var(value, len(self._records) - 1)

    def watch(self, array: np.ndarray) -> Var:
        key = id(array)
        if key in self._leaves:
            idx = self._leaves[key]
            return Var(self._values[idx], idx)
        var = self._push(array, _Record(None, None, (), leaf=array))
        self._leaves[key] = var.index
        return var

    def constant(self, array) -> Var:
        value = np.asarray(array, dtype=np.float64)
        return self._push(value, _Record(None, None, ()))

    def _lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.constant(x)

    def apply(self, forward: Callable, backward: Callable, *inputs) -> Var:
        """Record ``forward(*values)``; ``backward(g, out, *values)`` returns input cotangents."""
        vars_ = [self._lift(x) for x in inputs]
        out = forward(*(v.value for v in vars_))
        return self._push(out, _Record(forward, backward, tuple(v.index for v in vars_)))

    # -- primitives ----------------------------------------------------------

    def dense(self, layer: DenseLayer, x) -> Var:
        w = self.watch(layer.weights)
        b = self.watch(layer.biases)

        def fwd(xv, wv, bv):
            if xv.shape[-1] != wv.shape[1]:
                raise ValueError(f"dense layer expects {wv.shape[1]} inputs, got {xv.shape[-1]}")
            return xv @ wv.T + bv

        def bwd(g, out, xv, wv, bv):
            if xv.ndim == 1:
                return g @ wv, np.outer(g, xv), g
            return g @ wv, g.T @ xv, g.sum(axis=0)

        return self.apply(fwd, bwd, x, w, b)

    def elu(self, x) -> Var:
        return self.apply(
            elu,
            lambda g, out, xv: (g * np.where(xv > 0, 1.0, np.exp(np.minimum(xv, 0.0))),),
            x,
        )

    def tanh(self, x) -> Var:
        return self.apply(np.tanh, lambda g, out, xv: (g * (1.0 - out * out),), x)

    def exp(self, x) -> Var:
        return self.apply(np.exp, lambda g, out, xv: (g * out,), x)

    def add(self, a, b) -> Var:
        return self.apply(
            np.add,
            lambda g, out, av, bv: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)),
            a, b,
        )

    def sub(self, a, b) -> Var:
        return self.apply(
            np.subtract,
            lambda g, out, av, bv: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)),
            a, b,
        )

    def mul(self, a, b) -> Var:
        return self.apply(
            np.multiply,
            lambda g, out, av, bv: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
            a, b,
        )

    def scale(self, x, c: float) -> Var:
        return self.apply(lambda xv: c * xv, lambda g, out, xv: (c * g,), x)

    def clip(self, x, lo: float, hi: float) -> Var:
        return self.apply(
            lambda xv: np.clip(xv, lo, hi),
            lambda g, out, xv: (g * ((xv >= lo) & (xv <= hi)),),
            x,
        )

    def concat(self, parts: Sequence) -> Var:
        sizes = np.cumsum([p.shape[-1] if isinstance(p, Var) else np.shape(p)[-1] for p in parts])[:-1]

        def bwd(g, out, *vals):
            return tuple(np.split(g, sizes, axis=-1))

        return self.apply(lambda *vals: np.concatenate(vals, axis=-1), bwd, *parts)

    def sum(self, x) -> Var:
        return self.apply(lambda xv: np.sum(xv), lambda g, out, xv: (np.full_like(xv, g),), x)

    def mean(self, x) -> Var:
        return self.apply(lambda xv: np.mean(xv), lambda g, out, xv: (np.full_like(xv, g / xv.size),), x)

    def mse(self, a, b) -> Var:
        def fwd(av, bv):
            if av.shape != bv.shape:
                raise ValueError(f"mse shape mismatch: {av.shape} vs {bv.shape}")
            d = av - bv
            return np.mean(d * d)

        def bwd(g, out, av, bv):
            ga = g * 2.0 * (av - bv) / av.size
            return ga, -ga

        return self.apply(fwd, bwd, a, b)

    def squared_error(self, a, b) -> Var:
        def fwd(av, bv):
            if av.shape != bv.shape:
                raise ValueError(f"squared_error shape mismatch: {av.shape} vs {bv.shape}")
            d = av - bv
            return np.mean(np.sum(d * d, axis=-1))

        def bwd(g, out, av, bv):
            rows = av.size // av.shape[-1] if av.ndim else 1
            ga = g * 2.0 * (av - bv) / rows
            return ga, -ga

        return self.apply(fwd, bwd, a, b)

    def kl_std_normal(self, mu, logvar) -> Var:
        """Per-sample KL summed over latent dims, averaged over the batch axis."""

        def fwd(m, lv):
            per_dim = 0.5 * (np.exp(lv) + m * m - 1.0 - lv)
            return np.mean(per_dim.sum(axis=-1))

        def bwd(g, out, m, lv):
            rows = m.size // m.shape[-1]
            return g * m / rows, g * 0.5 * (np.exp(lv) - 1.0) / rows

        return self.apply(fwd, bwd, mu, logvar)

    def reparameterize(self, mu, logvar, eps: np.ndarray) -> Var:
        eps = np.asarray(eps, dtype=np.float64)

        def fwd(m, lv):
            return m + np.exp(0.5 * lv) * eps

        def bwd(g, out, m, lv):
            return g, g * 0.5 * np.exp(0.5 * lv) * eps

        return self.apply(fwd, bwd, mu, logvar)

    def log_softmax(self, x) -> Var:
        def fwd(xv):
            z = xv - np.max(xv, axis=-1, keepdims=True)
            return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

        def bwd(g, out, xv):
            return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

        return self.apply(fwd, bwd, x)

    def take(self, x, index: np.ndarray) -> Var:
        """Select ``x[i, index[i]]`` for each row ``i``."""
        index = np.asarray(index, dtype=np.int64)
        rows = np.arange(index.shape[0])

        def bwd(g, out, xv):
            gx = np.zeros_like(xv)
            np.add.at(gx, (rows, index), g)
            return (gx,)

        return self.apply(lambda xv: xv[rows, index], bwd, x)

    # -- replay / differentiation -------------------------------------------

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded value from the current leaf arrays."""
        values: list[np.ndarray] = []
        for rec, original in zip(self._records, self._values):
            if rec.forward is None:
                values.append(rec.leaf if rec.leaf is not None else original)
            else:
                values.append(rec.forward(*(values[p] for p in rec.parents)))
        return values

    def values(self) -> list[np.ndarray]:
        return list(self._values)

    def _backward(self, loss: Var) -> list[np.ndarray | None]:
        if self._consumed:
            raise TapeConsumedError("tape has already been differentiated")
        if np.ndim(loss.value) != 0:
            raise ValueError("loss must be a scalar")
        self._consumed = True
        grads: list[np.ndarray | None] = [None] * len(self._records)
        grads[loss.index] = np.array(1.0)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            rec = self._records[i]
            if g is None or rec.backward is None:
                continue
            parent_vals = [self._values[p] for p in rec.parents]
            contribs = rec.backward(g, self._values[i], *parent_vals)
            for p, c in zip(rec.parents, contribs):
                grads[p] = c if grads[p] is None else grads[p] + c
        return grads


class NumpyOps:
    """Tape-free twin of :class:`GradientTape`'s primitives, for inference.

    Network forwards are written against this method set so the same code
    runs recorded (on a tape) or plain.
    """

    def watch(self, array):
        return array

    def constant(self, array):
        return np.asarray(array, dtype=np.float64)

    def dense(self, layer: DenseLayer, x):
        return dense_forward(layer, x)

    elu = staticmethod(elu)
    tanh = staticmethod(np.tanh)
    exp = staticmethod(np.exp)
    add = staticmethod(np.add)
    sub = staticmethod(np.subtract)
    mul = staticmethod(np.multiply)

    def scale(self, x, c):
        return c * x

    def clip(self, x, lo, hi):
        return np.clip(x, lo, hi)

    def concat(self, parts):
        return np.concatenate(parts, axis=-1)


NUMPY_OPS = NumpyOps()


def compute_gradients(tape: GradientTape, loss: Var, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for every named parameter; untouched parameters get zeros."""
    grads = tape._backward(loss)
    out = {}
    for name, array in params.items():
        idx = tape._leaves.get(id(array))
        g = grads[idx] if idx is not None else None
        out[name] = np.zeros_like(array) if g is None else np.asarray(g, dtype=np.float64).reshape(array.shape)
    return out


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update.

    Parameter arrays are updated in place so layers holding them see the new
    values; ``(params, state)`` is returned for convenience.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state
