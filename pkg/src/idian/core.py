"""Dense tensors, feed-forward layers, tape-based reverse-mode gradients and SGD.

Everything is float64. A :class:`Tape` records operations as they run; a
tensor created without a tape (or from tape-less inputs) is a constant and
nothing is recorded, which is the inference path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import expit

from .errors import ConfigError, NumericError, UsageError

PROB_FLOOR = 1e-12
ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")

ParamKey = tuple[str, int, str]


class Tensor:
    """A 2-D (or scalar) float64 array, optionally tracked on a tape."""

    __slots__ = ("value", "tape", "parents", "backward_fn")

    def __init__(self, value, tape: "Tape | None" = None, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tracked = "tracked" if self.tape is not None else "const"
        return f"Tensor(shape={self.shape}, {tracked})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradientSet(dict):
    """Gradient arrays keyed by ``(network, layer index, "weights" | "bias")``."""

    def networks(self) -> set[str]:
        return {key[0] for key in self}

    def for_network(self, name: str) -> "GradientSet":
        return GradientSet({k: v for k, v in self.items() if k[0] == name})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.values())


class Tape:
    """Records differentiable operations for one forward pass.

    Build a fresh tape per batch; parameters enter through :meth:`param`,
    which returns the same leaf for repeated uses of a key so gradients
    accumulate across every place a network is applied.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[ParamKey, Tensor] = {}

    def param(self, key: ParamKey, array: np.ndarray) -> Tensor:
        leaf = self.leaves.get(key)
        if leaf is None:
            leaf = Tensor(array, tape=self)
            self.leaves[key] = leaf
        return leaf

    def watch(self, array) -> Tensor:
        """Track an input that is not a named parameter (used by tests)."""
        return Tensor(array, tape=self)

    def backward(self, loss: Tensor, params: Mapping[ParamKey, np.ndarray] | None = None) -> GradientSet:
        """Reverse sweep from a scalar ``loss``.

        Returns gradients for every parameter leaf on this tape; keys in
        ``params`` that never reached the loss get zero arrays.
        """
        if not self.nodes:
            raise UsageError("backward called before any forward pass was recorded")
        if loss.tape is not self:
            raise UsageError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node.backward_fn is None:
                if g is not None:
                    grads[id(node)] = g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or parent.tape is None:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg

        out = GradientSet()
        for key, leaf in self.leaves.items():
            g = grads.get(id(leaf))
            out[key] = g if g is not None else np.zeros_like(leaf.value)
        if params is not None:
            for key, array in params.items():
                if key not in out:
                    out[key] = np.zeros_like(array)
        return out


def backward(loss: Tensor, params: Mapping[ParamKey, np.ndarray] | None = None) -> GradientSet:
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise UsageError("backward called on a value with no recorded forward pass")
    return loss.tape.backward(loss, params)


# --- primitive operations -------------------------------------------------


def _record(value, parents, backward_fn) -> Tensor:
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    if tape is None:
        return Tensor(value)
    out = Tensor(value, tape, parents, backward_fn)
    tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def relu(x) -> Tensor:
    x = as_tensor(x)
    # subgradient at exactly 0 is 0
    active = x.value > 0
    return _record(np.where(active, x.value, 0.0), (x,), lambda g: (g * active,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.value)
    return _record(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(x) -> Tensor:
    """Row-wise softmax with max subtraction."""
    x = as_tensor(x)
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _record(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def log(x, floor: float = PROB_FLOOR) -> Tensor:
    """Natural log of ``max(x, floor)``; no gradient where the floor binds."""
    x = as_tensor(x)
    clamped = np.maximum(x.value, floor)
    live = x.value > floor
    return _record(np.log(clamped), (x,), lambda g: (np.where(live, g / clamped, 0.0),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _record(x.value**2, (x,), lambda g: (2.0 * g * x.value,))


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    if axis is None:
        return _record(np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
    out = x.value.sum(axis=axis)
    return _record(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),))


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _record(
        np.concatenate([p.value for p in parts], axis=axis),
        tuple(parts),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def rows(x, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of ``x``."""
    x = as_tensor(x)

    def backward_fn(g):
        full = np.zeros_like(x.value)
        full[start:stop] = g
        return (full,)

    return _record(x.value[start:stop], (x,), backward_fn)


def pairwise_sq_dists(x) -> Tensor:
    """Matrix of squared Euclidean distances between the rows of ``x``.

    Distances are computed from explicit differences, so identical rows give
    exactly zero.
    """
    x = as_tensor(x)
    n = x.shape[0]
    if n < 2:
        dist = np.zeros((n, n))
    else:
        dist = squareform(pdist(x.value, "sqeuclidean"))

    def backward_fn(g):
        w = g + g.T
        return (2.0 * (w.sum(axis=1, keepdims=True) * x.value - w @ x.value),)

    return _record(dist, (x,), backward_fn)


_ACTIVATION_FNS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "identity": lambda t: t,
}


# --- layers ---------------------------------------------------------------


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ConfigError(
                f"layer weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, size=(in_dim, out_dim)), np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class Mlp:
    name: str
    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ConfigError(
                    f"{self.name}: layer {k} outputs {a.out_dim} but layer {k + 1} expects {b.in_dim}"
                )

    @classmethod
    def build(cls, name: str, dims: list[int], activations: list[str], rng: np.random.Generator) -> "Mlp":
        if len(dims) != len(activations) + 1:
            raise ConfigError(f"{name}: {len(dims)} dims need {len(dims) - 1} activations")
        layers = [DenseLayer.init(i, o, act, rng) for i, o, act in zip(dims, dims[1:], activations)]
        return cls(name, layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self) -> dict[ParamKey, np.ndarray]:
        params = {}
        for k, layer in enumerate(self.layers):
            params[(self.name, k, "weights")] = layer.weights
            params[(self.name, k, "bias")] = layer.bias
        return params


def forward(mlp: Mlp, x, tape: Tape | None = None) -> Tensor:
    """Run ``x`` through every layer; parameters are tracked when ``tape`` is given."""
    x = as_tensor(x)
    if x.value.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ConfigError(f"{mlp.name} expects input with {mlp.in_dim} columns, got shape {x.shape}")
    for k, layer in enumerate(mlp.layers):
        if tape is not None:
            w = tape.param((mlp.name, k, "weights"), layer.weights)
            b = tape.param((mlp.name, k, "bias"), layer.bias)
        else:
            w, b = Tensor(layer.weights), Tensor(layer.bias)
        x = _ACTIVATION_FNS[layer.activation](add(matmul(x, w), b))
    return x


# --- optimisation and checking --------------------------------------------


def sgd_step(
    params: Mapping[ParamKey, np.ndarray],
    grads: Mapping[ParamKey, np.ndarray],
    rate: float,
    direction: str = "descend",
) -> None:
    """In-place ``p -= rate * g`` (descend) or ``p += rate * g`` (ascend).

    Keys present in ``grads`` but not ``params`` are an error; parameters
    without a gradient entry are left alone.
    """
    if rate < 0:
        raise ConfigError(f"learning rate must be non-negative, got {rate}")
    if direction not in ("descend", "ascend"):
        raise ConfigError(f"direction must be 'descend' or 'ascend', got {direction!r}")
    sign = -1.0 if direction == "descend" else 1.0
    for key, g in grads.items():
        if key not in params:
            raise ConfigError(f"gradient for unknown parameter {key}")
        p = params[key]
        if p.shape != g.shape:
            raise ConfigError(f"shape mismatch for {key}: param {p.shape}, grad {g.shape}")
        if rate:
            p += sign * rate * g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_jacobian(
    values_fn: Callable[[], np.ndarray],
    params: Mapping[ParamKey, np.ndarray],
    epsilon: float = 1e-6,
) -> dict[ParamKey, np.ndarray]:
    """Central differences of several scalars at once.

    ``values_fn`` returns a 1-D array; each result has shape ``param.shape + (k,)``.
    Parameters are perturbed in place and restored.
    """

    def values() -> np.ndarray:
        v = np.asarray(values_fn(), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise NumericError("loss is not finite during gradient check")
        return v

    k = values().size
    out = {}
    for key, p in params.items():
        jac = np.zeros(p.shape + (k,))
        flat, jflat = p.reshape(-1), jac.reshape(-1, k)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = values()
            flat[i] = orig - epsilon
            down = values()
            flat[i] = orig
            jflat[i] = (up - down) / (2.0 * epsilon)
        out[key] = jac
    return out


def numeric_gradient(
    loss_fn: Callable[[Tape], Tensor],
    params: Mapping[ParamKey, np.ndarray],
    epsilon: float = 1e-6,
) -> GradientSet:
    """Central differences, perturbing each parameter entry in place."""
    jac = numeric_jacobian(lambda: [float(loss_fn(Tape()).value)], params, epsilon)
    return GradientSet({key: j[..., 0] for key, j in jac.items()})


def grad_check(
    loss_fn: Callable[[Tape], Tensor],
    params: Mapping[ParamKey, np.ndarray],
    epsilon: float = 1e-6,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` receives a fresh tape and must read parameters through it
    (e.g. via :func:`forward`). Points on a relu kink are reported as large
    errors rather than raising.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ConfigError(f"epsilon must lie in [1e-6, 1e-3], got {epsilon}")
    tape = Tape()
    loss = loss_fn(tape)
    if not np.isfinite(loss.value).all():
        raise NumericError("loss is not finite")
    analytic = tape.backward(loss, params)
    numeric = numeric_gradient(loss_fn, params, epsilon)
    worst = 0.0
    for key in params:
        err = relative_error(analytic[key], numeric[key])
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
