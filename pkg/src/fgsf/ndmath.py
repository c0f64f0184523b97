"""Dense linear algebra and explicit per-sample backprop for fixed-shape MLPs.

Matrices are C-contiguous float64 numpy arrays. Weights are stored ``(fan_in,
fan_out)`` so a layer computes ``x @ W + b``. Per-sample gradients are kept in
factored form: for a layer with input rows ``a_i`` and backprop signals
``g_i`` the gradient of sample ``i`` w.r.t. the augmented weight ``[W; b]`` is
the rank-one matrix ``outer([a_i, 1], g_i)``. Nothing downstream needs the
materialized ``(N, fan_in + 1, fan_out)`` tensor except the dense oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from fgsf import backend


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with ascending accumulation over the shared index.

    The same inputs always give the same bits, whichever kernel backend is
    active.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return backend.matmul(a, b)


def matmul_tn(a, b) -> np.ndarray:
    """``a.T @ b``, accumulated over rows of ``a`` in order."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"cannot contract {a.shape} with {b.shape} over rows")
    return backend.matmul_tn(a, b)


def column_sums(x: np.ndarray) -> np.ndarray:
    """Sum over rows in ascending order (same order as :func:`matmul_tn`)."""
    x = as_matrix(x)
    return matmul(np.ones((1, x.shape[0])), x)[0]


def augment(inputs: np.ndarray) -> np.ndarray:
    """Append the constant-one bias column."""
    return np.hstack([inputs, np.ones((inputs.shape[0], 1))])


# activation name -> (f, f' expressed through (pre, post))
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda pre, post: 1.0 - post * post),
    "relu": (lambda x: np.maximum(x, 0.0), lambda pre, post: (pre > 0.0).astype(np.float64)),
    "identity": (lambda x: x.copy(), lambda pre, post: np.ones_like(pre)),
}


@dataclass
class Mlp:
    """Affine layers with a shared hidden activation and a linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} fan_in {w.shape[0]} != previous fan_out")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in optimizer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def augmented(self, layer: int) -> np.ndarray:
        """``[W; b]`` of one layer, shape ``(fan_in + 1, fan_out)``."""
        return np.vstack([self.weights[layer], self.biases[layer][None, :]])

    def flat(self) -> np.ndarray:
        """All parameters, layer by layer, row-major over ``[W; b]``."""
        return np.concatenate([self.augmented(i).ravel() for i in range(self.n_layers)])

    def set_augmented(self, layer: int, aug: np.ndarray) -> None:
        self.weights[layer] = np.ascontiguousarray(aug[:-1])
        self.biases[layer] = np.ascontiguousarray(aug[-1])

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


@dataclass
class LayerCache:
    inputs: np.ndarray
    pre_activations: np.ndarray
    post_activations: np.ndarray


def mlp_forward(net: Mlp, inputs) -> tuple[np.ndarray, list[LayerCache]]:
    x = as_matrix(inputs, "inputs")
    if x.shape[1] != net.dims[0]:
        raise ShapeError(f"input width {x.shape[1]} != net input width {net.dims[0]}")
    act = ACTIVATIONS[net.activation][0]
    caches = []
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = matmul(x, w) + b
        post = pre if i == last else act(pre)
        caches.append(LayerCache(x, pre, post))
        x = post
    return x, caches


@dataclass
class LayerGrads:
    """Per-sample gradients of one layer in factored form."""

    inputs: np.ndarray  # (N, fan_in + 1), bias column appended
    backgrads: np.ndarray  # (N, fan_out)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def materialize(self) -> np.ndarray:
        """Explicit per-sample gradients, shape ``(N, fan_in + 1, fan_out)``."""
        return self.inputs[:, :, None] * self.backgrads[:, None, :]

    def batch_grad(self) -> np.ndarray:
        """Sum of the per-sample gradients, accumulated in sample order."""
        return matmul_tn(self.inputs, self.backgrads)

    def scaled(self, weights: np.ndarray) -> "LayerGrads":
        return LayerGrads(self.inputs, self.backgrads * weights[:, None])


@dataclass
class PerSampleGrads:
    layers: list[LayerGrads]
    input_grads: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_samples(self) -> int:
        return self.layers[0].n_samples

    def batch_grads(self) -> list[np.ndarray]:
        """Batch gradient per layer as augmented ``(fan_in + 1, fan_out)`` arrays."""
        return [lg.batch_grad() for lg in self.layers]

    def param_grads(self) -> list[np.ndarray]:
        """Batch gradient split into optimizer order W0, b0, W1, b1, ..."""
        out = []
        for g in self.batch_grads():
            out += [np.ascontiguousarray(g[:-1]), np.ascontiguousarray(g[-1])]
        return out

    def flat(self) -> np.ndarray:
        """Materialized per-sample gradients, shape ``(N, n_params)``."""
        n = self.n_samples
        return np.hstack([lg.materialize().reshape(n, -1) for lg in self.layers])

    def scaled(self, weights: np.ndarray) -> "PerSampleGrads":
        """Rescale each sample's gradient; exact for scalar-output objectives."""
        weights = np.asarray(weights, dtype=np.float64)
        return PerSampleGrads([lg.scaled(weights) for lg in self.layers])


def mlp_backward_per_sample(net: Mlp, caches: Sequence[LayerCache], output_grads,
                            input_grads: bool = True) -> PerSampleGrads:
    """Backprop ``output_grads[i] = d objective_i / d output_i`` through ``net``.

    Returns the factored per-sample parameter gradients and, unless
    ``input_grads`` is false, the gradients w.r.t. the network inputs.
    """
    if len(caches) != net.n_layers:
        raise ShapeError(f"{len(caches)} caches for a {net.n_layers}-layer net")
    delta = as_matrix(output_grads, "output_grads")
    n = caches[0].inputs.shape[0]
    if delta.shape != (n, net.dims[-1]):
        raise ShapeError(f"output_grads shape {delta.shape} != ({n}, {net.dims[-1]})")
    deriv = ACTIVATIONS[net.activation][1]
    layers: list[LayerGrads] = [None] * net.n_layers  # type: ignore[list-item]
    for i in range(net.n_layers - 1, -1, -1):
        c = caches[i]
        if c.inputs.shape != (n, net.dims[i]) or c.pre_activations.shape != (n, net.dims[i + 1]):
            raise ShapeError(f"layer {i} cache inconsistent with net shape")
        layers[i] = LayerGrads(augment(c.inputs), delta)
        if i == 0 and not input_grads:
            return PerSampleGrads(layers)
        delta = matmul(delta, np.ascontiguousarray(net.weights[i].T))
        if i > 0:
            prev = caches[i - 1]
            delta = delta * deriv(prev.pre_activations, prev.post_activations)
    return PerSampleGrads(layers, input_grads=delta)


def numeric_grad(f: Callable[[], float], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``f()`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f()
            flat[k] = orig - h
            fm = f()
            flat[k] = orig
            gflat[k] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    if not (np.isfinite(a).all() and np.isfinite(n).all()):
        return float("nan")
    return float(np.max(np.abs(a - n) / (np.abs(a) + 1e-12)))


def finite_diff_check(net: Mlp, objective: Callable, inputs, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``objective(outputs)`` returns ``(value, d value / d outputs)`` where value
    is a scalar. A non-finite network or objective yields ``nan``; callers
    treat any non-finite return as a failed check.
    """
    x = as_matrix(inputs)

    def value() -> float:
        return float(objective(mlp_forward(net, x)[0])[0])

    with np.errstate(all="ignore"):
        out, caches = mlp_forward(net, x)
        _, dout = objective(out)
        analytic = mlp_backward_per_sample(net, caches, dout).param_grads()
        numeric = numeric_grad(value, net.params(), h)
    return max_relative_error(analytic, numeric)
