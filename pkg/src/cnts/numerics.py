"""Dense-network numerics: forward/backward passes, losses, Adam, and a
finite-difference gradient checker.

Everything works in float64. Networks are a fixed chain of dense layers, so
backward is a hand-written reverse sweep over the trace recorded by forward
rather than a general autodiff graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class DenseNetParams:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.n_out,):
                raise ShapeError(f"layer {k}: bias shape {layer.bias.shape} vs weight {layer.weight.shape}")
            if k and layer.n_in != self.layers[k - 1].n_out:
                raise ShapeError(
                    f"layer {k} expects width {layer.n_in}, previous layer emits {self.layers[k - 1].n_out}"
                )

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order: per layer, weight then bias."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> DenseNetParams:
        return DenseNetParams(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, dims: Sequence[int], activations: Sequence[str], flat: np.ndarray) -> DenseNetParams:
        expected = param_count(dims)
        if flat.size != expected:
            raise ShapeError(f"flat payload has {flat.size} values, dims imply {expected}")
        layers, pos = [], 0
        for n_in, n_out, act in zip(dims[:-1], dims[1:], activations):
            w = flat[pos:pos + n_in * n_out].reshape(n_out, n_in).copy()
            pos += n_in * n_out
            b = flat[pos:pos + n_out].copy()
            pos += n_out
            layers.append(Layer(w, b, act))
        return cls(layers)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other: DenseNetParams) -> bool:
        """Bit-level equality of architecture and every parameter."""
        if self.dims != other.dims or self.activations != other.activations:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def param_count(dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def init_params(dims: Sequence[int], activations: Sequence[str], seed: int) -> DenseNetParams:
    """Uniform fan-average init in [-s, s], s = sqrt(6 / (in + out)); zero biases."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) != d or d < 1 for d in dims):
        raise ConfigError(f"dims must list at least two positive integers, got {dims}")
    if len(activations) != len(dims) - 1:
        raise ConfigError(f"{len(dims) - 1} layers but {len(activations)} activations")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(dims[:-1], dims[1:], activations):
        s = math.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-s, s, size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out), act))
    return DenseNetParams(layers)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return (z > 0).astype(z.dtype)
    if act == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class Trace:
    """Everything backward needs: per-layer inputs, pre-activations, outputs."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def forward(params: DenseNetParams, x: np.ndarray) -> Trace:
    """Run a batch ``x`` of shape (n, in) (or a single (in,) vector) through the net."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.layers[0].n_in:
        raise ShapeError(f"input shape {x.shape} does not match first layer width {params.layers[0].n_in}")
    trace = Trace()
    h = x
    for layer in params.layers:
        z = h @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        trace.inputs.append(h)
        trace.pre.append(z)
        trace.post.append(a)
        h = a
    if not np.isfinite(h).all():
        raise NumericError("non-finite network output")
    return trace


def predict(params: DenseNetParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x).output


def backward(params: DenseNetParams, trace: Trace, output_grad: np.ndarray) -> DenseNetParams:
    """Reverse sweep. Returns gradients packed in a DenseNetParams of identical shape."""
    if len(trace.pre) != len(params.layers):
        raise ShapeError(f"trace has {len(trace.pre)} layers, params have {len(params.layers)}")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != trace.output.shape:
        raise ShapeError(f"output gradient shape {g.shape} vs output {trace.output.shape}")
    grads: list[Layer] = []
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        if trace.pre[k].shape[1] != layer.n_out:
            raise ShapeError(f"trace layer {k} width does not match params")
        dz = g * _activation_grad(trace.pre[k], trace.post[k], layer.activation)
        grads.append(Layer(dz.T @ trace.inputs[k], dz.sum(axis=0), layer.activation))
        g = dz @ layer.weight
    grads.reverse()
    return DenseNetParams(grads)


def fd_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a float array."""
    if not eps > 0:
        raise NumericError(f"eps must be positive, got {eps}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn(x)
        flat[i] = orig - eps
        down = fn(x)
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError("non-finite loss during finite differencing")
        gflat[i] = (up - down) / (2 * eps)
    return grad


def grad_check(
    params: DenseNetParams,
    x: np.ndarray,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    eps: float = 1e-4,
) -> float:
    """Max relative deviation between backward and central differences.

    ``loss_fn`` maps the network output to ``(loss, dloss/doutput)``.
    Deviation per parameter is ``|a - cd| / max(|a|, |cd|, 1e-8)``.
    """
    if not eps > 0:
        raise NumericError(f"eps must be positive, got {eps}")
    trace = forward(params, x)
    loss, out_grad = loss_fn(trace.output)
    if not math.isfinite(loss):
        raise NumericError("non-finite loss")
    analytic = backward(params, trace, out_grad)

    probe = params.copy()

    def loss_at() -> float:
        return loss_fn(forward(probe, x).output)[0]

    worst = 0.0
    for arr, garr in zip(probe.arrays(), analytic.arrays()):
        flat, gflat = arr.reshape(-1), garr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_at()
            flat[i] = orig - eps
            down = loss_at()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError("non-finite loss during finite differencing")
            cd = (up - down) / (2 * eps)
            a = gflat[i]
            worst = max(worst, abs(a - cd) / max(abs(a), abs(cd), 1e-8))
    return worst


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: DenseNetParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls([z.copy() for z in zeros], zeros, 0, lr, beta1, beta2, eps)


def optimizer_step(
    params: DenseNetParams, grads: DenseNetParams, state: OptimizerState
) -> tuple[DenseNetParams, OptimizerState]:
    """One bias-corrected Adam step. Inputs are left untouched."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m):
        raise ShapeError("params, gradients and optimizer state disagree in layer count")
    for idx, (p, g, m) in enumerate(zip(p_arrays, g_arrays, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"layer {idx // 2}: shape mismatch {p.shape} / {g.shape} / {m.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in layer {idx // 2}")

    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        p = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)

    layers = [
        Layer(new_p[2 * k], new_p[2 * k + 1], layer.activation)
        for k, layer in enumerate(params.layers)
    ]
    out = DenseNetParams(layers)
    for k, layer in enumerate(out.layers):
        if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
            raise NumericError(f"update produced non-finite values in layer {k}")
    return out, OptimizerState(new_m, new_v, t, state.lr, state.beta1, state.beta2, state.eps)


def softmax(values: np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("softmax of an empty vector")
    if not np.isfinite(x).all():
        raise NumericError("softmax input must be finite")
    e = np.exp(x - x.max())
    return e / e.sum()


def log_softmax(values: np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("log_softmax of an empty vector")
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ShapeError("empty input")
    return a, b


def elementwise_sq_err(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return (a - b) ** 2


def mse(a, b) -> float:
    return float(elementwise_sq_err(a, b).mean())


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _check_target(target: np.ndarray) -> None:
    if (target < 0).any() or (target > 1).any() or abs(target.sum() - 1.0) > 1e-6:
        raise NumericError("target must be a probability vector")


def cross_entropy(target_probs, logits) -> float:
    """-sum(target * log_softmax(logits)); the prediction side stays in logit space."""
    target, logits = _pair(target_probs, logits)
    _check_target(target)
    value = float(-(target * log_softmax(logits)).sum())
    if not math.isfinite(value):
        raise NumericError("non-finite cross entropy")
    return value


def cross_entropy_grad(target_probs, logits) -> np.ndarray:
    """Gradient of cross_entropy with respect to the logits."""
    target, logits = _pair(target_probs, logits)
    _check_target(target)
    return softmax(logits) - target
