"""Surface model f_theta(X) with a hand-written reverse pass.

The network is a stack of dense and block-diagonal (BD) layers stored in a
single flat float64 parameter vector. Layer ``l`` owns the contiguous slice
``[W_l.ravel(), b_l.ravel()]``; layers are laid out in forward order.

* dense layer: ``W`` has shape ``(out, in)`` and computes ``a @ W.T + b``.
* BD layer: ``W`` has shape ``(N_B, S_B, S_B)`` indexed ``[block, out, in]``
  and ``b`` has shape ``(N_B, S_B)``.

The full surface is::

    f(X) = transform(net((X - mean) / std) + height_bias(X))

where ``transform`` is the identity or the bounded tanh squashing onto
``[h_min, h_max]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

TOPOLOGIES = ("fully_connected", "block_diagonal")
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")
OUTPUT_TRANSFORMS = ("identity", "bounded")

LAYOUT_VERSION = 1


class SpecError(ValueError):
    """Invalid network description."""


class NumericFailure(FloatingPointError):
    """A non-finite value appeared in a forward or reverse pass."""

    def __init__(self, message, layer=None, index=None):
        super().__init__(message)
        self.layer = layer
        self.index = index


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of the surface network.

    ``num_layers`` counts weight layers. ``num_layers == 1`` is a plain linear
    model ``w . x + b``. For ``num_layers >= 2`` the first layer maps the input
    to the hidden width, layers ``2 .. num_layers - 1`` are hidden-to-hidden
    (block-diagonal for the BD topology) and the last layer maps to a scalar.
    """

    input_dim: int
    topology: str = "block_diagonal"
    num_layers: int = 4
    width: int = 64
    num_blocks: int = 8
    block_size: int = 16
    activation: str = "leaky_relu"
    leaky_slope: float = 0.01
    shortcuts: bool = False
    output_transform: str = "identity"
    h_min: float = -1.0
    h_max: float = 1.0

    def __post_init__(self):
        if int(self.input_dim) < 1:
            raise SpecError(f"input_dim must be positive, got {self.input_dim}")
        if self.topology not in TOPOLOGIES:
            raise SpecError(f"unknown topology {self.topology!r}")
        if int(self.num_layers) < 1:
            raise SpecError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.leaky_slope < 1.0:
            raise SpecError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise SpecError(f"unknown output_transform {self.output_transform!r}")
        if self.output_transform == "bounded":
            if not (np.isfinite(self.h_min) and np.isfinite(self.h_max)):
                raise SpecError("bounded output needs finite h_min and h_max")
            if not self.h_min < self.h_max:
                raise SpecError(f"bounded output needs h_min < h_max, got {self.h_min}, {self.h_max}")
        if self.topology == "fully_connected" and self.width < 1:
            raise SpecError("width must be positive")
        if self.topology == "block_diagonal" and (self.num_blocks < 1 or self.block_size < 1):
            raise SpecError("num_blocks and block_size must be positive")

    @property
    def hidden_width(self) -> int:
        if self.topology == "fully_connected":
            return int(self.width)
        return int(self.num_blocks * self.block_size)

    @property
    def layers(self) -> list[_Layer]:
        return _layer_table(self)

    @property
    def n_params(self) -> int:
        last = self.layers[-1]
        return last.b_stop

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        return cls(**d)


class _Layer(NamedTuple):
    kind: str  # "dense" or "block"
    w_shape: tuple
    b_shape: tuple
    w_start: int
    b_start: int
    b_stop: int
    activated: bool
    residual: bool


@lru_cache(maxsize=64)
def _layer_table(spec: NetworkSpec) -> list[_Layer]:
    n = int(spec.input_dim)
    if spec.num_layers == 1:
        shapes = [("dense", (1, n), (1,))]
    else:
        S = spec.hidden_width
        shapes = [("dense", (S, n), (S,))]
        for _ in range(spec.num_layers - 2):
            if spec.topology == "block_diagonal":
                nb, sb = int(spec.num_blocks), int(spec.block_size)
                shapes.append(("block", (nb, sb, sb), (nb, sb)))
            else:
                shapes.append(("dense", (S, S), (S,)))
        shapes.append(("dense", (1, S), (1,)))

    table = []
    offset = 0
    last = len(shapes) - 1
    for i, (kind, w_shape, b_shape) in enumerate(shapes):
        w_size = int(np.prod(w_shape))
        b_size = int(np.prod(b_shape))
        inner = 0 < i < last
        table.append(
            _Layer(
                kind,
                w_shape,
                b_shape,
                offset,
                offset + w_size,
                offset + w_size + b_size,
                activated=i < last,
                residual=bool(spec.shortcuts) and inner,
            )
        )
        offset += w_size + b_size
    return table


def unpack(spec: NetworkSpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` into ``theta`` for each layer, in forward order."""
    theta = np.asarray(theta)
    if theta.shape != (spec.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({spec.n_params},)")
    return [
        (
            theta[layer.w_start : layer.b_start].reshape(layer.w_shape),
            theta[layer.b_start : layer.b_stop].reshape(layer.b_shape),
        )
        for layer in spec.layers
    ]


# ---------------------------------------------------------------------------
# Preconditioning
# ---------------------------------------------------------------------------


@dataclass
class Preconditioner:
    """Input standardization plus an optional additive log-density bias.

    ``height_bias`` is either a callable ``X -> log P_D(X)`` or an object with
    a ``log_pdf`` method (a :class:`probsurf.distributions.Distribution`).
    """

    mean: np.ndarray
    std: np.ndarray
    height_bias: object = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.std = np.asarray(self.std, dtype=np.float64).ravel()
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length")
        if not np.all(self.std > 0) or not np.all(np.isfinite(self.std)):
            raise ValueError("std entries must be finite and positive")

    @classmethod
    def identity(cls, dim: int, height_bias=None) -> Preconditioner:
        return cls(np.zeros(dim), np.ones(dim), height_bias)

    @classmethod
    def fit(cls, X, height_bias=None) -> Preconditioner:
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return cls(X.mean(axis=0), std, height_bias)

    def normalize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, Z):
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def bias(self, X) -> np.ndarray | None:
        hb = self.height_bias
        if hb is None:
            return None
        fn = hb.log_pdf if hasattr(hb, "log_pdf") else hb
        return np.asarray(fn(X), dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def _activate(z, activation, slope):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "leaky_relu":
        # valid for 0 < slope < 1; avoids np.where, which is slow on large batches
        return np.maximum(z, slope * z)
    if activation == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z, a, activation, slope):
    if activation == "relu":
        return (z > 0).astype(np.float64)
    if activation == "leaky_relu":
        g = (z > 0).astype(np.float64)
        g *= 1.0 - slope
        g += slope
        return g
    if activation == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _block_matmul(W, v):
    # v: (B, N_B, S_B), W: (N_B, S_B_out, S_B_in) -> (B, N_B, S_B_out)
    return np.matmul(v.transpose(1, 0, 2), W.transpose(0, 2, 1)).transpose(1, 0, 2)


def bd_layer_apply(W, b, v, activation="identity", leaky_slope=0.01):
    """Apply one block-diagonal layer to ``v`` of shape ``[B, N_B, S_B]``.

    ``V[i, j, k] = sum_m W[j, k, m] * v[i, j, m]``, then the per-block bias is
    added and the activation applied.
    """
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if W.ndim != 3 or W.shape[1] != W.shape[2]:
        raise ValueError(f"W must have shape [N_B, S_B, S_B], got {W.shape}")
    if b.shape != W.shape[:2]:
        raise ValueError(f"b must have shape {W.shape[:2]}, got {b.shape}")
    if v.ndim != 3 or v.shape[1:] != W.shape[:2]:
        raise ValueError(f"v must have shape [B, {W.shape[0]}, {W.shape[1]}], got {v.shape}")
    U = _block_matmul(W, v) + b
    return _activate(U, activation, leaky_slope)


# ---------------------------------------------------------------------------
# Forward / reverse passes
# ---------------------------------------------------------------------------


class _Cache(NamedTuple):
    inputs: list  # input to each layer, shape (B, width_in)
    pre: list  # pre-activation of each layer
    post: list  # activation output (before residual add)
    h: np.ndarray  # pre-transform height (network + bias)
    out: np.ndarray


def _check_batch(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, spec.input_dim)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"X must have shape [B, {spec.input_dim}], got {X.shape}")
    return X


def _forward(spec, precond, theta, X, keep=True, bias=None):
    # overflow is reported through NumericFailure rather than numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_impl(spec, precond, theta, X, keep, bias)


def _forward_impl(spec, precond, theta, X, keep, bias):
    X = _check_batch(spec, X)
    params = unpack(spec, theta)
    a = precond.normalize(X) if precond is not None else X
    B = a.shape[0]
    inputs, pres, posts = [], [], []
    for index, (layer, (W, b)) in enumerate(zip(spec.layers, params), start=1):
        if keep:
            inputs.append(a)
        if layer.kind == "dense":
            z = a @ W.T + b
        else:
            nb, sb = layer.b_shape
            z = (_block_matmul(W, a.reshape(B, nb, sb)) + b).reshape(B, nb * sb)
        if layer.activated:
            y = _activate(z, spec.activation, spec.leaky_slope)
            a_next = y + a if layer.residual else y
        else:
            y = z
            a_next = z
        # a finite sum rules out non-finite entries; only then pay for the full scan
        if not np.isfinite(a_next.sum()) and not np.all(np.isfinite(a_next)):
            bad = int(np.flatnonzero(~np.isfinite(a_next).all(axis=1))[0])
            raise NumericFailure(
                f"non-finite activation in layer {index} at batch row {bad}", layer=index, index=bad
            )
        if keep:
            pres.append(z)
            posts.append(y)
        a = a_next
    h = a[:, 0]
    if bias is None and precond is not None:
        bias = precond.bias(X)
    if bias is not None:
        h = h + bias
    if np.any(np.isnan(h)):
        bad = int(np.flatnonzero(np.isnan(h))[0])
        raise NumericFailure(f"height bias produced NaN at batch row {bad}", layer=0, index=bad)
    out = _output_transform(spec, h)
    return _Cache(inputs, pres, posts, h, out)


def _output_transform(spec, h):
    if spec.output_transform == "bounded":
        half_range = 0.5 * (spec.h_max - spec.h_min)
        return half_range * np.tanh(h) + 0.5 * (spec.h_max + spec.h_min)
    return h


def _output_slope(spec, h):
    if spec.output_transform == "bounded":
        t = np.tanh(h)
        return 0.5 * (spec.h_max - spec.h_min) * (1.0 - t * t)
    return np.ones_like(h)


def _backward(spec, theta, cache, coeffs, per_sample=False):
    with np.errstate(over="ignore", invalid="ignore"):
        return _backward_impl(spec, theta, cache, coeffs, per_sample)


def _backward_impl(spec, theta, cache, coeffs, per_sample):
    """Reverse pass for ``sum_i coeffs_i * f(X_i)``.

    Returns a flat gradient, or a ``[B, |theta|]`` matrix of per-row
    gradients of ``coeffs_i * f(X_i)`` when ``per_sample`` is true.
    """
    params = unpack(spec, theta)
    B = cache.h.shape[0]
    dh = np.asarray(coeffs, dtype=np.float64) * _output_slope(spec, cache.h)
    if per_sample:
        grad = np.zeros((B, spec.n_params))
    else:
        grad = np.zeros(spec.n_params)
    delta = dh[:, None]  # d(objective)/d(output of current layer), shape (B, width_out)
    for layer, (W, _b), a_in, z, y in zip(
        reversed(spec.layers),
        reversed(params),
        reversed(cache.inputs),
        reversed(cache.pre),
        reversed(cache.post),
    ):
        if layer.activated:
            dz = delta * _activation_grad(z, y, spec.activation, spec.leaky_slope)
        else:
            dz = delta
        if layer.kind == "dense":
            if per_sample:
                grad[:, layer.w_start : layer.b_start] = np.einsum("io,ij->ioj", dz, a_in).reshape(B, -1)
                grad[:, layer.b_start : layer.b_stop] = dz
            else:
                grad[layer.w_start : layer.b_start] = (dz.T @ a_in).ravel()
                grad[layer.b_start : layer.b_stop] = dz.sum(axis=0)
            delta_in = dz @ W
        else:
            nb, sb = layer.b_shape
            dzb = dz.reshape(B, nb, sb)
            ab = a_in.reshape(B, nb, sb)
            if per_sample:
                grad[:, layer.w_start : layer.b_start] = np.einsum("ijk,ijm->ijkm", dzb, ab).reshape(B, -1)
                grad[:, layer.b_start : layer.b_stop] = dz
            else:
                gW = np.matmul(dzb.transpose(1, 2, 0), ab.transpose(1, 0, 2))
                grad[layer.w_start : layer.b_start] = gW.ravel()
                grad[layer.b_start : layer.b_stop] = dz.sum(axis=0)
            # transpose of the block map: sum_k W[j, k, m] * dz[i, j, k]
            delta_in = np.matmul(dzb.transpose(1, 0, 2), W).transpose(1, 0, 2).reshape(B, nb * sb)
        if layer.residual:
            delta_in = delta_in + delta
        delta = delta_in
    if not np.isfinite(grad.sum()) and not np.all(np.isfinite(grad)):
        raise NumericFailure("non-finite parameter gradient")
    return grad


def init_params(spec: NetworkSpec, seed: int, zero_last_layer: bool = False) -> np.ndarray:
    """Xavier-uniform weights and zero biases.

    With ``zero_last_layer`` the output layer is exactly zero, so the initial
    surface equals the preconditioner's height bias everywhere.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & (2**64 - 1))))
    theta = np.zeros(spec.n_params)
    layers = spec.layers
    for i, layer in enumerate(layers):
        if zero_last_layer and i == len(layers) - 1:
            continue
        if layer.kind == "dense":
            fan_out, fan_in = layer.w_shape
        else:
            fan_out = fan_in = layer.w_shape[1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        theta[layer.w_start : layer.b_start] = rng.uniform(
            -limit, limit, size=layer.b_start - layer.w_start
        )
    return theta


def forward(spec, precond, theta, X) -> np.ndarray:
    """Surface heights f(X) for a batch ``X`` of shape ``[B, n]``."""
    return _forward(spec, precond, theta, X, keep=False).out


def param_gradient(spec, precond, theta, X, coeffs) -> np.ndarray:
    """``sum_i coeffs_i * grad_theta f(X_i)`` via one reverse pass."""
    cache = _forward(spec, precond, theta, X)
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if coeffs.shape[0] != cache.h.shape[0]:
        raise ValueError("coeffs must have one entry per batch row")
    return _backward(spec, theta, cache, coeffs)


def per_sample_gradients(spec, precond, theta, X) -> np.ndarray:
    """Matrix whose row ``i`` is ``grad_theta f(X_i)``."""
    cache = _forward(spec, precond, theta, X)
    return _backward(spec, theta, cache, np.ones(cache.h.shape[0]), per_sample=True)


def assemble_block_diagonal(W: np.ndarray) -> np.ndarray:
    """Dense ``(N_B*S_B, N_B*S_B)`` matrix with the blocks of ``W`` on its diagonal."""
    nb, sb, _ = W.shape
    dense = np.zeros((nb * sb, nb * sb))
    for j in range(nb):
        dense[j * sb : (j + 1) * sb, j * sb : (j + 1) * sb] = W[j]
    return dense


def to_fully_connected(spec: NetworkSpec, theta) -> tuple[NetworkSpec, np.ndarray]:
    """Equivalent FC network whose inner weights are the assembled BD matrices."""
    if spec.topology != "block_diagonal":
        return spec, np.array(theta, dtype=np.float64)
    fc_spec = NetworkSpec(**{**spec.to_dict(), "topology": "fully_connected", "width": spec.hidden_width})
    parts = []
    for layer, (W, b) in zip(spec.layers, unpack(spec, theta)):
        if layer.kind == "block":
            parts += [assemble_block_diagonal(W).ravel(), b.ravel()]
        else:
            parts += [W.ravel(), b.ravel()]
    return fc_spec, np.concatenate(parts)


class SurfaceModel:
    """Callable bundle of ``(spec, precond, theta)``."""

    def __init__(self, spec: NetworkSpec, precond: Preconditioner | None, theta):
        self.spec = spec
        self.precond = precond
        self.theta = np.asarray(theta, dtype=np.float64)

    def __call__(self, X) -> np.ndarray:
        return forward(self.spec, self.precond, self.theta, X)

    def gradient(self, X, coeffs) -> np.ndarray:
        return param_gradient(self.spec, self.precond, self.theta, X, coeffs)

    def per_sample_gradients(self, X) -> np.ndarray:
        return per_sample_gradients(self.spec, self.precond, self.theta, X)

    def with_params(self, theta) -> SurfaceModel:
        return SurfaceModel(self.spec, self.precond, theta)

    def value_and_gradient(self, X, coeff_fn: Callable[[np.ndarray], np.ndarray], bias=None):
        """Heights, then the gradient for coefficients computed from those heights.

        ``bias`` optionally supplies precomputed height-bias values for ``X``.
        """
        cache = _forward(self.spec, self.precond, self.theta, X, bias=bias)
        coeffs = np.asarray(coeff_fn(cache.out), dtype=np.float64)
        return cache.out, _backward(self.spec, self.theta, cache, coeffs)
