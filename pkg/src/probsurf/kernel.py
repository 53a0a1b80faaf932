"""Empirical model-kernel diagnostics built on per-sample parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import SurfaceModel
from .trainer import _aux_for, _direction

KINDS = ("raw", "relative", "cosine")


def _grads(model: SurfaceModel, X, theta=None) -> np.ndarray:
    m = model if theta is None else model.with_params(theta)
    X = np.asarray(X, dtype=np.float64).reshape(-1, m.spec.input_dim)
    return m.per_sample_gradients(X)


def grad_similarity(model: SurfaceModel, X, X2, theta=None) -> float:
    """``g(X, X') = ∇f(X) · ∇f(X')``."""
    G = _grads(model, np.concatenate([np.ravel(X), np.ravel(X2)]), theta)
    return float(G[0] @ G[1])


def gramian(model: SurfaceModel, points, theta=None) -> np.ndarray:
    """Matrix of all pairwise gradient similarities (symmetrized exactly)."""
    G = _grads(model, points, theta)
    K = G @ G.T
    return 0.5 * (K + K.T)


def relative_kernel(model: SurfaceModel, X, X2, theta=None) -> float:
    """``r(X, X') = g(X, X') / g(X, X)``."""
    G = _grads(model, np.concatenate([np.ravel(X), np.ravel(X2)]), theta)
    self_sim = float(G[0] @ G[0])
    if not self_sim > 0:
        raise ValueError("g(X, X) must be positive")
    return float(G[0] @ G[1]) / self_sim


def cosine_similarity(model: SurfaceModel, X, X2, theta=None) -> float:
    G = _grads(model, np.concatenate([np.ravel(X), np.ravel(X2)]), theta)
    return float(G[0] @ G[1] / (np.linalg.norm(G[0]) * np.linalg.norm(G[1])))


def normalize_kernel(K: np.ndarray, kind: str) -> np.ndarray:
    """Turn a Gramian into the ``kind`` similarity (row ``i`` is the reference point)."""
    if kind == "raw":
        return K
    d = np.diag(K)
    if kind == "relative":
        return K / d[:, None]
    if kind == "cosine":
        s = np.sqrt(d)
        return np.clip(K / np.outer(s, s), -1.0, 1.0)
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


@dataclass
class KernelScan:
    kind: str
    i: np.ndarray
    j: np.ndarray
    distance: np.ndarray
    similarity: np.ndarray

    def __len__(self):
        return self.distance.size

    @property
    def pairs(self):
        return list(zip(self.distance.tolist(), self.similarity.tolist()))


def pair_scan(model: SurfaceModel, points, kind: str = "raw", theta=None) -> KernelScan:
    """Distances and similarities over all unordered pairs ``i <= j`` (self pairs included)."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 2:
        raise ValueError("pair_scan needs at least two points")
    S = normalize_kernel(gramian(model, points, theta), kind)
    if kind != "raw":
        np.fill_diagonal(S, 1.0)
    i, j = np.triu_indices(points.shape[0])
    dist = np.linalg.norm(points[i] - points[j], axis=1)
    return KernelScan(kind, i, j, dist, S[i, j])


@dataclass
class DifferentialRecord:
    probe: int
    delta: float
    df_real: float
    df_approx: float
    ratio: float
    degenerate: bool


DEGENERATE_TOL = 1e-14


def differential_check(model: SurfaceModel, inst, up_batch, down_batch, probes, deltas, aux=None):
    """Compare the true height change after one GD step with its first-order estimate.

    The step is ``θ' = θ - δ·dθ`` with the PSO direction ``dθ`` of the given
    batches; ``df_approx = -δ ∇f(X)ᵀ dθ``.
    """
    deltas = np.atleast_1d(np.asarray(deltas, dtype=np.float64))
    if np.any(deltas <= 0):
        raise ValueError("delta values must be positive")
    up = np.asarray(up_batch, dtype=np.float64)
    down = np.asarray(down_batch, dtype=np.float64)
    d_theta = _direction(model, inst, up, down, _aux_for(aux, up), _aux_for(aux, down))[0]
    probes = np.asarray(probes, dtype=np.float64)
    f0 = model(probes)
    slope = model.per_sample_gradients(probes) @ d_theta
    records = []
    for delta in deltas:
        f1 = model.with_params(model.theta - delta * d_theta)(probes)
        real = f1 - f0
        approx = -delta * slope
        for k in range(probes.shape[0]):
            degenerate = abs(real[k]) < DEGENERATE_TOL
            ratio = float("nan") if degenerate else abs(real[k] - approx[k]) / abs(real[k])
            records.append(DifferentialRecord(k, float(delta), float(real[k]), float(approx[k]), ratio, degenerate))
    return records


def differential_via_kernel(model: SurfaceModel, inst, up_batch, down_batch, probes, delta, aux=None) -> np.ndarray:
    """First-order height change written as a kernel-weighted sum of magnitudes.

    ``df(X) = -δ [ -(1/N^U) Σ M^U_i g(X, X^U_i) + (1/N^D) Σ M^D_j g(X, X^D_j) ]``.
    """
    up = np.asarray(up_batch, dtype=np.float64)
    down = np.asarray(down_batch, dtype=np.float64)
    _, _, mu, md = _direction(model, inst, up, down, _aux_for(aux, up), _aux_for(aux, down))
    Gp = model.per_sample_gradients(np.asarray(probes, dtype=np.float64))
    ku = Gp @ model.per_sample_gradients(up).T
    kd = Gp @ model.per_sample_gradients(down).T
    return -delta * (-(ku @ mu) / up.shape[0] + (kd @ md) / down.shape[0])
