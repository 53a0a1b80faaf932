"""Accuracy and consistency metrics for a learned surface.

``model`` arguments are any callable ``X -> heights``; a
:class:`probsurf.network.SurfaceModel` qualifies. Log-density arguments may
be a callable, an object with ``log_pdf``, or a precomputed array.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._random import check_rng

CHUNK = 20000


def heights(model, X, chunk: int = CHUNK) -> np.ndarray:
    """Evaluate ``model`` over ``X`` in fixed-size chunks (fixed-order concatenation)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] <= chunk:
        return np.asarray(model(X), dtype=np.float64).reshape(-1)
    return np.concatenate([np.asarray(model(X[i : i + chunk]), dtype=np.float64).reshape(-1) for i in range(0, X.shape[0], chunk)])


def _log_values(logpdf, X) -> np.ndarray:
    if callable(logpdf) and not hasattr(logpdf, "log_pdf"):
        return np.asarray(logpdf(X), dtype=np.float64).reshape(-1)
    if hasattr(logpdf, "log_pdf"):
        return np.asarray(logpdf.log_pdf(X), dtype=np.float64).reshape(-1)
    return np.asarray(logpdf, dtype=np.float64).reshape(-1)


def psqr(model, true_logpdf, test_points) -> float:
    """Mean squared difference between the true pdf and ``exp(f)``."""
    f = heights(model, test_points)
    t = _log_values(true_logpdf, test_points)
    return float(np.mean((np.exp(t) - np.exp(f)) ** 2))


def lsqr(model, true_logpdf, test_points) -> float:
    """Mean squared difference between the true log-pdf and ``f``."""
    f = heights(model, test_points)
    t = _log_values(true_logpdf, test_points)
    return float(np.mean((t - f) ** 2))


def is_error(model, up_test, down_test, down_logpdf) -> float:
    """Importance-sampling loss ``-mean f(up) + mean exp(f(down)) / P_D(down)``."""
    fu = heights(model, up_test)
    fd = heights(model, down_test)
    ld = _log_values(down_logpdf, down_test)
    return float(-np.mean(fu) + np.mean(np.exp(fd - ld)))


def total_integral(model, down_dist, N: int = 10**6, rng=None, chunk: int = 100000, return_stderr=False):
    """Importance-sampling estimate ``(1/N) sum exp(f(X_i)) / P_D(X_i)`` over fresh down samples."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = check_rng(rng)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < N:
        m = min(chunk, N - done)
        X = down_dist.sample(rng, m)
        w = np.exp(heights(model, X) - down_dist.log_pdf(X))
        total += float(np.sum(w))
        total_sq += float(np.sum(w * w))
        done += m
    mean = total / N
    if not return_stderr:
        return mean
    var = max(total_sq / N - mean * mean, 0.0)
    return mean, float(np.sqrt(var / N))


def pdf_proxy(model, down_logpdf):
    """Clip a density-scale surface: 0 where ``f < 0`` or ``P_D = 0``, else ``f``."""

    def proxy(X):
        f = heights(model, X)
        ld = _log_values(down_logpdf, X)
        return np.where((f < 0) | np.isneginf(ld), 0.0, f)

    return proxy


@dataclass
class UncertaintyMetrics:
    c1: np.ndarray
    c2: np.ndarray | None
    c2_ok: bool


def uncertainty_metrics(G) -> UncertaintyMetrics:
    """Per-point ``C1 = 1/G_ii`` and ``C2 = (G^-1)_ii``.

    ``C2`` comes from a Cholesky solve against the identity; if ``G`` is not
    numerically positive definite ``c2`` is ``None`` and ``c2_ok`` is False.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError("G must be a square matrix")
    diag = np.diag(G)
    with np.errstate(divide="ignore"):
        c1 = 1.0 / diag
    try:
        factor = cho_factor(G, lower=True, check_finite=True)
        inv = cho_solve(factor, np.eye(G.shape[0]))
        c2 = np.diag(inv).copy()
        ok = bool(np.all(np.isfinite(c2)) and np.all(c2 > 0))
    except (LinAlgError, ValueError):
        c2, ok = None, False
    return UncertaintyMetrics(c1, c2 if ok else None, ok)


def mi_estimate(log_ratio_model, joint_pairs) -> float:
    """Mutual information as the mean learned log-ratio over joint samples."""
    return float(np.mean(heights(log_ratio_model, joint_pairs)))


@dataclass
class EvalReport:
    psqr: float
    lsqr: float
    is_err: float
    total_integral: float
    n_test: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(model, true_logpdf, up_test, down_test, down_dist, n_integral=10**6, rng=None) -> EvalReport:
    """All scalar metrics on fixed test sets plus a fresh total-integral estimate."""
    return EvalReport(
        psqr=psqr(model, true_logpdf, up_test) if true_logpdf is not None else float("nan"),
        lsqr=lsqr(model, true_logpdf, up_test) if true_logpdf is not None else float("nan"),
        is_err=is_error(model, up_test, down_test, down_dist),
        total_integral=total_integral(model, down_dist, n_integral, rng),
        n_test=int(np.asarray(up_test).shape[0]),
    )
