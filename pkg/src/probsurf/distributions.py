"""Benchmark and auxiliary densities with exact log-pdf and exact sampling.

Every distribution exposes ``sample(rng, count)`` and ``log_pdf(X)`` on
``[B, dim]`` batches. ``log_pdf`` returns ``-inf`` outside the support.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import logsumexp, ndtr

from ._matrix import TRANSFORM_MATRIX
from ._random import check_rng

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def _as_batch(X, dim):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim <= 1 and dim == 1:
        X = X.reshape(-1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {X.shape}")
    return X


class Distribution:
    """Base class: a sampleable density on R^dim with exact log-pdf."""

    dim: int
    exact: bool = True

    def sample(self, rng, count: int) -> np.ndarray:
        raise NotImplementedError

    def log_pdf(self, X) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, X) -> np.ndarray:
        return np.exp(self.log_pdf(X))

    def describe(self) -> dict:
        """JSON-serializable descriptor; see :func:`from_descriptor`."""
        raise NotImplementedError

    def __call__(self, X):
        return self.log_pdf(X)


# ---------------------------------------------------------------------------
# 1-dim mixtures and the Columns product density
# ---------------------------------------------------------------------------


class Mixture1D:
    """Finite mixture of uniform and Gaussian components on the real line.

    ``components`` is a list of ``(kind, p1, p2, weight)`` with kind
    ``"uniform"`` (``p1=a, p2=b``) or ``"gaussian"`` (``p1=mean, p2=std``).
    """

    def __init__(self, components):
        self.components = [(str(k), float(p1), float(p2), float(w)) for k, p1, p2, w in components]
        weights = np.array([c[3] for c in self.components])
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        for kind, p1, p2, _ in self.components:
            if kind == "uniform" and not p1 < p2:
                raise ValueError(f"uniform component needs a < b, got ({p1}, {p2})")
            if kind == "gaussian" and not p2 > 0:
                raise ValueError(f"gaussian component needs std > 0, got {p2}")
            if kind not in ("uniform", "gaussian"):
                raise ValueError(f"unknown component kind {kind!r}")
        self.weights = weights
        self._log_w = np.log(weights)

    def component_log_pdfs(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((len(self.components),) + x.shape)
        for i, (kind, p1, p2, _) in enumerate(self.components):
            if kind == "uniform":
                inside = (x >= p1) & (x <= p2)
                out[i] = np.where(inside, -np.log(p2 - p1), -np.inf)
            else:
                z = (x - p1) / p2
                out[i] = -0.5 * z * z - np.log(p2) - 0.5 * LOG_2PI
        return out

    def log_pdf(self, x) -> np.ndarray:
        terms = self.component_log_pdfs(x) + self._log_w.reshape((-1,) + (1,) * np.ndim(x))
        return logsumexp(terms, axis=0)

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        total = np.zeros_like(x)
        for kind, p1, p2, w in self.components:
            if kind == "uniform":
                total += w * np.clip((x - p1) / (p2 - p1), 0.0, 1.0)
            else:
                total += w * ndtr((x - p1) / p2)
        return total

    def variance(self) -> float:
        means, second = [], []
        for kind, p1, p2, _ in self.components:
            if kind == "uniform":
                m = 0.5 * (p1 + p2)
                v = (p2 - p1) ** 2 / 12.0
            else:
                m, v = p1, p2 * p2
            means.append(m)
            second.append(v + m * m)
        mean = float(np.dot(self.weights, means))
        return float(np.dot(self.weights, second)) - mean * mean

    def sample(self, rng, shape) -> np.ndarray:
        rng = check_rng(rng)
        comp = rng.choice(len(self.components), size=shape, p=self.weights)
        u = rng.random(shape)
        z = rng.standard_normal(shape)
        out = np.empty(shape)
        for i, (kind, p1, p2, _) in enumerate(self.components):
            mask = comp == i
            if kind == "uniform":
                out[mask] = p1 + (p2 - p1) * u[mask]
            else:
                out[mask] = p1 + p2 * z[mask]
        return out


COLUMNS_COMPONENTS = [
    ("uniform", -2.3, -1.7, 0.2),
    ("gaussian", -1.0, 0.2, 0.2),
    ("gaussian", 0.0, 0.2, 0.2),
    ("gaussian", 1.0, 0.2, 0.2),
    ("uniform", 1.7, 2.3, 0.2),
]


class ProductMixture(Distribution):
    """Independent copies of one :class:`Mixture1D` along every dimension."""

    def __init__(self, mixture: Mixture1D, dim: int, name: str = "product"):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.mixture = mixture
        self.dim = int(dim)
        self.name = name

    def sample(self, rng, count):
        return self.mixture.sample(rng, (int(count), self.dim))

    def log_pdf(self, X):
        X = _as_batch(X, self.dim)
        return self.mixture.log_pdf(X).sum(axis=1)

    def describe(self):
        if self.name == "columns":
            return {"kind": "columns", "dim": self.dim}
        return {"kind": "product", "dim": self.dim, "components": [list(c) for c in self.mixture.components]}


def columns(dim: int) -> ProductMixture:
    """The multi-modal Columns benchmark: 5-component mixture per dimension."""
    return ProductMixture(Mixture1D(COLUMNS_COMPONENTS), dim, name="columns")


# ---------------------------------------------------------------------------
# Linear transform of a base density
# ---------------------------------------------------------------------------


class TransformSpec:
    """Matrix ``A`` together with its inverse and ``log|det A|``."""

    def __init__(self, matrix, require_unit_det=True):
        A = np.array(matrix, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("transform matrix must be square")
        sign, logdet = np.linalg.slogdet(A)
        det = sign * np.exp(logdet)
        if require_unit_det and abs(det - 1.0) >= 1e-6:
            raise ValueError(f"transform matrix must have determinant 1, got {det!r}")
        if sign == 0:
            raise ValueError("transform matrix is singular")
        self.matrix = A
        self.inverse = np.linalg.inv(A)
        self.det = det
        self.log_abs_det = float(logdet)
        logger.debug("transform matrix %dx%d: det=%.12g cond=%.6g", A.shape[0], A.shape[1], det, np.linalg.cond(A))


class TransformedDistribution(Distribution):
    """Law of ``A x`` for ``x`` drawn from ``base``."""

    def __init__(self, base: Distribution, transform: TransformSpec, name="transformed"):
        if transform.matrix.shape[0] != base.dim:
            raise ValueError("transform size does not match base dimension")
        self.base = base
        self.transform = transform
        self.dim = base.dim
        self.name = name

    def sample(self, rng, count):
        return self.base.sample(rng, count) @ self.transform.matrix.T

    def log_pdf(self, X):
        X = _as_batch(X, self.dim)
        return self.base.log_pdf(X @ self.transform.inverse.T) - self.transform.log_abs_det

    def describe(self):
        if self.name == "transformed_columns":
            return {"kind": "transformed_columns", "dim": self.dim}
        return {"kind": "transformed", "base": self.base.describe(), "matrix": self.transform.matrix.tolist()}


def transform_matrix(dim: int = 20) -> np.ndarray:
    """The embedded rotation for ``dim == 20``.

    For smaller ``dim`` the orthogonal factor of the leading ``dim x dim``
    block is used, with its sign fixed so the determinant is +1.
    """
    if dim == TRANSFORM_MATRIX.shape[0]:
        return TRANSFORM_MATRIX.copy()
    if not 1 <= dim < TRANSFORM_MATRIX.shape[0]:
        raise ValueError(f"transformed Columns is defined for 1 <= dim <= 20, got {dim}")
    q, r = np.linalg.qr(TRANSFORM_MATRIX[:dim, :dim])
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, -1] = -q[:, -1]
    return q


def transformed_columns(dim: int = 20) -> TransformedDistribution:
    """Columns rotated by the embedded matrix (``dim == 20`` uses it verbatim)."""
    return TransformedDistribution(columns(dim), TransformSpec(transform_matrix(dim)), name="transformed_columns")


def export_matrix_csv(path, dim: int = 20) -> None:
    np.savetxt(path, transform_matrix(dim), delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------------------
# Auxiliary (down) densities
# ---------------------------------------------------------------------------


class UniformBox(Distribution):
    """Uniform density on an axis-aligned box."""

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if not np.all(self.hi > self.lo):
            raise ValueError("uniform box needs hi > lo in every dimension")
        self.dim = self.lo.shape[0]
        self._log_density = -float(np.sum(np.log(self.hi - self.lo)))

    def sample(self, rng, count):
        rng = check_rng(rng)
        return self.lo + (self.hi - self.lo) * rng.random((int(count), self.dim))

    def log_pdf(self, X):
        X = _as_batch(X, self.dim)
        inside = np.all((X >= self.lo) & (X <= self.hi), axis=1)
        return np.where(inside, self._log_density, -np.inf)

    def describe(self):
        return {"kind": "uniform", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class DiagGaussian(Distribution):
    """Gaussian with diagonal covariance."""

    def __init__(self, mean, std):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be vectors of equal length")
        if not np.all(self.std > 0):
            raise ValueError("std must be positive in every dimension")
        self.dim = self.mean.shape[0]
        self._norm = -float(np.sum(np.log(self.std))) - 0.5 * self.dim * LOG_2PI

    def sample(self, rng, count):
        rng = check_rng(rng)
        return self.mean + self.std * rng.standard_normal((int(count), self.dim))

    def log_pdf(self, X):
        X = _as_batch(X, self.dim)
        z = (X - self.mean) / self.std
        return self._norm - 0.5 * np.einsum("ij,ij->i", z, z)

    def describe(self):
        return {"kind": "gaussian", "mean": self.mean.tolist(), "std": self.std.tolist()}


def uniform_box(lo, hi) -> UniformBox:
    return UniformBox(lo, hi)


def uniform_box_fit(data, margin: float = 0.0) -> UniformBox:
    """Box spanned by the per-dimension min and max of ``data``.

    ``margin`` widens each side by that fraction of the per-dimension range.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if margin < 0:
        raise ValueError("margin must be non-negative")
    lo, hi = data.min(axis=0), data.max(axis=0)
    pad = margin * (hi - lo)
    return UniformBox(lo - pad, hi + pad)


def diag_gaussian(mean, std) -> DiagGaussian:
    return DiagGaussian(mean, std)


def diag_gaussian_fit(data) -> DiagGaussian:
    """Gaussian with the sample mean and per-dimension sample variances."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    std = data.std(axis=0)
    if not np.all(std > 0):
        raise ValueError("every dimension needs positive sample variance")
    return DiagGaussian(data.mean(axis=0), std)


# ---------------------------------------------------------------------------
# Joint densities for conditional and mutual-information experiments
# ---------------------------------------------------------------------------


class LinearGaussianPairs(Distribution):
    """Pairs ``(x, y)`` with ``y ~ N(0, 1)`` and ``x | y ~ N(slope*y + offset, noise_std^2)``.

    Points are laid out as ``[x, y]`` (x first).
    """

    dim = 2

    def __init__(self, slope=1.0, offset=0.0, noise_std=0.5):
        if noise_std <= 0:
            raise ValueError("noise_std must be positive")
        self.slope = float(slope)
        self.offset = float(offset)
        self.noise_std = float(noise_std)

    def sample(self, rng, count):
        rng = check_rng(rng)
        y = rng.standard_normal(int(count))
        x = self.slope * y + self.offset + self.noise_std * rng.standard_normal(int(count))
        return np.column_stack([x, y])

    def conditional_log_pdf(self, X):
        """``log p(x | y)`` for rows ``[x, y]``."""
        X = _as_batch(X, 2)
        z = (X[:, 0] - self.slope * X[:, 1] - self.offset) / self.noise_std
        return -0.5 * z * z - np.log(self.noise_std) - 0.5 * LOG_2PI

    def marginal_x(self) -> DiagGaussian:
        return DiagGaussian([self.offset], [np.hypot(self.slope, self.noise_std)])

    def log_pdf(self, X):
        X = _as_batch(X, 2)
        return self.conditional_log_pdf(X) - 0.5 * X[:, 1] ** 2 - 0.5 * LOG_2PI

    def log_ratio(self, X):
        """``log p(x, y) / (p(x) p(y))``."""
        X = _as_batch(X, 2)
        return self.conditional_log_pdf(X) - self.marginal_x().log_pdf(X[:, :1])

    def mutual_information(self) -> float:
        rho2 = self.slope**2 / (self.slope**2 + self.noise_std**2)
        return -0.5 * np.log1p(-rho2)

    def describe(self):
        return {"kind": "linear_gaussian_pairs", "slope": self.slope, "offset": self.offset, "noise_std": self.noise_std}


def from_descriptor(desc: dict) -> Distribution:
    kind = desc["kind"]
    if kind == "columns":
        return columns(int(desc["dim"]))
    if kind == "transformed_columns":
        return transformed_columns(int(desc["dim"]))
    if kind == "product":
        return ProductMixture(Mixture1D(desc["components"]), int(desc["dim"]))
    if kind == "transformed":
        return TransformedDistribution(from_descriptor(desc["base"]), TransformSpec(desc["matrix"], False))
    if kind == "uniform":
        return UniformBox(desc["lo"], desc["hi"])
    if kind == "gaussian":
        return DiagGaussian(desc["mean"], desc["std"])
    if kind == "linear_gaussian_pairs":
        return LinearGaussianPairs(desc["slope"], desc["offset"], desc["noise_std"])
    raise ValueError(f"unknown distribution kind {kind!r}")


def augment_additive_noise(batch, sigma: float, rng) -> np.ndarray:
    """Add fresh i.i.d. ``N(0, sigma^2 I)`` noise to every sample of ``batch``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    batch = np.asarray(batch, dtype=np.float64)
    if sigma == 0:
        return batch.copy()
    rng = check_rng(rng)
    return batch + sigma * rng.standard_normal(batch.shape)
