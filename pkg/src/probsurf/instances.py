"""PSO instances: magnitude-function pairs, wrappers and a feasibility checker.

A magnitude callable has signature ``m(s, aux)`` where ``s`` is an array of
surface heights and ``aux`` an :class:`AuxInfo` whose ``log_q`` broadcasts
against ``s``. Density-estimation instances act through the log difference
``d = s - log_q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

INF = math.inf


class RegistryError(KeyError):
    pass


@dataclass(frozen=True)
class AuxInfo:
    """Per-point auxiliary information: the down log-density and optional extras."""

    log_q: object = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def q(self):
        return np.exp(self.log_q)

    def take(self, index) -> AuxInfo:
        """Restrict array-valued entries to ``index``."""

        def pick(v):
            return np.asarray(v)[index] if np.ndim(v) else v

        return AuxInfo(pick(self.log_q), {k: pick(v) for k, v in self.extra.items()})


Magnitude = Callable[[np.ndarray, AuxInfo], np.ndarray]


@dataclass(frozen=True)
class PsoInstance:
    name: str
    mag_up: Magnitude
    mag_down: Magnitude
    convergence: Callable | None = None  # T(z, aux)
    ratio: Callable | None = None  # R(s, aux) = T^{-1}
    interval: tuple[float, float] = (-INF, INF)
    primitives: tuple[Callable, Callable] | None = None
    centered: bool = False  # heights live on the log_q scale
    params: dict = field(default_factory=dict)

    def magnitudes(self, s, aux: AuxInfo | None = None):
        aux = aux if aux is not None else AuxInfo()
        s = np.asarray(s, dtype=np.float64)
        with np.errstate(all="ignore"):
            mu = np.broadcast_to(np.asarray(self.mag_up(s, aux), dtype=np.float64), s.shape)
            md = np.broadcast_to(np.asarray(self.mag_down(s, aux), dtype=np.float64), s.shape)
        return mu, md

    def target(self, z, aux: AuxInfo | None = None):
        if self.convergence is None:
            raise ValueError(f"instance {self.name!r} has no convergence map")
        return self.convergence(np.asarray(z, dtype=np.float64), aux if aux is not None else AuxInfo())

    def loss(self, s_up, s_down, aux_up=None, aux_down=None) -> float:
        """Empirical loss ``-mean M~U(s_up) + mean M~D(s_down)``."""
        if self.primitives is None:
            raise ValueError(f"instance {self.name!r} has no closed-form loss")
        pu, pd = self.primitives
        with np.errstate(all="ignore"):
            up = pu(np.asarray(s_up, float), aux_up if aux_up is not None else AuxInfo())
            down = pd(np.asarray(s_down, float), aux_down if aux_down is not None else AuxInfo())
        return float(-np.mean(up) + np.mean(down))

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _d(s, aux):
    return s - aux.log_q


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-_softplus(-x))


def _one(s, aux):
    return np.ones_like(s)


def _log_target(shift=0.0, scale=1.0):
    """T(z) = scale * (log_q + log z) + shift with the matching R."""

    def T(z, aux):
        return scale * (aux.log_q + np.log(z)) + shift

    def R(s, aux):
        return np.exp((s - shift) / scale - aux.log_q)

    return T, R


def _ratio_target(shift=0.0, scale=1.0):
    """T(z) = scale * log z + shift (density-ratio instances, no log_q)."""

    def T(z, aux):
        return scale * np.log(z) + shift

    def R(s, aux):
        return np.exp((s - shift) / scale)

    return T, R


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def _positive_finite(name, value):
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value


def make_pso_lde(alpha: float, name: str = "pso_lde") -> PsoInstance:
    """Bounded magnitudes ``(exp(a d) + 1)^(-1/a)`` and ``(exp(-a d) + 1)^(-1/a)``."""
    a = _positive_finite("alpha", alpha)

    def up(s, aux):
        return np.exp(-_softplus(a * _d(s, aux)) / a)

    def down(s, aux):
        return np.exp(-_softplus(-a * _d(s, aux)) / a)

    T, R = _log_target()
    prims = None
    if a == 1.0:
        prims = (lambda s, aux: -_softplus(-_d(s, aux)), lambda s, aux: _softplus(_d(s, aux)))
    return PsoInstance(name, up, down, T, R, (-INF, INF), prims, True, {"alpha": a})


def make_nce() -> PsoInstance:
    return make_pso_lde(1.0, name="nce")


def make_pso_max() -> PsoInstance:
    T, R = _log_target()
    return PsoInstance(
        "pso_max",
        lambda s, aux: np.exp(-np.maximum(_d(s, aux), 0.0)),
        lambda s, aux: np.exp(np.minimum(_d(s, aux), 0.0)),
        T,
        R,
        (-INF, INF),
        None,
        True,
    )


def make_deeppdf(name: str = "deeppdf") -> PsoInstance:
    return PsoInstance(
        name,
        lambda s, aux: np.broadcast_to(aux.q, np.shape(s)) * np.ones_like(s),
        lambda s, aux: s,
        lambda z, aux: aux.q * z,
        lambda s, aux: s / aux.q,
        (0.0, INF),
        (lambda s, aux: s * aux.q, lambda s, aux: 0.5 * s * s),
        False,
    )


def _root_density(p=2.0):
    p = _positive_finite("p", p)
    return PsoInstance(
        "root_density",
        lambda s, aux: np.ones_like(s) * aux.q,
        lambda s, aux: np.abs(s) ** p * np.sign(s),
        lambda z, aux: (aux.q * z) ** (1.0 / p),
        lambda s, aux: s**p / aux.q,
        (0.0, INF),
        (lambda s, aux: s * aux.q, lambda s, aux: np.abs(s) ** (p + 1) / (p + 1)),
        False,
        {"p": p},
    )


def _exp_pair(name, cu, cd, prim_u=None, prim_d=None):
    """Instance with ``M^U = exp(cu*d)``, ``M^D = exp(cd*d)`` (``None`` coefficient = constant 1)."""

    def mk(c):
        if c is None:
            return _one
        return lambda s, aux: np.exp(c * _d(s, aux))

    T, R = _log_target()
    prims = (prim_u, prim_d) if prim_u is not None else None
    return PsoInstance(name, mk(cu), mk(cd), T, R, (-INF, INF), prims, True)


def _is():
    return _exp_pair("is", None, 1.0, lambda s, aux: s, lambda s, aux: np.exp(_d(s, aux)))


def _polynomial():
    return _exp_pair(
        "polynomial", 1.0, 2.0, lambda s, aux: np.exp(_d(s, aux)), lambda s, aux: 0.5 * np.exp(2 * _d(s, aux))
    )


def _inverse_polynomial():
    return _exp_pair(
        "inverse_polynomial",
        -2.0,
        -1.0,
        lambda s, aux: -0.5 * np.exp(-2 * _d(s, aux)),
        lambda s, aux: -np.exp(-_d(s, aux)),
    )


def _inverse_is(name="inverse_is"):
    return _exp_pair(name, -1.0, None, lambda s, aux: -np.exp(-_d(s, aux)), lambda s, aux: s)


def _log_variant_1():
    T, R = _log_target()
    return PsoInstance(
        "log_variant_1",
        lambda s, aux: np.ones_like(s) * aux.q,
        lambda s, aux: np.exp(s),
        T,
        R,
        (-INF, INF),
        (lambda s, aux: s * aux.q, lambda s, aux: np.exp(s)),
        True,
    )


def _log_variant_2():
    return replace(_is(), name="log_variant_2")


def _log_variant_3():
    return _inverse_is("log_variant_3")


def _log_variant_4():
    return _exp_pair(
        "log_variant_4",
        -0.5,
        0.5,
        lambda s, aux: -2.0 * np.exp(-0.5 * _d(s, aux)),
        lambda s, aux: 2.0 * np.exp(0.5 * _d(s, aux)),
    )


def _log_variant_5():
    T, R = _log_target()
    return PsoInstance(
        "log_variant_5",
        lambda s, aux: aux.q * np.exp(s),
        lambda s, aux: np.exp(2 * s),
        T,
        R,
        (-INF, INF),
        (lambda s, aux: aux.q * np.exp(s), lambda s, aux: 0.5 * np.exp(2 * s)),
        True,
    )


def _unit():
    return PsoInstance("unit", _one, _one, None, None, (-INF, INF), (lambda s, aux: s, lambda s, aux: s))


def _ratio_instance(name, up, down, T, R, interval, prims=None, params=None):
    return PsoInstance(name, up, down, T, R, interval, prims, False, params or {})


def _ulsif():
    return _ratio_instance(
        "ulsif",
        _one,
        lambda s, aux: s,
        lambda z, aux: z,
        lambda s, aux: s,
        (0.0, INF),
        (lambda s, aux: s, lambda s, aux: 0.5 * s * s),
    )


def _kliep():
    return _ratio_instance(
        "kliep",
        lambda s, aux: 1.0 / s,
        _one,
        lambda z, aux: z,
        lambda s, aux: s,
        (0.0, INF),
        (lambda s, aux: np.log(s), lambda s, aux: s - 1.0),
    )


def _gan_critic(name="gan_critic"):
    return _ratio_instance(
        name,
        lambda s, aux: 1.0 / s,
        lambda s, aux: 1.0 / (1.0 - s),
        lambda z, aux: z / (1.0 + z),
        lambda s, aux: s / (1.0 - s),
        (0.0, 1.0),
        (lambda s, aux: np.log(s), lambda s, aux: -np.log(1.0 - s)),
    )


def _gan_critic_log():
    return _ratio_instance(
        "gan_critic_log",
        lambda s, aux: np.exp(-s),
        lambda s, aux: -1.0 / np.expm1(s),
        lambda z, aux: np.log(z / (1.0 + z)),
        lambda s, aux: 1.0 / np.expm1(-s),
        (-INF, 0.0),
        (lambda s, aux: -np.exp(-s), lambda s, aux: s - np.log(-np.expm1(s))),
    )


def _ndmr():
    return _ratio_instance(
        "ndmr",
        _one,
        lambda s, aux: 2.0 * s,
        lambda z, aux: 0.5 * z,
        lambda s, aux: 2.0 * s,
        (0.0, 1.0),
        (lambda s, aux: s, lambda s, aux: s * s),
    )


def _ndmlr():
    return _ratio_instance(
        "ndmlr",
        _one,
        lambda s, aux: 2.0 * np.exp(s),
        lambda z, aux: np.log(0.5 * z),
        lambda s, aux: 2.0 * np.exp(s),
        (-INF, 0.0),
        (lambda s, aux: s, lambda s, aux: 2.0 * np.exp(s)),
    )


def _power_div(alpha=0.5):
    a = _positive_finite("alpha", alpha)
    return _ratio_instance(
        "power_div",
        lambda s, aux: s ** (a - 1.0),
        lambda s, aux: s**a,
        lambda z, aux: z,
        lambda s, aux: s,
        (0.0, INF),
        (lambda s, aux: s**a / a, lambda s, aux: s ** (a + 1.0) / (a + 1.0)),
        {"alpha": a},
    )


def _reversed_kl():
    return _ratio_instance(
        "reversed_kl",
        lambda s, aux: 1.0 / (s * s),
        lambda s, aux: 1.0 / s,
        lambda z, aux: z,
        lambda s, aux: s,
        (0.0, INF),
        (lambda s, aux: -1.0 / s, lambda s, aux: np.log(s)),
    )


def _balanced_ratio():
    return _ratio_instance(
        "balanced_ratio",
        lambda s, aux: 1.0 / (s + 1.0),
        lambda s, aux: s / (s + 1.0),
        lambda z, aux: z,
        lambda s, aux: s,
        (0.0, INF),
        (lambda s, aux: np.log1p(s), lambda s, aux: s - np.log1p(s)),
    )


def _log_density_ratio():
    T, R = _ratio_target()
    return _ratio_instance(
        "log_density_ratio", _one, lambda s, aux: np.exp(s), T, R, (-INF, INF), (lambda s, aux: s, lambda s, aux: np.exp(s))
    )


def _square():
    return _ratio_instance(
        "square",
        lambda s, aux: 1.0 - s,
        lambda s, aux: 1.0 + s,
        lambda z, aux: (z - 1.0) / (z + 1.0),
        lambda s, aux: (1.0 + s) / (1.0 - s),
        (-1.0, 1.0),
        (lambda s, aux: -0.5 * (1.0 - s) ** 2, lambda s, aux: 0.5 * (1.0 + s) ** 2),
    )


def _logistic(name="logistic"):
    T, R = _ratio_target()
    return _ratio_instance(
        name,
        lambda s, aux: _sigmoid(-s),
        lambda s, aux: _sigmoid(s),
        T,
        R,
        (-INF, INF),
        (lambda s, aux: -_softplus(-s), lambda s, aux: _softplus(s)),
    )


def _exponential():
    T, R = _ratio_target(scale=0.5)
    return _ratio_instance(
        "exponential",
        lambda s, aux: np.exp(-s),
        lambda s, aux: np.exp(s),
        T,
        R,
        (-INF, INF),
        (lambda s, aux: -np.exp(-s), lambda s, aux: np.exp(s)),
    )


def _lsgan(a=0.0, b=1.0):
    a, b = float(a), float(b)
    if a == b or not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("lsgan needs finite a != b")
    return _ratio_instance(
        "lsgan",
        lambda s, aux: b - s,
        lambda s, aux: s - a,
        lambda z, aux: (b * z + a) / (z + 1.0),
        lambda s, aux: (s - a) / (b - s),
        (min(a, b), max(a, b)),
        (lambda s, aux: -0.5 * (s - b) ** 2, lambda s, aux: 0.5 * (s - a) ** 2),
        {"a": a, "b": b},
    )


def _kl_div():
    T, R = _ratio_target(shift=1.0)
    return _ratio_instance(
        "kl_div", _one, lambda s, aux: np.exp(s - 1.0), T, R, (-INF, INF), (lambda s, aux: s, lambda s, aux: np.exp(s - 1.0))
    )


def _reverse_kl_div():
    return _ratio_instance(
        "reverse_kl_div",
        _one,
        lambda s, aux: -1.0 / s,
        lambda z, aux: -1.0 / z,
        lambda s, aux: -1.0 / s,
        (-INF, 0.0),
        (lambda s, aux: s, lambda s, aux: -1.0 - np.log(-s)),
    )


def _lipschitz():
    def T(z, aux):
        return (z - 1.0) / (2.0 * np.sqrt(z))

    def R(s, aux):
        r = np.hypot(s, 1.0)
        return (r + s) / (r - s)

    return _ratio_instance(
        "lipschitz",
        lambda s, aux: 1.0 - s / np.hypot(s, 1.0),
        lambda s, aux: 1.0 + s / np.hypot(s, 1.0),
        T,
        R,
        (-INF, INF),
        (lambda s, aux: s - np.hypot(s, 1.0), lambda s, aux: s + np.hypot(s, 1.0)),
    )


def _ldar():
    return _ratio_instance(
        "ldar",
        lambda s, aux: _sigmoid(-np.tan(s)),
        lambda s, aux: _sigmoid(np.tan(s)),
        lambda z, aux: np.arctan(np.log(z)),
        lambda s, aux: np.exp(np.tan(s)),
        (-math.pi / 2, math.pi / 2),
    )


def _ldtr():
    return _ratio_instance(
        "ldtr",
        lambda s, aux: np.sqrt(1.0 - s),
        lambda s, aux: np.sqrt(1.0 + s),
        lambda z, aux: np.tanh(np.log(z)),
        lambda s, aux: np.sqrt((1.0 + s) / (1.0 - s)),
        (-1.0, 1.0),
        (lambda s, aux: -(2.0 / 3.0) * (1.0 - s) ** 1.5, lambda s, aux: (2.0 / 3.0) * (1.0 + s) ** 1.5),
    )


def _ebgan(m=1.0):
    m = float(m)
    return _ratio_instance(
        "ebgan",
        lambda s, aux: -np.ones_like(s),
        lambda s, aux: -(s < m).astype(np.float64),
        None,
        None,
        (-INF, INF),
        (lambda s, aux: -s, lambda s, aux: np.maximum(m - s, 0.0)),
        {"m": m},
    )


def _cond_density():
    return make_deeppdf("cond_density")


def _cond_log_density():
    return replace(_is(), name="cond_log_density")


def _renamed(factory, name):
    def build(**params):
        return replace(factory(**params), name=name)

    return build


_REGISTRY: dict[str, Callable[..., PsoInstance]] = {
    "pso_lde": lambda alpha=1.0: make_pso_lde(alpha),
    "pso_max": make_pso_max,
    "deeppdf": make_deeppdf,
    "nce": make_nce,
    "is": _is,
    "polynomial": _polynomial,
    "inverse_polynomial": _inverse_polynomial,
    "inverse_is": _inverse_is,
    "root_density": _root_density,
    "log_variant_1": _log_variant_1,
    "log_variant_2": _log_variant_2,
    "log_variant_3": _log_variant_3,
    "log_variant_4": _log_variant_4,
    "log_variant_5": _log_variant_5,
    "unit": _unit,
    "ulsif": _ulsif,
    "kliep": _kliep,
    "gan_critic": _gan_critic,
    "gan_critic_log": _gan_critic_log,
    "ndmr": _ndmr,
    "ndmlr": _ndmlr,
    "power_div": _power_div,
    "reversed_kl": _reversed_kl,
    "balanced_ratio": _balanced_ratio,
    "log_density_ratio": _log_density_ratio,
    "square": _square,
    "logistic": _logistic,
    "exponential": _exponential,
    "lsgan": _lsgan,
    "kl_div": _kl_div,
    "reverse_kl_div": _reverse_kl_div,
    "lipschitz": _lipschitz,
    "ldar": _ldar,
    "ldtr": _ldtr,
    "ebgan": _ebgan,
    "cond_density": _cond_density,
    "cond_log_density": _cond_log_density,
    "cond_nce": lambda: make_pso_lde(1.0, name="cond_nce"),
    "cond_pso_lde": lambda alpha=1.0: make_pso_lde(alpha, name="cond_pso_lde"),
    "cond_gan_critic": lambda: _gan_critic("cond_gan_critic"),
    "cond_logistic": lambda: _logistic("cond_logistic"),
}

REGISTRY_NAMES = tuple(_REGISTRY)


def make_named(name: str, **params) -> PsoInstance:
    """Build a registry instance by name, forwarding numeric parameters."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise RegistryError(f"unknown PSO instance {name!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for instance {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# wrappers
# ---------------------------------------------------------------------------


def wrap_bounded(inst: PsoInstance) -> PsoInstance:
    """Divide both magnitudes by ``|M^U| + |M^D|`` (``0/0`` is taken as 0)."""

    def norm(s, aux):
        mu, md = inst.magnitudes(s, aux)
        den = np.abs(mu) + np.abs(md)
        safe = np.where(den > 0, den, 1.0)
        return mu / safe, md / safe

    return replace(
        inst,
        name=f"bounded({inst.name})",
        mag_up=lambda s, aux: norm(s, aux)[0],
        mag_down=lambda s, aux: norm(s, aux)[1],
        primitives=None,
    )


def _threshold_wrap(inst, threshold, side, force, factor, label):
    phi = float(threshold)
    if not math.isfinite(phi):
        raise ValueError("threshold must be finite")
    if side not in ("above", "below"):
        raise ValueError(f"side must be 'above' or 'below', got {side!r}")
    if force not in ("up", "down"):
        raise ValueError(f"force must be 'up' or 'down', got {force!r}")
    target = inst.mag_up if force == "up" else inst.mag_down

    def wrapped(s, aux):
        with np.errstate(all="ignore"):
            m = np.asarray(target(s, aux), dtype=np.float64)
        hit = s > phi if side == "above" else s < phi
        return np.where(hit, factor * m, m)

    changes = {"mag_up": wrapped} if force == "up" else {"mag_down": wrapped}
    return replace(inst, name=f"{label}({inst.name},{phi},{side},{force})", primitives=None, **changes)


def wrap_cut_at(inst: PsoInstance, threshold: float, side: str = "above", force: str = "up") -> PsoInstance:
    """Zero the ``force`` magnitude wherever the height is past ``threshold``."""
    return _threshold_wrap(inst, threshold, side, force, 0.0, "cut_at")


def wrap_reverse_at(inst: PsoInstance, threshold: float, side: str = "above", force: str = "up") -> PsoInstance:
    """Negate the ``force`` magnitude wherever the height is past ``threshold``."""
    return _threshold_wrap(inst, threshold, side, force, -1.0, "reverse_at")


# ---------------------------------------------------------------------------
# feasibility
# ---------------------------------------------------------------------------


class Violation(NamedTuple):
    condition: str
    s: float
    log_q: float


@dataclass
class FeasibilityReport:
    feasible_on_K: bool
    needs_range_restriction: bool
    violations: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.feasible_on_K and not self.needs_range_restriction

    @property
    def verdict(self) -> str:
        if not self.feasible_on_K:
            return "infeasible"
        return "needs_range_restriction" if self.needs_range_restriction else "feasible"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "feasible_on_K": self.feasible_on_K,
            "needs_range_restriction": self.needs_range_restriction,
            "violations": [v._asdict() for v in self.violations],
        }


ENDPOINT_MARGIN = 1e-9
MONOTONE_TOL = 1e-12


def default_grid(interval, log_q=0.0, centered=False, size=401, span=30.0):
    lo, hi = interval
    if math.isinf(lo) and math.isinf(hi):
        grid = np.linspace(-span, span, size)
        return grid + log_q if centered else grid
    if math.isinf(hi):
        return lo + np.geomspace(1e-6, 1e6, size)
    if math.isinf(lo):
        return hi - np.geomspace(1e6, 1e-6, size)
    return np.linspace(lo + ENDPOINT_MARGIN, hi - ENDPOINT_MARGIN, size)


def _convergence_grid(inst, K, aux, size=401):
    """Heights ``T(z)`` for log-spaced ratios ``z``, clipped to the interior of ``K``."""
    if inst.convergence is None:
        return None
    with np.errstate(all="ignore"):
        g = np.asarray(inst.convergence(np.geomspace(1e-6, 1e6, size), aux), dtype=np.float64)
    g = np.unique(g[np.isfinite(g) & (g > K[0] + ENDPOINT_MARGIN) & (g < K[1] - ENDPOINT_MARGIN)])
    return g if g.size >= 100 else None


def _outside_grids(interval, size=200):
    lo, hi = interval
    below = above = None
    if math.isfinite(lo):
        below = lo - np.concatenate([[0.0], np.geomspace(1e-6, 1e3, size)])
    if math.isfinite(hi):
        above = hi + np.concatenate([[0.0], np.geomspace(1e-6, 1e3, size)])
    return below, above


def check_feasibility(inst: PsoInstance, interval=None, s_grid=None, probes=None, check_ratio_law=True):
    """Numerically check the feasibility conditions of ``inst``.

    On ``K`` both magnitudes must be positive and ``R = M^D / M^U`` strictly
    increasing along the grid. Outside ``K`` (finite endpoints only) the
    magnitudes must be finite, must not share a sign, and must push the height
    back toward ``K``. ``probes`` is a sequence of ``log_q`` values or
    :class:`AuxInfo` objects.
    """
    K = tuple(float(v) for v in (interval if interval is not None else inst.interval))
    if probes is None:
        probes = (-5.0, 0.0, 3.0)
    aux_list = [p if isinstance(p, AuxInfo) else AuxInfo(float(p)) for p in probes]
    violations: list[Violation] = []
    in_ok = True
    out_ok = True

    for aux in aux_list:
        lq = float(np.asarray(aux.log_q))
        if s_grid is None:
            grid = _convergence_grid(inst, K, aux)
            if grid is None:
                grid = default_grid(K, lq, inst.centered)
        else:
            grid = np.asarray(s_grid, dtype=np.float64)
            if grid.size < 100:
                raise ValueError("s_grid needs at least 100 points")
            if np.any(np.diff(grid) <= 0):
                raise ValueError("s_grid must be strictly increasing")
        try:
            mu, md = inst.magnitudes(grid, aux)
        except Exception as exc:  # evaluation errors count as a violation
            violations.append(Violation(f"evaluation_error:{type(exc).__name__}", float(grid[0]), lq))
            in_ok = False
            continue
        bad = ~(np.isfinite(mu) & np.isfinite(md))
        if bad.any():
            violations.append(Violation("finite_on_K", float(grid[np.argmax(bad)]), lq))
            in_ok = False
        for label, m in (("mag_up_positive", mu), ("mag_down_positive", md)):
            nonpos = ~(m > 0)
            if nonpos.any():
                violations.append(Violation(label, float(grid[np.argmax(nonpos)]), lq))
                in_ok = False
        with np.errstate(all="ignore"):
            r = md / mu
        if np.all(np.isfinite(r)):
            step = np.diff(r)
            tol = MONOTONE_TOL * np.maximum(np.abs(r[:-1]), np.abs(r[1:]))
            dec = step < -tol
            if dec.any():
                violations.append(Violation("ratio_increasing", float(grid[np.argmax(dec)]), lq))
                in_ok = False
            elif np.all(np.abs(step) <= tol):
                violations.append(Violation("ratio_increasing", float(grid[0]), lq))
                in_ok = False
            if check_ratio_law and inst.ratio is not None:
                with np.errstate(all="ignore"):
                    rr = np.asarray(inst.ratio(grid, aux), dtype=np.float64)
                mism = ~(np.abs(rr - r) <= 1e-8 * np.maximum(np.abs(r), 1e-300))
                if mism.any():
                    violations.append(Violation("ratio_matches_convergence", float(grid[np.argmax(mism)]), lq))
                    in_ok = False

        below, above = _outside_grids(K)
        for side, g in (("below", below), ("above", above)):
            if g is None:
                continue
            mu_o, md_o = inst.magnitudes(g, aux)
            fin = np.isfinite(mu_o) & np.isfinite(md_o)
            if not fin.all():
                violations.append(Violation(f"finite_{side}_K", float(g[np.argmax(~fin)]), lq))
                out_ok = False
            with np.errstate(invalid="ignore"):
                same = np.sign(mu_o) * np.sign(md_o) > 0
                push = mu_o > md_o if side == "below" else mu_o < md_o
            if same.any():
                violations.append(Violation(f"opposite_signs_{side}_K", float(g[np.argmax(same)]), lq))
                out_ok = False
            wrong = fin & ~push
            if wrong.any():
                violations.append(Violation(f"restoring_force_{side}_K", float(g[np.argmax(wrong)]), lq))
                out_ok = False

    return FeasibilityReport(in_ok, in_ok and not out_ok, violations)
