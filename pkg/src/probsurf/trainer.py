"""PSO update rule, Adam, learning-rate schedule and the training loop."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import evaluation
from ._random import check_rng, make_rng
from .distributions import Distribution
from .instances import AuxInfo, PsoInstance
from .network import NumericFailure, SurfaceModel


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending field."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class TrainConfig:
    iterations: int = 300000
    batch_up: int = 1000
    batch_down: int = 1000
    lr0: float = 0.0035
    warm_iters: int = 40000
    lr_min: float = 3e-9
    adam_beta1: float = 0.75
    adam_beta2: float = 0.999
    adam_eps: float = 1e-10
    seed: int = 0
    augment_sigma: float = 0.0
    eval_period: int = 0  # 0 disables metric rows
    checkpoint_period: int = 0  # 0 disables checkpoints
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        for name in ("iterations", "warm_iters", "eval_period", "checkpoint_period"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(name, "must be non-negative")
        for name in ("batch_up", "batch_down"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be at least 1")
        for name in ("lr0", "lr_min", "adam_eps"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(name, "must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= float(getattr(self, name)) < 1.0:
                raise ConfigError(name, "must lie in [0, 1)")
        for name in ("augment_sigma", "grad_clip"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(name, "must be non-negative")
        if self.warm_iters > self.iterations:
            raise ConfigError("warm_iters", "must not exceed iterations")
        if self.lr_min > self.lr0:
            raise ConfigError("lr_min", "must not exceed lr0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def lr_at(t: int, cfg: TrainConfig) -> float:
    """Constant ``lr0`` through ``warm_iters``, then geometric decay reaching ``lr_min`` at ``t = T``."""
    if t <= cfg.warm_iters or cfg.iterations == cfg.warm_iters:
        return float(cfg.lr0)
    frac = (t - cfg.warm_iters) / (cfg.iterations - cfg.warm_iters)
    if frac >= 1.0:
        return float(cfg.lr_min)
    return float(cfg.lr0 * (cfg.lr_min / cfg.lr0) ** frac)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self) -> AdamState:
        return AdamState(self.m.copy(), self.v.copy(), self.step)


def adam_step(state: AdamState, theta, g, lr, beta1=0.75, beta2=0.999, eps=1e-10):
    """One bias-corrected Adam update; returns ``(theta_new, state_new)``."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError("theta, gradient and Adam state must have equal shapes")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


# ---------------------------------------------------------------------------
# update direction
# ---------------------------------------------------------------------------


def _aux_for(aux_source, X) -> AuxInfo:
    if aux_source is None:
        return AuxInfo()
    if isinstance(aux_source, AuxInfo):
        return aux_source
    if hasattr(aux_source, "log_pdf"):
        return AuxInfo(np.asarray(aux_source.log_pdf(X), dtype=np.float64))
    return aux_source(X)


def _concat_aux(a: AuxInfo, b: AuxInfo, nu: int, nd: int) -> AuxInfo:
    def join(x, y):
        return np.concatenate([np.broadcast_to(np.asarray(x, float), (nu,)), np.broadcast_to(np.asarray(y, float), (nd,))])

    keys = set(a.extra) | set(b.extra)
    return AuxInfo(join(a.log_q, b.log_q), {k: join(a.extra[k], b.extra[k]) for k in keys})


def _check_magnitude(values, inst, which, offset=0):
    if not np.isfinite(values.sum()) and not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NumericFailure(
            f"instance {inst.name!r}: non-finite {which} magnitude at point {bad}", index=bad
        )


def _direction(model: SurfaceModel, inst: PsoInstance, up, down, aux_up, aux_down, bias=None):
    nu, nd = up.shape[0], down.shape[0]
    if nu == 0 or nd == 0:
        raise ValueError("up and down batches must be nonempty")
    X = np.concatenate([up, down], axis=0)
    aux = _concat_aux(aux_up, aux_down, nu, nd)
    holder = {}

    def coeffs(s):
        with np.errstate(all="ignore"):
            mu = np.asarray(inst.mag_up(s[:nu], aux.take(slice(0, nu))), dtype=np.float64)
            md = np.asarray(inst.mag_down(s[nu:], aux.take(slice(nu, None))), dtype=np.float64)
        mu = np.broadcast_to(mu, (nu,))
        md = np.broadcast_to(md, (nd,))
        _check_magnitude(mu, inst, "up")
        _check_magnitude(md, inst, "down")
        holder["mu"], holder["md"] = mu, md
        return np.concatenate([-mu / nu, md / nd])

    s, g = model.value_and_gradient(X, coeffs, bias=bias)
    return g, s, holder["mu"], holder["md"]


def pso_update_direction(model: SurfaceModel, inst: PsoInstance, up_batch, down_batch, aux=None, aux_down=None):
    """``dθ = -(1/N^U) Σ M^U ∇f(X^U) + (1/N^D) Σ M^D ∇f(X^D)``.

    ``aux`` supplies the auxiliary log-density: a distribution (``log_pdf``),
    a callable ``X -> AuxInfo``, or a fixed :class:`AuxInfo`. ``aux_down``
    overrides it for the down batch.
    """
    up = np.asarray(up_batch, dtype=np.float64)
    down = np.asarray(down_batch, dtype=np.float64)
    a_up = _aux_for(aux, up)
    a_down = _aux_for(aux_down if aux_down is not None else aux, down)
    return _direction(model, inst, up, down, a_up, a_down)[0]


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


class DatasetCycler:
    """Serve consecutive batches from a dataset reshuffled at every epoch."""

    def __init__(self, data, rng):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] == 0:
            raise ValueError("dataset must be a nonempty [N, n] matrix")
        self.rng = rng
        self.perm = rng.permutation(self.data.shape[0])
        self.pos = 0

    def next(self, count: int) -> np.ndarray:
        n = self.data.shape[0]
        parts = []
        need = count
        while need > 0:
            if self.pos >= n:
                self.perm = self.rng.permutation(n)
                self.pos = 0
            take = min(need, n - self.pos)
            parts.append(self.perm[self.pos : self.pos + take])
            self.pos += take
            need -= take
        idx = parts[0] if len(parts) == 1 else np.concatenate(parts)
        return self.data[idx]


class ConditionalDown(Distribution):
    """Down sampler for conditional estimation.

    Rows are ``[x, y]``: ``x`` is drawn from ``down_x`` and ``y`` is reused
    from random dataset rows, independently of ``x``. ``log_pdf`` returns the
    log-density of the ``x`` part only, which is what conditional instances
    consume as ``log_q``.
    """

    exact = True

    def __init__(self, pairs, down_x: Distribution):
        self.pairs = np.asarray(pairs, dtype=np.float64)
        self.down_x = down_x
        self.x_dim = down_x.dim
        self.dim = self.pairs.shape[1]
        if self.x_dim >= self.dim:
            raise ValueError("pairs must have columns beyond the x part")

    def sample(self, rng, count):
        rng = check_rng(rng)
        x = self.down_x.sample(rng, count)
        y = self.pairs[rng.integers(0, self.pairs.shape[0], size=int(count)), self.x_dim :]
        return np.concatenate([x, y], axis=1)

    def log_pdf(self, X):
        X = np.asarray(X, dtype=np.float64)
        return self.down_x.log_pdf(X[:, : self.x_dim])

    def describe(self):
        return {"kind": "conditional", "down_x": self.down_x.describe()}


def conditional_batch(pairs, down_x_dist: Distribution, n_up: int, n_down: int, rng):
    """Up pairs from the dataset; down pairs ``(X^D ~ P_D, Y^D reused from dataset rows)``."""
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[0] == 0:
        raise ValueError("pairs dataset must be nonempty")
    rng = check_rng(rng)
    up = pairs[rng.integers(0, pairs.shape[0], size=int(n_up))]
    down = ConditionalDown(pairs, down_x_dist).sample(rng, n_down)
    return up, down


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("iter", "lr", "psqr", "lsqr", "is_err", "grad_norm", "wall_time")


@dataclass
class MetricsTrace:
    rows: list = field(default_factory=list)

    def append(self, **values):
        row = tuple(float(values[c]) if c != "iter" else int(values[c]) for c in TRACE_COLUMNS)
        if self.rows and row[0] <= self.rows[-1][0]:
            raise ValueError("trace iterations must be strictly increasing")
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    @property
    def last(self) -> dict:
        return dict(zip(TRACE_COLUMNS, self.rows[-1])) if self.rows else {}


class TrainingAborted(RuntimeError):
    """Numeric failure during training; carries the last good checkpoint reference."""

    def __init__(self, message, iteration, last_checkpoint=None, theta=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint
        self.theta = theta


@dataclass
class TestSets:
    up: np.ndarray
    down: np.ndarray
    true_logpdf: object = None  # callable/Distribution/array over ``up``


def make_test_sets(up_dist, down_dist, size, seed, true_logpdf=None) -> TestSets:
    up = up_dist.sample(make_rng(seed, "test"), size)
    down = down_dist.sample(make_rng(seed, "test_down"), size)
    if true_logpdf is None and hasattr(up_dist, "log_pdf"):
        true_logpdf = up_dist
    return TestSets(up, down, true_logpdf)


def train(
    spec,
    precond,
    inst: PsoInstance,
    up_source,
    down_dist,
    cfg: TrainConfig,
    theta0=None,
    test: TestSets | None = None,
    on_checkpoint=None,
    aux_fn=None,
    zero_last_layer=False,
):
    """Run PSO with Adam; returns ``(theta, trace)``.

    ``up_source`` is a ``[N, n]`` dataset cycled per shuffled epoch, or a
    distribution sampled fresh each iteration. Down batches are always fresh
    draws from ``down_dist``. ``on_checkpoint(iteration, theta, adam_state)``
    is called every ``checkpoint_period`` iterations and may return a
    reference that :class:`TrainingAborted` reports on a later failure.
    """
    from .network import init_params

    if theta0 is None:
        theta0 = init_params(spec, make_rng(cfg.seed, "init").integers(2**63), zero_last_layer)
    theta = np.array(theta0, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise ValueError("theta0 has the wrong length for spec")
    trace = MetricsTrace()
    if cfg.iterations == 0:
        return theta, trace

    if isinstance(up_source, Distribution) or hasattr(up_source, "sample"):
        up_rng = make_rng(cfg.seed, "up")

        def next_up():
            return up_source.sample(up_rng, cfg.batch_up)

        if up_source.dim != spec.input_dim:
            raise ValueError("up distribution dimension does not match the network input")
    else:
        cycler = DatasetCycler(up_source, make_rng(cfg.seed, "shuffle"))
        if cycler.data.shape[1] != spec.input_dim:
            raise ValueError("dataset dimension does not match the network input")
        next_up = lambda: cycler.next(cfg.batch_up)  # noqa: E731

    down_rng = make_rng(cfg.seed, "down")
    noise_rng = make_rng(cfg.seed, "noise")
    aux_source = aux_fn if aux_fn is not None else down_dist
    # when the height bias is the down density, its log-pdf doubles as aux log_q
    share_bias = (
        aux_fn is None
        and precond is not None
        and precond.height_bias is down_dist
    )
    hb = precond.height_bias if precond is not None else None
    if hb is not None and hasattr(hb, "log_pdf"):
        hb = hb.log_pdf

    model = SurfaceModel(spec, precond, theta)
    state = AdamState.zeros(theta.size)
    last_ckpt = None
    good_theta = theta.copy()
    start = time.perf_counter()
    grad_norm = 0.0

    def record(t):
        if test is None:
            ps = ls = ie = float("nan")
        else:
            m = model.with_params(theta)
            if test.true_logpdf is not None:
                f = evaluation.heights(m, test.up)
                tl = evaluation._log_values(test.true_logpdf, test.up)
                ps = float(np.mean((np.exp(tl) - np.exp(f)) ** 2))
                ls = float(np.mean((tl - f) ** 2))
                fd = evaluation.heights(m, test.down)
                ie = float(-np.mean(f) + np.mean(np.exp(fd - down_dist.log_pdf(test.down))))
            else:
                ps = ls = float("nan")
                ie = evaluation.is_error(m, test.up, test.down, down_dist)
        trace.append(
            iter=t, lr=lr_at(t, cfg), psqr=ps, lsqr=ls, is_err=ie, grad_norm=grad_norm,
            wall_time=time.perf_counter() - start,
        )

    if cfg.eval_period:
        record(0)
    nu = cfg.batch_up
    for t in range(1, cfg.iterations + 1):
        up = next_up()
        if cfg.augment_sigma > 0:
            up = up + cfg.augment_sigma * noise_rng.standard_normal(up.shape)
        down = down_dist.sample(down_rng, cfg.batch_down)
        try:
            if share_bias:
                X = np.concatenate([up, down], axis=0)
                lq = np.asarray(hb(X), dtype=np.float64)
                a_up, a_down = AuxInfo(lq[:nu]), AuxInfo(lq[nu:])
                g = _direction(model, inst, up, down, a_up, a_down, bias=lq)[0]
            else:
                g = _direction(model, inst, up, down, _aux_for(aux_source, up), _aux_for(aux_source, down))[0]
            grad_norm = float(np.sqrt(g @ g))
            if cfg.grad_clip > 0 and grad_norm > cfg.grad_clip:
                g = g * (cfg.grad_clip / grad_norm)
            theta, state = adam_step(
                state, theta, g, lr_at(t - 1, cfg), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
            )
            if not np.isfinite(theta.sum()):
                raise NumericFailure("non-finite parameters after the update")
        except NumericFailure as exc:
            raise TrainingAborted(
                f"numeric failure at iteration {t}: {exc}", t, last_checkpoint=last_ckpt, theta=good_theta
            ) from exc
        model.theta = theta
        if cfg.eval_period and t % cfg.eval_period == 0:
            record(t)
        if cfg.checkpoint_period and t % cfg.checkpoint_period == 0:
            good_theta = theta.copy()
            if on_checkpoint is not None:
                ref = on_checkpoint(t, theta, state)
                last_ckpt = ref if ref is not None else t
    return theta, trace
