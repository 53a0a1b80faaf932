import math

import numpy as np
import pytest
from scipy import integrate

from probsurf.distributions import LinearGaussianPairs, columns, diag_gaussian, uniform_box
from probsurf.evaluation import (
    EvalReport,
    evaluate,
    heights,
    is_error,
    lsqr,
    mi_estimate,
    pdf_proxy,
    psqr,
    total_integral,
    uncertainty_metrics,
)
from probsurf.network import NetworkSpec, SurfaceModel


def _random_net(seed=0, shift=-1.5):
    spec = NetworkSpec(1, topology="fully_connected", num_layers=3, width=6, activation="tanh")
    theta = np.random.default_rng(seed).normal(0, 0.5, spec.n_params)
    theta[-1] += shift  # output bias
    return SurfaceModel(spec, None, theta)


def test_lsqr_and_psqr_basic_properties():
    c = columns(1)
    X = c.sample(np.random.default_rng(0), 1000)
    exact = c.log_pdf
    assert lsqr(exact, c, X) == 0.0 and psqr(exact, c, X) == 0.0
    shifted = lambda Z: c.log_pdf(Z) + 0.1  # noqa: E731
    assert lsqr(shifted, c, X) == pytest.approx(0.01, rel=1e-12)
    p = np.exp(c.log_pdf(X))
    assert psqr(shifted, c, X) == pytest.approx(np.mean((p * (math.e**0.1 - 1)) ** 2), rel=1e-12)
    # precomputed true values are accepted
    assert lsqr(shifted, c.log_pdf(X), X) == lsqr(shifted, c, X)


def test_is_error_with_exact_model_matches_entropy_quadrature():
    c = columns(1)
    down = uniform_box([-2.4], [2.4])
    rng = np.random.default_rng(1)
    up_t = c.sample(rng, 10**6)
    down_t = down.sample(rng, 10**6)
    val = is_error(c.log_pdf, up_t, down_t, down)
    f = lambda t: float(np.exp(c.log_pdf(np.array([[t]]))[0]))  # noqa: E731
    g = lambda t: -f(t) * float(c.log_pdf(np.array([[t]]))[0]) if f(t) > 0 else 0.0  # noqa: E731
    brk = [-2.3, -1.7, -1.0, 0.0, 1.0, 1.7, 2.3]
    ent, _ = integrate.quad(g, -2.4, 2.4, points=brk, limit=400)
    mass, _ = integrate.quad(f, -2.4, 2.4, points=brk, limit=400)
    expected = ent + mass  # -E[log p] plus the mass of p inside the box
    se = np.std(c.log_pdf(up_t)) / math.sqrt(up_t.shape[0])
    se_d = np.std(np.exp(c.log_pdf(down_t) - down.log_pdf(down_t))) / math.sqrt(down_t.shape[0])
    assert abs(val - expected) < 3 * math.hypot(se, se_d)


def test_total_integral_matches_quadrature_for_random_net():
    model = _random_net(2)
    down = uniform_box([-3.0], [3.0])
    est, se = total_integral(model, down, 10**6, np.random.default_rng(0), return_stderr=True)
    ref, _ = integrate.quad(lambda t: float(np.exp(model(np.array([[t]]))[0])), -3.0, 3.0, limit=200)
    assert abs(est - ref) < 3 * se


def test_total_integral_cover_invariance():
    c = columns(1)
    a, sa = total_integral(c.log_pdf, uniform_box([-2.4], [2.4]), 10**6, np.random.default_rng(0), return_stderr=True)
    b, sb = total_integral(c.log_pdf, diag_gaussian([0.0], [1.5]), 10**6, np.random.default_rng(1), return_stderr=True)
    assert abs(a - b) < 3 * math.hypot(sa, sb)
    assert abs(a - 1.0) < 3 * sa
    with pytest.raises(ValueError):
        total_integral(c.log_pdf, uniform_box([-1.0], [1.0]), 0)


def test_total_integral_is_reproducible_across_chunk_sizes():
    model = _random_net(3)
    down = uniform_box([-2.0], [2.0])
    a = total_integral(model, down, 5000, np.random.default_rng(7), chunk=5000)
    b = total_integral(model, down, 5000, np.random.default_rng(7), chunk=700)
    assert a == total_integral(model, down, 5000, np.random.default_rng(7), chunk=5000)
    assert b == pytest.approx(a, rel=1e-12)


def test_heights_chunking_matches_single_pass():
    model = _random_net(4)
    X = np.random.default_rng(0).normal(size=(2500, 1))
    assert np.array_equal(heights(model, X, chunk=1000), heights(model, X, chunk=10000))


def test_pdf_proxy():
    down = uniform_box([-1.0], [1.0])
    proxy = pdf_proxy(lambda X: X[:, 0], down)
    out = proxy(np.array([[-0.5], [0.5], [1.5]]))
    assert list(out) == [0.0, 0.5, 0.0]


def test_uncertainty_metrics_against_dense_inverse():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(5, 5))
    G = B @ B.T + 0.5 * np.eye(5)
    u = uncertainty_metrics(G)
    assert u.c2_ok
    assert np.allclose(u.c2, np.diag(np.linalg.inv(G)), rtol=0, atol=1e-10)
    assert np.allclose(u.c1, 1 / np.diag(G))
    singular = np.ones((3, 3))
    s = uncertainty_metrics(singular)
    assert not s.c2_ok and s.c2 is None
    with pytest.raises(ValueError):
        uncertainty_metrics(np.zeros((2, 3)))


def test_mi_estimate_with_closed_form_ratio():
    lg = LinearGaussianPairs(slope=0.8, offset=0.0, noise_std=0.6)  # correlation 0.8
    pairs = lg.sample(np.random.default_rng(0), 10**6)
    est = mi_estimate(lg.log_ratio, pairs)
    se = np.std(lg.log_ratio(pairs)) / math.sqrt(pairs.shape[0])
    assert lg.mutual_information() == pytest.approx(0.5108, abs=1e-4)
    assert abs(est - 0.5108256) < 3 * se


def test_evaluate_report():
    c = columns(1)
    down = uniform_box([-2.4], [2.4])
    rng = np.random.default_rng(0)
    rep = evaluate(c.log_pdf, c, c.sample(rng, 1000), down.sample(rng, 1000), down, n_integral=10**5, rng=rng)
    assert isinstance(rep, EvalReport)
    assert rep.lsqr == 0.0 and rep.n_test == 1000
    assert rep.total_integral == pytest.approx(1.0, abs=0.03)
    assert set(rep.to_dict()) == {"psqr", "lsqr", "is_err", "total_integral", "n_test"}
