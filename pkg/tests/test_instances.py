import math

import mpmath
import numpy as np
import pytest

from probsurf.instances import (
    REGISTRY_NAMES,
    AuxInfo,
    RegistryError,
    check_feasibility,
    make_deeppdf,
    make_named,
    make_pso_lde,
    make_pso_max,
    wrap_bounded,
    wrap_cut_at,
    wrap_reverse_at,
)

FEASIBLE = [
    "pso_lde", "pso_max", "deeppdf", "nce", "is", "polynomial", "inverse_polynomial", "inverse_is",
    "root_density", "log_variant_1", "log_variant_2", "log_variant_3", "log_variant_4", "log_variant_5",
    "ulsif", "log_density_ratio", "square", "logistic", "exponential", "lsgan", "kl_div", "lipschitz",
    "cond_density", "cond_log_density", "cond_nce", "cond_pso_lde", "cond_logistic",
]
RANGE_RESTRICTED = [
    "kliep", "gan_critic", "gan_critic_log", "ndmr", "ndmlr", "power_div", "reversed_kl",
    "balanced_ratio", "reverse_kl_div", "ldar", "ldtr", "cond_gan_critic",
]
INFEASIBLE = ["unit", "ebgan"]


def _mag(inst, s, log_q=0.0):
    mu, md = inst.magnitudes(np.array([s], dtype=float), AuxInfo(log_q))
    return float(mu[0]), float(md[0])


def test_classification_lists_cover_registry():
    assert sorted(FEASIBLE + RANGE_RESTRICTED + INFEASIBLE) == sorted(REGISTRY_NAMES)


@pytest.mark.parametrize("alpha, expected", [(1.0, 0.5), (0.25, 0.0625)])
def test_pso_lde_at_zero_log_difference(alpha, expected):
    inst = make_pso_lde(alpha)
    mu, md = _mag(inst, 1.7, log_q=1.7)
    assert mu == pytest.approx(expected, rel=1e-14)
    assert md == pytest.approx(expected, rel=1e-14)


def test_pso_lde_extreme_log_difference_matches_high_precision():
    mpmath.mp.dps = 50
    a = mpmath.mpf(1) / 4
    mu_ref = float((mpmath.exp(a * 40) + 1) ** (-1 / a))
    md_ref = float((mpmath.exp(-a * 40) + 1) ** (-1 / a))
    mu, md = _mag(make_pso_lde(0.25), 40.0)
    assert mu == pytest.approx(mu_ref, rel=1e-12)
    assert md == pytest.approx(md_ref, rel=1e-14)
    # frozen oracle values
    assert mu == pytest.approx(4.2475797539e-18, rel=1e-9)
    assert md == pytest.approx(0.99981842, abs=1e-8)


@pytest.mark.parametrize("alpha", [1e-3, 0.25, 1.0, 7.0])
def test_pso_lde_bounded_and_finite_over_wide_range(alpha):
    inst = make_pso_lde(alpha)
    d = np.concatenate([-np.geomspace(1e6, 1e-3, 50), [0.0], np.geomspace(1e-3, 1e6, 50)])
    mu, md = inst.magnitudes(d, AuxInfo(0.0))
    assert np.all(np.isfinite(mu)) and np.all(np.isfinite(md))
    assert np.all((mu >= 0) & (mu <= 1)) and np.all((md >= 0) & (md <= 1))
    mid = make_pso_lde(alpha).magnitudes(np.array([0.0]))
    assert mid[0][0] == pytest.approx(2 ** (-1 / alpha), rel=1e-12)


def test_pso_lde_rejects_bad_alpha():
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ValueError):
            make_pso_lde(bad)


def test_pso_max_values():
    inst = make_pso_max()
    assert _mag(inst, 0.0) == (1.0, 1.0)
    mu, md = _mag(inst, 2.0)
    assert mu == pytest.approx(math.exp(-2.0)) and md == 1.0
    for d in (-3.0, -0.5, 0.7, 4.0):
        mu, md = _mag(inst, d)
        assert md / mu == pytest.approx(math.exp(d), rel=1e-14)


def test_deeppdf_values_and_balance():
    inst = make_deeppdf()
    assert _mag(inst, 0.3, math.log(0.5)) == pytest.approx((0.5, 0.3))
    aux = AuxInfo(math.log(0.5))
    # at s = P^U the balance P^U * M^U = P_D * M^D holds
    pu = 0.8
    mu, md = inst.magnitudes(np.array([pu]), aux)
    assert pu * mu[0] == pytest.approx(0.5 * md[0])
    assert inst.target(np.array([1.6]), aux)[0] == pytest.approx(0.8)


@pytest.mark.parametrize(
    "name, s, expected",
    [("ulsif", 2.0, (1.0, 2.0)), ("logistic", 0.0, (0.5, 0.5)), ("is", 0.0, (1.0, 1.0))],
)
def test_named_examples(name, s, expected):
    assert _mag(make_named(name), s) == pytest.approx(expected)


def test_unknown_name_and_bad_params():
    with pytest.raises(RegistryError):
        make_named("no_such_instance")
    with pytest.raises(ValueError):
        make_named("ulsif", alpha=2.0)


def _lde_z_grid():
    return np.geomspace(0.01, 100.0, 41)


@pytest.mark.parametrize("name", REGISTRY_NAMES)
def test_ratio_law_inverse_pair(name):
    inst = make_named(name)
    if inst.convergence is None or inst.ratio is None:
        pytest.skip("no convergence metadata")
    for lq in (-2.0, 0.0, 1.5):
        aux = AuxInfo(lq)
        z = _lde_z_grid()
        s = inst.target(z, aux)
        ok = (s > inst.interval[0]) & (s < inst.interval[1])
        back = inst.ratio(s[ok], aux)
        assert np.all(np.abs(back - z[ok]) <= 1e-8 * z[ok])


@pytest.mark.parametrize("name", REGISTRY_NAMES)
def test_magnitude_ratio_equals_inverse_map_on_targets(name):
    inst = make_named(name)
    if inst.convergence is None:
        pytest.skip("no convergence metadata")
    aux = AuxInfo(0.4)
    z = np.geomspace(0.05, 20.0, 25)
    s = inst.target(z, aux)
    ok = (s > inst.interval[0] + 1e-6) & (s < inst.interval[1] - 1e-6)
    mu, md = inst.magnitudes(s[ok], aux)
    assert np.allclose(md / mu, z[ok], rtol=1e-8, atol=0)


@pytest.mark.parametrize("name", REGISTRY_NAMES)
def test_primitives_differentiate_to_magnitudes(name):
    inst = make_named(name)
    if inst.primitives is None:
        pytest.skip("no closed-form loss")
    pu, pd = inst.primitives
    aux = AuxInfo(0.3)
    lo, hi = inst.interval
    lo = max(lo, -3.0)
    hi = min(hi, 3.0)
    s = np.linspace(lo, hi, 23)[1:-1]
    h = 1e-6
    mu, md = inst.magnitudes(s, aux)
    dpu = (pu(s + h, aux) - pu(s - h, aux)) / (2 * h)
    dpd = (pd(s + h, aux) - pd(s - h, aux)) / (2 * h)
    assert np.allclose(dpu, mu, rtol=1e-6, atol=1e-7)
    assert np.allclose(dpd, md, rtol=1e-6, atol=1e-7)


def test_wrap_bounded_examples_and_ratio():
    b = wrap_bounded(make_named("ulsif"))
    assert _mag(b, 2.0) == pytest.approx((1 / 3, 2 / 3))
    assert _mag(wrap_bounded(make_named("log_density_ratio")), 0.0) == pytest.approx((0.5, 0.5))
    rng = np.random.default_rng(0)
    for name in ("ulsif", "is", "square", "pso_max"):
        inst = make_named(name)
        wb = wrap_bounded(inst)
        s = rng.uniform(-2, 2, 20) if inst.interval[0] == -math.inf else rng.uniform(0.1, 0.9, 20)
        mu, md = inst.magnitudes(s, AuxInfo(0.2))
        bu, bd = wb.magnitudes(s, AuxInfo(0.2))
        assert np.allclose(bd / bu, md / mu, rtol=1e-12)
        assert np.all(np.abs(bu) <= 1) and np.all(np.abs(bd) <= 1)
        assert np.array_equal(np.sign(bu), np.sign(mu)) and np.array_equal(np.sign(bd), np.sign(md))
    base = make_named("is")
    assert wrap_bounded(base).convergence is base.convergence


def test_wrap_bounded_zero_over_zero():
    inst = make_named("ulsif")
    zero = wrap_bounded(wrap_cut_at(wrap_cut_at(inst, 0.0, "above", "up"), 0.0, "above", "down"))
    assert _mag(zero, 1.0) == (0.0, 0.0)


def test_cut_and_reverse_wrappers():
    inst = make_named("ulsif")
    cut = wrap_cut_at(inst, 1.0, "above", "down")
    rev = wrap_reverse_at(inst, 1.0, "above", "down")
    assert _mag(cut, 0.5) == _mag(inst, 0.5) == _mag(rev, 0.5)
    assert _mag(cut, 1.5) == (1.0, 0.0)
    assert _mag(rev, 1.5) == (1.0, -1.5)
    below = wrap_cut_at(inst, -1.0, "below", "up")
    assert _mag(below, -2.0) == (0.0, -2.0)
    assert _mag(below, 0.0) == _mag(inst, 0.0)
    twice = wrap_cut_at(cut, 1.0, "above", "down")
    s = np.linspace(-3, 3, 13)
    assert np.array_equal(twice.magnitudes(s)[1], cut.magnitudes(s)[1])
    with pytest.raises(ValueError):
        wrap_cut_at(inst, math.inf)
    with pytest.raises(ValueError):
        wrap_cut_at(inst, 0.0, side="left")


@pytest.mark.parametrize("name", FEASIBLE)
def test_feasible_instances(name):
    rep = check_feasibility(make_named(name))
    assert rep.verdict == "feasible", rep.violations[:3]


@pytest.mark.parametrize("name", RANGE_RESTRICTED)
def test_range_restricted_instances(name):
    rep = check_feasibility(make_named(name))
    assert rep.feasible_on_K and rep.needs_range_restriction
    assert rep.verdict == "needs_range_restriction"


@pytest.mark.parametrize("name", INFEASIBLE)
def test_infeasible_instances(name):
    rep = check_feasibility(make_named(name))
    assert not rep.feasible_on_K
    assert rep.violations


def test_feasibility_of_pso_lde_quarter_and_gan_critic_interval():
    assert check_feasibility(make_pso_lde(0.25)).feasible
    rep = check_feasibility(make_named("gan_critic"), interval=(0.0, 1.0))
    assert rep.feasible_on_K and rep.needs_range_restriction
    d = rep.to_dict()
    assert d["verdict"] == "needs_range_restriction" and d["violations"]


def test_unit_fails_on_monotonicity():
    rep = check_feasibility(make_named("unit"))
    assert any(v.condition == "ratio_increasing" for v in rep.violations)


def test_feasibility_grid_validation():
    with pytest.raises(ValueError):
        check_feasibility(make_pso_lde(1.0), s_grid=np.linspace(-1, 1, 50))
    with pytest.raises(ValueError):
        check_feasibility(make_pso_lde(1.0), s_grid=np.linspace(1, -1, 200))
    rep = check_feasibility(make_pso_lde(1.0), s_grid=np.linspace(-5, 5, 200))
    assert rep.feasible


def test_evaluation_error_is_reported_not_raised():
    from dataclasses import replace

    def boom(s, aux):
        raise FloatingPointError("bad")

    inst = replace(make_named("ulsif"), mag_up=boom)
    rep = check_feasibility(inst)
    assert not rep.feasible_on_K
    assert rep.violations[0].condition.startswith("evaluation_error")


def test_nce_loss_matches_logistic_form():
    inst = make_named("nce")
    s_up = np.array([0.2, -1.0, 3.0])
    s_down = np.array([0.5, 2.0])
    aux_u, aux_d = AuxInfo(np.array([0.1, 0.0, -0.3])), AuxInfo(np.array([0.2, 1.0]))
    du = s_up - aux_u.log_q
    dd = s_down - aux_d.log_q
    expected = -np.mean(np.log(1 / (1 + np.exp(-du)))) - np.mean(np.log(1 - 1 / (1 + np.exp(-dd))))
    assert inst.loss(s_up, s_down, aux_u, aux_d) == pytest.approx(expected, rel=1e-13)


def test_aux_take_and_describe():
    aux = AuxInfo(np.arange(4.0), {"g": np.arange(4.0) * 2})
    sub = aux.take(slice(1, 3))
    assert np.array_equal(sub.log_q, [1.0, 2.0]) and np.array_equal(sub.extra["g"], [2.0, 4.0])
    assert AuxInfo(0.0).take(0).log_q == 0.0
    assert make_pso_lde(0.5).describe() == {"name": "pso_lde", "alpha": 0.5}
