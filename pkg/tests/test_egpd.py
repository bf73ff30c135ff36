import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from regfreq import egpd
from regfreq.egpd import (EgpdParams, FitError, Level, algorithm_sigma_update, egpd_cdf, egpd_logpdf, egpd_pdf,
                          egpd_quantile, fit_local, fit_regional, fit_semiregional, iterate_regional_sigma,
                          refit_fixed_xi, return_level, sample_truncated, theoretical_pwm, truncated_cdf,
                          truncated_quantile)
from regfreq.pwm import estimate_pwm

GRID = [EgpdParams(k, s, x) for k in (0.3, 1.0, 2.5, 8.0) for s in (0.5, 4.0, 20.0) for x in (0.0, 1e-8, 0.15, 0.5, 0.9)]


def truncated_pwm_by_quadrature(p: EgpdParams, u: float):
    """alpha_i = int_u^inf z F_u(z)^i f(z) dz / S(u), integrated numerically."""
    s_u = 1.0 - float(egpd_cdf(p, u))

    def integrand(z, i):
        f_u = (float(egpd_cdf(p, z)) - (1 - s_u)) / s_u
        return z * f_u**i * float(egpd_pdf(p, z)) / s_u

    return [integrate.quad(integrand, u, np.inf, args=(i,), limit=400, epsabs=0, epsrel=1e-11)[0] for i in range(3)]


def test_cdf_boundaries():
    for p in GRID:
        assert float(egpd_cdf(p, 0.0)) == 0.0
        assert float(egpd_cdf(p, 1e12)) == pytest.approx(1.0, abs=1e-6 if p.xi > 0.5 else 1e-12)


def test_cdf_gpd_value():
    assert float(egpd_cdf(EgpdParams(1.0, 1.0, 0.2), 1.0)) == pytest.approx(1 - 1.2**-5, rel=1e-14)
    assert 1 - 1.2**-5 == pytest.approx(0.59812, abs=1e-5)


def test_power_flexibility():
    z = np.linspace(0.1, 30, 50)
    np.testing.assert_allclose(egpd_cdf(EgpdParams(2.0, 3.0, 0.3), z), egpd_cdf(EgpdParams(1.0, 3.0, 0.3), z) ** 2,
                               rtol=1e-14)


def test_quantile_examples():
    assert float(egpd_quantile(EgpdParams(1.0, 1.0, 0.2), 1 - 1.2**-5)) == pytest.approx(1.0, rel=1e-12)
    assert float(egpd_quantile(EgpdParams(1.0, 2.0, 0.0), 1 - math.exp(-1))) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValueError):
        egpd_quantile(EgpdParams(1.0, 2.0, 0.0), 1.0)


def test_roundtrip_on_grid():
    p_values = np.concatenate([[0.001, 0.01, 0.5, 0.99, 0.999], np.linspace(0.001, 0.9999, 200)])
    worst = max(np.max(np.abs(egpd_cdf(p, egpd_quantile(p, p_values)) - p_values)) for p in GRID)
    assert worst < 1e-10


def test_small_xi_is_continuous():
    z = np.linspace(0.01, 50, 100)
    a, b = EgpdParams(1.3, 4.0, 0.0), EgpdParams(1.3, 4.0, 5e-7)
    np.testing.assert_allclose(egpd_cdf(a, z), egpd_cdf(b, z), rtol=1e-5)
    np.testing.assert_allclose(egpd_logpdf(a, z), egpd_logpdf(b, z), atol=1e-4)


def test_density_matches_finite_differences():
    worst = 0.0
    for p in GRID:
        z = float(egpd_quantile(p, 0.5)) * np.array([0.2, 0.7, 1.0, 2.0, 5.0])
        h = 1e-5 * z
        fd = (egpd_cdf(p, z + h) - egpd_cdf(p, z - h)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(egpd_pdf(p, z) / fd - 1))))
    assert worst < 1e-6


def test_truncated_roundtrip_and_sampling():
    p = EgpdParams(1.5, 4.0, 0.15)
    q = np.array([0.01, 0.5, 0.99])
    np.testing.assert_allclose(truncated_cdf(p, truncated_quantile(p, q, 1.0), 1.0), q, atol=1e-12)
    z = sample_truncated(p, 10_000, np.random.default_rng(0), 1.0)
    assert z.min() > 1.0


@pytest.mark.parametrize("params,u", [(EgpdParams(1.5, 4.0, 0.15), 1.0), (EgpdParams(0.8, 2.0, 0.4), 1.0),
                                      (EgpdParams(3.0, 6.0, 0.0), 1.0), (EgpdParams(0.5, 1.0, 0.6), 0.0),
                                      (EgpdParams(1.0, 5.0, 0.2), 2.5)])
def test_closed_form_pwm_against_quadrature(params, u):
    np.testing.assert_allclose(theoretical_pwm(params, u), truncated_pwm_by_quadrature(params, u), rtol=1e-9)


def test_pwm_closure_on_large_sample():
    truth = EgpdParams(1.5, 4.0, 0.15)
    z = sample_truncated(truth, 400_000, np.random.default_rng(1), 1.0)
    emp = np.array(estimate_pwm(z))
    np.testing.assert_allclose(theoretical_pwm(truth, 1.0), emp, rtol=0.01)
    fitted = fit_local(z, 1.0)
    np.testing.assert_allclose(theoretical_pwm(fitted, 1.0), emp, rtol=1e-6)


def test_fit_rejects_bad_samples():
    with pytest.raises(FitError):
        fit_local(np.full(100, 3.0))
    with pytest.raises(FitError):
        fit_local(np.linspace(2, 3, 10))
    with pytest.raises(FitError):
        fit_local(np.linspace(0.5, 3, 100))


def test_gpd_sample_recovers_unit_kappa():
    rng = np.random.default_rng(2)
    truth = EgpdParams(1.0, 4.0, 0.15)
    kappas = [fit_local(sample_truncated(truth, 3000, rng, 1.0), 1.0).kappa for _ in range(40)]
    assert np.mean(np.abs(np.array(kappas) - 1.0) < 0.2) >= 0.9


@pytest.fixture(scope="module")
def recovery_fits():
    rng = np.random.default_rng(2024)
    truth = EgpdParams(1.5, 4.0, 0.15)
    return [fit_local(sample_truncated(truth, 3000, rng, 1.0), 1.0) for _ in range(200)]


def test_local_recovery_kappa(recovery_fits):
    assert np.mean([abs(p.kappa - 1.5) <= 0.3 for p in recovery_fits]) >= 0.9


def test_local_recovery_sigma(recovery_fits):
    # Stated target; sd(sigma-hat)/sigma is about 0.08 at n = 3000, so this
    # sits near 80% for PWM and likelihood alike (see the ledger).
    assert np.mean([abs(p.sigma / 4.0 - 1) <= 0.10 for p in recovery_fits]) >= 0.9


def test_local_recovery_joint(recovery_fits):
    joint = [abs(p.xi - 0.15) <= 0.05 and abs(p.kappa - 1.5) <= 0.3 and abs(p.sigma / 4 - 1) <= 0.1
             for p in recovery_fits]
    assert np.mean(joint) >= 0.9


@pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
def test_fit_equivariance(c):
    z = sample_truncated(EgpdParams(1.2, 5.0, 0.25), 2000, np.random.default_rng(3), 1.0)
    a, b = fit_local(z, 1.0), fit_local(c * z, c * 1.0)
    assert b.sigma / c == pytest.approx(a.sigma, rel=1e-6)
    assert b.kappa == pytest.approx(a.kappa, rel=1e-6)
    assert b.xi == pytest.approx(a.xi, abs=1e-6)


def test_semiregional_single_site_is_unchanged():
    z = sample_truncated(EgpdParams(1.2, 5.0, 0.25), 1500, np.random.default_rng(4), 1.0)
    local = {"a": fit_local(z)}
    semi = fit_semiregional({"a": z}, {"a": 0}, local)["a"]
    assert semi.xi == local["a"].xi
    assert semi.kappa == pytest.approx(local["a"].kappa, abs=1e-6)
    assert semi.sigma == pytest.approx(local["a"].sigma, abs=1e-6)
    assert semi.level is Level.SEMIREGIONAL and semi.cluster_id == 0


def test_refit_fixed_xi_keeps_xi():
    z = sample_truncated(EgpdParams(1.2, 5.0, 0.25), 600, np.random.default_rng(5), 1.0)
    assert refit_fixed_xi(z, 0.3).xi == 0.3


def test_sigma_update_fixed_point_is_truncated_mean():
    # the update's fixed point must be the sigma whose truncated mean equals m
    for kappa, sigma, xi, u in [(0.8, 5.0, 0.2, 1.0), (1.5, 4.0, 0.15, 1.0), (2.5, 3.0, 0.0, 1.0),
                                (0.6, 7.0, 0.45, 2.0)]:
        p = EgpdParams(kappa, sigma, xi)
        m = truncated_pwm_by_quadrature(p, u)[0]
        assert algorithm_sigma_update(sigma, kappa, xi, m, u) == pytest.approx(sigma, rel=1e-9)
        got, ok, _, _ = iterate_regional_sigma(2.0 * sigma, kappa, xi, m, u, eps=1e-10)
        assert ok and got == pytest.approx(sigma, rel=1e-8)


def test_regional_single_site_matches_local():
    z = sample_truncated(EgpdParams(0.9, 6.0, 0.2), 1500, np.random.default_rng(6), 1.0)
    local = {"a": fit_local(z)}
    model = fit_regional({"a": z}, {"a": 0}, local)
    assert model.converged["a"]
    assert model.sigma["a"] == pytest.approx(local["a"].sigma, rel=0.02)
    # termination: one more update moves sigma by less than eps
    kappa0, xi0 = model.shape[0]
    again = algorithm_sigma_update(model.sigma["a"], kappa0, xi0, float(np.mean(z)), 1.0)
    assert abs(again - model.sigma["a"]) < egpd.REGIONAL_EPS


def test_regional_rejects_divergent_mean():
    # EgpdParams itself refuses xi >= 1, so feed a bare record to reach the guard
    from types import SimpleNamespace
    z = np.linspace(2, 30, 60)
    local = {"a": SimpleNamespace(kappa=1.0, sigma=2.0, xi=1.2)}
    with pytest.raises(FitError):
        fit_regional({"a": z}, {"a": 0}, local)


def test_semiregional_pools_shape(homogeneous_run):
    fit, truth = homogeneous_run["fit"], {t["site_id"]: t for t in homogeneous_run["truth"]}
    for cl in sorted(set(fit.partition.values())):
        members = [s for s, c in fit.partition.items() if c == cl]
        xi_true = truth[members[0]]["xi"]
        semi = {fit.semiregional[s].xi for s in members}
        assert len(semi) == 1
        assert all(fit.semiregional[s].level is Level.SEMIREGIONAL for s in members)
        median_local = np.median([abs(fit.local[s].xi - xi_true) for s in members])
        assert abs(semi.pop() - xi_true) < median_local


def test_regional_one_shape_per_cluster(homogeneous_run):
    params = homogeneous_run["fit"].params(Level.REGIONAL)
    shapes = {(p.cluster_id, p.kappa, p.xi) for p in params.values()}
    assert len(shapes) == 3


def test_regional_sigma_recovery(homogeneous_run):
    fit, truth = homogeneous_run["fit"], {t["site_id"]: t for t in homogeneous_run["truth"]}
    for cl in range(3):
        members = [s for s, c in fit.partition.items() if c == cl]
        ok = [abs(fit.regional.sigma[s] / truth[s]["sigma"] - 1) <= 0.10 for s in members]
        assert np.mean(ok) >= 0.9, f"cluster {cl}: {np.mean(ok):.2f}"


def test_return_level_exponential_example():
    assert return_level(EgpdParams(1.0, 10.0, 0.0), 10, 50) == pytest.approx(10 * math.log(500), rel=1e-12)
    assert 10 * math.log(500) == pytest.approx(62.15, abs=0.005)


def test_return_level_truncated_exponential_is_memoryless():
    p = EgpdParams(1.0, 10.0, 0.0)
    assert return_level(p, 10, 50, threshold=1.0) == pytest.approx(1.0 + 10 * math.log(500), rel=1e-12)


def test_return_level_errors():
    p = EgpdParams(1.0, 10.0, 0.0)
    with pytest.raises(ValueError):
        return_level(p, 0.5, 50)
    with pytest.raises(ValueError):
        return_level(p, 1, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 50), st.floats(0.0, 0.9), st.floats(5, 120), st.sampled_from([0.0, 1.0]))
def test_return_level_monotone_and_scales(kappa, sigma, xi, n_wds, u):
    p = EgpdParams(kappa, sigma, xi)
    r10, r50, r100 = (return_level(p, t, n_wds, threshold=u) for t in (10, 50, 100))
    assert r100 > r50 > r10
    if u == 0.0:
        double = return_level(EgpdParams(kappa, 2 * sigma, xi), 50, n_wds)
        assert double == pytest.approx(2 * r50, rel=1e-10)
