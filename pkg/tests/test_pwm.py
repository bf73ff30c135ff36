import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import integrate

from regfreq.pwm import OmegaField, estimate_pwm, omega, omega_distance, omega_from_pwm, pwm_weights

positive_samples = st.lists(st.floats(0.01, 1e4, allow_nan=False), min_size=3, max_size=300)


def gpd_pwm_by_integration(xi: float, sigma: float = 1.0) -> tuple[float, float, float]:
    """alpha_i = int_0^1 Q(p) p^i dp for the GPD quantile Q."""
    def q(p):
        if xi == 0:
            return -sigma * math.log1p(-p)
        return sigma / xi * ((1 - p) ** -xi - 1)

    return tuple(integrate.quad(lambda p: q(p) * p**i, 0, 1, limit=200)[0] for i in range(3))


def gpd_sample(xi, n, rng, sigma=1.0):
    u = rng.random(n)
    return -sigma * np.log1p(-u) if xi == 0 else sigma / xi * ((1 - u) ** -xi - 1)


def test_constant_sample():
    a0, a1, a2 = estimate_pwm([3.5] * 4)
    assert (a0, a1, a2) == pytest.approx((3.5, 3.5 / 2, 3.5 / 3), rel=1e-15)
    assert math.isnan(omega([3.5] * 4))


def test_weights_non_negative_with_telescoping_mass():
    for n in (3, 4, 17, 1000):
        w1, w2 = pwm_weights(n)
        assert np.all(w1 >= 0) and np.all(w2 >= 0)
        assert w1.sum() == pytest.approx(n / 2)
        assert w2.sum() == pytest.approx(n / 3)


def test_exponential_oracle():
    z = np.random.default_rng(0).exponential(size=100_000)
    a = estimate_pwm(z)
    np.testing.assert_allclose(a, (1.0, 3 / 4, 11 / 18), atol=0.02)
    assert abs(omega(z) - 2 / 3) < 0.02


def test_gpd_pwm_oracle_agrees_with_closed_form():
    # for the GPD, E[Z (1 - F)^r] = sigma / ((r + 1)(r + 1 - xi)); expand F^r = (1 - (1 - F))^r
    for xi in (0.0, 0.2, 0.4):
        a = gpd_pwm_by_integration(xi)
        beta = [1 / ((j + 1) * (j + 1 - xi)) for j in range(3)]
        closed = [sum(math.comb(r, j) * (-1) ** j * beta[j] for j in range(r + 1)) for r in range(3)]
        np.testing.assert_allclose(a, closed, rtol=1e-8)
        assert omega_from_pwm(a) == pytest.approx(2 / (3 - xi), rel=1e-8)


def test_shape_separates_omega():
    rng = np.random.default_rng(1)
    w0 = omega(gpd_sample(0.0, 100_000, rng))
    w4 = omega(gpd_sample(0.4, 100_000, rng))
    assert w4 - w0 > 0.05


def test_homogeneity_exact():
    z = np.random.default_rng(2).gamma(0.7, 5.0, size=997)
    a, b = estimate_pwm(5 * z), estimate_pwm(z)
    np.testing.assert_allclose(a, 5 * np.array(b), rtol=1e-13)


def test_consistency_in_sample_size():
    xi = 0.25
    target = omega_from_pwm(gpd_pwm_by_integration(xi))
    rng = np.random.default_rng(3)
    errs = []
    for n in (1_000, 10_000, 100_000):
        errs.append(np.mean([abs(omega(gpd_sample(xi, n, rng)) - target) for _ in range(20)]))
    assert errs[0] > errs[1] > errs[2]


def test_input_validation():
    with pytest.raises(ValueError):
        estimate_pwm([1.0, 2.0])
    with pytest.raises(ValueError):
        estimate_pwm([1.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        estimate_pwm([1.0, np.inf, 2.0])


def test_distance_examples():
    assert omega_distance(0.5, 0.5) == 0
    assert omega_distance(0.2, 0.7) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        omega_distance(0.2, math.nan)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_distance_symmetric(a, b):
    assert omega_distance(a, b) == omega_distance(b, a) >= 0


@settings(max_examples=150, deadline=None)
@given(positive_samples, st.sampled_from([0.01, 1.0, 1000.0, 3.7]))
def test_omega_scale_invariant(sample, c):
    w = omega(sample)
    assume(math.isfinite(w))
    assert omega(c * np.asarray(sample)) == pytest.approx(w, rel=1e-12, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(positive_samples)
def test_moments_ordered(sample):
    assume(len(set(sample)) >= 2)
    a0, a1, a2 = estimate_pwm(sample)
    assert a0 > a1 > a2 > 0


def test_omega_field_flags_degenerate(tmp_path):
    from regfreq.ingest import SeasonalWetSample
    ok = SeasonalWetSample("a", "JJA", 1.0, np.array([2.0, 3.0, 9.0, 4.0]), np.arange(4), 10.0, 0.0, 1.0)
    flat = SeasonalWetSample("b", "JJA", 1.0, np.array([2.0, 2.0, 2.0]), np.arange(3), 10.0, 1.0, 1.0)
    short = SeasonalWetSample("c", "JJA", 1.0, np.array([2.0]), np.arange(1), 10.0, 2.0, 1.0)
    field = OmegaField.from_samples([ok, flat, short], "JJA")
    np.testing.assert_array_equal(field.degenerate, [False, True, True])
    field.to_csv(tmp_path / "o.csv")
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0] == "site_id,lon,lat,season,omega,n_fit"
    assert len(lines) == 4
