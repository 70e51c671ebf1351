import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sphere_she.functionals import (
    GarsiaSpec,
    f_e,
    f_e_ball,
    f_e_complement,
    f_e_spectral,
    functional_ledger,
    garsia_integral_points,
    garsia_radius,
    kernel_legendre_coefficients,
    region_profile,
)
from sphere_she.geometry import build_grid
from sphere_she.noise import CovarianceKernel, NoiseConstants

E2 = math.e**2
C = NoiseConstants(0.5, 1.0)


def expo(R):
    return CovarianceKernel("exponential_geodesic", R, C, {"kappa": 2.0})


def askey(R):
    return CovarianceKernel("askey", R, NoiseConstants(0, 0), {"floor": 0.0, "peak": 1.0, "theta_c": math.pi / 8}, strict=False)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 2.0])
@pytest.mark.parametrize("t", [0.5, 1.0])
def test_constant_kernel_closed_form(alpha, t):
    k = CovarianceKernel("constant", E2, NoiseConstants(0, 0), {"h0": 1.3}, strict=False)
    exact = 1.3 * (t if alpha == 0 else -math.expm1(-2 * alpha * t) / (2 * alpha))
    assert f_e(alpha, E2, t, k).value == pytest.approx(exact, rel=1e-8)


# spectral values computed independently with L = 6000
@pytest.mark.parametrize("make, value", [(expo, 0.5906254489579634), (askey, 0.22003080879449063)])
def test_polar_quadrature_matches_spectral(make, value):
    res = f_e(1.0, E2, 1.0, make(E2))
    # the askey kink costs accuracy; the error estimate must still cover the true deviation
    assert abs(res.value - value) <= res.estimated_error
    assert res.estimated_error < 1e-4 * value


def test_spectral_oracle_constant_kernel():
    k = CovarianceKernel("constant", E2, NoiseConstants(0, 0), {"h0": 1.0}, strict=False)
    assert f_e_spectral(1.0, E2, 1.0, k, L=50) == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-12)


def test_legendre_coefficients_of_constant():
    k = CovarianceKernel("constant", E2, NoiseConstants(0, 0), {"h0": 2.0}, strict=False)
    c = kernel_legendre_coefficients(k, 10)
    assert c[0] == pytest.approx(2.0, rel=1e-12)
    assert np.max(np.abs(c[1:])) < 1e-12


@pytest.mark.parametrize("beta", [0.5, 2.0])
def test_ball_plus_complement_dominates_whole(beta):
    # (a+b)^2 <= 2a^2 + 2b^2 would be the loose bound; the exact split has a nonnegative cross term
    k = expo(E2)
    whole = f_e(1.0, E2, 1.0, k).value
    ball = f_e_ball(beta, 1.0, E2, 1.0, k).value
    comp = f_e_complement(beta, 1.0, E2, 1.0, k).value
    assert 0 < ball < whole and 0 < comp < whole
    assert ball + comp <= whole * (1 + 1e-8)


def test_decreasing_in_alpha():
    k = expo(E2)
    vals = [f_e(a, E2, 1.0, k).value for a in (0.25, 0.5, 1.0, 2.0)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_upper_total_bound():
    k = expo(E2)
    for a in (0.5, 1.0, 2.0):
        assert f_e(a, E2, 1.0, k).value <= k.h_up / (2 * a)


def test_region_profile_rejects_bad_region():
    with pytest.raises(ValueError):
        region_profile(E2, 0.5, expo(E2), "annulus")


@pytest.mark.parametrize("bad", [dict(alpha=-1.0), dict(t=0.0)])
def test_argument_checks(bad):
    args = dict(alpha=1.0, R=E2, t=1.0, kernel=expo(E2)) | bad
    with pytest.raises(ValueError):
        f_e(**args)


def test_ledger_structure_small():
    led = functional_ledger({"constant": lambda R: CovarianceKernel("constant", R, C)}, alphas=(1.0,), betas=(1.0,), ts=(1.0,), Rs=(E2,))
    names = {r["lemma"] for r in led["rows"]}
    assert names == {"upper_total", "upper_complement", "region_inclusion", "lower_ball", "lower_ball_corrected"}
    by = {r["lemma"]: r for r in led["rows"]}
    assert by["upper_total"]["pass"] and by["lower_ball_corrected"]["pass"]
    assert not by["lower_ball_corrected"]["gating"]


@given(st.integers(2, 12), st.floats(0.05, 1.95), st.integers(0, 20))
def test_garsia_radius_halves_modulus(k, a, n):
    spec = GarsiaSpec(k, a)
    r0, r1 = garsia_radius(n, spec), garsia_radius(n + 1, spec)
    assert spec.mu(r1) == pytest.approx(spec.mu(r0) / 2, rel=1e-12)


def test_garsia_integral_zero_for_constant_and_scales():
    g = build_grid(3.0, 1)
    spec = GarsiaSpec(4, 0.5)
    args = (g.colatitudes, g.longitudes, g.weights, g.radius, spec)
    assert garsia_integral_points(np.full(g.size, 2.0), *args) == 0.0
    v = np.cos(g.colatitudes)
    one = garsia_integral_points(v, *args)
    assert garsia_integral_points(2 * v, *args) == pytest.approx(16 * one)
    batch = garsia_integral_points(np.stack([v, 2 * v]), *args, chunk=7)
    assert batch == pytest.approx([one, 16 * one])


def test_garsia_spec_validation():
    with pytest.raises(ValueError):
        GarsiaSpec(1, 0.5)
    with pytest.raises(ValueError):
        GarsiaSpec(4, 2.0)
