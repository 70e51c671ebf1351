import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sphere_she.geometry import build_grid
from sphere_she.noise import CovarianceKernel, NoiseConstants, build_factor, replica_stream, replica_streams
from sphere_she.solver import (
    FieldState,
    PicardDivergence,
    SigmaFunction,
    SolverConfig,
    TruncatedProcessSpec,
    deterministic_flow,
    draw_increments,
    picard_solve,
    simulate,
    transition_operator,
    truncated_field,
    truncated_process,
)

R = math.e**2


@pytest.fixture(scope="module")
def setup():
    g = build_grid(R, 1)
    k = CovarianceKernel("exponential_geodesic", R, NoiseConstants(0.0, 1.0), {"kappa": 1.0})
    return g, build_factor(g, k)


@given(st.floats(-5, 5), st.floats(-2, 2), st.floats(-1, 1), st.floats(0, 2))
def test_affine_clamped_bounds(v, b, lo, width):
    s = SigmaFunction.affine_clamped(0.3, b, lo, lo + width)
    val = float(s(v))
    assert s.lower - 1e-12 <= val <= s.upper + 1e-12
    assert abs(float(s(v + 0.1)) - val) <= s.lipschitz * 0.1 + 1e-12


def test_sigma_kinds():
    c = SigmaFunction.constant(2.0)
    assert c.is_constant and c.lipschitz == 0 and c.admissible
    t = SigmaFunction.table([0, 1, 2], [1, 3, 2])
    assert t(0.5) == pytest.approx(2.0)
    assert t.lipschitz == 2.0 and t.upper == 3.0
    with pytest.raises(ValueError):
        SigmaFunction("cubic")
    with pytest.raises(ValueError):
        SigmaFunction.affine_clamped(0, 1, 2, 1)


def test_config_time_checks():
    cfg = SolverConfig.for_time(1.0, 8)
    assert cfg.dt == 0.125
    with pytest.raises(ValueError):
        cfg.check_time(2.0)
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0, steps=1)


def test_deterministic_flow_preserves_constants():
    g = build_grid(2.0, 2)
    out = deterministic_flow(FieldState.constant(g, 3.0), 1.0)
    assert out.values == pytest.approx(np.full(g.size, 3.0), rel=5e-3)


def test_zero_sigma_is_heat_flow(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 4, renormalize_rows=True)
    u0 = FieldState(g, 0.0, np.cos(g.colatitudes))
    st_ = simulate(u0, 1.0, cfg, SigmaFunction.constant(0.0), fac, replica_stream(0, 0))
    A = transition_operator(g, cfg)
    ref = u0.values
    for _ in range(4):
        ref = A.apply(ref)
    assert st_.values == pytest.approx(ref, abs=1e-13)
    assert st_.history.shape == (4,)


def test_simulate_is_reproducible(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 4, renormalize_rows=True)
    sig = SigmaFunction.affine_clamped(1, 0.5, 0.5, 1.5)
    a = simulate(FieldState.constant(g), 1.0, cfg, sig, fac, replica_stream(5, 1))
    b = simulate(FieldState.constant(g), 1.0, cfg, sig, fac, replica_stream(5, 1))
    assert np.array_equal(a.values, b.values)


def test_batched_equals_single(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 4, renormalize_rows=True)
    sig = SigmaFunction.affine_clamped(1, 0.5, 0.5, 1.5)
    A = transition_operator(g, cfg)
    batch = simulate(FieldState.constant(g, replicas=3), 1.0, cfg, sig, fac, replica_streams(9, range(3)), operator=A)
    one = simulate(FieldState.constant(g), 1.0, cfg, sig, fac, replica_stream(9, 1), operator=A)
    assert batch.values[1] == pytest.approx(one.values, rel=1e-12, abs=1e-12)


def test_constant_sigma_picard_one_step(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 4, renormalize_rows=True)
    dW = draw_increments(fac, cfg, replica_streams(1, range(8)))
    res = picard_solve(FieldState.constant(g), 1.0, cfg, SigmaFunction.constant(1.0), fac, dW, iterations=3)
    assert res.differences[1] == 0.0 and res.iterates_equal_last


def test_picard_contracts_and_agrees_with_scheme(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 4, renormalize_rows=True)
    sig = SigmaFunction.affine_clamped(0.5, 0.25, 0.0, 1.0)
    A = transition_operator(g, cfg)
    streams = replica_streams(2, range(16))
    dW = draw_increments(fac, cfg, streams)
    res = picard_solve(FieldState.constant(g), 1.0, cfg, sig, fac, dW, iterations=6, operator=A)
    assert res.rate_bound == pytest.approx(0.5)
    assert all(r <= res.rate_bound for r in res.ratios)
    direct = simulate(FieldState.constant(g, replicas=16), 1.0, cfg, sig, fac, replica_streams(2, range(16)), operator=A)
    # after M sweeps the iterate is exactly the explicit scheme
    full = picard_solve(FieldState.constant(g), 1.0, cfg, sig, fac, dW, iterations=cfg.steps + 1, operator=A)
    assert full.state.values == pytest.approx(direct.values, abs=1e-12)


def test_picard_divergence_is_reported(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 4, renormalize_rows=True)
    sig = SigmaFunction.affine_clamped(0.0, 40.0, -1e9, 1e9)
    dW = draw_increments(fac, cfg, replica_streams(2, range(4)))
    with pytest.raises(PicardDivergence):
        picard_solve(FieldState.constant(g, 1.0), 1.0, cfg, sig, fac, dW, iterations=2, alpha=1e-3)


def test_truncation_with_whole_sphere_ball_matches_picard(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 4, renormalize_rows=True)
    sig = SigmaFunction.affine_clamped(0.5, 0.25, 0.0, 1.0)
    A = transition_operator(g, cfg)
    dW = draw_increments(fac, cfg, replica_streams(4, range(5)))
    beta = (math.pi * R) ** 2 * 1.01
    trunc = truncated_field(beta, 2, 1.0, cfg, sig, dW, FieldState.constant(g), A)
    pic = picard_solve(FieldState.constant(g), 1.0, cfg, sig, fac, dW, iterations=2, operator=A)
    assert trunc == pytest.approx(pic.state.values, abs=1e-11)


def test_truncated_process_depends_only_on_ball(setup):
    g, fac = setup
    cfg = SolverConfig.for_time(1.0, 2, renormalize_rows=True)
    sig = SigmaFunction.affine_clamped(0.5, 0.25, 0.0, 1.0)
    A = transition_operator(g, cfg)
    dW = draw_increments(fac, cfg, replica_streams(4, range(3)))
    spec = TruncatedProcessSpec(beta=1.0, picard_n=2, center=g.nodes[0], time=1.0)
    base = truncated_process(spec, g, sig, dW, cfg, operator=A)
    far = g.angles_from(g.nodes[0]) > spec.ball_angle + 1e-9
    dW2 = dW.copy()
    dW2[..., far] += 5.0
    assert truncated_process(spec, g, sig, dW2, cfg, operator=A) == pytest.approx(base, abs=1e-14)


def test_truncation_ball_must_fit():
    from sphere_she.geometry import SpherePoint

    with pytest.raises(ValueError):
        TruncatedProcessSpec(beta=100.0, picard_n=1, center=SpherePoint(0.0, 0.0, 1.0), time=1.0)
