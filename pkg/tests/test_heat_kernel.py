import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sphere_she.geometry import build_grid
from sphere_she.heat_kernel import (
    DegreeCapExceeded,
    HeatKernelSeries,
    kernel_eval,
    kernel_matrix,
    log_kernel_reference,
    molchanov_eval,
    read_kernel_binary,
    tail_majorant,
    truncation_degree,
    write_kernel_binary,
    write_kernel_csv,
)

# mpmath series at 40 digits (tests/oracle/generate.py): (R, t, theta, p_R)
FROZEN = [
    (1, 0.1, 0.0, 1.618343071442043002),
    (1, 0.1, 0.5, 0.47354190637559829948),
    (1, 1.0, 2.0, 0.038878966039984346602),
    (5, 2.5, 0.1, 0.061628149008505240643),
    (20, 40.0, 1.0, 0.000029727253960927232033),
]
DEEP_TAIL = (2, 0.5, 3.0, 3.6221768656318719925e-16)


@pytest.mark.parametrize("R, t, theta, value", FROZEN)
def test_series_matches_frozen(R, t, theta, value):
    assert kernel_eval(HeatKernelSeries(R, t), theta) == pytest.approx(value, abs=2e-12, rel=1e-11)


@pytest.mark.parametrize("R, t, theta, value", FROZEN + [DEEP_TAIL])
def test_log_reference_matches_frozen(R, t, theta, value):
    assert log_kernel_reference(R, t, theta) == pytest.approx(math.log(value), abs=1e-10)


def test_truncation_degree_at_unit_time():
    # the certified majorant includes the ratio factor, giving one degree less than the
    # commonly quoted 7-8
    assert truncation_degree(1.0, 1.0, 1e-12) == 6


@given(st.floats(0.5, 30), st.floats(0.01, 5), st.sampled_from([1e-6, 1e-9, 1e-12]))
def test_tail_bound_certifies_tolerance(R, tau, tol):
    t = tau * R * R
    L = truncation_degree(R, t, tol)
    assert tail_majorant(R, t, L) <= tol
    # the actual omitted tail is below the majorant
    l = np.arange(L + 1, L + 4000)
    tail = np.sum((2 * l + 1) * np.exp(-l * (l + 1) * tau / 2)) / (4 * math.pi * R * R)
    assert tail <= tail_majorant(R, t, L) * (1 + 1e-9)


def test_degree_cap():
    with pytest.raises(DegreeCapExceeded):
        truncation_degree(1.0, 1e-14, 1e-12)


@pytest.mark.parametrize("R", [1.0, 5.0, 20.0])
@pytest.mark.parametrize("tau", [0.1, 1.0])
def test_scaling_identity(R, tau):
    th = np.linspace(0, math.pi, 1000)
    big = kernel_eval(HeatKernelSeries(R, tau * R * R), th)
    unit = kernel_eval(HeatKernelSeries(1.0, tau), th)
    assert np.max(np.abs(big - unit / R**2)) < 2e-12


@given(st.floats(0.5, 20), st.floats(0.05, 3))
def test_kernel_integrates_to_one(R, tau):
    x, w = np.polynomial.legendre.leggauss(400)
    p = HeatKernelSeries(R, tau * R * R).from_cosine(x)
    assert 2 * math.pi * R * R * np.dot(w, p) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("tau", [1e-3, 1e-2])
def test_molchanov_relative_error(tau):
    th = np.linspace(0, 3 * math.pi / 4, 200)
    log_ref = np.array([log_kernel_reference(1.0, tau, x) for x in th])
    # compared in logs: deep in the tail both sides underflow
    s = np.where(th > 0, th / np.sin(np.where(th > 0, th, 1.0)), 1.0)
    log_approx = -(th**2) / (2 * tau) - math.log(2 * math.pi * tau) + 0.5 * np.log(s)
    assert np.max(np.abs(np.expm1(log_approx - log_ref))) <= 0.05
    small = th < 1.0
    assert molchanov_eval(1.0, tau, th[small]) == pytest.approx(np.exp(log_approx[small]), rel=1e-12)


def test_molchanov_rejects_antipode():
    with pytest.raises(ValueError):
        molchanov_eval(1.0, 0.1, math.pi)


def test_small_time_switch_warns(caplog):
    ser = HeatKernelSeries(100.0, 0.5)
    assert ser.uses_molchanov
    with caplog.at_level("WARNING", logger="sphere_she.heat_kernel"):
        v = kernel_eval(ser, 0.0)
    assert v == pytest.approx(1 / (2 * math.pi * 0.5))
    assert "small-time" in caplog.text


@pytest.mark.parametrize("theta", [-0.1, 3.2])
def test_angle_domain(theta):
    with pytest.raises(ValueError):
        kernel_eval(HeatKernelSeries(1.0, 1.0), theta)


@pytest.mark.parametrize("R", [1.0, 5.0, 20.0])
@pytest.mark.parametrize("tau", [0.1, 1.0])
def test_row_defect_on_level_three(R, tau):
    km = kernel_matrix(build_grid(R, 3), tau * R * R)
    assert km.row_defect < 1e-3


def test_kernel_matrix_dense_agrees_with_series(grid1):
    km = kernel_matrix(grid1, 0.7)
    ang = np.arccos(np.clip(grid1.unit_vectors @ grid1.unit_vectors.T, -1, 1))
    assert km.entries == pytest.approx(kernel_eval(km.series, ang), abs=1e-13)
    assert km.row_sums() == pytest.approx((km.entries @ grid1.weights)[[0] + [1 + r * grid1.n_lon for r in range(grid1.n_rings)] + [grid1.size - 1]])


def test_propagator_renormalised_rows(grid1):
    op = kernel_matrix(grid1, 0.05).propagator(renormalize=True)
    assert op.row_sums() == pytest.approx(np.ones(grid1.n_rings + 2), abs=1e-13)


def test_binary_round_trip(tmp_path, grid1):
    km = kernel_matrix(grid1, 0.3)
    write_kernel_binary(km, tmp_path / "k.bin")
    meta, data = read_kernel_binary(tmp_path / "k.bin")
    assert meta["n"] == 1 and meta["L"] == km.series.truncation_L
    assert np.array_equal(data, km.entries)
    raw = (tmp_path / "k.bin").read_bytes()
    assert raw[:8] == b"SHEKRN01"
    assert len(raw) == struct.calcsize("<8sddqqdq") + 8 * grid1.size**2


def test_binary_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"\0" * 64)
    with pytest.raises(ValueError):
        read_kernel_binary(p)


def test_csv_export(tmp_path, grid1):
    km = kernel_matrix(grid1, 0.3)
    write_kernel_csv(km, tmp_path / "k.csv")
    back = np.loadtxt(tmp_path / "k.csv", delimiter=",")
    assert np.array_equal(back, km.entries)
