import math

import numpy as np
import pytest

from sphere_she.geometry import build_grid
from sphere_she.ringops import RingOperator


def _dense_profile(grid, f, weights=False):
    c = np.clip(grid.unit_vectors @ grid.unit_vectors.T, -1, 1)
    M = f(c)
    return M * grid.weights[None, :] if weights else M


PROFILES = [lambda c: np.exp(c), lambda c: np.maximum(c, 0.0) ** 2, lambda c: 1 + 0 * c]


@pytest.mark.parametrize("n", [0, 1, 2])
@pytest.mark.parametrize("f", PROFILES)
@pytest.mark.parametrize("weights", [False, True])
def test_dense_reconstruction(n, f, weights):
    g = build_grid(1.5, n)
    op = RingOperator.from_profile(g, f, column_weights=weights)
    assert op.dense() == pytest.approx(_dense_profile(g, f, weights), abs=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_apply_matches_dense(n):
    g = build_grid(1.0, n)
    op = RingOperator.from_profile(g, np.exp, column_weights=True)
    v = np.random.default_rng(n).standard_normal((3, g.size))
    assert op.apply(v) == pytest.approx(v @ op.dense().T, abs=1e-11)


def test_algebra(grid1):
    a = RingOperator.from_profile(grid1, np.exp, column_weights=True)
    b = RingOperator.from_profile(grid1, lambda c: c**2)
    A, B = a.dense(), b.dense()
    assert (a @ b).dense() == pytest.approx(A @ B, abs=1e-10)
    assert a.T.dense() == pytest.approx(A.T, abs=1e-12)
    assert a.power(3).dense() == pytest.approx(A @ A @ A, abs=1e-9)
    assert a.row_sums() == pytest.approx(A.sum(axis=1)[[0] + [1 + r * grid1.n_lon for r in range(grid1.n_rings)] + [grid1.size - 1]])
    assert RingOperator.identity(grid1).dense() == pytest.approx(np.eye(grid1.size))


def test_spectral_square_root(grid1):
    H = RingOperator.from_profile(grid1, lambda c: np.exp(c - 1))
    F = H.spectral_map(lambda x: np.sqrt(np.maximum(x, 0)))
    Fd = F.dense()
    assert Fd == pytest.approx(Fd.T, abs=1e-12)
    assert Fd @ Fd == pytest.approx(H.dense(), abs=1e-10)
    e0, em = H.eigvalsh()
    lam = np.sort(np.concatenate([e0, np.repeat(em, 2, axis=0).ravel()]))
    # the Nyquist mode is real and appears once, so compare the extreme values only
    ref = np.linalg.eigvalsh(H.dense())
    assert lam.max() == pytest.approx(ref.max(), rel=1e-10)


def test_lookup_matches_dense(grid1):
    op = RingOperator.from_profile(grid1, np.exp, column_weights=True)
    rng = np.random.default_rng(0)
    rows = np.r_[0, grid1.size - 1, rng.integers(0, grid1.size, 30)]
    cols = np.r_[grid1.size - 1, 5, rng.integers(0, grid1.size, 30)]
    assert op.entries().lookup(grid1, rows, cols) == pytest.approx(op.dense()[rows, cols], abs=1e-13)


def test_shape_checks(grid1):
    with pytest.raises(ValueError):
        RingOperator(grid1, np.eye(3), np.zeros((1, 1, 1)))
