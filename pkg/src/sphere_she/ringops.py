"""Operators on lattice functions that commute with the lattice's longitude rotations.

Any such operator is block-circulant over longitude, so after an orthonormal real FFT along
each ring it splits into one small real block per Fourier mode ``m = 0 .. N/2``.  The
mode-0 block is augmented with the two poles (which only see longitude averages).  This
keeps memory at ``O(n_rings^2 N)`` instead of ``O((n_rings N)^2)`` and makes products,
square roots and eigenvalues blockwise operations.

Entry conventions (``N`` longitudes, rings ``r, s``, longitude offset ``d``):

* ``ring[r, s, d]``  operator entry from node (s, j) into node (r, j + d)
* ``from_pole[r, p]`` entry from pole ``p`` into any node of ring ``r``
* ``to_pole[p, s]``   entry from any node of ring ``s`` into pole ``p``
* ``poles[p, q]``     pole-to-pole entries

Only operators whose ring entries are even in ``d`` are represented (all the kernels here
depend on geodesic angle, which is), so every Fourier block is real.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SphereGrid

__all__ = ["RingEntries", "RingOperator", "ring_cosines", "pole_cosines"]


@dataclass
class RingEntries:
    ring: np.ndarray  # (nr, nr, N)
    from_pole: np.ndarray  # (nr, 2)
    to_pole: np.ndarray  # (2, nr)
    poles: np.ndarray  # (2, 2)

    def map(self, f) -> "RingEntries":
        return RingEntries(f(self.ring), f(self.from_pole), f(self.to_pole), f(self.poles))

    def combine(self, other: "RingEntries", f) -> "RingEntries":
        return RingEntries(
            f(self.ring, other.ring),
            f(self.from_pole, other.from_pole),
            f(self.to_pole, other.to_pole),
            f(self.poles, other.poles),
        )

    def lookup(self, grid: SphereGrid, rows, cols) -> np.ndarray:
        """Entries (i, j) for paired node-index arrays ``rows`` and ``cols``."""
        N = grid.n_lon
        out = []
        for i, j in zip(np.atleast_1d(rows), np.atleast_1d(cols)):
            pi, pj = _pole_of(grid, i), _pole_of(grid, j)
            if pi is not None and pj is not None:
                out.append(self.poles[pi, pj])
            elif pi is not None:
                out.append(self.to_pole[pi, (j - 1) // N])
            elif pj is not None:
                out.append(self.from_pole[(i - 1) // N, pj])
            else:
                r, a = divmod(int(i) - 1, N)
                s, b = divmod(int(j) - 1, N)
                out.append(self.ring[r, s, (a - b) % N])
        return np.array(out, dtype=float)

    def max_abs(self) -> float:
        return max(float(np.abs(a).max()) if a.size else 0.0 for a in (self.ring, self.from_pole, self.to_pole, self.poles))


def _pole_of(grid: SphereGrid, i) -> int | None:
    if i == 0:
        return 0
    if i == grid.size - 1:
        return 1
    return None


def ring_cosines(grid: SphereGrid) -> np.ndarray:
    """cos of the angle between ring r (offset d) and ring s (offset 0); shape (nr, nr, N)."""
    th = grid.ring_colatitudes
    N = grid.n_lon
    d = np.cos(2 * np.pi * np.arange(N) / N)
    c = np.cos(th)[:, None, None] * np.cos(th)[None, :, None]
    s = np.sin(th)[:, None, None] * np.sin(th)[None, :, None]
    return np.clip(c + s * d[None, None, :], -1.0, 1.0)


def pole_cosines(grid: SphereGrid) -> tuple[np.ndarray, np.ndarray]:
    """cos of angles ring->pole (nr, 2) and pole->pole (2, 2)."""
    ct = np.cos(grid.ring_colatitudes)
    return np.column_stack([ct, -ct]), np.array([[1.0, -1.0], [-1.0, 1.0]])


class RingOperator:
    """Longitude-rotation invariant linear operator stored as real Fourier blocks."""

    def __init__(self, grid: SphereGrid, block0: np.ndarray, blocks: np.ndarray):
        nr, N = grid.n_rings, grid.n_lon
        if block0.shape != (nr + 2, nr + 2):
            raise ValueError("mode-0 block has wrong shape")
        if blocks.shape != (N // 2, nr, nr):
            raise ValueError("mode blocks have wrong shape")
        self.grid = grid
        self.block0 = block0
        self.blocks = blocks

    # construction -----------------------------------------------------------------
    @classmethod
    def from_entries(cls, grid: SphereGrid, e: RingEntries) -> "RingOperator":
        nr, N = grid.n_rings, grid.n_lon
        hat = np.fft.rfft(e.ring, axis=-1).real if nr else np.zeros((0, 0, N // 2 + 1))
        b0 = np.empty((nr + 2, nr + 2))
        sq = np.sqrt(N)
        b0[1:-1, 1:-1] = hat[:, :, 0]
        b0[1:-1, 0] = sq * e.from_pole[:, 0]
        b0[1:-1, -1] = sq * e.from_pole[:, 1]
        b0[0, 1:-1] = sq * e.to_pole[0]
        b0[-1, 1:-1] = sq * e.to_pole[1]
        b0[0, 0], b0[0, -1] = e.poles[0]
        b0[-1, 0], b0[-1, -1] = e.poles[1]
        blocks = np.ascontiguousarray(np.moveaxis(hat[:, :, 1:], -1, 0))
        return cls(grid, b0, blocks)

    @classmethod
    def from_profile(cls, grid: SphereGrid, profile, column_weights: bool = False) -> "RingOperator":
        """Operator with entries ``profile(cos angle(x_i, x_j))``, optionally times ``w_j``."""
        return cls.from_entries(grid, profile_entries(grid, profile, column_weights))

    @classmethod
    def identity(cls, grid: SphereGrid) -> "RingOperator":
        nr, N = grid.n_rings, grid.n_lon
        return cls(grid, np.eye(nr + 2), np.broadcast_to(np.eye(nr), (N // 2, nr, nr)).copy())

    # structure --------------------------------------------------------------------
    def entries(self) -> RingEntries:
        nr, N = self.grid.n_rings, self.grid.n_lon
        sq = np.sqrt(N)
        hat = np.concatenate([self.block0[None, 1:-1, 1:-1], self.blocks], axis=0)
        ring = np.fft.irfft(np.moveaxis(hat, 0, -1), n=N, axis=-1) if nr else np.zeros((0, 0, N))
        from_pole = self.block0[1:-1][:, [0, -1]] / sq
        to_pole = self.block0[[0, -1]][:, 1:-1] / sq
        poles = self.block0[np.ix_([0, -1], [0, -1])].copy()
        return RingEntries(ring, from_pole, to_pole, poles)

    def map_entries(self, f) -> "RingOperator":
        return RingOperator.from_entries(self.grid, self.entries().map(f))

    def dense(self) -> np.ndarray:
        """Full matrix; only sensible for small grids."""
        g = self.grid
        nr, N = g.n_rings, g.n_lon
        e = self.entries()
        M = np.empty((g.size, g.size))
        j = np.arange(N)
        offs = (j[:, None] - j[None, :]) % N  # row lon - column lon
        for r in range(nr):
            rows = slice(1 + r * N, 1 + (r + 1) * N)
            for s in range(nr):
                M[rows, 1 + s * N : 1 + (s + 1) * N] = e.ring[r, s][offs]
            M[rows, 0] = e.from_pole[r, 0]
            M[rows, -1] = e.from_pole[r, 1]
            M[0, 1 + r * N : 1 + (r + 1) * N] = e.to_pole[0, r]
            M[-1, 1 + r * N : 1 + (r + 1) * N] = e.to_pole[1, r]
        M[0, 0], M[0, -1] = e.poles[0]
        M[-1, 0], M[-1, -1] = e.poles[1]
        return M

    # algebra ----------------------------------------------------------------------
    def apply(self, v: np.ndarray) -> np.ndarray:
        """Apply to a field (``(..., size)``); leading axes are batch axes."""
        g = self.grid
        nr, N = g.n_rings, g.n_lon
        v = np.asarray(v, dtype=float)
        lead = v.shape[:-1]
        x = v.reshape(-1, g.size)
        B = x.shape[0]
        out = np.empty_like(x)
        if nr:
            rings = x[:, 1:-1].reshape(B, nr, N)
            hat = np.fft.rfft(rings, axis=-1, norm="ortho")  # (B, nr, N/2+1)
            z0 = np.concatenate([x[:, :1], hat[:, :, 0].real, x[:, -1:]], axis=1)
            y0 = z0 @ self.block0.T
            # blocks are real, so multiply the interleaved float view of (mode, ring, batch)
            hm = np.ascontiguousarray(hat[:, :, 1:].transpose(2, 1, 0))  # (N/2, nr, B)
            ym = np.matmul(self.blocks, hm.view(np.float64)).view(np.complex128)
            yhat = np.empty_like(hat)
            yhat[:, :, 0] = y0[:, 1:-1]
            yhat[:, :, 1:] = ym.transpose(2, 1, 0)
            out[:, 1:-1] = np.fft.irfft(yhat, n=N, axis=-1, norm="ortho").reshape(B, nr * N)
        else:
            y0 = x[:, [0, -1]] @ self.block0.T
        out[:, 0] = y0[:, 0]
        out[:, -1] = y0[:, -1]
        return out.reshape(*lead, g.size)

    __call__ = apply

    def __matmul__(self, other: "RingOperator") -> "RingOperator":
        return RingOperator(self.grid, self.block0 @ other.block0, np.matmul(self.blocks, other.blocks))

    def __add__(self, other: "RingOperator") -> "RingOperator":
        return RingOperator(self.grid, self.block0 + other.block0, self.blocks + other.blocks)

    def __sub__(self, other: "RingOperator") -> "RingOperator":
        return RingOperator(self.grid, self.block0 - other.block0, self.blocks - other.blocks)

    def scale(self, c: float) -> "RingOperator":
        return RingOperator(self.grid, c * self.block0, c * self.blocks)

    @property
    def T(self) -> "RingOperator":
        return RingOperator(self.grid, self.block0.T.copy(), np.swapaxes(self.blocks, 1, 2).copy())

    def scale_columns(self, w_ring: np.ndarray, w_pole: tuple[float, float]) -> "RingOperator":
        """Right-multiply by a diagonal that is constant on rings."""
        d0 = np.concatenate([[w_pole[0]], w_ring, [w_pole[1]]])
        return RingOperator(self.grid, self.block0 * d0[None, :], self.blocks * w_ring[None, None, :])

    def scale_rows(self, w_ring: np.ndarray, w_pole: tuple[float, float]) -> "RingOperator":
        """Left-multiply by a diagonal that is constant on rings."""
        d0 = np.concatenate([[w_pole[0]], w_ring, [w_pole[1]]])
        return RingOperator(self.grid, d0[:, None] * self.block0, w_ring[None, :, None] * self.blocks)

    def weighted(self) -> "RingOperator":
        """``self @ diag(w)`` with the grid's quadrature weights."""
        w = self.grid.weights
        return self.scale_columns(self.grid.ring_weights, (w[0], w[-1]))

    def row_sums(self) -> np.ndarray:
        """Row sums per ring representative: (north, ring 0..nr-1, south)."""
        N = self.grid.n_lon
        b = self.block0
        # the constant vector has Fourier content only in mode 0: sqrt(N) on rings, 1 on poles
        one = np.concatenate([[1.0], np.full(self.grid.n_rings, np.sqrt(N)), [1.0]])
        y = b @ one
        y[1:-1] /= np.sqrt(N)
        return y

    def power(self, k: int) -> "RingOperator":
        if k < 0:
            raise ValueError("negative power")
        result = RingOperator.identity(self.grid)
        base = self
        while k:
            if k & 1:
                result = result @ base
            base = base @ base
            k >>= 1
        return result

    # spectral (symmetric operators only) ------------------------------------------
    def eigvalsh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues of the mode-0 block and of the stacked mode blocks."""
        return np.linalg.eigvalsh(self.block0), np.linalg.eigvalsh(self.blocks)

    def spectral_map(self, f) -> "RingOperator":
        """Apply ``f`` to the eigenvalues of every (symmetric) block."""
        lam0, u0 = np.linalg.eigh(self.block0)
        b0 = (u0 * f(lam0)[None, :]) @ u0.T
        if self.blocks.size:
            lam, u = np.linalg.eigh(self.blocks)
            bm = np.matmul(u * f(lam)[:, None, :], np.swapaxes(u, 1, 2))
        else:
            bm = self.blocks.copy()
        return RingOperator(self.grid, b0, bm)

    def max_abs_entry(self) -> float:
        return self.entries().max_abs()


def profile_entries(grid: SphereGrid, profile, column_weights: bool = False) -> RingEntries:
    nr, N = grid.n_rings, grid.n_lon
    if nr:
        half = N // 2 + 1
        cos_half = ring_cosines_half(grid)
        vals = profile(cos_half)
        ring = np.concatenate([vals, vals[:, :, 1 : N - half + 1][:, :, ::-1]], axis=-1)
    else:
        ring = np.zeros((0, 0, N))
    rp, pp = pole_cosines(grid)
    from_pole = profile(rp) if nr else np.zeros((0, 2))
    to_pole = from_pole.T.copy()
    poles = profile(pp)
    e = RingEntries(ring, from_pole, to_pole, poles)
    if column_weights:
        w = grid.weights
        wr = grid.ring_weights
        e = RingEntries(
            e.ring * wr[None, :, None],
            e.from_pole * np.array([w[0], w[-1]])[None, :],
            e.to_pole * wr[None, :],
            e.poles * np.array([w[0], w[-1]])[None, :],
        )
    return e


def ring_cosines_half(grid: SphereGrid) -> np.ndarray:
    """Like :func:`ring_cosines` but only offsets ``0..N/2`` (the rest follow by symmetry)."""
    th = grid.ring_colatitudes
    N = grid.n_lon
    d = np.cos(2 * np.pi * np.arange(N // 2 + 1) / N)
    c = np.multiply.outer(np.cos(th), np.cos(th))
    s = np.multiply.outer(np.sin(th), np.sin(th))
    return np.clip(c[:, :, None] + s[:, :, None] * d[None, None, :], -1.0, 1.0)
