"""Heat kernel of (1/2) Laplace-Beltrami on the sphere of radius R.

The kernel depends on the two points only through their angle and is evaluated from its
Legendre expansion with a certified tail bound.  For very small ``t / R^2`` the small-time
Gaussian form with curvature correction is used instead, and an integral representation
(accurate far into the Gaussian tail) serves as an independent reference.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .geometry import SphereGrid
from .legendre import legendre_series
from .ringops import RingOperator

__all__ = [
    "HeatKernelSeries",
    "KernelMatrix",
    "DegreeCapExceeded",
    "truncation_degree",
    "tail_majorant",
    "kernel_eval",
    "molchanov_eval",
    "log_kernel_reference",
    "kernel_matrix",
    "write_kernel_binary",
    "read_kernel_binary",
    "write_kernel_csv",
]

log = logging.getLogger(__name__)

MOLCHANOV_THRESHOLD = 1e-4
DEGREE_CAP = 1_000_000


class DegreeCapExceeded(ValueError):
    pass


def tail_majorant(R: float, t: float, L) -> np.ndarray:
    """Geometric bound on sum_{l > L} (2l+1) exp(-l(l+1)t/2R^2) / (4 pi R^2).

    Successive term ratios past L+1 never exceed q = (2L+5)/(2L+3) exp(-(L+2)t/R^2), so the
    tail is at most the first omitted term over 1 - q.  Returns inf where q >= 1.
    """
    L = np.asarray(L, dtype=float)
    tau = t / R**2
    log_q = np.log((2 * L + 5) / (2 * L + 3)) - (L + 2) * tau
    log_first = np.log(2 * L + 3) - (L + 1) * (L + 2) * tau / 2 - math.log(4 * math.pi * R * R)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(log_q < 0, np.exp(log_first - np.log(-np.expm1(np.minimum(log_q, 0)))), np.inf)
    return out


def truncation_degree(R: float, t: float, tol: float) -> int:
    """Smallest L whose certified tail bound is at most ``tol``."""
    if not (R > 0 and t > 0 and tol > 0):
        raise ValueError("R, t and tol must be positive")
    if tol < np.finfo(float).tiny:
        raise DegreeCapExceeded(f"tolerance {tol} below representable range")
    log_tol = math.log(tol)
    start = 0
    chunk = 1024
    while start <= DEGREE_CAP:
        L = np.arange(start, start + chunk, dtype=float)
        tau = t / R**2
        log_q = np.log((2 * L + 5) / (2 * L + 3)) - (L + 2) * tau
        log_first = np.log(2 * L + 3) - (L + 1) * (L + 2) * tau / 2 - math.log(4 * math.pi * R * R)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_bound = np.where(log_q < 0, log_first - np.log(-np.expm1(np.minimum(log_q, 0))), np.inf)
        ok = np.nonzero(log_bound <= log_tol)[0]
        if ok.size:
            return int(L[ok[0]])
        start += chunk
        chunk *= 2
    raise DegreeCapExceeded(f"no truncation degree below {DEGREE_CAP} certifies tol={tol}")


@dataclass(frozen=True)
class HeatKernelSeries:
    """Truncated Legendre expansion of the kernel at fixed (R, t)."""

    radius: float
    time: float
    tail_tolerance: float = 1e-12
    molchanov_threshold: float = MOLCHANOV_THRESHOLD
    truncation_L: int = field(init=False)

    def __post_init__(self) -> None:
        if not (self.radius > 0 and self.time > 0):
            raise ValueError("radius and time must be positive")
        object.__setattr__(self, "truncation_L", truncation_degree(self.radius, self.time, self.tail_tolerance))

    @property
    def scaled_time(self) -> float:
        return self.time / self.radius**2

    @property
    def uses_molchanov(self) -> bool:
        return self.scaled_time < self.molchanov_threshold

    def coefficients(self) -> np.ndarray:
        l = np.arange(self.truncation_L + 1)
        return (2 * l + 1) * np.exp(-l * (l + 1) * self.scaled_time / 2) / (4 * math.pi * self.radius**2)

    def from_cosine(self, c) -> np.ndarray:
        """Kernel as a function of the cosine of the angle."""
        c = np.clip(np.asarray(c, dtype=float), -1.0, 1.0)
        if self.uses_molchanov:
            log.warning(
                "t/R^2 = %.3g below %.1g: using the small-time Gaussian form",
                self.scaled_time,
                self.molchanov_threshold,
            )
            return _molchanov(self.radius, self.time, np.arccos(c))
        return legendre_series(self.coefficients(), c)

    def __call__(self, theta) -> np.ndarray:
        return kernel_eval(self, theta)


def _check_theta(theta, allow_pi: bool = True) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    hi_ok = theta <= math.pi if allow_pi else theta < math.pi
    if np.any(~((theta >= 0) & hi_ok)):
        raise ValueError("angle outside the admissible range")
    return theta


def kernel_eval(series: HeatKernelSeries, theta):
    """p_R(t, theta) from the truncated series (or the small-time form, see ``HeatKernelSeries``)."""
    theta = _check_theta(theta)
    out = series.from_cosine(np.cos(theta))
    return float(out) if out.ndim == 0 else out


def _molchanov(R, t, theta):
    theta = np.asarray(theta, dtype=float)
    s = np.sin(theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(theta < 1e-8, 1.0, theta / s)
    return np.exp(-(R * R) * theta**2 / (2 * t)) / (2 * math.pi * t) * np.sqrt(ratio)


def molchanov_eval(R: float, t: float, theta):
    """Small-time Gaussian approximation exp(-R^2 theta^2 / 2t) / (2 pi t) * sqrt(theta / sin theta)."""
    theta = _check_theta(theta, allow_pi=False)
    out = _molchanov(R, t, theta)
    return float(out) if out.ndim == 0 else out


def _log_reference_unit(tau: float, theta: float, K: int = 4) -> float:
    # Integral representation of the unit-sphere kernel for d/dt = (1/2) Laplacian:
    # with s = tau/2, p = sqrt(2) e^{s/4} (4 pi s)^{-3/2} sum_k (-1)^k
    #     int_theta^pi (phi + 2 pi k) exp(-(phi + 2 pi k)^2 / 4s) / sqrt(cos theta - cos phi) dphi.
    # The factor exp(-theta^2/4s) is pulled out so deep tails stay representable.
    s = tau / 2
    ks = np.arange(-K, K + 1)
    sign = np.where(ks % 2, -1.0, 1.0)

    def numer(phi):
        a = phi + 2 * math.pi * ks
        return float(np.sum(sign * a * np.exp(-(a * a - theta * theta) / (4 * s))))

    if theta < 1e-12:
        # cos 0 - cos phi = 2 sin^2(phi/2); numerator vanishes linearly at phi = 0
        f = lambda phi: numer(phi) / (math.sqrt(2.0) * math.sin(phi / 2)) if phi > 0 else 0.0
        width = math.sqrt(s)
        brk = min(math.pi, 12 * width)
        val = integrate.quad(f, 0.0, brk, epsabs=0, epsrel=1e-13, limit=400)[0]
        if brk < math.pi:
            val += integrate.quad(f, brk, math.pi, epsabs=0, epsrel=1e-13, limit=400)[0]
    else:
        # phi = theta + w^2 removes the inverse square root at the lower limit
        def f(w):
            half = 0.5 * w * w
            sinc = np.sinc(half / math.pi)
            return numer(theta + w * w) * 2.0 / math.sqrt(math.sin(theta + half) * sinc)

        upper = math.sqrt(math.pi - theta)
        width = math.sqrt(2 * s / max(theta, 1e-300))
        width = min(width, (4 * s) ** 0.25)
        brk = min(upper, 12 * width)
        val = integrate.quad(f, 0.0, brk, epsabs=0, epsrel=1e-13, limit=400)[0]
        if brk < upper:
            val += integrate.quad(f, brk, upper, epsabs=0, epsrel=1e-13, limit=400)[0]
    return (
        0.5 * math.log(2.0) + s / 4 - 1.5 * math.log(4 * math.pi * s) - theta * theta / (4 * s) + math.log(val)
    )


def log_kernel_reference(R: float, t: float, theta: float) -> float:
    """log p_R(t, theta), accurate in relative terms even where the kernel is ~1e-300.

    Uses the integral representation for t/R^2 <= 1 (where the Legendre series loses all
    relative accuracy in the tail) and a long series otherwise.
    """
    theta = float(_check_theta(theta, allow_pi=False))
    tau = t / R**2
    if tau <= 1.0:
        return _log_reference_unit(tau, theta) - 2 * math.log(R)
    ser = HeatKernelSeries(R, t, tail_tolerance=1e-200)
    return math.log(float(kernel_eval(ser, theta)))


@dataclass(eq=False)
class KernelMatrix:
    """Kernel values p_R(t, angle(x_i, x_j)) over all node pairs of a grid."""

    grid: SphereGrid
    time: float
    series: HeatKernelSeries
    operator: RingOperator
    row_defect: float

    @property
    def entries(self) -> np.ndarray:
        return self.operator.dense()

    def row_sums(self) -> np.ndarray:
        """sum_j K_ij w_j, one value per ring representative (north, rings, south)."""
        return self.operator.weighted().row_sums()

    def propagator(self, clamp: bool = True, renormalize: bool = False) -> RingOperator:
        """Discrete transition operator K diag(w), optionally clamped and row-normalised."""
        op = self.operator
        if clamp:
            op = op.map_entries(lambda a: np.maximum(a, 0.0))
        op = op.weighted()
        if renormalize:
            rs = op.row_sums()
            op = op.scale_rows(1.0 / rs[1:-1], (1.0 / rs[0], 1.0 / rs[-1]))
        return op


def kernel_matrix(grid: SphereGrid, t: float, tol: float = 1e-12, molchanov_threshold: float = MOLCHANOV_THRESHOLD) -> KernelMatrix:
    if not t > 0:
        raise ValueError("t must be positive")
    ser = HeatKernelSeries(grid.radius, t, tol, molchanov_threshold)
    op = RingOperator.from_profile(grid, ser.from_cosine)
    defect = float(np.max(np.abs(op.weighted().row_sums() - 1.0)))
    return KernelMatrix(grid, t, ser, op, defect)


_HEADER = struct.Struct("<8sddqqdq")
_MAGIC = b"SHEKRN01"


def write_kernel_binary(km: KernelMatrix, path) -> None:
    """Header (magic, R, t, n, L, tol, size) followed by size*size little-endian doubles, row-major."""
    dense = np.ascontiguousarray(km.entries, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                _MAGIC, km.grid.radius, km.time, km.grid.level, km.series.truncation_L, km.series.tail_tolerance, km.grid.size
            )
        )
        fh.write(dense.tobytes(order="C"))


def read_kernel_binary(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        magic, R, t, n, L, tol, size = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError("not a kernel matrix file")
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(size, size)
    return {"R": R, "t": t, "n": n, "L": L, "tol": tol}, data


def write_kernel_csv(km: KernelMatrix, path) -> None:
    np.savetxt(path, km.entries, delimiter=",", fmt="%.17g",
               header=f"R={km.grid.radius!r} t={km.time!r} n={km.grid.level} L={km.series.truncation_L} tol={km.series.tail_tolerance!r}")
