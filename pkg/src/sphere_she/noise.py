"""Spatial covariance kernels, their grid factorisation and Gaussian increments."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import SphereGrid, SpherePoint, geodesic_angle
from .ringops import RingOperator

__all__ = [
    "NoiseConstants",
    "CovarianceKernel",
    "NoiseFactor",
    "NotPositiveSemidefinite",
    "validate_constants",
    "h_lo",
    "h_up",
    "hr_eval",
    "build_factor",
    "sample_increments",
    "replica_stream",
    "replica_streams",
    "load_table",
]

FAMILIES = ("constant", "exponential_geodesic", "truncated_linear", "askey", "table")


@dataclass(frozen=True)
class NoiseConstants:
    C_h_lo: float = 0.0
    C_h_up: float = 0.0


def validate_constants(c: NoiseConstants) -> bool:
    """Admissible window: -2 < C_up < 2 and C_up/2 - 1 < C_lo <= C_up."""
    return (-2.0 < c.C_h_up < 2.0) and (c.C_h_up / 2 - 1 < c.C_h_lo <= c.C_h_up)


def _log_r(R: float) -> float:
    if not R > 1:
        raise ValueError("covariance bounds need R > 1 so that log R > 0")
    return math.log(R)


def h_lo(R: float, c: NoiseConstants) -> float:
    return _log_r(R) ** (c.C_h_lo / 2)


def h_up(R: float, c: NoiseConstants) -> float:
    return _log_r(R) ** (c.C_h_up / 2)


class NotPositiveSemidefinite(ValueError):
    def __init__(self, eigenvalue: float, lam_max: float):
        super().__init__(f"covariance not positive semidefinite: eigenvalue {eigenvalue:.3e} (max {lam_max:.3e})")
        self.eigenvalue = eigenvalue
        self.lam_max = lam_max


@dataclass(frozen=True, eq=False)
class CovarianceKernel:
    """Isotropic covariance h(x, y) = profile(angle(x, y)).

    Families (``floor`` and ``peak`` default to the lower and upper bounds at this R):

    * ``constant``:             h0
    * ``exponential_geodesic``: floor + (peak - floor) exp(-kappa theta)
    * ``truncated_linear``:     floor + (peak - floor) max(0, 1 - theta/theta_c)
    * ``askey``:                floor + (peak - floor) max(0, 1 - theta/theta_c)^power
    * ``table``:                linear interpolation of (theta, h) knots

    With ``strict`` (the default) every value must lie within [h_lo(R), h_up(R)].  Setting
    ``strict=False`` allows a floor below h_lo, e.g. 0 for compactly supported correlation.
    """

    family: str
    radius: float
    constants: NoiseConstants = NoiseConstants()
    params: dict = field(default_factory=dict)
    strict: bool = True

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        p = dict(self.params)
        lo, up = h_lo(self.radius, self.constants), h_up(self.radius, self.constants)
        p.setdefault("floor", lo)
        p.setdefault("peak", up)
        if self.family == "constant":
            p.setdefault("h0", lo)
        elif self.family == "exponential_geodesic":
            p.setdefault("kappa", 1.0)
            if p["kappa"] < 0:
                raise ValueError("kappa must be nonnegative")
        elif self.family in ("truncated_linear", "askey"):
            p.setdefault("theta_c", math.pi / 8)
            p.setdefault("power", 1.0 if self.family == "truncated_linear" else 2.0)
            if not (0 < p["theta_c"] <= math.pi):
                raise ValueError("theta_c must lie in (0, pi]")
        elif self.family == "table":
            th = np.asarray(p.get("theta"), dtype=float)
            hv = np.asarray(p.get("h"), dtype=float)
            if th.ndim != 1 or th.shape != hv.shape or len(th) < 2 or np.any(np.diff(th) <= 0):
                raise ValueError("table needs increasing theta knots with matching h values")
            p["theta"], p["h"] = th, hv
        object.__setattr__(self, "params", p)
        if self.strict:
            vmin, vmax = self.value_range()
            tol = 1e-12 * max(1.0, up)
            if vmin < lo - tol or vmax > up + tol:
                raise ValueError(
                    f"kernel values [{vmin:.6g}, {vmax:.6g}] leave [h_lo, h_up] = [{lo:.6g}, {up:.6g}]"
                )

    @property
    def h_lo(self) -> float:
        return h_lo(self.radius, self.constants)

    @property
    def h_up(self) -> float:
        return h_up(self.radius, self.constants)

    @property
    def support_angle(self) -> float:
        """Angle beyond which the kernel equals its floor (pi if never)."""
        if self.family in ("truncated_linear", "askey"):
            return self.params["theta_c"]
        return math.pi

    def value_range(self) -> tuple[float, float]:
        if self.family == "table":
            return float(self.params["h"].min()), float(self.params["h"].max())
        v = self.profile(np.linspace(0.0, math.pi, 2049))
        return float(v.min()), float(v.max())

    def profile(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        p = self.params
        f, pk = p["floor"], p["peak"]
        if self.family == "constant":
            return np.full_like(theta, p["h0"])
        if self.family == "exponential_geodesic":
            return f + (pk - f) * np.exp(-p["kappa"] * theta)
        if self.family in ("truncated_linear", "askey"):
            return f + (pk - f) * np.maximum(0.0, 1.0 - theta / p["theta_c"]) ** p["power"]
        return np.interp(theta, p["theta"], p["h"])

    def from_cosine(self, c) -> np.ndarray:
        return self.profile(np.arccos(np.clip(c, -1.0, 1.0)))


def hr_eval(kernel: CovarianceKernel, x: SpherePoint, y: SpherePoint) -> float:
    if abs(x.radius - kernel.radius) > 1e-12 * kernel.radius:
        raise ValueError("points are not on the kernel's sphere")
    return float(kernel.profile(geodesic_angle(x, y)))


@dataclass(eq=False)
class NoiseFactor:
    """Covariance operator H on a grid and its symmetric square root F (F F^T = H)."""

    grid: SphereGrid
    kernel: CovarianceKernel
    covariance: RingOperator
    factor: RingOperator
    clip_magnitude: float
    min_eigenvalue: float
    max_eigenvalue: float
    reconstruction_error: float

    @property
    def covariance_matrix(self) -> np.ndarray:
        return self.covariance.dense()

    @property
    def factor_matrix(self) -> np.ndarray:
        return self.factor.dense()


def build_factor(grid: SphereGrid, kernel: CovarianceKernel, fail: float = 1e-8) -> NoiseFactor:
    """Factorise H_ij = h(x_i, x_j) blockwise; tiny negative eigenvalues are clipped to zero."""
    if abs(grid.radius - kernel.radius) > 1e-12 * kernel.radius:
        raise ValueError("grid and kernel live on different spheres")
    H = RingOperator.from_profile(grid, kernel.from_cosine)
    e0, em = H.eigvalsh()
    lam = np.concatenate([e0, em.ravel()])
    lam_max = float(lam.max())
    lam_min = float(lam.min())
    if lam_max <= 0:
        raise NotPositiveSemidefinite(lam_min, lam_max)
    if lam_min < -fail * lam_max:
        raise NotPositiveSemidefinite(lam_min, lam_max)
    # every negative eigenvalue above the failure threshold is zeroed; the largest is recorded
    F = H.spectral_map(lambda x: np.sqrt(np.maximum(x, 0.0)))
    err = (F @ F - H).max_abs_entry()
    return NoiseFactor(grid, kernel, H, F, max(0.0, -lam_min), lam_min, lam_max, err)


def sample_increments(factor: NoiseFactor, dt: float, stream) -> np.ndarray:
    """Correlated Gaussian increments F z sqrt(dt).

    ``stream`` is a ``numpy.random.Generator`` (one field) or a sequence of generators (one
    field per generator, stacked along the first axis).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = factor.grid.size
    if isinstance(stream, np.random.Generator):
        z = stream.standard_normal(n)
    else:
        z = np.stack([g.standard_normal(n) for g in stream])
    return factor.factor.apply(z) * math.sqrt(dt)


def replica_stream(master_seed: int, replica: int) -> np.random.Generator:
    """Independent generator for one replica: a pure function of (master_seed, replica)."""
    ss = np.random.SeedSequence(entropy=int(master_seed) % 2**64, spawn_key=(int(replica),))
    return np.random.Generator(np.random.PCG64(ss))


def replica_streams(master_seed: int, indices: Sequence[int]) -> list[np.random.Generator]:
    return [replica_stream(master_seed, i) for i in indices]


def load_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Read (theta, h) knots from a two-column CSV (header optional)."""
    th, hv = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                a, b = float(row[0]), float(row[1])
            except ValueError:
                continue
            th.append(a)
            hv.append(b)
    return np.array(th), np.array(hv)
