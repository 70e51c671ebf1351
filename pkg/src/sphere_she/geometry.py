"""Points, geodesic angles and the dyadic latitude-longitude lattice on a sphere of radius R."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "SpherePoint",
    "SphereGrid",
    "GeodesicBall",
    "geodesic_angle",
    "build_grid",
    "ball_measure",
    "mesh_angle_bound",
    "write_grid_csv",
]

TWO_PI = 2.0 * math.pi
_POLE_TOL = 1e-15


@dataclass(frozen=True)
class SpherePoint:
    """A point on the sphere of radius ``radius`` in colatitude/longitude coordinates."""

    colatitude: float
    longitude: float
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not (0.0 <= self.colatitude <= math.pi):
            raise ValueError(f"colatitude {self.colatitude} outside [0, pi]")
        lon = math.fmod(self.longitude, TWO_PI)
        if lon < 0:
            lon += TWO_PI
        if lon >= TWO_PI:
            lon = 0.0
        if self.colatitude < _POLE_TOL or math.pi - self.colatitude < _POLE_TOL:
            lon = 0.0
        object.__setattr__(self, "longitude", lon)

    def unit_vector(self) -> np.ndarray:
        s = math.sin(self.colatitude)
        return np.array([s * math.cos(self.longitude), s * math.sin(self.longitude), math.cos(self.colatitude)])


def _same_radius(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(a, b)


def geodesic_angle(p: SpherePoint, q: SpherePoint) -> float:
    """Angle subtended at the centre by ``p`` and ``q`` (spherical law of cosines)."""
    if not _same_radius(p.radius, q.radius):
        raise ValueError(f"points lie on different spheres ({p.radius} vs {q.radius})")
    c = math.cos(p.colatitude) * math.cos(q.colatitude) + math.sin(p.colatitude) * math.sin(
        q.colatitude
    ) * math.cos(p.longitude - q.longitude)
    return math.acos(min(1.0, max(-1.0, c)))


def angles_between(colat1, lon1, colat2, lon2) -> np.ndarray:
    """Vectorised geodesic angle for broadcastable coordinate arrays."""
    c = np.cos(colat1) * np.cos(colat2) + np.sin(colat1) * np.sin(colat2) * np.cos(
        np.subtract(lon1, lon2)
    )
    return np.arccos(np.clip(c, -1.0, 1.0))


@dataclass(frozen=True)
class GeodesicBall:
    center: SpherePoint
    geodesic_radius: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.geodesic_radius <= math.pi * self.center.radius * (1 + 1e-12)):
            raise ValueError("geodesic radius must lie in [0, pi R]")

    @property
    def angle(self) -> float:
        return min(math.pi, self.geodesic_radius / self.center.radius)

    def contains(self, p: SpherePoint) -> bool:
        return geodesic_angle(self.center, p) <= self.angle


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Dyadic lattice of level ``level`` on the sphere of radius ``radius``.

    Interior rings sit at colatitudes ``i pi 4^-n`` (``i = 1 .. 4^n - 1``), each carrying
    ``4^(n+1)`` equally spaced longitudes; the two poles appear once each.  Nodes are
    ordered north pole, ring 0 (all longitudes), ring 1, ..., south pole.
    """

    radius: float
    level: int
    colatitudes: np.ndarray
    longitudes: np.ndarray
    weights: np.ndarray
    ring_colatitudes: np.ndarray = field(repr=False)
    n_lon: int = 0

    @property
    def n_rings(self) -> int:
        return len(self.ring_colatitudes)

    @property
    def size(self) -> int:
        return len(self.weights)

    def __len__(self) -> int:
        return self.size

    @property
    def colatitude_step(self) -> float:
        return math.pi / 4**self.level

    @property
    def longitude_step(self) -> float:
        return TWO_PI / self.n_lon

    @cached_property
    def nodes(self) -> list[SpherePoint]:
        return [
            SpherePoint(float(c), float(l), self.radius)
            for c, l in zip(self.colatitudes, self.longitudes)
        ]

    @cached_property
    def unit_vectors(self) -> np.ndarray:
        s = np.sin(self.colatitudes)
        return np.column_stack(
            [s * np.cos(self.longitudes), s * np.sin(self.longitudes), np.cos(self.colatitudes)]
        )

    @property
    def ring_weights(self) -> np.ndarray:
        """Weight of a single node on each interior ring."""
        return self.weights[1:-1:self.n_lon] if self.n_rings else np.empty(0)

    def node_index(self, ring: int, lon_index: int) -> int:
        return 1 + ring * self.n_lon + (lon_index % self.n_lon)

    def nearest_node(self, p: SpherePoint) -> int:
        if not _same_radius(p.radius, self.radius):
            raise ValueError("point is not on this grid's sphere")
        return int(np.argmax(self.unit_vectors @ p.unit_vector()))

    def angles_from(self, p: SpherePoint) -> np.ndarray:
        """Geodesic angle from ``p`` to every node."""
        return angles_between(p.colatitude, p.longitude, self.colatitudes, self.longitudes)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def build_grid(R: float, n: int) -> SphereGrid:
    """Construct the level-``n`` lattice on the sphere of radius ``R`` with cell-area weights."""
    if not R > 0:
        raise ValueError("R must be positive")
    if n < 0:
        raise ValueError("level must be nonnegative")
    n_col = 4**n
    n_lon = 4 ** (n + 1)
    h = math.pi / n_col
    rings = np.arange(1, n_col) * h
    lons = np.arange(n_lon) * (TWO_PI / n_lon)
    # Exact band areas: the band [theta-h/2, theta+h/2] split into n_lon cells.
    ring_w = R * R * (TWO_PI / n_lon) * 2.0 * np.sin(rings) * math.sin(h / 2)
    cap = TWO_PI * R * R * (1.0 - math.cos(h / 2))

    colat = np.concatenate([[0.0], np.repeat(rings, n_lon), [math.pi]])
    lon = np.concatenate([[0.0], np.tile(lons, len(rings)), [0.0]])
    w = np.concatenate([[cap], np.repeat(ring_w, n_lon), [cap]])
    return SphereGrid(R, n, colat, lon, w, rings, n_lon)


def ball_measure(R: float, r: float) -> float:
    """Area of a geodesic ball of radius ``r`` on the sphere of radius ``R``."""
    if not (0.0 <= r <= math.pi * R * (1 + 1e-15)):
        raise ValueError(f"ball radius {r} outside [0, pi R]")
    return TWO_PI * R * R * (1.0 - math.cos(min(r / R, math.pi)))


def mesh_angle_bound(n: int, samples: int = 32) -> float:
    """Certified bound on the angle from any point of the sphere to its nearest lattice node.

    Every point lies in some cell [theta_i, theta_i+1] x [phi_j, phi_j+1] and is no further
    than the nearest of that cell's corners.  Cells within a band are congruent, so one cell
    per band is scanned on a ``samples x samples`` mesh; the corner distance is 1-Lipschitz,
    so adding the mesh covering radius turns the sampled maximum into a bound.
    """
    if n < 0:
        raise ValueError("level must be nonnegative")
    h = math.pi / 4**n
    dphi = TWO_PI / 4 ** (n + 1)
    s = np.linspace(0.0, 1.0, samples)
    worst = 0.0
    for i in range(4**n):
        lo, hi = i * h, (i + 1) * h
        th, ph = np.meshgrid(lo + s * h, s * dphi, indexing="ij")
        d = np.full(th.shape, np.inf)
        for ct in (lo, hi):
            for cp in (0.0, dphi):
                d = np.minimum(d, angles_between(th, ph, ct, cp))
        worst = max(worst, float(d.max()))
    # covering radius of the sample mesh; ds^2 <= dtheta^2 + dphi^2 since sin <= 1
    worst += 0.5 * math.hypot(h, dphi) / (samples - 1)
    bound = min(worst, math.pi)
    if bound > math.pi / 4**n * (1 + 1e-12):
        raise AssertionError(f"mesh bound {bound} exceeds pi 4^-{n}")
    return bound


def write_grid_csv(grid: SphereGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "colatitude", "longitude", "weight"])
        for i, (c, l, wt) in enumerate(zip(grid.colatitudes, grid.longitudes, grid.weights)):
            w.writerow([i, repr(float(c)), repr(float(l)), repr(float(wt))])
