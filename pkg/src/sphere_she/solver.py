"""Mild-solution time stepping, fixed-noise Picard iteration and the ball-truncated process."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import SphereGrid, SpherePoint, geodesic_angle
from .heat_kernel import KernelMatrix, kernel_matrix
from .noise import NoiseFactor, sample_increments
from .ringops import RingOperator, profile_entries

__all__ = [
    "SigmaFunction",
    "FieldState",
    "SolverConfig",
    "TruncatedProcessSpec",
    "PicardResult",
    "SimulationError",
    "PicardDivergence",
    "transition_operator",
    "deterministic_flow",
    "mild_step",
    "simulate",
    "draw_increments",
    "picard_solve",
    "truncated_field",
    "truncated_process",
    "picard_norm",
]


class SimulationError(FloatingPointError):
    pass


class PicardDivergence(RuntimeError):
    def __init__(self, msg: str, ratios):
        super().__init__(msg)
        self.ratios = ratios


@dataclass(frozen=True)
class SigmaFunction:
    """Diffusion coefficient: ``constant``, ``affine_clamped`` (clip(a + b v, lo, hi)) or ``table``."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        p = self.params
        if self.kind == "constant":
            if p.get("value", None) is None or p["value"] < 0:
                raise ValueError("constant sigma needs a nonnegative value")
        elif self.kind == "affine_clamped":
            if not (p["lo"] <= p["hi"]):
                raise ValueError("affine_clamped needs lo <= hi")
        elif self.kind == "table":
            v = np.asarray(p["v"], dtype=float)
            s = np.asarray(p["sigma"], dtype=float)
            if v.ndim != 1 or v.shape != s.shape or len(v) < 2 or np.any(np.diff(v) <= 0):
                raise ValueError("table sigma needs increasing knots with matching values")
            object.__setattr__(self, "params", {"v": v, "sigma": s})
        else:
            raise ValueError(f"unknown sigma kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float) -> "SigmaFunction":
        return cls("constant", {"value": float(value)})

    @classmethod
    def affine_clamped(cls, a: float, b: float, lo: float, hi: float) -> "SigmaFunction":
        return cls("affine_clamped", {"a": float(a), "b": float(b), "lo": float(lo), "hi": float(hi)})

    @classmethod
    def table(cls, v, sigma) -> "SigmaFunction":
        return cls("table", {"v": v, "sigma": sigma})

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(v, p["value"])
        if self.kind == "affine_clamped":
            return np.clip(p["a"] + p["b"] * v, p["lo"], p["hi"])
        return np.interp(v, p["v"], p["sigma"])

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def lower(self) -> float:
        p = self.params
        if self.kind == "constant":
            return p["value"]
        if self.kind == "affine_clamped":
            return p["lo"] if p["b"] != 0 else float(np.clip(p["a"], p["lo"], p["hi"]))
        return float(p["sigma"].min())

    @property
    def upper(self) -> float:
        p = self.params
        if self.kind == "constant":
            return p["value"]
        if self.kind == "affine_clamped":
            return p["hi"] if p["b"] != 0 else float(np.clip(p["a"], p["lo"], p["hi"]))
        return float(p["sigma"].max())

    @property
    def lipschitz(self) -> float:
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine_clamped":
            return abs(p["b"]) if p["lo"] < p["hi"] else 0.0
        return float(np.max(np.abs(np.diff(p["sigma"]) / np.diff(p["v"]))))

    @property
    def admissible(self) -> bool:
        """Bounded away from zero, as the existence theory assumes."""
        return 0 < self.lower <= self.upper < math.inf


@dataclass
class FieldState:
    """Field values on a grid at one time; ``values`` is ``(size,)`` or ``(replicas, size)``."""

    grid: SphereGrid
    time: float
    values: np.ndarray
    history: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != self.grid.size:
            raise ValueError("field length does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise SimulationError("non-finite field values")

    @classmethod
    def constant(cls, grid: SphereGrid, value: float = 0.0, replicas: int | None = None) -> "FieldState":
        shape = (grid.size,) if replicas is None else (replicas, grid.size)
        return cls(grid, 0.0, np.full(shape, float(value)))


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    steps: int
    kernel_tol: float = 1e-12
    clamp_negative_kernel: bool = True
    initial_bound_U: float = math.inf
    renormalize_rows: bool = False

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.steps >= 1):
            raise ValueError("need dt > 0 and at least one step")

    @classmethod
    def for_time(cls, t: float, steps: int, **kw) -> "SolverConfig":
        return cls(dt=t / steps, steps=steps, **kw)

    @property
    def final_time(self) -> float:
        return self.dt * self.steps

    def check_time(self, t: float) -> None:
        if abs(self.final_time - t) > 1e-12 * max(1.0, t):
            raise ValueError(f"steps * dt = {self.final_time} does not reach t = {t}")

    def check_initial(self, u0: FieldState) -> None:
        if np.max(np.abs(u0.values), initial=0.0) > self.initial_bound_U:
            raise ValueError("initial condition exceeds its declared bound")


@dataclass(frozen=True)
class TruncatedProcessSpec:
    beta: float
    picard_n: int
    center: SpherePoint
    time: float

    def __post_init__(self) -> None:
        if not (self.beta > 0 and self.time > 0 and self.picard_n >= 1):
            raise ValueError("need beta > 0, t > 0 and picard_n >= 1")
        if math.sqrt(self.beta * self.time) > math.pi * self.center.radius:
            raise ValueError("truncation ball does not fit on the sphere")

    @property
    def ball_angle(self) -> float:
        return math.sqrt(self.beta * self.time) / self.center.radius


def transition_operator(grid: SphereGrid, cfg: SolverConfig) -> RingOperator:
    """One-step operator K(dt) diag(w) used by the exponential-Euler scheme."""
    km = kernel_matrix(grid, cfg.dt, cfg.kernel_tol)
    return km.propagator(clamp=cfg.clamp_negative_kernel, renormalize=cfg.renormalize_rows)


def _as_operator(K) -> RingOperator:
    if isinstance(K, KernelMatrix):
        return K.propagator(clamp=True)
    return K


def deterministic_flow(u0: FieldState, t: float, tol: float = 1e-12) -> FieldState:
    """Heat flow of the initial field: K(t) diag(w) u0 with the raw (unclamped) kernel."""
    if not t > 0:
        raise ValueError("t must be positive")
    op = kernel_matrix(u0.grid, t, tol).operator.weighted()
    return FieldState(u0.grid, u0.time + t, op.apply(u0.values))


def mild_step(state: FieldState, sigma: SigmaFunction, K_dt, factor: NoiseFactor, stream, dt: float | None = None, increments=None) -> FieldState:
    """u <- K(dt) diag(w) [u + sigma(u) dW] with sigma evaluated at the left endpoint."""
    A = _as_operator(K_dt)
    if dt is None:
        if not isinstance(K_dt, KernelMatrix):
            raise ValueError("dt is required when passing a bare operator")
        dt = K_dt.time
    dW = sample_increments(factor, dt, stream) if increments is None else increments
    u = A.apply(state.values + sigma(state.values) * dW)
    if not np.all(np.isfinite(u)):
        raise SimulationError(f"non-finite values at t = {state.time + dt}")
    return FieldState(state.grid, state.time + dt, u)


def simulate(u0: FieldState, t: float, cfg: SolverConfig, sigma: SigmaFunction, factor: NoiseFactor, stream, operator: RingOperator | None = None) -> FieldState:
    """Iterate ``mild_step``; ``history`` holds max |u| after every step (per replica)."""
    cfg.check_time(t)
    cfg.check_initial(u0)
    A = transition_operator(u0.grid, cfg) if operator is None else operator
    state = u0
    hist = []
    for _ in range(cfg.steps):
        state = mild_step(state, sigma, A, factor, stream, dt=cfg.dt)
        hist.append(np.max(np.abs(state.values), axis=-1))
    state.history = np.array(hist)
    return state


def draw_increments(factor: NoiseFactor, cfg: SolverConfig, streams) -> np.ndarray:
    """A whole noise realisation, shape ``(steps, replicas, size)``, in simulation order."""
    return np.stack([sample_increments(factor, cfg.dt, streams) for _ in range(cfg.steps)])


def picard_norm(diff: np.ndarray, times: np.ndarray, alpha: float, k: float) -> float:
    """sup_m e^{-alpha t_m} sup_x (mean over replicas |diff|^k)^{1/k}; diff is (M, B, size)."""
    mom = np.mean(np.abs(diff) ** k, axis=1) ** (1.0 / k)
    return float(np.max(np.exp(-alpha * times) * np.max(mom, axis=-1)))


@dataclass
class PicardResult:
    state: FieldState
    iterates_equal_last: bool
    ratios: list
    differences: list
    alpha: float
    k: float
    rate_bound: float


def _picard_sweep(u0v, A, sigma, dW, prev):
    # prev: (M+1, B, size) previous iterate at every time slice
    out = np.empty_like(prev)
    out[0] = u0v
    for m in range(dW.shape[0]):
        out[m + 1] = A.apply(out[m] + sigma(prev[m]) * dW[m])
    return out


def picard_solve(
    u0: FieldState,
    t: float,
    cfg: SolverConfig,
    sigma: SigmaFunction,
    factor: NoiseFactor,
    increments: np.ndarray,
    iterations: int,
    k: float = 2.0,
    alpha: float | None = None,
    operator: RingOperator | None = None,
) -> PicardResult:
    """Picard iteration on the discrete mild equation with the noise held fixed.

    ``increments`` has shape ``(steps, replicas, size)``; replicas approximate the
    expectation in the weighted norm.  The default weight is alpha = 8 L^2 h_up k, for which
    the contraction bound L sqrt(2 h_up k / alpha) equals 1/2.
    """
    cfg.check_time(t)
    A = transition_operator(u0.grid, cfg) if operator is None else operator
    dW = np.asarray(increments, dtype=float)
    if dW.ndim == 2:
        dW = dW[:, None, :]
    M, B, _ = dW.shape
    if M != cfg.steps:
        raise ValueError("noise realisation does not match the number of steps")
    hup = factor.kernel.h_up
    L = sigma.lipschitz
    if alpha is None:
        alpha = 8 * L * L * hup * k if L > 0 else 1.0
    bound = L * math.sqrt(2 * hup * k / alpha)
    times = cfg.dt * np.arange(M + 1)
    u0v = np.broadcast_to(u0.values, (B, u0.grid.size)).astype(float)
    cur = np.broadcast_to(u0v, (M + 1, B, u0.grid.size)).copy()
    diffs, ratios = [], []
    same = False
    for _ in range(iterations):
        nxt = _picard_sweep(u0v, A, sigma, dW, cur)
        if not np.all(np.isfinite(nxt)):
            raise SimulationError("non-finite Picard iterate")
        diffs.append(picard_norm(nxt - cur, times, alpha, k))
        if len(diffs) >= 2:
            ratios.append(diffs[-1] / diffs[-2] if diffs[-2] > 0 else 0.0)
        same = bool(np.array_equal(nxt, cur))
        cur = nxt
    if ratios and ratios[-1] > 1 and not same:
        raise PicardDivergence(f"Picard ratios still above 1 after {iterations} iterations", ratios)
    vals = cur[-1][0] if (np.ndim(u0.values) == 1 and B == 1) else cur[-1]
    return PicardResult(FieldState(u0.grid, u0.time + t, vals), same, ratios, diffs, alpha, k, bound)


def _mask_entries(grid: SphereGrid, angle: float):
    cos_r = math.cos(angle) if angle < math.pi else -2.0
    return profile_entries(grid, lambda c: (np.asarray(c) >= cos_r - 1e-15).astype(float))


def truncated_field(
    beta: float,
    picard_n: int,
    t: float,
    cfg: SolverConfig,
    sigma: SigmaFunction,
    increments: np.ndarray,
    u0: FieldState,
    operator: RingOperator | None = None,
) -> np.ndarray:
    """Ball-truncated Picard iterate at time t, evaluated with every node as centre.

    The noise integral for centre x only sees nodes within geodesic distance sqrt(beta t)
    of x; the heat flow of the initial datum is not truncated.  Returns ``(replicas, size)``.
    """
    cfg.check_time(t)
    grid = u0.grid
    A = transition_operator(grid, cfg) if operator is None else operator
    dW = np.asarray(increments, dtype=float)
    if dW.ndim == 2:
        dW = dW[:, None, :]
    M, B, size = dW.shape
    angle = math.sqrt(beta * t) / grid.radius
    mask = _mask_entries(grid, angle)
    powers = [RingOperator.identity(grid)]
    for _ in range(M):
        powers.append(powers[-1] @ A)
    masked = [None] + [
        RingOperator.from_entries(grid, P.entries().combine(mask, np.multiply)) for P in powers[1:]
    ]
    u0v = np.broadcast_to(u0.values, (B, size)).astype(float)
    flow = [u0v] + [P.apply(u0v) for P in powers[1:]]
    prev = np.broadcast_to(u0v, (M + 1, B, size))
    for level in range(1, picard_n + 1):
        last = level == picard_n
        forcing = [sigma(prev[i]) * dW[i] for i in range(M)]
        targets = [M] if last else range(1, M + 1)
        cur = np.empty((M + 1, B, size))
        cur[0] = u0v
        for m in targets:
            acc = flow[m].copy()
            for i in range(m):
                acc += masked[m - i].apply(forcing[i])
            cur[m] = acc
        prev = cur
    return prev[M]


def truncated_process(
    spec: TruncatedProcessSpec,
    grid: SphereGrid,
    sigma: SigmaFunction,
    increments: np.ndarray,
    cfg: SolverConfig,
    u0: FieldState | None = None,
    operator: RingOperator | None = None,
) -> np.ndarray:
    """Truncated process at ``spec.center`` (which must be a grid node), one value per replica."""
    idx = grid.nearest_node(spec.center)
    if geodesic_angle(grid.nodes[idx], spec.center) > 1e-9:
        raise ValueError("truncation centre must be a grid node")
    u0 = FieldState.constant(grid) if u0 is None else u0
    field = truncated_field(spec.beta, spec.picard_n, spec.time, cfg, sigma, increments, u0, operator)
    return field[:, idx]
