"""Euler-Maruyama simulation of the massive SLE(2) driving process.

``xi_{k+1} = xi_k + sqrt(2 dt) Z_k + 2 lambda_k dt`` where ``lambda_k`` is the
drift of the slit rectangle generated so far; each step appends a vertical
slit of capacity ``dt`` at ``xi_{k+1}``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng
from .conformal import DrivingFunction
from .continuum_drift import (DriftReport, MeshGrid, MeshTracker, drift_lambda, massive_kernels,
                              rect_grid)
from .potential import NumericalFailure

SQRT2 = math.sqrt(2.0)


class SimulationAborted(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"simulation aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason


@dataclass(frozen=True)
class RectSpec:
    """Rectangle ``(0, width) x (0, height)`` with marked boundary points.

    ``a``/``b`` are side locators such as ``"bottom-center"`` or
    ``"right-0.25"`` (fraction along the side), or complex points.
    """

    width: float = 1.0
    height: float = 1.0
    a: str | complex = "bottom-center"
    b: str | complex = "top-center"

    def grid(self, cols: int) -> MeshGrid:
        h = self.width / (cols + 1)
        rows = round(self.height / h) - 1
        if abs((rows + 1) * h - self.height) > 1e-9 * self.height:
            raise ValueError(f"{cols} columns do not give a square mesh on {self.width}x{self.height}")
        return rect_grid(cols, rows, h, self.a, self.b)


@dataclass(frozen=True)
class SimConfig:
    """``mass`` is the continuum mass (five-point Helmholtz normalisation)."""

    mass: float = 0.0
    dt: float = 1e-3
    horizon: float = 1.0
    radius: float = 0.0
    mesh: int = 95
    cadence: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.cadence < 1:
            raise ValueError("cadence must be at least 1")
        if self.mass < 0:
            raise ValueError("mass must be nonnegative")

    def grid(self, spec: RectSpec) -> MeshGrid:
        grid = spec.grid(self.mesh)
        if self.mass * grid.h > 0.5:
            raise ValueError(f"mass {self.mass} too large for mesh spacing {grid.h}")
        return grid

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimResult:
    driving: DrivingFunction
    tips: np.ndarray
    reports: list[DriftReport] = field(default_factory=list)
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stopped: str = "capacity"

    @property
    def lambda_square_integral(self) -> float:
        return float(np.sum(self.lam ** 2 * self.driving.dt[: self.lam.size]))


def brownian_driving(seed: int, steps: int, dt: float, stream: int = 0) -> np.ndarray:
    """``sqrt(2) B`` at the step times, drawn from the same stream as :func:`simulate`."""
    gen = rng.generator(seed, stream)
    z = np.array([gen.standard_normal() for _ in range(steps)])
    return np.cumsum((SQRT2 * math.sqrt(dt)) * z)


def simulate(config: SimConfig, spec: RectSpec = RectSpec(), stream: int = 0,
             grid: MeshGrid | None = None, observer=None) -> SimResult:
    """One trajectory, stopped at capacity ``horizon`` or near the target.

    ``observer(k, tracker)`` is called after step ``k`` (and with ``k = -1``
    before the first step).
    """
    grid = config.grid(spec) if grid is None else grid
    gen = rng.generator(config.seed, stream)
    tracker = MeshTracker(grid, track_mesh=config.mass > 0)
    b = complex(grid.rmap.b)
    steps = int(round(config.horizon / config.dt))
    xi = 0.0
    lam = 0.0
    dts: list[float] = []
    xis: list[float] = []
    lams: list[float] = []
    reports: list[DriftReport] = []
    stopped = "capacity"
    if observer is not None:
        observer(-1, tracker)
    for k in range(steps):
        if config.mass > 0 and k % config.cadence == 0:
            try:
                rep = drift_lambda(tracker.state(), config.mass)
            except NumericalFailure as exc:
                raise SimulationAborted(k, str(exc)) from exc
            reports.append(rep)
            lam = rep.lam
        try:
            taken = [_step(tracker, gen, xi, lam, config.dt, config.mass > 0)]
        except NumericalFailure:
            taken = []
            try:
                for _ in range(2):
                    taken.append(_step(tracker, gen, xi, lam, config.dt / 2, config.mass > 0))
                    xi = taken[-1][1]
            except NumericalFailure as exc:
                raise SimulationAborted(k, f"degenerate step: {exc}") from exc
        for d, x in taken:
            dts.append(d)
            xis.append(x)
            lams.append(lam)
        xi = xis[-1]
        if observer is not None:
            observer(k, tracker)
        if config.radius > 0 and abs(tracker.tips[-1] - b) < config.radius:
            stopped = "radius"
            break
    return SimResult(DrivingFunction(dts, xis), np.array(tracker.tips), reports,
                     np.array(lams), stopped)


def _step(tracker: MeshTracker, gen, xi: float, lam: float, dt: float, drift: bool):
    incr = (SQRT2 * math.sqrt(dt)) * gen.standard_normal()
    if drift:
        incr += 2.0 * lam * dt
    new = xi + incr
    tracker.advance(new, dt)
    return dt, new


def drift_profile(config: SimConfig, driving: DrivingFunction, spec: RectSpec = RectSpec(),
                  grid: MeshGrid | None = None) -> list[DriftReport]:
    """Drift along a given driving function, evaluated every ``cadence`` steps.

    Report ``j`` describes the state before step ``j * cadence``.
    """
    grid = config.grid(spec) if grid is None else grid
    tracker = MeshTracker(grid, track_mesh=True)
    out = []
    for k, (d, x) in enumerate(zip(driving.dt.tolist(), driving.xi.tolist())):
        if k % config.cadence == 0:
            out.append(drift_lambda(tracker.state(), config.mass))
        tracker.advance(x, d)
    return out


def martingale_probe(tracker: MeshTracker, mass: float, cells) -> np.ndarray:
    """``P_m(v) N`` at mesh cells ``v`` (the massive observable normalised at the target)."""
    mk = massive_kernels(tracker.state(), mass)
    return np.array([mk.P_m[c] * mk.N for c in cells])


def martingale_increments(config: SimConfig, spec: RectSpec, times, points,
                          streams) -> np.ndarray:
    """One-step increments of ``P_m(v) N`` at capacity times ``times``.

    Returns an array ``[stream, time, point]``; ``points`` are physical
    positions. Each trajectory is simulated just past the last time.
    """
    grid = config.grid(spec)
    cells = [grid.index_of(complex(p)) for p in points]
    marks = {int(round(t / config.dt)) - 1: j for j, t in enumerate(times)}
    horizon = (max(marks) + 2) * config.dt
    cfg = SimConfig(**{**config.as_dict(), "horizon": horizon})
    out = np.zeros((len(streams), len(times), len(cells)))
    for s, stream in enumerate(streams):
        before: dict[int, np.ndarray] = {}

        def observe(k, tracker):
            if k in marks:
                before[marks[k]] = martingale_probe(tracker, cfg.mass, cells)
            if k - 1 in marks:
                j = marks[k - 1]
                out[s, j] = martingale_probe(tracker, cfg.mass, cells) - before[j]

        simulate(cfg, spec, stream, grid, observe)
    return out


__all__ = [
    "RectSpec", "SimConfig", "SimResult", "SimulationAborted", "brownian_driving",
    "drift_profile", "martingale_increments", "martingale_probe", "simulate",
]
