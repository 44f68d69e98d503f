"""Experiment configuration, batch commands and the discrete-vs-continuum comparison."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import rng
from .conformal import (DrivingFunction, SlitChain, curve_to_halfplane, extract_driving,
                        rect_map_for)
from .continuum_drift import (continuum_mass, hadamard_check, helmholtz_solve, initial_state,
                              massive_kernels, pq_fields, rect_grid, state_from_chain)
from .lattice import (GridDomain, build_rect_domain, domain_from_vertices, inner_ball,
                      survival_factor)
from .msle_sim import RectSpec, SimConfig, simulate
from .potential import (SolverSettings, boundary_ratio_spread, check_resolvent_identity,
                        green_matrix, hit_b_field, partition_ab, source_field, use_solver)
from .sampler import (DensityEvaluator, chain_log_probability, enumerate_det,
                      max_martingale_defect, sample_mlerw)

MIN_COMPARE = 500
SIM_STREAM_OFFSET = 1 << 32


class InsufficientSamples(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """``meshes`` are interior column counts; the spacing is ``width / (n + 1)``.

    ``masses`` are lattice masses; the simulated side uses the matching
    continuum mass.
    """

    width: float = 1.0
    height: float = 1.0
    a: str = "bottom-center"
    b: str = "top-center"
    domain_file: str | None = None
    meshes: tuple[int, ...] = (15,)
    masses: tuple[float, ...] = (0.0,)
    samples: int = 2000
    seed: int = 0
    radius: float = 0.0
    times: tuple[float, ...] = (0.25, 0.5, 1.0)
    sim_dt: float = 2e-3
    sim_mesh: int = 31
    cadence: int = 5
    out: str = "out"

    def __post_init__(self):
        for name in ("meshes", "masses", "times"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for n in self.meshes:
            d = self.spacing(n)
            for m in self.masses:
                if m < 0 or m * d > 0.5:
                    raise ValueError(f"mass {m} with mesh spacing {d} violates m*delta <= 1/2")
        if self.samples < 1:
            raise ValueError("samples must be positive")

    def spacing(self, n: int) -> float:
        return self.width / (n + 1)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
        return cls.from_dict(data)

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        """Hash of everything except the output location."""
        d = self.as_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self, **extra) -> dict:
        return {"config_hash": self.digest,
                "config": json.dumps(self.as_dict(), sort_keys=True), **extra}

    def domain(self, n: int) -> GridDomain:
        d = self.spacing(n)
        if self.domain_file:
            return load_domain(self.domain_file)
        rows = round(self.height / d) - 1
        return build_rect_domain(n, rows, d, self.a, self.b)

    def rect(self) -> RectSpec:
        return RectSpec(self.width, self.height, self.a, self.b)

    def sim_config(self, lattice_m: float, n: int, seed: int | None = None) -> SimConfig:
        return SimConfig(mass=continuum_mass(lattice_m, self.spacing(n)), dt=self.sim_dt,
                         horizon=max(self.times), radius=self.radius, mesh=self.sim_mesh,
                         cadence=self.cadence, seed=self.seed if seed is None else seed)


def load_domain(path: str | Path) -> GridDomain:
    data = json.loads(Path(path).read_text())
    return domain_from_vertices(data["mesh"], data["interior"], data["a"], data["b"], data["origin"])


# ---------------------------------------------------------------------------
# discrete and simulated driving functions

def truncate_at_ball(dom: GridDomain, curve, radius: float):
    """Curve up to (excluding) its first vertex inside ``inner_ball(b, radius)``."""
    if radius <= 0:
        return curve
    ball = inner_ball(dom, radius)
    for k, v in enumerate(curve):
        if v in ball:
            return curve[:k]
    return curve


def curve_driving(dom: GridDomain, curve, cap_limit: float = math.inf,
                  radius: float = 0.0, rmap=None) -> DrivingFunction:
    rmap = rect_map_for(dom) if rmap is None else rmap
    pts = curve_to_halfplane(dom, rmap, truncate_at_ball(dom, curve, radius))
    driving, _ = extract_driving(pts, cap_limit)
    return driving


def discrete_drivings(dom: GridDomain, m: float, count: int, seed: int,
                      cap_limit: float = math.inf, radius: float = 0.0,
                      first_stream: int = 0) -> list[DrivingFunction]:
    """Driving functions of ``count`` mLERW samples, stream ``first_stream + i`` each."""
    rmap = rect_map_for(dom)
    out = []
    for i in range(count):
        curve = sample_mlerw(dom, m, rng.bit_generator(seed, first_stream + i))
        out.append(curve_driving(dom, curve, cap_limit, radius, rmap))
    return out


def simulated_drivings(config: SimConfig, spec: RectSpec, count: int,
                       first_stream: int = SIM_STREAM_OFFSET):
    grid = config.grid(spec)
    return [simulate(config, spec, first_stream + i, grid) for i in range(count)]


def stopped_value(driving: DrivingFunction, t: float) -> float:
    """``xi`` at capacity ``t`` or at the stopping capacity, whichever is first."""
    if len(driving) == 0:
        return 0.0
    return driving.value_at(min(t, driving.total_capacity))


def marginals(drivings: Sequence[DrivingFunction], times: Sequence[float]) -> np.ndarray:
    return np.array([[stopped_value(d, t) for t in times] for d in drivings])


# ---------------------------------------------------------------------------
# statistics

@dataclass(frozen=True)
class Comparison:
    n_x: int
    n_y: int
    ks_stat: float
    ks_p: float
    welch_p: float
    mean_diff: float
    pooled_se: float

    @property
    def mean_within(self) -> float:
        """``|mean difference|`` in units of the pooled standard error."""
        return abs(self.mean_diff) / self.pooled_se


def _require(n: int) -> None:
    if n < MIN_COMPARE:
        raise InsufficientSamples(f"need at least {MIN_COMPARE} samples per side, got {n}")


def compare_samples(x, y) -> Comparison:
    x, y = np.asarray(x, float), np.asarray(y, float)
    _require(min(x.size, y.size))
    ks = stats.ks_2samp(x, y)
    welch = stats.ttest_ind(x, y, equal_var=False)
    se = math.sqrt(x.var(ddof=1) / x.size + y.var(ddof=1) / y.size)
    return Comparison(x.size, y.size, float(ks.statistic), float(ks.pvalue), float(welch.pvalue),
                      float(x.mean() - y.mean()), se)


def ks_against_brownian(x, t: float) -> float:
    """p-value of ``x`` against ``N(0, 2t)``."""
    x = np.asarray(x, float)
    _require(x.size)
    return float(stats.kstest(x, "norm", args=(0.0, math.sqrt(2.0 * t))).pvalue)


# ---------------------------------------------------------------------------
# validation suite

@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual)) and self.residual <= self.threshold

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name}: "
                f"residual {self.residual:.3e} (threshold {self.threshold:.1e})")


def random_domain(gen: np.random.Generator, max_side: int = 6) -> GridDomain:
    cols, rows = (int(x) for x in gen.integers(1, max_side + 1, size=2))
    sides = ["bottom", "top", "left", "right"]
    while True:
        a_side, b_side = gen.choice(sides, size=2)
        a = (str(a_side), int(gen.integers(1, (cols if a_side in ("bottom", "top") else rows) + 1)))
        b = (str(b_side), int(gen.integers(1, (cols if b_side in ("bottom", "top") else rows) + 1)))
        if a != b:
            break
    mesh = 1.0 / (max(cols, rows) + 1)
    return build_rect_domain(cols, rows, mesh, a, b)


def resolvent_residual(dom: GridDomain, m: float, gen: np.random.Generator) -> float:
    """Worst relative residual of the resolvent identity over all endpoint kinds."""
    verts = dom.vertices
    w = verts[int(gen.integers(len(verts)))]
    z = verts[int(gen.integers(len(verts)))]
    worst = 0.0
    for ww, zz in ((w, z), ("a", z), (w, "b"), ("a", "b")):
        g0 = green_matrix(dom, 0.0)
        scale = max(1.0, float(np.abs(g0).max()))
        worst = max(worst, check_resolvent_identity(dom, m, ww, zz) / scale)
    return worst


def symmetry_residual(dom: GridDomain, m: float) -> float:
    g = green_matrix(dom, m)
    return float(np.abs(g - g.T).max())


def density_formula_residual(dom: GridDomain, m: float) -> float:
    """Growth-chain against determinant formula, per curve, on a tiny domain."""
    law = enumerate_det(dom, m)
    return max(abs(math.exp(chain_log_probability(dom, m, c)) - p) for c, p in law.items())


def domain_radius(dom: GridDomain) -> float:
    """Radius of the disc around the bounding-box centre that contains the domain."""
    outer = np.array([out for out, _ in dom.boundary_edges], dtype=float)
    span = outer.max(axis=0) - outer.min(axis=0)
    return 0.5 * dom.mesh * float(np.hypot(*span))


def density_constant(dom: GridDomain, m: float, radius: float | None = None) -> float:
    """Smallest ``c`` bounding both density estimates on ``dom`` by ``c m^2 R^2``.

    ``log D <= log(Z/Z_m)`` for every curve, and the classical mean of
    ``log D`` is at least ``log(q) E[#steps]`` for the conditioned walk; both
    right-hand sides are computed exactly.
    """
    if m == 0:
        return 0.0
    r = domain_radius(dom) if radius is None else radius
    src = source_field(dom, 0.0).values
    hit = hit_b_field(dom, 0.0).values
    z0 = partition_ab(dom, 0.0)
    steps = float(src @ hit) / z0 - 1.0
    upper = math.log(z0 / partition_ab(dom, m))
    lower = -math.log(survival_factor(m, dom.mesh)) * steps
    return max(upper, lower) / (m * r) ** 2


def boundary_ratio_decay(depths=(1, 2, 3), n: int = 31) -> float:
    """Worst ratio of consecutive boundary-ratio spreads over shrinking balls near b.

    Two positive harmonic fields vanishing near b (boundary data on the
    bottom-left and bottom-right thirds) are compared in balls of radius
    ``2^-k r``; a value below 1 means the spread shrinks with depth.
    """
    dom = build_rect_domain(n, n, 1.0 / (n + 1))
    cols = n
    left = {k: 1.0 for k, (out, _) in enumerate(dom.boundary_edges)
            if out[1] == 0 and out[0] <= cols // 3}
    right = {k: 1.0 for k, (out, _) in enumerate(dom.boundary_edges)
             if out[1] == 0 and out[0] > 2 * cols // 3}
    r = 0.5
    spreads = [boundary_ratio_spread(dom, left, right, inner_ball(dom, r / 2 ** k)) for k in depths]
    return max(b / a for a, b in zip(spreads, spreads[1:]))


def continuum_resolvent_residual(M: float, n: int = 31) -> float:
    """``P - P_m = M^2 H_0(P_m)`` on a mesh, relative to ``max P``."""
    grid = rect_grid(n, n, 1.0 / (n + 1), "bottom-center", "right-center")
    st = initial_state(grid)
    p, _ = pq_fields(st)
    mk = massive_kernels(st, M)
    rhs = helmholtz_solve(st, 0.0, mk.P_m).values
    return float(np.abs(p.values - mk.P_m - M * M * rhs).max() / np.abs(p.values).max())


def hadamard_residuals(M: float, n: int = 63, eps: float = 1e-4) -> tuple[float, float]:
    grid = rect_grid(n, n, 1.0 / (n + 1), "bottom-center", "top-center")
    st = state_from_chain(grid, SlitChain(np.array([0.15]), np.array([2 * math.sqrt(0.02)])))
    res = hadamard_check(st, eps, complex(0.3, 0.6), complex(0.7, 0.4), M)
    return res.classical, res.massive


def cmd_validate(seeds: Sequence[int] = range(1, 11), masses: Sequence[float] = (0.0, 0.1, 0.3, 0.5),
                 negative_control: bool = False, continuum_mass_value: float = 2 * math.sqrt(2),
                 ) -> list[Check]:
    """Exact identities and continuum checks; every check reports its residual.

    ``masses`` are values of ``m * delta``.  ``negative_control`` swaps in a
    loose iterative solver, which must make the resolvent check fail.
    """
    settings = (SolverSettings(method="cg", rtol=1e-3, check=False) if negative_control
                else SolverSettings())
    checks: list[Check] = []
    with use_solver(settings):
        res = sym = 0.0
        for seed in seeds:
            gen = rng.generator(seed, 0)
            for md in masses:
                dom = random_domain(gen)
                m = md / dom.mesh
                res = max(res, resolvent_residual(dom, m, gen))
                sym = max(sym, symmetry_residual(dom, m))
        checks.append(Check("resolvent identity", res, 1e-9))
        checks.append(Check("green symmetry", sym, 1e-10))
    if negative_control:
        return checks

    dens = mart = 0.0
    for n in (2, 3):
        for md in (0.0, 0.3):
            dom = build_rect_domain(n, n, 1.0)
            dens = max(dens, density_formula_residual(dom, md))
            mart = max(mart, max_martingale_defect(dom, md))
    checks.append(Check("path probability formula", dens, 1e-10))
    checks.append(Check("martingale one-step", mart, 1e-9))
    checks.append(Check("boundary ratio decay", boundary_ratio_decay(), 1.0 - 1e-3))
    m_cont = continuum_mass_value if any(masses) else 0.0
    checks.append(Check("continuum resolvent", continuum_resolvent_residual(m_cont), 1e-6))
    cl, ms = hadamard_residuals(m_cont)
    checks.append(Check("hadamard", cl, 1e-2))
    checks.append(Check("massive hadamard", ms, 1e-2))
    return checks


# ---------------------------------------------------------------------------
# batch commands

def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _header_lines(header: dict) -> str:
    return "".join(f"# {k}: {v}\n" for k, v in header.items())


def cmd_sample(config: ExperimentConfig, seed: int | None = None,
               out: str | Path | None = None) -> list[Path]:
    """One JSON-lines file per (mesh, mass): curve, stream and log density per record."""
    seed = config.seed if seed is None else seed
    out = Path(config.out if out is None else out)
    paths = []
    for n in config.meshes:
        dom = config.domain(n)
        for m in config.masses:
            dens = DensityEvaluator(dom, m)
            lines = [json.dumps(config.header(seed=seed, mesh=n, m=m), sort_keys=True)]
            for i in range(config.samples):
                curve = sample_mlerw(dom, m, rng.bit_generator(seed, i))
                rec = {"seed": seed, "stream": i, "m": m, "log_density": dens(curve),
                       "curve": [list(v) for v in curve]}
                lines.append(json.dumps(rec))
            paths.append(_write(out / f"samples_n{n}_m{m:g}.jsonl", "\n".join(lines) + "\n"))
    return paths


def drivings_csv(drivings: Sequence[DrivingFunction], header: dict) -> str:
    rows = [_header_lines(header), "sample,k,dt,xi,t\n"]
    for s, d in enumerate(drivings):
        for k, (dt, xi, t) in enumerate(zip(d.dt, d.xi, d.times)):
            rows.append(f"{s},{k},{float(dt)!r},{float(xi)!r},{float(t)!r}\n")
    return "".join(rows)


def read_drivings_csv(text: str) -> list[DrivingFunction]:
    groups: dict[int, tuple[list, list]] = {}
    for line in text.splitlines():
        if not line or line.startswith(("#", "sample")):
            continue
        s, _, dt, xi, _ = line.split(",")
        g = groups.setdefault(int(s), ([], []))
        g[0].append(float(dt))
        g[1].append(float(xi))
    return [DrivingFunction(*groups[s]) for s in sorted(groups)]


def cmd_drive(config: ExperimentConfig, seed: int | None = None, out: str | Path | None = None,
              curves: Sequence | None = None) -> list[Path]:
    """Driving functions of sampled (or given) lattice curves, up to the horizon."""
    seed = config.seed if seed is None else seed
    out = Path(config.out if out is None else out)
    cap = max(config.times)
    paths = []
    for n in config.meshes:
        dom = config.domain(n)
        rmap = rect_map_for(dom)
        for m in config.masses:
            if curves is not None:
                drv = [curve_driving(dom, c, cap, config.radius, rmap) for c in curves]
            else:
                drv = discrete_drivings(dom, m, config.samples, seed, cap, config.radius)
            text = drivings_csv(drv, config.header(seed=seed, mesh=n, m=m))
            paths.append(_write(out / f"driving_n{n}_m{m:g}.csv", text))
            if curves is not None:
                break
    return paths


def cmd_simulate(config: ExperimentConfig, seed: int | None = None,
                 out: str | Path | None = None) -> list[Path]:
    """Forward simulations per (mesh, mass): driving CSV and drift reports CSV."""
    seed = config.seed if seed is None else seed
    out = Path(config.out if out is None else out)
    paths = []
    for n in config.meshes:
        for m in config.masses:
            sc = config.sim_config(m, n, seed)
            sims = simulated_drivings(sc, config.rect(), config.samples)
            header = config.header(seed=seed, mesh=n, m=m, continuum_mass=sc.mass)
            paths.append(_write(out / f"sim_n{n}_m{m:g}.csv",
                                drivings_csv([s.driving for s in sims], header)))
            rows = [_header_lines(header), "sample,t,N_m,lambda,int_P,int_PPm,int_QK\n"]
            for s, sim in enumerate(sims):
                for rep in sim.reports:
                    rows.append(f"{s}," + ",".join(repr(float(x)) for x in rep.row()) + "\n")
            paths.append(_write(out / f"drift_n{n}_m{m:g}.csv", "".join(rows)))
    return paths


@dataclass
class CompareReport:
    config_hash: str
    rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.rows)

    def to_json(self) -> str:
        return json.dumps({"config_hash": self.config_hash, "passed": self.passed,
                           "rows": self.rows}, indent=2, sort_keys=True)


def compare_marginals(xd: np.ndarray, xs: np.ndarray, times: Sequence[float], m: float,
                      sim_drift: np.ndarray | None = None) -> list[dict]:
    """Per-time statistics; the null checks follow the acceptance thresholds."""
    rows = []
    for j, t in enumerate(times):
        c = compare_samples(xd[:, j], xs[:, j])
        row = {"t": t, "m": m, "ks_p": c.ks_p, "welch_p": c.welch_p, "mean_discrete":
               float(xd[:, j].mean()), "mean_sim": float(xs[:, j].mean()),
               "mean_diff": c.mean_diff, "pooled_se": c.pooled_se,
               "var_discrete": float(xd[:, j].var(ddof=1))}
        ok = c.ks_p >= 0.01 and c.mean_within <= 3.0
        if m == 0:
            row["ks_brownian_p"] = ks_against_brownian(xd[:, j], t)
            ok = ok and row["ks_brownian_p"] >= 0.01
        if sim_drift is not None:
            row["drift_sim"] = float(sim_drift[:, j].mean())
        row["passed"] = bool(ok)
        rows.append(row)
    return rows


def drift_integrals(sims, times: Sequence[float]) -> np.ndarray:
    """``2 int_0^t lambda ds`` per trajectory at each time."""
    out = np.zeros((len(sims), len(times)))
    for i, s in enumerate(sims):
        cum = np.concatenate([[0.0], np.cumsum(2.0 * s.lam * s.driving.dt[: s.lam.size])])
        tt = np.concatenate([[0.0], s.driving.times[: s.lam.size]])
        out[i] = np.interp(times, tt, cum)
    return out


def cmd_compare(config: ExperimentConfig, seed: int | None = None,
                out: str | Path | None = None) -> CompareReport:
    seed = config.seed if seed is None else seed
    if config.samples < MIN_COMPARE:
        raise InsufficientSamples(f"need at least {MIN_COMPARE} samples per side, got {config.samples}")
    report = CompareReport(config.digest)
    cap = max(config.times)
    for n in config.meshes:
        dom = config.domain(n)
        for m in config.masses:
            xd = marginals(discrete_drivings(dom, m, config.samples, seed, cap, config.radius),
                           config.times)
            sc = config.sim_config(m, n, seed)
            sims = simulated_drivings(sc, config.rect(), config.samples)
            xs = marginals([s.driving for s in sims], config.times)
            for row in compare_marginals(xd, xs, config.times, m, drift_integrals(sims, config.times)):
                row["mesh"] = n
                report.rows.append(row)
    if out is not None or config.out:
        _write(Path(config.out if out is None else out) / "compare.json", report.to_json() + "\n")
    return report


__all__ = [
    "Check", "CompareReport", "Comparison", "ExperimentConfig", "InsufficientSamples",
    "MIN_COMPARE", "cmd_compare", "cmd_drive", "cmd_sample", "cmd_simulate", "cmd_validate",
    "compare_marginals", "compare_samples", "curve_driving", "discrete_drivings", "drift_integrals",
    "density_constant", "domain_radius", "drivings_csv", "ks_against_brownian", "load_domain", "marginals", "random_domain",
    "read_drivings_csv", "resolvent_residual", "simulated_drivings", "stopped_value",
    "symmetry_residual", "truncate_at_ball",
]
