"""Run configuration, single runs with manifests, and convergence ladders."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import stats as sstats

from .cq import CQGrid, radau_tableau
from .errors import ConfigError, DispcqError
from .materials import MaterialPair
from .maxwell import AssemblyPlan, QuadratureOptions
from .mesh import SurfaceMesh, icosphere, load_mesh, two_cubes
from .quadrature import chart, triangle_rule
from .rt import RTSpace, interpolation_error, rt_interpolate
from .scattering import (
    DensityHistory,
    IncidentWave,
    ScatterRun,
    plane_grid,
    reconstruct_fields,
    slice_points,
    solve_scattering,
)

log = logging.getLogger(__name__)

# Defaults reproduce the sphere experiment at desk scale.
DEFAULTS = {
    "geometry": {"kind": "sphere", "level": 1},
    "materials": {
        "interior": {
            "epsilon": {"kind": "fractional", "base": 0.5, "beta": 1.0, "gamma": 2.0, "eta": 0.5},
            "mu": {"kind": "vacuum", "base": 0.5},
        },
        "exterior": {"epsilon": {"kind": "vacuum"}, "mu": {"kind": "vacuum"}},
    },
    "rk": {"stages": 2},
    "time": {"T": 8.0, "N": 32},
    "contour": {"rho": None},
    "incident": {
        "p": [-0.7071067811865476, 0.0, -0.7071067811865476],
        "d": [-0.7071067811865476, 0.0, 0.7071067811865476],
        "c": 10.0,
        "t0": 4.0,
        "amplitude": 1.0,
    },
    "targets": {"points": [[0.0, 0.0, 2.0]], "plane": None},
    "quadrature": {},
    "outputs": {"fields": True, "densities": True, "slice": False},
    "seed": 0,
}

_GEOMETRY_KEYS = {
    "sphere": {"kind", "level", "radius"},
    "two_cubes": {"kind", "gap", "divisions"},
    "file": {"kind", "path", "format"},
}
_PLANE_KEYS = {"axis", "value", "extent", "n", "min_distance"}


def _merge(base, over, path=""):
    """Deep merge of ``over`` into ``base``; unknown keys raise ConfigError naming the key."""
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("materials", "geometry", "quadrature"):
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    """Validated configuration; ``data`` is the fully defaulted dictionary."""

    data: dict

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        if d is not None and not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        cfg = cls(_merge(DEFAULTS, d))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        return cls.from_dict(data or {})

    def validate(self) -> None:
        d = self.data
        geo = d["geometry"]
        kind = geo.get("kind")
        if kind not in _GEOMETRY_KEYS:
            raise ConfigError(f"geometry.kind must be one of {sorted(_GEOMETRY_KEYS)}, got {kind!r}")
        extra = set(geo) - _GEOMETRY_KEYS[kind]
        if extra:
            raise ConfigError(f"unknown config key 'geometry.{sorted(extra)[0]}' for kind {kind}")
        for side in ("interior", "exterior"):
            block = d["materials"].get(side, {})
            bad = set(block) - {"epsilon", "mu"}
            if bad:
                raise ConfigError(f"unknown config key 'materials.{side}.{sorted(bad)[0]}'")
        bad = set(d["materials"]) - {"interior", "exterior"}
        if bad:
            raise ConfigError(f"unknown config key 'materials.{sorted(bad)[0]}'")
        if int(d["rk"]["stages"]) not in (1, 2, 3):
            raise ConfigError("rk.stages must be 1, 2 or 3")
        if not (float(d["time"]["T"]) > 0 and int(d["time"]["N"]) >= 1):
            raise ConfigError("time.T must be positive and time.N >= 1")
        plane = d["targets"].get("plane")
        if plane is not None:
            bad = set(plane) - _PLANE_KEYS
            if bad:
                raise ConfigError(f"unknown config key 'targets.plane.{sorted(bad)[0]}'")
        # building the objects runs their own validation
        self.materials()
        self.wave()
        self.quadrature()

    # ---- builders -----------------------------------------------------------
    def mesh(self) -> SurfaceMesh:
        g = self.data["geometry"]
        if g["kind"] == "sphere":
            return icosphere(int(g.get("level", 1)), float(g.get("radius", 1.0)))
        if g["kind"] == "two_cubes":
            return two_cubes(float(g.get("gap", 0.5)), int(g.get("divisions", 1)))
        return load_mesh(g["path"], g.get("format"))

    def materials(self):
        m = self.data["materials"]
        out = []
        for side in ("interior", "exterior"):
            try:
                out.append(MaterialPair.from_dict(m.get(side, {}), side))
            except (ConfigError, TypeError, ValueError) as exc:
                raise ConfigError(f"materials.{side}: {exc}") from None
        return tuple(out)

    def wave(self) -> IncidentWave:
        return IncidentWave.from_dict(self.data["incident"])

    def quadrature(self) -> QuadratureOptions:
        return QuadratureOptions.from_dict(self.data["quadrature"])

    def grid(self) -> CQGrid:
        t = self.data["time"]
        return CQGrid(float(t["T"]), int(t["N"]), self.data["contour"].get("rho"))

    def scatter_run(self, mesh: SurfaceMesh | None = None) -> ScatterRun:
        interior, exterior = self.materials()
        return ScatterRun(
            RTSpace(mesh if mesh is not None else self.mesh()), interior, exterior,
            radau_tableau(int(self.data["rk"]["stages"])), self.grid(), self.wave(), self.quadrature(),
        )

    def target_points(self) -> np.ndarray:
        pts = self.data["targets"].get("points") or []
        return np.asarray(pts, float).reshape(-1, 3)

    def plane_points(self, mesh: SurfaceMesh) -> np.ndarray | None:
        plane = self.data["targets"].get("plane")
        if not plane:
            return None
        pts = plane_grid(plane.get("axis", "y"), float(plane.get("value", 0.5)),
                         plane.get("extent", ((-2.0, 2.0), (-2.0, 2.0))), plane.get("n", (21, 21)))
        return slice_points(mesh, pts, plane.get("min_distance"))

    # ---- canonical form -----------------------------------------------------
    def canonical(self) -> str:
        """Sorted-key YAML of the defaulted config; its hash identifies the run."""
        return yaml.safe_dump(_plain(self.data), sort_keys=True, default_flow_style=False)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def with_updates(self, **paths) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``with_updates(**{"time.N": 64})``."""
        data = copy.deepcopy(self.data)
        for path, value in paths.items():
            node = data
            keys = path.split(".")
            for k in keys[:-1]:
                node = node.setdefault(k, {})
            node[keys[-1]] = value
        return RunConfig.from_dict(data)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# ---- single run -------------------------------------------------------------------


@dataclass
class RunResult:
    config: RunConfig
    history: DensityHistory
    fields: object = None
    slice: object = None
    manifest: dict = field(default_factory=dict)


def run(config: RunConfig, outdir=None, plan: AssemblyPlan | None = None) -> RunResult:
    """Solve, reconstruct and (optionally) write all declared outputs plus a manifest."""
    stage = "mesh"
    timings = {}
    t_start = time.perf_counter()
    try:
        mesh = config.mesh()
        stage = "solve"
        sr = config.scatter_run(mesh)
        t0 = time.perf_counter()
        hist = solve_scattering(sr, plan=plan)
        timings["solve_s"] = time.perf_counter() - t0
        stage = "fields"
        fields = None
        pts = config.target_points()
        t0 = time.perf_counter()
        if len(pts):
            fields = reconstruct_fields(hist, pts, sr.interior, sr.exterior)
        sl = None
        if config.data["outputs"].get("slice"):
            ppts = config.plane_points(mesh)
            if ppts is not None and len(ppts):
                sl = reconstruct_fields(hist, ppts, sr.interior, sr.exterior)
        timings["fields_s"] = time.perf_counter() - t0
    except DispcqError as exc:
        raise type(exc)(f"[{stage}] {exc}") from exc
    timings["total_s"] = time.perf_counter() - t_start
    manifest = {
        "config_hash": config.hash,
        "config": _plain(config.data),
        "mesh": {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in mesh.info().items()},
        "dofs": sr.space.dim,
        "unknowns": sr.n_unknowns,
        "tau": sr.grid.tau,
        "N": sr.grid.N,
        "rho": hist.stats.get("rho"),
        "nodes_evaluated": hist.stats.get("nodes_evaluated"),
        "solver": [{**e, "s": [e["s"].real, e["s"].imag]} for e in hist.stats.get("solves", [])],
        "timings": timings,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    result = RunResult(config, hist, fields, sl, manifest)
    if outdir is not None:
        write_outputs(result, outdir)
    return result


def write_outputs(result: RunResult, outdir) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    sel = result.config.data["outputs"]
    if sel.get("fields") and result.fields is not None:
        result.fields.write_csv(out / "fields.csv")
        written.append(out / "fields.csv")
    if sel.get("densities"):
        result.history.dump(out / "densities")
        written += [out / "densities.bin", out / "densities.csv"]
    if sel.get("slice") and result.slice is not None:
        result.slice.write_csv(out / "slice.csv")
        written.append(out / "slice.csv")
    (out / "config.yaml").write_text(result.config.canonical())
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True))
    written += [out / "config.yaml", out / "manifest.json"]
    return written


# ---- convergence ------------------------------------------------------------------


@dataclass
class OrderFit:
    slope: float
    stderr: float
    n_points: int

    def __str__(self):
        return f"{self.slope:.3f} +/- {self.stderr:.3f} ({self.n_points} pts)"


def fit_order(rows, last: int | None = None) -> OrderFit:
    """Least-squares slope of log2(error) against log2(step) over ``rows`` of (step, error)."""
    rows = [(float(a), float(b)) for a, b in rows]
    if last is not None:
        rows = rows[-last:]
    if len(rows) < 2:
        raise ValueError("fit_order needs at least two rows")
    if not all(0 < r[1] < np.inf and r[0] > 0 for r in rows):
        raise ValueError("steps and errors must be positive and finite")
    x = np.log2([r[0] for r in rows])
    y = np.log2([r[1] for r in rows])
    if len(rows) == 2:
        return OrderFit(float((y[1] - y[0]) / (x[1] - x[0])), 0.0, 2)
    res = sstats.linregress(x, y)
    return OrderFit(float(res.slope), float(res.stderr), len(rows))


@dataclass
class ConvergenceReport:
    kind: str
    reference: str
    columns: list
    rows: list
    slopes: dict
    monotone: dict

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for r in self.rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in r) + "\n")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "reference": self.reference,
            "columns": self.columns,
            "rows": [list(r) for r in self.rows],
            "slopes": {k: {"slope": v.slope, "stderr": v.stderr, "points": v.n_points} for k, v in self.slopes.items()},
            "monotone": self.monotone,
        }


def _monotone(vals):
    return bool(np.all(np.diff(vals) < 0))


def converge_time(config: RunConfig, N_list, N_ref: int, point=None, fit_last: int = 3) -> ConvergenceReport:
    """Errors against a finer-step self-reference on one mesh.

    (a) max over the coarse time grid of |E| + |H| error at an off-surface point,
    (b) density error at the final time in L2 and graph norms.
    """
    N_list = sorted(int(n) for n in N_list)
    if any(N_ref % n for n in N_list):
        raise ConfigError("N_ref must be a multiple of every ladder N")
    mesh = config.mesh()
    pt = np.asarray(point if point is not None else config.target_points()[0], float).reshape(1, 3)
    space = RTSpace(mesh)
    plan = AssemblyPlan(space, config.quadrature())

    def solve(N):
        cfg = config.with_updates(**{"time.N": N})
        sr = cfg.scatter_run(mesh)
        sr.space = space
        hist = solve_scattering(sr, plan=plan)
        f = reconstruct_fields(hist, pt, sr.interior, sr.exterior)
        return hist, np.concatenate([f.E[:, 0], f.H[:, 0]], axis=1)

    t0 = time.perf_counter()
    ref_hist, ref_field = solve(N_ref)
    ref_final = ref_hist.values()[-1]
    rows = []
    for N in N_list:
        hist, fld = solve(N)
        stride = N_ref // N
        err_pt = float(np.max(np.linalg.norm(fld - ref_field[::stride], axis=1)))
        diff = hist.values()[-1] - ref_final
        rows.append((N, config.data["time"]["T"] / N, err_pt, *_block_norms(space, diff)))
        log.info("N=%d done (%.1f s elapsed)", N, time.perf_counter() - t0)
    cols = ["N", "tau", "err_point_max", "err_density_l2", "err_density_graph"]
    slopes = {c: fit_order([(r[1], r[i]) for r in rows], last=fit_last) for i, c in enumerate(cols) if i >= 2}
    mono = {c: _monotone([r[i] for r in rows]) for i, c in enumerate(cols) if i >= 2}
    return ConvergenceReport("time", f"self-reference N={N_ref}", cols, rows, slopes, mono)


def _block_norms(space: RTSpace, v):
    """(L2, graph) norms of a stacked four-block density vector, blocks combined in quadrature."""
    E = space.dim
    blocks = [v[b * E : (b + 1) * E] for b in range(4)]
    return (float(np.sqrt(sum(space.l2_norm(x) ** 2 for x in blocks))),
            float(np.sqrt(sum(space.graph_norm(x) ** 2 for x in blocks))))


def _ancestor_points(fine: SurfaceMesh, coarse: SurfaceMesh, points, faces):
    """Coarse face containing each fine point (through the refinement tree) and the
    point projected orthogonally onto that face's plane."""
    if fine.level is None or coarse.level is None or fine.level < coarse.level:
        raise ConfigError("space ladders need nested meshes with a refinement level")
    anc = faces // (4 ** (fine.level - coarse.level))
    n = coarse.normals[anc]
    p0 = coarse.corners[anc, 0]
    proj = points - np.sum((points - p0) * n, axis=1)[:, None] * n
    return anc, proj


def nested_difference(fine_space: RTSpace, fine_coeffs, coarse_space: RTSpace, coarse_coeffs, order: int = 4):
    """(L2, graph) norms of fine minus coarse RT fields, integrated on the fine mesh."""
    m = fine_space.mesh
    ref, w = triangle_rule(order)
    x = chart(m.corners, ref)
    F, q = x.shape[:2]
    faces = np.repeat(np.arange(F), q)
    pts = x.reshape(-1, 3)
    wq = (w[None, :] * 2.0 * m.areas[:, None]).ravel()
    anc, proj = _ancestor_points(m, coarse_space.mesh, pts, faces)
    vf = fine_space.evaluate(fine_coeffs, faces, pts)
    vc = coarse_space.evaluate(coarse_coeffs, anc, proj)
    l2 = float(np.sum(wq * np.sum(np.abs(vf - vc) ** 2, axis=1)))
    df = fine_space.surface_div(fine_coeffs)[faces]
    dc = coarse_space.surface_div(coarse_coeffs)[anc]
    dv = float(np.sum(wq * np.abs(df - dc) ** 2))
    return np.sqrt(l2), np.sqrt(l2 + dv)


def converge_space(config: RunConfig, levels, ref_level: int, fit_last: int = 3) -> ConvergenceReport:
    """Density errors on an icosphere ladder against a finer-level reference.

    The error of a history is the maximum over the output times of the
    spatial norm, with all four density blocks summed in quadrature.
    """
    levels = sorted(int(l) for l in levels)
    if config.data["geometry"]["kind"] != "sphere":
        raise ConfigError("space ladders are implemented for the sphere geometry")
    if ref_level <= max(levels):
        raise ConfigError("the reference level must be finer than every ladder level")

    def solve(level):
        cfg = config.with_updates(**{"geometry.level": level})
        sr = cfg.scatter_run()
        return sr.space, solve_scattering(sr)

    ref_space, ref_hist = solve(ref_level)
    ref_vals = ref_hist.values()
    E_ref = ref_space.dim
    rows = []
    for lev in levels:
        space, hist = solve(lev)
        vals = hist.values()
        E = space.dim
        worst_l2 = worst_graph = 0.0
        for n in range(vals.shape[0]):
            l2 = graph = 0.0
            for b in range(4):
                a, g = nested_difference(ref_space, ref_vals[n, b * E_ref:(b + 1) * E_ref],
                                         space, vals[n, b * E:(b + 1) * E])
                l2 += a * a
                graph += g * g
            worst_l2 = max(worst_l2, np.sqrt(l2))
            worst_graph = max(worst_graph, np.sqrt(graph))
        rows.append((lev, space.mesh.h, E, worst_l2, worst_graph))
        del hist
    cols = ["level", "h", "dofs", "err_density_l2", "err_density_graph"]
    slopes = {c: fit_order([(r[1], r[i]) for r in rows], last=fit_last) for i, c in enumerate(cols) if i >= 3}
    mono = {c: _monotone([r[i] for r in rows]) for i, c in enumerate(cols) if i >= 3}
    return ConvergenceReport("space", f"self-reference level {ref_level}", cols, rows, slopes, mono)


def interpolation_ladder(levels, field, fit_last: int = 3) -> ConvergenceReport:
    """RT interpolation error of a smooth tangential field on icosphere levels (no solve)."""
    rows = []
    for lev in sorted(levels):
        space = RTSpace(icosphere(lev))
        c = rt_interpolate(space, field)
        rows.append((lev, space.mesh.h, space.dim, interpolation_error(space, c, field)))
    cols = ["level", "h", "dofs", "err_l2"]
    slopes = {"err_l2": fit_order([(r[1], r[3]) for r in rows], last=fit_last)}
    return ConvergenceReport("interpolation", "exact field", cols, rows, slopes,
                             {"err_l2": _monotone([r[3] for r in rows])})


def scalar_order_study(m: int, N_list, T: float = 1.0, power: int = 6, fit_last: int = 3) -> ConvergenceReport:
    """CQ for K(s) = 1/s on g(t) = t^p against the exact antiderivative t^(p+1)/(p+1)."""
    from .cq import apply_symbol, point_values
    from .oracle import power_integral

    tab = radau_tableau(m)
    rows = []
    for N in sorted(int(n) for n in N_list):
        grid = CQGrid(T, N)
        ts = grid.stage_times(tab)
        g = ts**power
        y = point_values(apply_symbol(lambda s: 1.0 / s, g, tab, grid))
        exact = power_integral(power, 1.0, grid.times)
        rows.append((N, grid.tau, float(np.max(np.abs(y - exact)))))
    slopes = {"err_max": fit_order([(r[1], r[2]) for r in rows], last=fit_last)}
    return ConvergenceReport("scalar", f"t^{power + 1}/{power + 1}", ["N", "tau", "err_max"], rows, slopes,
                             {"err_max": _monotone([r[2] for r in rows])})
