"""Time-domain scattering: incident traces, CQ solve of the coupled boundary
system, and field reconstruction through the representation formulas.

Density blocks are laid out as (phi+, psi+, phi-, psi-) =
(gH+, -gE+, -gH-, gE-), each of length E = number of mesh edges, where g is
the tangential trace u x nu and the exterior field is the scattered one.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cq import CQGrid, RKTableau, frequency_sweep, point_values, radau_tableau
from .errors import ConfigError, NumericalError
from .materials import MaterialPair, impedance_ratio, wavenumber
from .maxwell import AssemblyPlan, PotentialEvaluator, QuadratureOptions, assemble_A, check_coercive
from .mesh import SurfaceMesh
from .quadrature import chart, triangle_rule
from .rt import RTSpace

log = logging.getLogger(__name__)

# Systems up to this many unknowns get a Cholesky test of the Hermitian part
# at every frequency; beyond it the check costs as much as the solve.
COERCIVITY_CHECK_LIMIT = 2000


@dataclass(frozen=True)
class IncidentWave:
    """E_inc(x, t) = amplitude * p * exp(-c (d.x + t - t0)^2), H_inc = (p x d) * same."""

    p: tuple = (-1 / np.sqrt(2), 0.0, -1 / np.sqrt(2))
    d: tuple = (-1 / np.sqrt(2), 0.0, 1 / np.sqrt(2))
    c: float = 10.0
    t0: float = 4.0
    amplitude: float = 1.0

    def __post_init__(self):
        p = np.asarray(self.p, float)
        d = np.asarray(self.d, float)
        if p.shape != (3,) or d.shape != (3,):
            raise ConfigError("p and d must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-10:
            raise ConfigError(f"direction d must have unit length, |d| = {np.linalg.norm(d):.6g}")
        if abs(p @ d) > 1e-10 * max(np.linalg.norm(p), 1.0):
            raise ConfigError(f"wave is not transversal: p.d = {p @ d:.3g}")
        if not self.c > 0:
            raise ConfigError("envelope sharpness c must be positive")
        object.__setattr__(self, "p", tuple(float(v) for v in p))
        object.__setattr__(self, "d", tuple(float(v) for v in d))

    @property
    def h_polarization(self) -> np.ndarray:
        return np.cross(self.p, self.d)

    def profile(self, xi):
        return self.amplitude * np.exp(-self.c * np.asarray(xi) ** 2)

    def phase(self, x, t):
        return np.asarray(x) @ np.asarray(self.d) + t - self.t0

    def E(self, x, t):
        return self.profile(self.phase(x, t))[..., None] * np.asarray(self.p)

    def H(self, x, t):
        return self.profile(self.phase(x, t))[..., None] * self.h_polarization

    @classmethod
    def from_dict(cls, block) -> "IncidentWave":
        allowed = {"p", "d", "c", "t0", "amplitude"}
        extra = set(block) - allowed
        if extra:
            raise ConfigError(f"unknown incident keys: {sorted(extra)}")
        return cls(**{k: (tuple(v) if k in "pd" else float(v)) for k, v in block.items()})

    def to_dict(self) -> dict:
        return {"p": list(self.p), "d": list(self.d), "c": self.c, "t0": self.t0, "amplitude": self.amplitude}


class TraceLoad:
    """Tested incident traces: row i of the load for a tangential field u is
    [phi_i, u x nu] = int (phi_i x nu) . (u x nu).

    For a plane wave the field at quadrature point q is a fixed vector times
    a scalar profile, so the load is a sparse matrix applied to the profile
    samples and costs one matrix-vector product per stage.
    """

    def __init__(self, space: RTSpace, wave: IncidentWave, order: int = 6):
        m = space.mesh
        ref, w = triangle_rule(order)
        x = chart(m.corners, ref)
        F, q = x.shape[:2]
        faces = np.repeat(np.arange(F), q)
        self.points = x.reshape(-1, 3)
        wq = (w[None, :] * 2.0 * m.areas[:, None]).ravel()
        nu = m.normals[faces]
        rot = np.cross(space.basis_at(faces, self.points), nu[:, None, :])  # phi_i x nu
        def matrix(vec):
            vals = np.einsum("nkx,nx->nk", rot, np.cross(vec[None, :], nu)) * wq[:, None]
            rows = m.face_edges[faces].ravel()
            cols = np.repeat(np.arange(len(faces)), 3)
            return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(space.dim, len(faces)))

        self.wave = wave
        self.ME = matrix(np.asarray(wave.p))
        self.MH = matrix(wave.h_polarization)
        self.xi0 = self.points @ np.asarray(wave.d) - wave.t0

    def at(self, t):
        """(gE, gH) tested loads at time t."""
        f = self.wave.profile(self.xi0 + t)
        return self.ME @ f, self.MH @ f


def incident_trace(wave: IncidentWave, space: RTSpace, grid: CQGrid, tab: RKTableau,
                   order: int = 6) -> np.ndarray:
    """Right-hand side stage signal (N+1, m, 4E): (-g, g) with g = (gE, gH)/2."""
    load = TraceLoad(space, wave, order)
    E = space.dim
    ts = grid.stage_times(tab)
    out = np.empty(ts.shape + (4 * E,))
    for n in range(ts.shape[0]):
        for i in range(ts.shape[1]):
            gE, gH = load.at(ts[n, i])
            half = 0.5 * np.concatenate([gE, gH])
            out[n, i, : 2 * E] = -half
            out[n, i, 2 * E :] = half
    return out


@dataclass
class ScatterRun:
    space: RTSpace
    interior: MaterialPair
    exterior: MaterialPair
    tableau: RKTableau
    grid: CQGrid
    wave: IncidentWave
    quadrature: QuadratureOptions = field(default_factory=QuadratureOptions)
    check_coercivity: bool | None = None
    workers: int = 1

    @classmethod
    def standard(cls, mesh: SurfaceMesh, N: int, m: int = 2, c: float = 10.0, T: float = 8.0, interior=None):
        from .materials import fractional_interior

        return cls(
            RTSpace(mesh),
            interior if interior is not None else fractional_interior(),
            MaterialPair.vacuum(),
            radau_tableau(m),
            CQGrid(T, N),
            IncidentWave(c=c),
        )

    @property
    def n_unknowns(self) -> int:
        return 4 * self.space.dim


@dataclass
class DensityHistory:
    """Stage values (N+1, m, 4E) of the boundary densities."""

    signal: np.ndarray
    space: RTSpace
    grid: CQGrid
    tableau: RKTableau
    stats: dict = field(default_factory=dict)

    @property
    def E(self) -> int:
        return self.space.dim

    def values(self) -> np.ndarray:
        """Densities at t_0..t_N, shape (N+1, 4E)."""
        return point_values(self.signal)

    def block(self, name: str, values=None) -> np.ndarray:
        idx = {"phi+": 0, "psi+": 1, "phi-": 2, "psi-": 3}[name]
        v = self.values() if values is None else values
        return v[..., idx * self.E : (idx + 1) * self.E]

    def dump(self, path) -> None:
        """Binary little-endian float64 array (N+1, 4E) plus a CSV index."""
        v = self.values()
        np.ascontiguousarray(v, dtype="<f8").tofile(str(path) + ".bin")
        with open(str(path) + ".csv", "w") as fh:
            fh.write("step,t,offset_bytes,length\n")
            for n, t in enumerate(self.grid.times):
                fh.write(f"{n},{t!r},{n * v.shape[1] * 8},{v.shape[1]}\n")


def _tail_check(rhs):
    peak = np.max(np.abs(rhs))
    if peak > 0 and np.max(np.abs(rhs[0])) > 1e-8 * peak:
        warnings.warn("incident trace does not vanish at t=0 (tail above 1e-8 of peak)", stacklevel=3)


def solve_scattering(run: ScatterRun, rhs=None, plan: AssemblyPlan | None = None) -> DensityHistory:
    """Solve A(d_t) phi = g for the stage densities.

    ``plan`` lets a ladder of runs on one mesh share the frequency-free
    quadrature geometry.
    """
    space = run.space
    if rhs is None:
        rhs = incident_trace(run.wave, space, run.grid, run.tableau)
    _tail_check(rhs)
    plan = plan if plan is not None else AssemblyPlan(space, run.quadrature)
    check = run.check_coercivity
    if check is None:
        check = run.n_unknowns <= COERCIVITY_CHECK_LIMIT
    stats = {"solves": [], "n_unknowns": run.n_unknowns}

    def node_op(lam, r, node):
        if not np.any(r):
            return np.zeros_like(r)
        t0 = time.perf_counter()
        ops = assemble_A(lam, run.interior, run.exterior, space, plan)
        A = ops.A
        t1 = time.perf_counter()
        if check:
            check_coercive(A, f"at s={lam:.6g} (node {node})")
        lu = sla.lu_factor(A, check_finite=False)
        x = sla.lu_solve(lu, r, check_finite=False)
        res = np.linalg.norm(A @ x - r) / max(np.linalg.norm(r), 1e-300)
        if not np.isfinite(res) or res > 1e-6:
            raise NumericalError(f"linear solve residual {res:.3g} at s={lam:.6g}")
        stats["solves"].append({"s": complex(lam), "assembly_s": t1 - t0,
                                "solve_s": time.perf_counter() - t1, "residual": float(res)})
        return x

    # the transformed right-hand side at conjugate nodes is conjugate, so
    # only half the circle is solved
    sweep_stats = {}
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="signal does not vanish")
        y = frequency_sweep(rhs, run.tableau, run.grid, node_op, True, run.workers, sweep_stats)
    stats.update({k: v for k, v in sweep_stats.items() if k != "frequencies"})
    return DensityHistory(np.asarray(y.real), space, run.grid, run.tableau, stats)


def side_of(mesh: SurfaceMesh, points) -> np.ndarray:
    """+1 for points outside the closed surface, -1 inside (solid-angle winding number)."""
    pts = np.atleast_2d(np.asarray(points, float))
    total = np.zeros(len(pts))
    for f0 in range(0, mesh.n_faces, 512):
        c = mesh.corners[f0 : f0 + 512]
        a = c[None, :, 0] - pts[:, None]
        b = c[None, :, 1] - pts[:, None]
        d = c[None, :, 2] - pts[:, None]
        la, lb, ld = (np.linalg.norm(v, axis=2) for v in (a, b, d))
        num = np.einsum("ptx,ptx->pt", a, np.cross(b, d))
        den = (la * lb * ld + np.einsum("ptx,ptx->pt", a, b) * ld
               + np.einsum("ptx,ptx->pt", a, d) * lb + np.einsum("ptx,ptx->pt", b, d) * la)
        total += 2 * np.arctan2(num, den).sum(axis=1)
    return np.where(np.abs(total) > 2 * np.pi, -1, 1)


@dataclass
class FieldHistory:
    """E and H at the targets for t_0..t_N, arrays of shape (N+1, P, 3)."""

    times: np.ndarray
    points: np.ndarray
    sides: np.ndarray
    E: np.ndarray
    H: np.ndarray

    def write_csv(self, path) -> None:
        cols = "t,x,y,z,Ex_re,Ey_re,Ez_re,Hx_re,Hy_re,Hz_re"
        with open(path, "w") as fh:
            fh.write(cols + "\n")
            for n, t in enumerate(self.times):
                for p, x in enumerate(self.points):
                    vals = [t, *x, *self.E[n, p], *self.H[n, p]]
                    fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def reconstruct_fields(history: DensityHistory, points, interior: MaterialPair, exterior: MaterialPair,
                       sides=None, order: int = 4) -> FieldHistory:
    """Scattered exterior / total interior fields at off-surface points.

    Per side, E = -Z S(k) phi + D(k) psi and H = -D(k) phi - S(k) psi / Z,
    evaluated at every contour node of the density transform and brought
    back to the time domain in one pass.
    """
    space = history.space
    pts = np.atleast_2d(np.asarray(points, float))
    sides = side_of(space.mesh, pts) if sides is None else np.asarray(sides)
    E = history.E
    h = space.mesh.h
    evals = {}
    for sgn in (1, -1):
        sel = np.nonzero(sides == sgn)[0]
        if len(sel):
            evals[sgn] = (sel, PotentialEvaluator(space, pts[sel], order=order, warn_distance=h))
    P = len(pts)

    def node_op(lam, r, node):
        out = np.zeros((P, 2, 3), complex)
        for sgn, (sel, ev) in evals.items():
            pair = exterior if sgn > 0 else interior
            off = 0 if sgn > 0 else 2 * E
            phi, psi = r[off : off + E], r[off + E : off + 2 * E]
            k = complex(wavenumber(pair, lam))
            z = complex(impedance_ratio(pair, lam))
            S, D = ev.evaluate(k, np.stack([phi, psi], 1), np.stack([phi, psi], 1))
            out[sel, 0] = -z * S[:, 0] + D[:, 1]
            out[sel, 1] = -D[:, 0] - S[:, 1] / z
        return out

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="signal does not vanish")
        y = frequency_sweep(history.signal, history.tableau, history.grid, node_op, True, oversample=2)
    vals = point_values(np.asarray(y.real))
    return FieldHistory(history.grid.times, pts, sides, vals[:, :, 0], vals[:, :, 1])


def plane_grid(axis: str = "y", value: float = 0.5, extent=((-2.0, 2.0), (-2.0, 2.0)), n=(41, 41)):
    """Regular grid on the plane {axis = value}; the two free coordinates keep xyz order."""
    ax = "xyz".index(axis)
    free = [i for i in range(3) if i != ax]
    u = np.linspace(*extent[0], n[0])
    v = np.linspace(*extent[1], n[1])
    U, W = np.meshgrid(u, v, indexing="ij")
    pts = np.empty((U.size, 3))
    pts[:, ax] = value
    pts[:, free[0]] = U.ravel()
    pts[:, free[1]] = W.ravel()
    return pts


def slice_points(mesh: SurfaceMesh, points, min_distance=None):
    """Drop grid points closer to the surface than ``min_distance`` (default: one mesh size)."""
    from .maxwell import distance_to_surface

    lim = mesh.h if min_distance is None else min_distance
    keep = distance_to_surface(mesh, points) >= lim
    return np.asarray(points)[keep]
