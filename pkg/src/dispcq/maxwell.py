"""Maxwell layer potentials and Galerkin boundary operators at a complex frequency.

Conventions: tangential trace u x nu with nu the outward normal, pairing
[phi, psi] = int (phi x nu) . psi, kernel G(k, r) = exp(-k r)/(4 pi r).  For
a wavenumber k

    S(k) phi = -k int G phi + 1/k grad int G div phi,
    D(k) phi = curl int G phi,

and the Galerkin matrices are V_ij = [phi_i, V phi_j], K_ij = [phi_i, K phi_j]:

    V_ij = -k  int int G phi_i . phi_j  -  1/k int int G div phi_i div phi_j,
    K_ij =     int int grad_x G(x - y) . (phi_j(y) x phi_i(x)).

Both are symmetric.  Far pairs go through face moments of the kernel against
(1, x) computed with dense BLAS products; singular and close pairs are
replaced by Sauter-Schwab or refined tensor rules.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import CoercivityError, ConfigError, DomainError, NumericalError
from .materials import MaterialPair, impedance_ratio, wavenumber
from .mesh import SurfaceMesh
from .quadrature import chart, pair_rule, triangle_rule
from .rt import RTSpace, assemble_pairing

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi


def helmholtz_kernel(s, x):
    """G(s, x) = exp(-s|x|)/(4 pi |x|) for points ``x`` (..., 3)."""
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    if np.any(r == 0):
        raise DomainError("the kernel is singular at x = 0")
    return np.exp(-s * r) / (FOUR_PI * r)


def _kernels(k, r, inv_r):
    """G and F with grad_x G(x - y) = F (x - y); entries with inv_r = 0 vanish."""
    g = np.exp(-k * r) * inv_r / FOUR_PI
    f = -g * (inv_r * inv_r + k * inv_r)
    return g, f


@dataclass(frozen=True)
class QuadratureOptions:
    """Orders: triangle-rule degree for far and near-regular pairs, Gauss points per
    dimension for singular pairs.  Pairs closer than ``near_ratio`` times the larger
    face size use the near rule."""

    far_order: int = 2
    near_order: int = 6
    singular_order: int = 4
    near_ratio: float = 1.5
    chunk_faces: int = 256

    def __post_init__(self):
        if self.far_order < 1 or self.near_order < self.far_order:
            raise ConfigError("need 1 <= far_order <= near_order")
        if self.singular_order < 2:
            raise ConfigError("singular quadrature order must be >= 2")
        if self.near_ratio < 0:
            raise ConfigError("near_ratio must be nonnegative")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad quadrature options: {exc}") from None


def _reorder(tri_f, tri_g):
    """Permutations putting shared vertices first (same order) in both faces."""
    shared = [v for v in tri_f if v in tri_g]
    pf = [list(tri_f).index(v) for v in shared] + [i for i, v in enumerate(tri_f) if v not in shared]
    pg = [list(tri_g).index(v) for v in shared] + [i for i, v in enumerate(tri_g) if v not in shared]
    return pf, pg


class AssemblyPlan:
    """Frequency-independent geometry for assembling V and K on one RT space."""

    def __init__(self, space: RTSpace, options: QuadratureOptions | None = None):
        self.space = space
        self.options = options or QuadratureOptions()
        self.mesh: SurfaceMesh = space.mesh
        self._classify()

    # ---- geometry -------------------------------------------------------
    def _classify(self):
        m = self.mesh
        tri = m.triangles
        F = m.n_faces
        vert_faces = [[] for _ in range(m.n_vertices)]
        for f, t in enumerate(tri):
            for v in t:
                vert_faces[v].append(f)
        touching = {}
        for f in range(F):
            for v in tri[f]:
                for g in vert_faces[v]:
                    if g > f:
                        touching[(f, g)] = touching.get((f, g), 0) + 1
        self.identical = np.arange(F)
        edge = [p for p, c in touching.items() if c == 2]
        vert = [p for p, c in touching.items() if c == 1]
        self.edge_pairs = np.array(edge, dtype=np.int64).reshape(-1, 2)
        self.vertex_pairs = np.array(vert, dtype=np.int64).reshape(-1, 2)
        # close but disjoint pairs
        c = m.centroids
        size = m.face_sizes
        near = []
        ratio = self.options.near_ratio
        for f0 in range(0, F, 512):
            sl = slice(f0, min(F, f0 + 512))
            d = np.linalg.norm(c[sl, None, :] - c[None, :, :], axis=2)
            lim = ratio * np.maximum(size[sl, None], size[None, :]) + 0.5 * (size[sl, None] + size[None, :])
            ff, gg = np.nonzero(d < lim)
            ff = ff + f0
            keep = gg > ff
            near.extend(zip(ff[keep], gg[keep]))
        near = set(map(tuple, near)) - set(touching)
        self.near_pairs = np.array(sorted(near), dtype=np.int64).reshape(-1, 2)
        log.debug(
            "pairs: %d identical, %d edge, %d vertex, %d near",
            F, len(self.edge_pairs), len(self.vertex_pairs), len(self.near_pairs),
        )

    @cached_property
    def far_points(self):
        ref, w = triangle_rule(self.options.far_order)
        x = chart(self.mesh.corners, ref)
        return x, w[None, :] * 2.0 * self.mesh.areas[:, None]

    @cached_property
    def origin(self):
        return self.mesh.vertices.mean(axis=0)

    @cached_property
    def _masked_distances(self):
        """Distances between far quadrature points and their inverses, the
        latter zeroed on every pair handled by the near-field rules."""
        x, _ = self.far_points
        F, q = x.shape[:2]
        pts = x.reshape(-1, 3) - self.origin
        sq = np.sum(pts**2, 1)
        r = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * pts @ pts.T, 0.0))
        blocked = np.concatenate([np.stack([self.identical, self.identical], 1), self.edge_pairs,
                                  self.vertex_pairs, self.near_pairs])
        blocked = np.concatenate([blocked, blocked[:, ::-1]])
        r4 = r.reshape(F, q, F, q)
        r4[blocked[:, 0], :, blocked[:, 1], :] = 0.0
        with np.errstate(divide="ignore"):
            inv = np.where(r > 0, 1.0 / r, 0.0)
        return r, inv

    @cached_property
    def _far_basis(self):
        """Sparse (Fq x E) matrices: weighted basis components, divergences and
        the components of phi x x at the far quadrature points."""
        m = self.mesh
        x, w = self.far_points
        F, q = x.shape[:2]
        faces = np.repeat(np.arange(F), q)
        pts = x.reshape(-1, 3)
        wq = w.ravel()
        phi = self.space.basis_at(faces, pts) * wq[:, None, None]  # (Fq, 3, 3)
        rows = np.repeat(np.arange(F * q), 3)
        cols = m.face_edges[faces].ravel()
        shape = (F * q, self.space.dim)

        def mat(vals):
            return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=shape)

        xs = pts - self.origin
        cross = np.cross(phi, xs[:, None, :])
        phis = [mat(phi[:, :, c]) for c in range(3)]
        crosses = [mat(cross[:, :, c]) for c in range(3)]
        div = mat(self.space.divergence[faces] * wq[:, None])
        return phis, crosses, div

    def _far(self, kappas, out):
        r, inv = self._masked_distances
        phis, crosses, div = self._far_basis
        n = r.shape[0]
        step = max(1, self.options.chunk_faces * len(self.far_points[1][0]))
        for i0 in range(0, n, step):
            sl = slice(i0, min(n, i0 + step))
            for k in kappas:
                g, f = _kernels(k, r[sl], inv[sl])
                V, K = out[k]
                for ph in phis:
                    V -= k * (ph[sl].T @ (ph.T @ g.T).T)
                V -= (1.0 / k) * (div[sl].T @ (div.T @ g.T).T)
                for ph, cr in zip(phis, crosses):
                    K += cr[sl].T @ (ph.T @ f.T).T

    @cached_property
    def _assembly_index(self):
        fe = self.mesh.face_edges
        F = self.mesh.n_faces
        return sp.csr_matrix(
            (np.ones(3 * F), (np.arange(3 * F), fe.ravel())), shape=(3 * F, self.space.dim)
        )

    # ---- near field -----------------------------------------------------
    def _pair_points(self, kind, pairs):
        """Quadrature points relative to the first corner of the first face,
        distances and weights for one group of pairs."""
        m = self.mesh
        if kind == "near":
            ref, w = triangle_rule(self.options.near_order)
            n = len(w)
            xr, yr = np.repeat(ref, n, axis=0), np.tile(ref, (n, 1))
            wr = np.repeat(w, n) * np.tile(w, n)
            cf, cg = m.corners[pairs[:, 0]], m.corners[pairs[:, 1]]
        else:
            xr, yr, wr = pair_rule(kind, self.options.singular_order)
            if kind == "identical":
                cf = cg = m.corners[pairs[:, 0]]
            else:
                tri = m.triangles
                perm = np.array([_reorder(tri[f], tri[g]) for f, g in pairs]).reshape(-1, 2, 3)
                idx = np.arange(len(pairs))[:, None]
                cf = m.corners[pairs[:, 0]][idx, perm[:, 0]]
                cg = m.corners[pairs[:, 1]][idx, perm[:, 1]]
        o = m.corners[pairs[:, 0], 0][:, None, :]
        X = chart(cf, xr) - o
        Y = chart(cg, yr) - o
        r = np.linalg.norm(X - Y, axis=2)
        W = wr[None, :] * (4.0 * m.areas[pairs[:, 0]] * m.areas[pairs[:, 1]])[:, None]
        return X, Y, r, W

    @cached_property
    def _near_data(self):
        """Per pair group: pairs, distances, weights and the frequency-free
        moment factors (1, x, y, x.y | x cross y, x - y) at every node."""
        groups = [
            ("identical", np.stack([self.identical, self.identical], 1)),
            ("edge", self.edge_pairs),
            ("vertex", self.vertex_pairs),
            ("near", self.near_pairs),
        ]
        out = []
        for kind, pairs in groups:
            if not len(pairs):
                continue
            X, Y, r, W = self._pair_points(kind, pairs)
            mg = np.concatenate([np.ones_like(r)[..., None], X, Y,
                                 np.einsum("pnx,pnx->pn", X, Y)[..., None]], axis=2)
            mf = None if kind == "identical" else np.concatenate([np.cross(X, Y), X - Y], axis=2)
            del X, Y
            out.append((kind, pairs, r, 1.0 / r, W, mg, mf))
        return out

    @staticmethod
    def _moments(w, m):
        """sum_n w[p, n] m[p, n, :] for complex w and real m."""
        return (np.matmul(w.real[:, None, :], m) + 1j * np.matmul(w.imag[:, None, :], m))[:, 0]

    def _near(self, kappas, out):
        m = self.mesh
        s = self.space.local_scale
        d = self.space.divergence
        fe = m.face_edges
        for kind, pairs, r, inv, W, mg, mf in self._near_data:
            f, g = pairs[:, 0], pairs[:, 1]
            o = m.corners[f, 0][:, None, :]
            p = m.corners[f] - o  # (P, 3, 3) corners of the row face
            q = m.corners[g] - o
            ss = s[f][:, :, None] * s[g][:, None, :]
            dd = d[f][:, :, None] * d[g][:, None, :]
            pq = np.einsum("pkx,plx->pkl", p, q)
            if mf is not None:
                qxp = np.cross(q[:, None, :, :], p[:, :, None, :])  # (P, k, l, 3) = q_l x p_k
            ri = np.repeat(fe[f], 3, axis=1).ravel()
            ci = np.tile(fe[g], (1, 3)).ravel()
            off = np.repeat(f != g, 9)
            for k in kappas:
                gk, fk = _kernels(k, r, inv)
                mom = self._moments(gk * W, mg)
                s0, sx, sy, sxy = mom[:, 0], mom[:, 1:4], mom[:, 4:7], mom[:, 7]
                vloc = (sxy[:, None, None]
                        - np.einsum("plx,px->pl", q, sx)[:, None, :]
                        - np.einsum("pkx,px->pk", p, sy)[:, :, None]
                        + pq * s0[:, None, None])
                vloc = -k * ss * vloc - (1.0 / k) * dd * s0[:, None, None]
                V, K = out[k]
                np.add.at(V, (ri, ci), vloc.ravel())
                np.add.at(V, (ci[off], ri[off]), vloc.ravel()[off])
                if mf is None:
                    continue
                mom = self._moments(fk * W, mf)
                jc, jd = mom[:, :3], mom[:, 3:]
                kloc = (np.einsum("plx,px->pl", q, jc)[:, None, :]
                        - np.einsum("pkx,px->pk", p, jc)[:, :, None]
                        + np.einsum("pklx,px->pkl", qxp, jd))
                kloc = ss * kloc
                np.add.at(K, (ri, ci), kloc.ravel())
                np.add.at(K, (ci[off], ri[off]), kloc.ravel()[off])

    # ---- public ---------------------------------------------------------
    def assemble(self, kappas):
        """Return {k: (V, K)} dense Galerkin matrices for each wavenumber."""
        kappas = list(dict.fromkeys(complex(k) for k in kappas))
        for k in kappas:
            if not k.real > 0:
                raise DomainError(f"wavenumber must have positive real part, got {k}")
        E = self.space.dim
        out = {k: (np.zeros((E, E), complex), np.zeros((E, E), complex)) for k in kappas}
        self._far(kappas, out)
        for k in kappas:
            V, K = out[k]
            K += K.T.copy()
        self._near(kappas, out)
        return out


@dataclass(frozen=True)
class FrequencyOperatorSet:
    """Assembled operators of the coupled system at one complex frequency.

    Block layout of ``A`` (each block E x E), unknowns (phi+, psi+, phi-, psi-):

        [ -Z+ V+    K+       0       -B/2  ]
        [ -K+     -V+/Z+     B/2      0    ]
        [  0       B/2     -Z- V-     K-   ]
        [ -B/2      0       -K-    -V-/Z-  ]
    """

    s: complex
    kappa_ext: complex
    kappa_int: complex
    z_ext: complex
    z_int: complex
    V_ext: np.ndarray
    K_ext: np.ndarray
    V_int: np.ndarray
    K_int: np.ndarray
    B: np.ndarray

    @property
    def C_ext(self):
        return calderon_blocks(self.V_ext, self.K_ext, self.z_ext)

    @property
    def C_int(self):
        return calderon_blocks(self.V_int, self.K_int, self.z_int)

    @property
    def A(self) -> np.ndarray:
        E = self.B.shape[0]
        A = np.zeros((4 * E, 4 * E), complex)
        A[: 2 * E, : 2 * E] = self.C_ext
        A[2 * E :, 2 * E :] = self.C_int
        h = 0.5 * self.B
        A[:E, 3 * E :] = -h
        A[E : 2 * E, 2 * E : 3 * E] = h
        A[2 * E : 3 * E, E : 2 * E] = h
        A[3 * E :, :E] = -h
        return A

    def coupling_part(self) -> np.ndarray:
        A = self.A.copy()
        E = self.B.shape[0]
        A[: 2 * E, : 2 * E] = 0
        A[2 * E :, 2 * E :] = 0
        return A


def calderon_blocks(V, K, z):
    """[[-z V, K], [-K, -V/z]]."""
    return np.block([[-z * V, K], [-K, -V / z]])


def assemble_calderon(s, pair: MaterialPair, space: RTSpace, plan: AssemblyPlan | None = None):
    plan = plan or AssemblyPlan(space)
    k = complex(wavenumber(pair, s))
    V, K = plan.assemble([k])[k]
    return calderon_blocks(V, K, complex(impedance_ratio(pair, s)))


def assemble_V(s, pair: MaterialPair, space: RTSpace, plan: AssemblyPlan | None = None):
    plan = plan or AssemblyPlan(space)
    k = complex(wavenumber(pair, s))
    return plan.assemble([k])[k][0]


def assemble_K(s, pair: MaterialPair, space: RTSpace, plan: AssemblyPlan | None = None):
    plan = plan or AssemblyPlan(space)
    k = complex(wavenumber(pair, s))
    return plan.assemble([k])[k][1]


def assemble_A(s, interior: MaterialPair, exterior: MaterialPair, space: RTSpace,
               plan: AssemblyPlan | None = None) -> FrequencyOperatorSet:
    plan = plan or AssemblyPlan(space)
    s = complex(s)
    ke = complex(wavenumber(exterior, s))
    ki = complex(wavenumber(interior, s))
    mats = plan.assemble([ke] if ke == ki else [ke, ki])
    B = _pairing_dense(space)
    return FrequencyOperatorSet(
        s, ke, ki,
        complex(impedance_ratio(exterior, s)), complex(impedance_ratio(interior, s)),
        *mats[ke], *mats[ki], B,
    )


_PAIRING_CACHE: dict[int, np.ndarray] = {}


def _pairing_dense(space: RTSpace) -> np.ndarray:
    key = id(space)
    if key not in _PAIRING_CACHE:
        _PAIRING_CACHE.clear()
        _PAIRING_CACHE[key] = assemble_pairing(space).toarray()
    return _PAIRING_CACHE[key]


def hermitian_min_eig(M: np.ndarray) -> float:
    """Smallest eigenvalue of (M + M^H)/2."""
    H = 0.5 * (M + M.conj().T)
    return float(sla.eigvalsh(H, subset_by_index=[0, 0])[0])


def check_coercive(M: np.ndarray, context="") -> None:
    """Cholesky of the Hermitian part; raises CoercivityError if it is not positive definite."""
    H = 0.5 * (M + M.conj().T)
    try:
        sla.cholesky(H, lower=True, check_finite=False)
    except sla.LinAlgError:
        raise CoercivityError(f"Hermitian part is not positive definite {context}") from None


# ---- potentials ------------------------------------------------------------


@dataclass(frozen=True)
class PotentialTarget:
    points: np.ndarray
    side: str = "exterior"

    def __post_init__(self):
        if self.side not in ("interior", "exterior"):
            raise ConfigError(f"side must be interior or exterior, got {self.side!r}")


def distance_to_surface(mesh: SurfaceMesh, points) -> np.ndarray:
    """Exact point-to-triangle distance (minimum over faces)."""
    pts = np.asarray(points, float)
    best = np.full(len(pts), np.inf)
    for f0 in range(0, mesh.n_faces, 256):
        c = mesh.corners[f0 : f0 + 256]
        best = np.minimum(best, _point_triangle_distance(pts, c).min(axis=1))
    return best


def _point_triangle_distance(p, tri):
    """(K, T) distances from points p (K, 3) to triangles tri (T, 3, 3)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    nn = np.sum(n * n, 1)
    ap = p[:, None, :] - a[None]
    # barycentric projection
    d1 = np.einsum("ktx,tx->kt", ap, ab)
    d2 = np.einsum("ktx,tx->kt", ap, ac)
    d00 = np.sum(ab * ab, 1)
    d01 = np.sum(ab * ac, 1)
    d11 = np.sum(ac * ac, 1)
    v = (d11 * d1 - d01 * d2) / nn
    w = (d00 * d2 - d01 * d1) / nn
    inside = (v >= 0) & (w >= 0) & (v + w <= 1)
    plane = np.abs(np.einsum("ktx,tx->kt", ap, n)) / np.sqrt(nn)
    out = np.where(inside, plane, np.inf)

    def seg(p0, p1):
        d = p1 - p0
        t = np.clip(np.einsum("ktx,tx->kt", p[:, None, :] - p0[None], d) / np.sum(d * d, 1), 0, 1)
        q = p0[None] + t[..., None] * d[None]
        return np.linalg.norm(p[:, None, :] - q, axis=2)

    return np.minimum(out, np.minimum(seg(a, b), np.minimum(seg(b, c), seg(c, a))))


class PotentialEvaluator:
    """Evaluate S(k) and D(k) of RT densities at fixed targets.

    Targets closer than ``near_ratio`` face sizes to a face get an
    adaptively subdivided rule on that face.
    """

    def __init__(self, space: RTSpace, points, order: int = 4, near_ratio: float = 2.0,
                 max_depth: int = 12, warn_distance=None):
        self.space = space
        self.points = np.atleast_2d(np.asarray(points, float))
        self.order = order
        self.near_ratio = near_ratio
        self.max_depth = max_depth
        m = space.mesh
        self.distance = distance_to_surface(m, self.points)
        if np.any(self.distance == 0):
            raise DomainError("potential target lies on the surface")
        lim = warn_distance if warn_distance is not None else 0.0
        self.degraded = self.distance < lim
        if np.any(self.degraded):
            warnings.warn(
                f"{int(self.degraded.sum())} target(s) within {lim:g} of the surface; accuracy degraded",
                stacklevel=2,
            )
        self._build()

    def _build(self):
        m = self.space.mesh
        ref, w = triangle_rule(self.order)
        x = chart(m.corners, ref)  # (F, q, 3)
        F, q = x.shape[:2]
        self._x = x.reshape(-1, 3)
        self._w = (w[None, :] * 2 * m.areas[:, None]).ravel()
        self._face = np.repeat(np.arange(F), q)
        dist = np.linalg.norm(self.points[:, None, :] - m.centroids[None], axis=2)
        self._near_mask = dist < (self.near_ratio + 0.5) * m.face_sizes[None, :]
        t, f = np.nonzero(self._near_mask)
        self._near = self._adaptive(t, f)

    def _adaptive(self, targets, faces):
        """Level-by-level subdivision of (target, face) pairs until every
        subtriangle is smaller than half its distance to the target."""
        ref, w = triangle_rule(self.order)
        tri = self.space.mesh.corners[faces]
        tg, fc = targets, faces
        pts, wts, ft, ff = [], [], [], []
        for depth in range(self.max_depth + 1):
            if len(tg) == 0:
                break
            size = np.max(np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=2), axis=1)
            d = _pair_distance(self.points[tg], tri)
            done = (size < 0.5 * d) | (depth == self.max_depth)
            if np.any(done):
                td = tri[done]
                area = 0.5 * np.linalg.norm(np.cross(td[:, 1] - td[:, 0], td[:, 2] - td[:, 0]), axis=1)
                pts.append(chart(td, ref).reshape(-1, 3))
                wts.append((w[None, :] * 2 * area[:, None]).ravel())
                ft.append(np.repeat(tg[done], len(w)))
                ff.append(np.repeat(fc[done], len(w)))
            keep = ~done
            tri, tg, fc = tri[keep], tg[keep], fc[keep]
            a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            tri = np.concatenate([
                np.stack(v, axis=1) for v in ([a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca])
            ])
            tg = np.tile(tg, 4)
            fc = np.tile(fc, 4)
        if not pts:
            z = np.zeros(0, dtype=np.int64)
            return np.zeros((0, 3)), np.zeros(0), z, z
        return np.concatenate(pts), np.concatenate(wts), np.concatenate(ft), np.concatenate(ff)

    def evaluate(self, k, phi=None, psi=None):
        """Return (S(k) phi, D(k) psi) at the targets; either density may be None.

        ``phi``/``psi`` may be (E,) or (E, r) for r densities at once; results have
        shape (T, 3) or (T, r, 3).
        """
        k = complex(k)
        T = len(self.points)
        dens = {}
        shapes = {}
        for key, c in (("s", phi), ("d", psi)):
            if c is not None:
                c = np.asarray(c)
                shapes[key] = c.ndim
                dens[key] = c[:, None] if c.ndim == 1 else c
        res = {key: np.zeros((T, v.shape[1], 3), complex) for key, v in dens.items()}
        sp_ = self.space

        def dens_values(c, faces, pts):
            cf = c[sp_.mesh.face_edges[faces]]  # (n, 3, r)
            v = np.einsum("nlr,nlx->nrx", cf, sp_.basis_at(faces, pts))
            dv = np.einsum("nlr,nl->nr", cf, sp_.divergence[faces])
            return v, dv

        vals = {key: dens_values(c, self._face, self._x) for key, c in dens.items()}
        y = self._x
        nq = len(y)
        block = max(1, int(4e6 // nq))
        for t0 in range(0, T, block):
            tp = self.points[t0 : t0 + block]
            r = np.sqrt(np.maximum(
                np.sum(tp**2, 1)[:, None] + np.sum(y**2, 1)[None, :] - 2 * tp @ y.T, 0.0))
            mask = self._near_mask[t0 : t0 + block][:, self._face]
            with np.errstate(divide="ignore"):
                inv_r = np.where(mask | (r == 0), 0.0, 1.0 / r)
            g, f = _kernels(k, r, inv_r)
            gw = g * self._w
            fw = f * self._w
            for key, (v, dv) in vals.items():
                out = res[key][t0 : t0 + block]
                if key == "s":
                    out += -k * np.einsum("tn,nrx->trx", gw, v)
                    out += (1 / k) * (tp[:, None, :] * (fw @ dv)[:, :, None]
                                      - np.einsum("tn,nr,nx->trx", fw, dv, y))
                else:
                    out += np.cross(tp[:, None, :], np.einsum("tn,nrx->trx", fw, v))
                    out -= np.einsum("tn,nrx->trx", fw, np.cross(y[:, None, :], v))
        pts, w, tg, fc = self._near
        for i0 in range(0, len(pts), 200_000):
            sl = slice(i0, i0 + 200_000)
            d = self.points[tg[sl]] - pts[sl]
            r = np.linalg.norm(d, axis=1)
            g, fk = _kernels(k, r, 1.0 / r)
            for key, c in dens.items():
                v, dv = dens_values(c, fc[sl], pts[sl])
                if key == "s":
                    contrib = -k * (g * w[sl])[:, None, None] * v + (1 / k) * (
                        (fk * w[sl])[:, None, None] * d[:, None, :] * dv[:, :, None])
                else:
                    contrib = np.cross((fk * w[sl])[:, None, None] * d[:, None, :], v)
                np.add.at(res[key], tg[sl], contrib)
        out = []
        for key in ("s", "d"):
            if key not in res:
                out.append(None)
            else:
                out.append(res[key][:, 0, :] if shapes[key] == 1 else res[key])
        return tuple(out)


def _pair_distance(p, tri):
    """Distance from p[i] to triangle tri[i]."""
    out = np.empty(len(p))
    for i0 in range(0, len(p), 65536):
        sl = slice(i0, i0 + 65536)
        out[sl] = _one_to_one(p[sl], tri[sl])
    return out


def _one_to_one(p, tri):
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    nn = np.sum(n * n, 1)
    ap = p - a
    d1, d2 = np.sum(ap * ab, 1), np.sum(ap * ac, 1)
    d00, d01, d11 = np.sum(ab * ab, 1), np.sum(ab * ac, 1), np.sum(ac * ac, 1)
    v = (d11 * d1 - d01 * d2) / nn
    w = (d00 * d2 - d01 * d1) / nn
    inside = (v >= 0) & (w >= 0) & (v + w <= 1)
    plane = np.abs(np.sum(ap * n, 1)) / np.sqrt(nn)
    best = np.where(inside, plane, np.inf)
    for p0, p1 in ((a, b), (b, c), (c, a)):
        dd = p1 - p0
        t = np.clip(np.sum((p - p0) * dd, 1) / np.sum(dd * dd, 1), 0, 1)
        best = np.minimum(best, np.linalg.norm(p - (p0 + t[:, None] * dd), axis=1))
    return best


def dump_matrix(M, path) -> None:
    """Indexed binary triplets (row, col, re, im) with a CSV header file."""
    M = np.asarray(M)
    r, c = np.nonzero(M)
    rec = np.zeros(len(r), dtype=[("row", "<i8"), ("col", "<i8"), ("re", "<f8"), ("im", "<f8")])
    rec["row"], rec["col"] = r, c
    rec["re"], rec["im"] = M[r, c].real, M[r, c].imag
    rec.tofile(str(path) + ".bin")
    with open(str(path) + ".csv", "w") as fh:
        fh.write("rows,cols,nnz,dtype\n")
        fh.write(f"{M.shape[0]},{M.shape[1]},{len(r)},row:i8|col:i8|re:f8|im:f8\n")
