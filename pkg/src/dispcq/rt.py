"""Lowest-order Raviart-Thomas (RWG) space on a SurfaceMesh.

DOF e lives on mesh edge e, globally directed from its lower to its higher
vertex index.  The face that traverses the edge in that direction is the
"+" face and carries sign +1.  On face f the basis function of its local
edge k (opposite vertex p_k) is

    phi = sign[f, k] * l_k / (2 A_f) * (x - p_k),

so the normal component across edge e is +1 measured out of the + face.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .mesh import SurfaceMesh
from .quadrature import edge_rule, triangle_rule, chart


@dataclass(frozen=True, eq=False)
class RTSpace:
    mesh: SurfaceMesh
    order: int = 0

    def __post_init__(self):
        if self.order != 0:
            raise ConfigError("only Raviart-Thomas order 0 is implemented")

    @property
    def dim(self) -> int:
        return self.mesh.n_edges

    @cached_property
    def signs(self) -> np.ndarray:
        """(F, 3) orientation sign of each local basis function."""
        tri = self.mesh.triangles
        start = tri[:, [1, 2, 0]]
        return np.where(start == self.mesh.edges[self.mesh.face_edges][:, :, 0], 1.0, -1.0)

    @cached_property
    def local_lengths(self) -> np.ndarray:
        return self.mesh.edge_lengths[self.mesh.face_edges]

    @cached_property
    def local_scale(self) -> np.ndarray:
        """sign * l / (2A) per (face, local edge)."""
        return self.signs * self.local_lengths / (2.0 * self.mesh.areas[:, None])

    @cached_property
    def divergence(self) -> np.ndarray:
        """(F, 3) constant surface divergence sign * l / A of each local basis function."""
        return 2.0 * self.local_scale

    @cached_property
    def plus_minus_faces(self) -> np.ndarray:
        """(E, 2): the + face and the - face of each edge."""
        m = self.mesh
        out = np.empty((m.n_edges, 2), dtype=np.int64)
        f = np.repeat(np.arange(m.n_faces), 3)
        e = m.face_edges.ravel()
        s = self.signs.ravel()
        out[e[s > 0], 0] = f[s > 0]
        out[e[s < 0], 1] = f[s < 0]
        return out

    def basis_at(self, faces, points):
        """Local basis values (K, 3 local, 3 xyz) at ``points`` (K, 3) lying in ``faces`` (K,)."""
        p = self.mesh.corners[faces]
        return self.local_scale[faces][:, :, None] * (points[:, None, :] - p)

    def evaluate(self, coeffs, faces, points):
        """Field sum_e c_e phi_e at points lying on the given faces -> (K, 3) (complex ok)."""
        c = np.asarray(coeffs)[self.mesh.face_edges[faces]]
        return np.einsum("kl,klx->kx", c, self.basis_at(faces, points))

    def surface_div(self, coeffs):
        """Piecewise constant surface divergence per face."""
        return np.sum(np.asarray(coeffs)[self.mesh.face_edges] * self.divergence, axis=1)

    def _local_to_global(self, local):
        """Scatter a (F, 3, 3) stack of local matrices into a sparse E x E matrix."""
        fe = self.mesh.face_edges
        rows = np.repeat(fe, 3, axis=1).ravel()
        cols = np.tile(fe, (1, 3)).ravel()
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(self.dim, self.dim))

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        """Gram matrix of the basis in tangential L2 (exact degree-2 rule)."""
        ref, w = triangle_rule(2)
        m = self.mesh
        x = chart(m.corners, ref)  # (F, q, 3)
        F, q = x.shape[:2]
        phi = self.basis_at(np.repeat(np.arange(F), q), x.reshape(-1, 3)).reshape(F, q, 3, 3)
        local = np.einsum("q,fqax,fqbx->fab", w, phi, phi) * (2.0 * m.areas)[:, None, None]
        return self._local_to_global(local)

    @cached_property
    def div_matrix(self) -> sp.csr_matrix:
        """Gram matrix of surface divergences."""
        d = self.divergence
        local = d[:, :, None] * d[:, None, :] * self.mesh.areas[:, None, None]
        return self._local_to_global(local)

    def l2_norm(self, coeffs) -> float:
        c = np.asarray(coeffs)
        return float(np.sqrt(abs(np.vdot(c, self.mass_matrix @ c))))

    def graph_norm(self, coeffs) -> float:
        """sqrt(||u||^2 + ||div u||^2), the H(div) surrogate."""
        c = np.asarray(coeffs)
        return float(np.sqrt(abs(np.vdot(c, self.mass_matrix @ c)) + abs(np.vdot(c, self.div_matrix @ c))))

    def dump_dofs(self, path) -> None:
        """CSV table of DOFs for debugging."""
        m = self.mesh
        pm = self.plus_minus_faces
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["dof", "v_lo", "v_hi", "face_plus", "face_minus", "length"])
            for e in range(self.dim):
                wr.writerow([e, *m.edges[e], *pm[e], repr(float(m.edge_lengths[e]))])


def assemble_pairing(space: RTSpace) -> sp.csr_matrix:
    """B_ij = int (phi_i x nu) . phi_j.

    The integrand is affine on each face, so the centroid value times the
    area is exact; antisymmetry holds bit for bit because every local
    entry is formed from a cross product and its negation.
    """
    m = space.mesh
    p = m.corners
    xc = m.centroids
    d = xc[:, None, :] - p  # x_bar - p_a, (F, 3, 3)
    cr = np.cross(d[:, None, :, :], d[:, :, None, :])  # [f, a, b] = d_b x d_a... see below
    # (phi_a x nu) . phi_b = nu . (phi_b x phi_a)
    vals = np.einsum("fabx,fx->fab", cr, m.normals)
    s = space.local_scale
    local = vals * s[:, :, None] * s[:, None, :] * m.areas[:, None, None]
    local = 0.5 * (local - np.transpose(local, (0, 2, 1)))
    return space._local_to_global(local)


def _edge_normals(space: RTSpace, faces, local):
    """Unit in-plane normal of local edge ``local`` pointing out of ``faces``."""
    m = space.mesh
    p = m.corners[faces]
    k = local
    pk = p[np.arange(len(faces)), k]
    a = p[np.arange(len(faces)), (k + 1) % 3]
    b = p[np.arange(len(faces)), (k + 2) % 3]
    t = (b - a) / np.linalg.norm(b - a, axis=1)[:, None]
    v = a - pk
    n = v - np.sum(v * t, axis=1)[:, None] * t
    return a, b, n / np.linalg.norm(n, axis=1)[:, None]


def rt_interpolate(space: RTSpace, field, n_points: int = 3) -> np.ndarray:
    """Edge-moment interpolant of a tangential field.

    ``field(points, faces)`` returns (K, 3) vectors; ``faces`` says on which
    side of an edge the field is sampled, so piecewise fields interpolate
    exactly.  The DOF is the mean normal component, averaged over the two
    adjacent faces.
    """
    m = space.mesh
    g, gw = edge_rule(n_points)
    coeff = None
    for side, sgn in ((0, 1.0), (1, -1.0)):
        faces = space.plus_minus_faces[:, side]
        local = np.argmax(m.face_edges[faces] == np.arange(m.n_edges)[:, None], axis=1)
        a, b, n = _edge_normals(space, faces, local)
        pts = a[:, None, :] + g[None, :, None] * (b - a)[:, None, :]
        E, q = pts.shape[:2]
        vals = np.asarray(field(pts.reshape(-1, 3), np.repeat(faces, q))).reshape(E, q, 3)
        moment = np.einsum("q,eqx,ex->e", gw, vals, n)
        coeff = sgn * moment if coeff is None else coeff + sgn * moment
    return 0.5 * coeff


def pairing_load(space: RTSpace, field, order: int = 6) -> np.ndarray:
    """Load vector l_i = int (phi_i x nu) . field for a tangential ``field(points, faces)``."""
    m = space.mesh
    ref, w = triangle_rule(order)
    x = chart(m.corners, ref)
    F, q = x.shape[:2]
    faces = np.repeat(np.arange(F), q)
    pts = x.reshape(-1, 3)
    rot = np.cross(space.basis_at(faces, pts), m.normals[faces][:, None, :])
    vals = np.einsum("nkx,nx->nk", rot, np.asarray(field(pts, faces)))
    vals = vals * (w[None, :] * 2.0 * m.areas[:, None]).ravel()[:, None]
    out = np.zeros(space.dim, dtype=vals.dtype)
    np.add.at(out, m.face_edges[faces].ravel(), vals.ravel())
    return out


def interpolation_error(space: RTSpace, coeffs, field, order: int = 4) -> float:
    """Tangential L2 distance between the RT field ``coeffs`` and ``field``."""
    m = space.mesh
    ref, w = triangle_rule(order)
    x = chart(m.corners, ref)
    F, q = x.shape[:2]
    faces = np.repeat(np.arange(F), q)
    pts = x.reshape(-1, 3)
    diff = space.evaluate(coeffs, faces, pts) - np.asarray(field(pts, faces))
    err2 = np.sum(np.abs(diff) ** 2, axis=1).reshape(F, q) @ w * 2.0 * m.areas
    return float(np.sqrt(err2.sum()))
