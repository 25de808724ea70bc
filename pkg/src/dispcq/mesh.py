"""Closed oriented triangle surfaces: generators, readers/writers, validation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import MeshError


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangle surface.  Construct through :func:`build_mesh`, which validates.

    ``face_edges[f, k]`` is the edge opposite local vertex ``k`` of face ``f``.
    ``parents`` (optional) maps each face to its face on the previous
    refinement level.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_faces: np.ndarray
    face_edges: np.ndarray
    level: int | None = None
    parents: np.ndarray | None = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def corners(self) -> np.ndarray:
        """(F, 3, 3) vertex coordinates per face."""
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self):
        p = self.corners
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        v = self.vertices
        return np.linalg.norm(v[self.edges[:, 1]] - v[self.edges[:, 0]], axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        """Circumscribed-circle diameter per face."""
        p = self.corners
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return a * b * c / (2.0 * self.areas)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def face_sizes(self) -> np.ndarray:
        """Longest edge per face (used for near-field decisions)."""
        p = self.corners
        return np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1)

    @cached_property
    def components(self) -> np.ndarray:
        ef = self.edge_faces
        g = coo_matrix((np.ones(len(ef)), (ef[:, 0], ef[:, 1])), shape=(self.n_faces,) * 2)
        return connected_components(g, directed=False)[1]

    @property
    def n_components(self) -> int:
        return int(self.components.max()) + 1

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def signed_volume(self, component=None) -> float:
        """Enclosed volume by the divergence theorem (positive for outward normals)."""
        p = self.corners
        vol = np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])) / 6.0
        if component is not None:
            vol = vol[self.components == component]
        return float(vol.sum())

    def info(self) -> dict:
        return {
            "vertices": self.n_vertices,
            "edges": self.n_edges,
            "faces": self.n_faces,
            "components": self.n_components,
            "euler": self.euler_characteristic,
            "h": self.h,
            "volume": self.signed_volume(),
            "level": self.level,
        }


def _edge_structure(triangles, n_vertices):
    tri = np.asarray(triangles)
    F = len(tri)
    # local edge k is opposite vertex k: (v[k+1], v[k+2])
    a = tri[:, [1, 2, 0]].ravel()
    b = tri[:, [2, 0, 1]].ravel()
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    key = lo.astype(np.int64) * n_vertices + hi
    uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    bad = np.nonzero(counts != 2)[0]
    if len(bad):
        e = uniq[bad[0]]
        raise MeshError(
            f"non-manifold edge ({e // n_vertices}, {e % n_vertices}) shared by "
            f"{counts[bad[0]]} triangle(s)"
        )
    edges = np.stack([uniq // n_vertices, uniq % n_vertices], axis=1)
    face_edges = inverse.reshape(F, 3)
    faces_of = np.repeat(np.arange(F), 3)
    order = np.argsort(inverse, kind="stable")
    edge_faces = faces_of[order].reshape(-1, 2)
    return edges, edge_faces, face_edges


def _orientation_flips(triangles, edges, edge_faces, face_edges):
    """Flood fill: boolean per face telling whether it must be reversed."""
    tri = np.asarray(triangles)
    F = len(tri)
    # direction in which each face traverses each of its edges
    a = tri[:, [1, 2, 0]]
    forward = a == edges[face_edges][:, :, 0]
    flip = np.full(F, -1, dtype=int)
    nbrs = [[] for _ in range(F)]
    for e, (f0, f1) in enumerate(edge_faces):
        k0 = int(np.nonzero(face_edges[f0] == e)[0][0])
        k1 = int(np.nonzero(face_edges[f1] == e)[0][0])
        same = forward[f0, k0] == forward[f1, k1]
        nbrs[f0].append((f1, same, e))
        nbrs[f1].append((f0, same, e))
    for seed in range(F):
        if flip[seed] >= 0:
            continue
        flip[seed] = 0
        stack = [seed]
        while stack:
            f = stack.pop()
            for g, same, e in nbrs[f]:
                want = flip[f] ^ int(same)
                if flip[g] < 0:
                    flip[g] = want
                    stack.append(g)
                elif flip[g] != want:
                    raise MeshError(f"surface is not orientable (conflict across edge {tuple(edges[e])})")
    return flip.astype(bool)


def build_mesh(vertices, triangles, repair=True, level=None, parents=None) -> SurfaceMesh:
    """Validate connectivity and orientation and return a SurfaceMesh.

    With ``repair`` the orientation is made consistent by flood fill and
    every connected component is turned outward (positive volume);
    otherwise inconsistencies raise MeshError.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be an (F, 3) index array")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle references a vertex that does not exist")
    if np.any(triangles[:, 0] == triangles[:, 1]) or np.any(triangles[:, 1] == triangles[:, 2]) or np.any(
        triangles[:, 0] == triangles[:, 2]
    ):
        raise MeshError("degenerate triangle with repeated vertex")
    edges, edge_faces, face_edges = _edge_structure(triangles, len(vertices))
    flips = _orientation_flips(triangles, edges, edge_faces, face_edges)
    if flips.any():
        if not repair:
            raise MeshError("inconsistent triangle orientation")
        triangles = triangles.copy()
        triangles[flips] = triangles[flips][:, ::-1]
        edges, edge_faces, face_edges = _edge_structure(triangles, len(vertices))
    mesh = SurfaceMesh(vertices, triangles, edges, edge_faces, face_edges, level, parents)
    if np.any(mesh.areas <= 0):
        raise MeshError("zero-area triangle")
    inward = [c for c in range(mesh.n_components) if mesh.signed_volume(c) < 0]
    if inward:
        if not repair:
            raise MeshError(f"component(s) {inward} have inward normals")
        triangles = triangles.copy()
        sel = np.isin(mesh.components, inward)
        triangles[sel] = triangles[sel][:, ::-1]
        edges, edge_faces, face_edges = _edge_structure(triangles, len(vertices))
        mesh = SurfaceMesh(vertices, triangles, edges, edge_faces, face_edges, level, parents)
    return mesh


def check_mesh(mesh: SurfaceMesh) -> None:
    """Assert the closed/oriented/outward invariants (raises MeshError)."""
    build_mesh(mesh.vertices, mesh.triangles, repair=False)
    for c in range(mesh.n_components):
        if mesh.signed_volume(c) <= 0:
            raise MeshError(f"component {c} is not outward oriented")


def _icosahedron():
    t = (1.0 + 5**0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1)[:, None], f


def _subdivide(vertices, triangles):
    verts = list(vertices)
    cache = {}

    def mid(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = 0.5 * (vertices[i] + vertices[j])
            cache[key] = len(verts)
            verts.append(m / np.linalg.norm(m))
        return cache[key]

    out = []
    for a, b, c in triangles:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])
    return np.array(verts), np.array(out)


def icosphere(level: int = 0, radius: float = 1.0) -> SurfaceMesh:
    """Recursively subdivided icosahedron; face 4f+k of level l+1 lies in face f of level l."""
    if not 0 <= level <= 7:
        raise ValueError(f"icosphere level must be in 0..7, got {level}")
    v, f = _icosahedron()
    parents = None
    for _ in range(level):
        v, f = _subdivide(v, f)
        parents = np.repeat(np.arange(len(f) // 4), 4)
    return build_mesh(radius * v, f, repair=False, level=level, parents=parents)


def _box_surface(lo, hi, divisions):
    """Structured triangulation of an axis-aligned box surface (outward)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    k = int(divisions)
    s = np.linspace(0.0, 1.0, k + 1)
    verts, tris = [], []
    index = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for axis in range(3):
        u, w = [a for a in range(3) if a != axis]
        for side in (0, 1):
            grid = np.empty((k + 1, k + 1), dtype=int)
            for i in range(k + 1):
                for j in range(k + 1):
                    p = np.empty(3)
                    p[axis] = hi[axis] if side else lo[axis]
                    p[u] = lo[u] + s[i] * (hi[u] - lo[u])
                    p[w] = lo[w] + s[j] * (hi[w] - lo[w])
                    grid[i, j] = vid(p)
            for i in range(k):
                for j in range(k):
                    a, b, c, d = grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]
                    tris.extend([[a, b, c], [a, c, d]])
    return np.array(verts), np.array(tris)


def two_cubes(gap: float = 0.5, divisions: int = 1) -> SurfaceMesh:
    """Two unit cubes side by side along x, separated by ``gap``.

    Cube A spans x in [-1 - gap/2, -gap/2], cube B spans x in [gap/2, 1 + gap/2];
    both span y in [0, 1] and z in [-1/2, 1/2].
    """
    if not gap > 0:
        raise ValueError("gap must be positive")
    va, ta = _box_surface([-1 - gap / 2, 0, -0.5], [-gap / 2, 1, 0.5], divisions)
    vb, tb = _box_surface([gap / 2, 0, -0.5], [1 + gap / 2, 1, 0.5], divisions)
    return build_mesh(np.vstack([va, vb]), np.vstack([ta, tb + len(va)]), repair=True)


def write_off(mesh: SurfaceMesh, path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def _tokens(path):
    """Yield (line number, tokens) skipping blanks and '#' comments."""
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield no, line.split()


def read_off(path):
    it = _tokens(path)
    try:
        no, head = next(it)
        if head[0] != "OFF":
            raise MeshError(f"{path}:{no}: expected 'OFF' header")
        head = head[1:]
        if not head:
            no, head = next(it)
        nv, nf = int(head[0]), int(head[1])
        verts = []
        for _ in range(nv):
            no, tok = next(it)
            verts.append([float(x) for x in tok[:3]])
        tris = []
        for _ in range(nf):
            no, tok = next(it)
            if int(tok[0]) != 3:
                raise MeshError(f"{path}:{no}: only triangles are supported, got a {tok[0]}-gon")
            tris.append([int(x) for x in tok[1:4]])
    except StopIteration:
        raise MeshError(f"{path}: unexpected end of file") from None
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}:{no}: cannot parse line ({exc})") from None
    return np.array(verts), np.array(tris, dtype=np.int64)


def read_gmsh(path):
    """Gmsh MSH 2.x ASCII; only triangle elements (type 2) are kept."""
    it = _tokens(path)
    nodes, tris = {}, []
    no = 0
    try:
        for no, tok in it:
            if tok[0] == "$MeshFormat":
                no, fmt = next(it)
                if not fmt[0].startswith("2") or fmt[1] != "0":
                    raise MeshError(f"{path}:{no}: only ASCII MSH version 2 is supported")
            elif tok[0] == "$Nodes":
                no, cnt = next(it)
                for _ in range(int(cnt[0])):
                    no, t = next(it)
                    nodes[int(t[0])] = [float(x) for x in t[1:4]]
            elif tok[0] == "$Elements":
                no, cnt = next(it)
                for _ in range(int(cnt[0])):
                    no, t = next(it)
                    etype, ntags = int(t[1]), int(t[2])
                    if etype == 2:
                        tris.append([int(x) for x in t[3 + ntags : 6 + ntags]])
    except StopIteration:
        raise MeshError(f"{path}: unexpected end of file") from None
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}:{no}: cannot parse line ({exc})") from None
    if not tris:
        raise MeshError(f"{path}: no triangle elements found")
    ids = sorted(nodes)
    remap = {nid: i for i, nid in enumerate(ids)}
    try:
        tri = np.array([[remap[n] for n in t] for t in tris], dtype=np.int64)
    except KeyError as exc:
        raise MeshError(f"{path}: element references unknown node {exc}") from None
    used = np.unique(tri)
    compact = -np.ones(len(ids), dtype=np.int64)
    compact[used] = np.arange(len(used))
    verts = np.array([nodes[ids[i]] for i in used])
    return verts, compact[tri]


def load_mesh(path, format: str | None = None) -> SurfaceMesh:
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"mesh file {path} does not exist")
    fmt = format or {".off": "off", ".msh": "gmsh"}.get(path.suffix.lower())
    if fmt == "off":
        v, t = read_off(path)
    elif fmt in ("gmsh", "msh", "gmsh-msh-v2-ascii"):
        v, t = read_gmsh(path)
    else:
        raise MeshError(f"cannot infer mesh format of {path}")
    return build_mesh(v, t, repair=True)
