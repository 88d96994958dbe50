"""Triangle mesh container, OFF/OBJ I/O, and differential-geometry estimation.

A :class:`TriMesh` is immutable after construction: all arrays are marked
read-only, and the estimation routines return new meshes instead of mutating.
This makes meshes safe to share across worker threads during preprocessing.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from scipy import sparse


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed; message carries the line number."""


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class TriMesh:
    """Triangle mesh with derived adjacency, edge lengths, and validity masks.

    Parameters
    ----------
    vertices : (N, 3) float array
        Vertex positions in model units.
    faces : (F, 3) int array
        Vertex-index triples. Every face must reference three distinct,
        in-range vertices. Winding determines normal orientation.
    normals : (N, 3) float array, optional
        Unit per-vertex normals (zero rows mark vertices without a usable
        normal). Left ``None`` until :func:`estimate_normals` is run.
    curvature_dirs : (N, 3) float array, optional
        Unit direction of maximum curvature, tangent to the surface.
    curvature_reliable : (N,) bool array, optional
        False at umbilic or under-determined vertices.

    Attributes
    ----------
    vertex_adjacency : list of int arrays
        Sorted neighbor indices per vertex (symmetric by construction).
    edges : (E, 2) int array
        Undirected edges, each row sorted.
    edge_lengths : (E,) float array
        Euclidean edge lengths.
    center_ok : (N,) bool array
        True for vertices usable as patch centers (not isolated, not on a
        non-manifold edge).
    """

    def __init__(self, vertices, faces, normals=None, curvature_dirs=None,
                 curvature_reliable=None):
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {vertices.shape}")
        faces = np.asarray(faces, dtype=np.int64)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {faces.shape}")
        n = len(vertices)
        if faces.size:
            if faces.min() < 0 or faces.max() >= n:
                bad = np.argmax(np.any((faces < 0) | (faces >= n), axis=1))
                raise ValueError(
                    f"face {bad} references vertex outside [0, {n})")
            dup = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) \
                | (faces[:, 0] == faces[:, 2])
            if dup.any():
                raise ValueError(
                    f"face {np.argmax(dup)} is degenerate (repeated vertex index)")

        self.vertices = _readonly(vertices)
        self.faces = _readonly(faces)

        # Undirected edge list and per-edge halfedge multiplicity.
        if faces.size:
            half = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
            und = np.sort(half, axis=1)
            edges, counts = np.unique(und, axis=0, return_counts=True)
        else:
            edges = np.zeros((0, 2), dtype=np.int64)
            counts = np.zeros(0, dtype=np.int64)
        self.edges = _readonly(edges)
        self.edge_lengths = _readonly(
            np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
            if len(edges) else np.zeros(0))

        # Symmetric neighbor lists.
        adj = [np.zeros(0, dtype=np.int64)] * n
        if len(edges):
            src = np.concatenate([edges[:, 0], edges[:, 1]])
            dst = np.concatenate([edges[:, 1], edges[:, 0]])
            order = np.argsort(src, kind="stable")
            src, dst = src[order], dst[order]
            starts = np.searchsorted(src, np.arange(n + 1))
            adj = [np.sort(dst[starts[i]:starts[i + 1]]) for i in range(n)]
        self.vertex_adjacency = adj

        isolated = np.ones(n, dtype=bool)
        if faces.size:
            isolated[np.unique(faces)] = False
        nonmanifold = np.zeros(n, dtype=bool)
        if len(edges):
            bad_edges = edges[counts > 2]
            nonmanifold[np.unique(bad_edges)] = True
        self.is_isolated = _readonly(isolated)
        self.center_ok = _readonly(~isolated & ~nonmanifold)

        self.normals = None if normals is None else _readonly(
            np.asarray(normals, dtype=np.float64))
        self.curvature_dirs = None if curvature_dirs is None else _readonly(
            np.asarray(curvature_dirs, dtype=np.float64))
        self.curvature_reliable = None if curvature_reliable is None else _readonly(
            np.asarray(curvature_reliable, dtype=bool))

        self._csr = None
        self._face_areas = None
        self._hash = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def length_csr(self):
        """Sparse symmetric adjacency with edge lengths as weights."""
        if self._csr is None:
            e, w = self.edges, self.edge_lengths
            n = self.n_vertices
            self._csr = sparse.csr_matrix(
                (np.concatenate([w, w]),
                 (np.concatenate([e[:, 0], e[:, 1]]),
                  np.concatenate([e[:, 1], e[:, 0]]))),
                shape=(n, n))
        return self._csr

    @property
    def face_areas(self):
        if self._face_areas is None:
            v = self.vertices
            f = self.faces
            c = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            self._face_areas = _readonly(0.5 * np.linalg.norm(c, axis=1))
        return self._face_areas

    @property
    def surface_area(self):
        return float(self.face_areas.sum())

    @property
    def content_hash(self):
        """Hex sha256 of vertex and face bytes; used to key caches."""
        if self._hash is None:
            h = hashlib.sha256()
            h.update(self.vertices.tobytes())
            h.update(self.faces.tobytes())
            self._hash = h.hexdigest()
        return self._hash

    def replace(self, **kw):
        """New TriMesh sharing this geometry with some fields overridden."""
        args = dict(normals=self.normals, curvature_dirs=self.curvature_dirs,
                    curvature_reliable=self.curvature_reliable)
        args.update(kw)
        return TriMesh(self.vertices, self.faces, **args)

    def two_ring(self, i):
        """Indices within graph distance 2 of vertex ``i`` (excluding ``i``)."""
        ring1 = self.vertex_adjacency[i]
        out = set(ring1.tolist())
        for j in ring1:
            out.update(self.vertex_adjacency[j].tolist())
        out.discard(i)
        return np.array(sorted(out), dtype=np.int64)


# ---------------------------------------------------------------------------
# File I/O

def load_mesh(path, fmt=None):
    """Load a triangle mesh from an OFF or OBJ file.

    ``fmt`` is inferred from the extension when not given. Parse failures
    raise :class:`MeshFormatError` naming the offending line.
    """
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt == "off":
        return _load_off(path)
    if fmt == "obj":
        return _load_obj(path)
    raise ValueError(f"unsupported mesh format {fmt!r} (expected 'off' or 'obj')")


def _meaningful_lines(path):
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield ln, line


def _load_off(path):
    lines = _meaningful_lines(path)
    ln = 0
    try:
        ln, header = next(lines)
    except StopIteration:
        raise MeshFormatError(f"{path}: line 1: empty OFF file")
    toks = header.split()
    if toks[0] != "OFF":
        raise MeshFormatError(f"{path}: line {ln}: expected OFF header, got {toks[0]!r}")
    counts = toks[1:]
    if not counts:
        try:
            ln, line = next(lines)
        except StopIteration:
            raise MeshFormatError(f"{path}: line {ln}: missing counts line")
        counts = line.split()
    if len(counts) < 2:
        raise MeshFormatError(f"{path}: line {ln}: counts line needs at least 2 ints")
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except ValueError:
        raise MeshFormatError(f"{path}: line {ln}: malformed counts {counts!r}")

    verts = np.zeros((nv, 3))
    for i in range(nv):
        try:
            ln, line = next(lines)
        except StopIteration:
            raise MeshFormatError(
                f"{path}: line {ln}: declared {nv} vertices but file ended after {i}")
        toks = line.split()
        if len(toks) < 3:
            raise MeshFormatError(f"{path}: line {ln}: vertex line needs 3 coordinates")
        try:
            verts[i] = [float(toks[0]), float(toks[1]), float(toks[2])]
        except ValueError:
            raise MeshFormatError(f"{path}: line {ln}: malformed vertex {line!r}")

    faces = np.zeros((nf, 3), dtype=np.int64)
    for i in range(nf):
        try:
            ln, line = next(lines)
        except StopIteration:
            raise MeshFormatError(
                f"{path}: line {ln}: declared {nf} faces but file ended after {i}")
        toks = line.split()
        try:
            cnt = int(toks[0])
        except ValueError:
            raise MeshFormatError(f"{path}: line {ln}: malformed face {line!r}")
        if cnt != 3:
            raise MeshFormatError(f"{path}: line {ln}: only triangular faces supported "
                                  f"(face has {cnt} vertices)")
        if len(toks) < 4:
            raise MeshFormatError(f"{path}: line {ln}: face line needs 3 indices")
        try:
            idx = [int(toks[1]), int(toks[2]), int(toks[3])]
        except ValueError:
            raise MeshFormatError(f"{path}: line {ln}: malformed face {line!r}")
        for j in idx:
            if j < 0 or j >= nv:
                raise MeshFormatError(
                    f"{path}: line {ln}: vertex index {j} out of range [0, {nv})")
        faces[i] = idx
    return TriMesh(verts, faces)


def _load_obj(path):
    verts = []
    faces = []
    for ln, line in _meaningful_lines(path):
        toks = line.split()
        if toks[0] == "v":
            if len(toks) < 4:
                raise MeshFormatError(f"{path}: line {ln}: vertex line needs 3 coordinates")
            try:
                verts.append([float(t) for t in toks[1:4]])
            except ValueError:
                raise MeshFormatError(f"{path}: line {ln}: malformed vertex {line!r}")
        elif toks[0] == "f":
            refs = toks[1:]
            if len(refs) != 3:
                raise MeshFormatError(f"{path}: line {ln}: only triangular faces supported "
                                      f"(face has {len(refs)} vertices)")
            idx = []
            for r in refs:
                head = r.split("/", 1)[0]
                try:
                    k = int(head)
                except ValueError:
                    raise MeshFormatError(f"{path}: line {ln}: malformed face {line!r}")
                if k < 0:
                    k = len(verts) + 1 + k
                if k < 1 or k > len(verts):
                    raise MeshFormatError(
                        f"{path}: line {ln}: vertex index {k} out of range [1, {len(verts)}]")
                idx.append(k - 1)
            faces.append(idx)
        # other OBJ records (vn, vt, usemtl, ...) are ignored
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_off(mesh, path):
    """Write an OFF file whose vertex coordinates round-trip bit-exactly."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


# ---------------------------------------------------------------------------
# Differential geometry

def estimate_normals(mesh):
    """Per-vertex normals as the area-weighted mean of incident face normals.

    Returns a new mesh. Vertices with no incident face (or whose incident
    face normals cancel exactly) get the zero vector; such vertices are never
    used as patch centers.
    """
    v, f = mesh.vertices, mesh.faces
    acc = np.zeros_like(v)
    if len(f):
        # cross product = 2 * area * unit normal, so summing raw crosses
        # is exactly the area weighting
        cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for k in range(3):
            np.add.at(acc, f[:, k], cr)
    norms = np.linalg.norm(acc, axis=1)
    ok = norms > 0
    out = np.zeros_like(acc)
    out[ok] = acc[ok] / norms[ok, None]
    return mesh.replace(normals=out)


def tangent_basis(n):
    """Deterministic orthonormal (t1, t2) spanning the plane orthogonal to n."""
    a = np.zeros(3)
    a[np.argmin(np.abs(n))] = 1.0
    t1 = a - n * (a @ n)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def principal_direction(offsets, normal, min_neighbors=5):
    """Maximum-curvature direction from a quadric fit of neighbor offsets.

    Fits w = a u^2 + b uv + c v^2 + d u + e v in the tangent frame of
    ``normal`` and eigen-decomposes the second-order part. Returns
    ``(direction, k_max, k_min, ok)`` where the direction is a unit tangent
    vector and ``ok`` is False when the fit is under-determined. Curvatures
    are ordered by decreasing absolute value.
    """
    t1, t2 = tangent_basis(normal)
    if len(offsets) < min_neighbors:
        return t1, 0.0, 0.0, False
    u = offsets @ t1
    vv = offsets @ t2
    w = offsets @ normal
    A = np.stack([u * u, u * vv, vv * vv, u, vv], axis=1)
    coef, *_ = np.linalg.lstsq(A, w, rcond=None)
    a, b, c = coef[0], coef[1], coef[2]
    shape_op = np.array([[2 * a, b], [b, 2 * c]])
    evals, evecs = np.linalg.eigh(shape_op)
    order = np.argsort(-np.abs(evals))
    k_max, k_min = evals[order[0]], evals[order[1]]
    q = evecs[:, order[0]]
    if q[0] < 0 or (q[0] == 0 and q[1] < 0):
        q = -q
    d = q[0] * t1 + q[1] * t2
    d /= np.linalg.norm(d)
    return d, float(k_max), float(k_min), True


# Relative gap below which the two principal curvatures count as equal.
# Discrete estimates on a sphere differ by a couple percent, so this cannot
# be a tight absolute tolerance; a cylinder (gap ratio 1) stays clearly above.
UMBILIC_REL_GAP = 0.05
# Curvature magnitude under which a vertex counts as flat, in units of
# 1 / mean edge length.
UMBILIC_FLAT_SCALE = 1e-6


def estimate_curvature_dirs(mesh, min_neighbors=5, rel_gap=UMBILIC_REL_GAP):
    """Per-vertex direction of maximum curvature via 2-ring quadric fits.

    Requires normals. Returns a new mesh with ``curvature_dirs`` set to unit
    tangent vectors and ``curvature_reliable`` False at umbilic vertices
    (principal curvatures equal up to ``rel_gap``, or flat) and at vertices
    with fewer than ``min_neighbors`` 2-ring neighbors.
    """
    if mesh.normals is None:
        raise ValueError("estimate_curvature_dirs requires normals; "
                         "run estimate_normals first")
    n = mesh.n_vertices
    dirs = np.zeros((n, 3))
    ok = np.zeros(n, dtype=bool)
    mean_edge = float(mesh.edge_lengths.mean()) if len(mesh.edge_lengths) else 1.0
    flat = UMBILIC_FLAT_SCALE / max(mean_edge, 1e-30)
    for i in range(n):
        nrm = mesh.normals[i]
        if not np.any(nrm):
            dirs[i] = tangent_basis(np.array([0.0, 0.0, 1.0]))[0]
            continue
        ring = mesh.two_ring(i)
        offs = mesh.vertices[ring] - mesh.vertices[i]
        d, k1, k2, fit_ok = principal_direction(offs, nrm, min_neighbors)
        dirs[i] = d
        if not fit_ok:
            continue
        gap = abs(k1 - k2)
        scale = max(abs(k1), abs(k2))
        umbilic = scale <= flat or gap <= rel_gap * scale
        ok[i] = not umbilic
    return mesh.replace(curvature_dirs=dirs, curvature_reliable=ok)
