"""Procedural mesh generators used by tests, demos, and stand-in datasets.

Benchmark corpora (human scans and registered templates) cannot be bundled,
so desk-scale experiments run on these generators instead. Every generator is
deterministic given its arguments.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh, estimate_curvature_dirs, estimate_normals


def tetrahedron():
    """Regular tetrahedron with unit edge length."""
    v = np.array([
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]) / np.sqrt(8.0)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, f)


def icosahedron(radius=1.0):
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    v *= radius / np.linalg.norm(v[0])
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return TriMesh(v, f)


def icosphere(subdivisions=2, radius=1.0):
    """Icosahedron subdivided ``subdivisions`` times, projected to the sphere.

    Subdivision level 2 gives 162 vertices and 320 faces.
    """
    base = icosahedron(1.0)
    verts = [tuple(p) for p in base.vertices]
    faces = base.faces.tolist()
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = np.array(verts[i]) + np.array(verts[j])
                p /= np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    v = np.array(verts, dtype=np.float64)
    v *= radius / np.linalg.norm(v, axis=1)[:, None]
    return TriMesh(v, np.array(faces))


def plane_grid(nx=10, ny=10, spacing=1.0):
    """Flat grid in the z=0 plane with CCW winding (normals +z)."""
    xs = np.arange(nx) * spacing
    ys = np.arange(ny) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    v = np.stack([gx.ravel(), gy.ravel(), np.zeros(nx * ny)], axis=1)
    f = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            f += [[a, b, b + 1], [a, b + 1, a + 1]]
    return TriMesh(v, np.array(f))


def rectangle_sheet(a=2.0, b=1.0, nx=31, ny=16):
    """Rectangle [0,a] x [0,b] triangulated on an nx-by-ny vertex grid."""
    mesh = plane_grid(nx, ny, 1.0)
    v = mesh.vertices.copy()
    v[:, 0] *= a / (nx - 1)
    v[:, 1] *= b / (ny - 1)
    return TriMesh(v, mesh.faces)


def cylinder(radius=1.0, height=4.0, n_theta=16, n_z=9, caps=False):
    """Open (or capped) cylinder with axis z, centered at the origin."""
    thetas = np.arange(n_theta) * (2 * np.pi / n_theta)
    zs = np.linspace(-height / 2, height / 2, n_z)
    v = []
    for z in zs:
        for t in thetas:
            v.append([radius * np.cos(t), radius * np.sin(t), z])
    f = []
    for i in range(n_z - 1):
        for j in range(n_theta):
            a = i * n_theta + j
            b = i * n_theta + (j + 1) % n_theta
            c = a + n_theta
            d = b + n_theta
            f += [[a, b, d], [a, d, c]]
    if caps:
        lo = len(v)
        v.append([0.0, 0.0, zs[0]])
        hi = len(v)
        v.append([0.0, 0.0, zs[-1]])
        for j in range(n_theta):
            jn = (j + 1) % n_theta
            f.append([lo, jn, j])
            base = (n_z - 1) * n_theta
            f.append([hi, base + j, base + jn])
    return TriMesh(np.array(v), np.array(f))


def line_strip(n=4, spacing=1.0):
    """Collinear vertices triangulated as a degenerate strip.

    Gives a chain-like edge graph (with i..i+2 shortcuts of combined length)
    for geodesic tests; the zero-area faces are never used for normals.
    """
    v = np.stack([np.arange(n) * spacing, np.zeros(n), np.zeros(n)], axis=1)
    f = np.array([[i, i + 1, i + 2] for i in range(n - 2)])
    return TriMesh(v, f)


def _bump_field(p, amp):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    return 1.0 + amp * (0.6 * np.sin(2.1 * x) * np.cos(1.3 * y)
                        + 0.4 * np.sin(1.7 * z + 0.5))


def bumpy_sphere(subdivisions=2, amp=0.25, radius=1.0):
    """Icosphere with a smooth deterministic radial modulation.

    The bumps break the sphere's symmetries so local frames disambiguate
    strictly at most vertices.
    """
    base = icosphere(subdivisions, 1.0)
    r = _bump_field(base.vertices, amp) * radius
    return TriMesh(base.vertices * r[:, None], base.faces)


def uv_sphere(n_rings=9, n_seg=22, radius=1.0):
    """Latitude/longitude sphere with two pole vertices.

    Vertex count is ``n_rings * n_seg + 2`` (200 for the 9 x 22 default).
    """
    v = [[0.0, 0.0, radius]]
    for i in range(1, n_rings + 1):
        phi = np.pi * i / (n_rings + 1)
        for j in range(n_seg):
            t = 2 * np.pi * j / n_seg
            v.append([radius * np.sin(phi) * np.cos(t),
                      radius * np.sin(phi) * np.sin(t),
                      radius * np.cos(phi)])
    v.append([0.0, 0.0, -radius])
    south = len(v) - 1
    f = []
    for j in range(n_seg):
        f.append([0, 1 + j, 1 + (j + 1) % n_seg])
    for i in range(n_rings - 1):
        a0 = 1 + i * n_seg
        b0 = a0 + n_seg
        for j in range(n_seg):
            jn = (j + 1) % n_seg
            f += [[a0 + j, b0 + j, b0 + jn], [a0 + j, b0 + jn, a0 + jn]]
    a0 = 1 + (n_rings - 1) * n_seg
    for j in range(n_seg):
        f.append([south, a0 + (j + 1) % n_seg, a0 + j])
    return TriMesh(np.array(v), np.array(f))


def bumpy_uv_sphere(n_rings=9, n_seg=22, amp=0.2, radius=1.0, jitter=0.0, seed=0):
    """UV sphere with the radial bump field of :func:`bumpy_sphere`.

    A nonzero ``jitter`` slides each non-pole vertex along the sphere before
    the bumps are applied (deterministic in ``seed``). Irregular sampling
    breaks the centro-symmetry of vertex rings, which makes local-frame sign
    votes decisive at most vertices.
    """
    base = uv_sphere(n_rings, n_seg, 1.0)
    v = base.vertices.copy()
    if jitter:
        rng = np.random.default_rng(seed)
        step = np.pi / (n_rings + 1)
        for i in range(1, len(v) - 1):
            phi = np.arccos(np.clip(v[i, 2], -1, 1))
            theta = np.arctan2(v[i, 1], v[i, 0])
            phi += jitter * step * rng.uniform(-1, 1)
            theta += jitter * step * rng.uniform(-1, 1)
            v[i] = [np.sin(phi) * np.cos(theta),
                    np.sin(phi) * np.sin(theta),
                    np.cos(phi)]
    r = _bump_field(v, amp) * radius
    return TriMesh(v * r[:, None], base.faces)


def capsule(radius=1.0, tube_length=3.0, n_theta=14, n_tube=7, n_cap=4,
            bump_amp=0.0):
    """Cylinder with hemispherical end caps; axis z, centered at the origin.

    Returns ``(mesh, labels)`` where labels are 0 on the tube and 1 on the
    caps, the two-part stand-in used for segmentation experiments. A nonzero
    ``bump_amp`` modulates the radius smoothly to break symmetry.
    """
    v = []
    labels = []

    def ring(r, z, label):
        row = []
        for j in range(n_theta):
            t = 2 * np.pi * j / n_theta
            row.append(len(v))
            v.append([r * np.cos(t), r * np.sin(t), z])
            labels.append(label)
        return row

    zs = np.linspace(-tube_length / 2, tube_length / 2, n_tube)
    tube_rows = [ring(radius, z, 0) for z in zs]

    cap_phis = [(np.pi / 2) * i / n_cap for i in range(1, n_cap)]
    top_rows = [tube_rows[-1]] + [
        ring(radius * np.cos(p), zs[-1] + radius * np.sin(p), 1) for p in cap_phis]
    top_pole = len(v)
    v.append([0.0, 0.0, zs[-1] + radius])
    labels.append(1)
    bot_rows = [tube_rows[0]] + [
        ring(radius * np.cos(p), zs[0] - radius * np.sin(p), 1) for p in cap_phis]
    bot_pole = len(v)
    v.append([0.0, 0.0, zs[0] - radius])
    labels.append(1)

    f = []

    def stitch(lower, upper):
        # winding chosen so normals face outward for rows ordered bottom-up
        for j in range(n_theta):
            jn = (j + 1) % n_theta
            f.append([lower[j], lower[jn], upper[jn]])
            f.append([lower[j], upper[jn], upper[j]])

    for i in range(n_tube - 1):
        stitch(tube_rows[i], tube_rows[i + 1])
    for i in range(len(top_rows) - 1):
        stitch(top_rows[i], top_rows[i + 1])
    last = top_rows[-1]
    for j in range(n_theta):
        f.append([last[j], last[(j + 1) % n_theta], top_pole])
    for i in range(len(bot_rows) - 1):
        stitch(bot_rows[i + 1], bot_rows[i])
    last = bot_rows[-1]
    for j in range(n_theta):
        f.append([last[(j + 1) % n_theta], last[j], bot_pole])

    verts = np.array(v)
    if bump_amp:
        r = _bump_field(verts, bump_amp)
        axis_dist = np.linalg.norm(verts[:, :2], axis=1)
        scale = np.where(axis_dist > 1e-12, r, 1.0)
        verts = verts * scale[:, None]
    return TriMesh(verts, np.array(f)), np.array(labels, dtype=np.int64)


def random_rotation(rng):
    """Uniform random rotation matrix (QR of a Gaussian, det +1)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotate_mesh(mesh, rotation, translation=None):
    """Rigidly transform a mesh; derived quantities are left to re-estimation."""
    v = mesh.vertices @ rotation.T
    if translation is not None:
        v = v + np.asarray(translation)
    return TriMesh(v, mesh.faces)


def with_geometry(mesh):
    """Mesh with normals and curvature directions estimated."""
    return estimate_curvature_dirs(estimate_normals(mesh))
