"""Per-vertex local reference frames with deterministic sign disambiguation.

Two constructions are provided: a covariance (SHOT-style) frame for noisy
scanned data and a normal/curvature frame for clean synthetic meshes. Both
return proper rotations whose columns are the frame axes, and both record how
decisively the axis signs were disambiguated so invariance harnesses can skip
ambiguous vertices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geodesy

SHOT = "shot"
CURVATURE = "curvature"
IDENTITY = "identity"

# Eigenvalue gap (relative to the largest eigenvalue, floored at unit scale)
# below which the covariance frame is ambiguous.
EIG_GAP_TOL = 1e-9


@dataclass(frozen=True)
class Lrf:
    """Local reference frame.

    ``rotation`` holds the axes as columns [x, y, z]; ``variant`` records the
    construction; ``reliable`` is False for degenerate or fallback frames;
    ``sign_margin`` is the smallest axis-vote majority margin (0 for a tie),
    used to decide whether disambiguation was strict.
    """
    rotation: np.ndarray
    variant: str
    reliable: bool
    sign_margin: int

    def require_valid(self, atol=1e-8):
        r = self.rotation
        if not np.allclose(r.T @ r, np.eye(3), atol=atol):
            raise ValueError("LRF columns are not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > atol:
            raise ValueError(f"LRF determinant {np.linalg.det(r)} != +1")


def identity_lrf():
    return Lrf(np.eye(3), IDENTITY, True, 0)


def _vote_sign(offsets, axis):
    """Majority orientation of ``axis`` against offset vectors.

    Returns ``(sign, margin)``. A tie falls back to the first offset (in the
    given order) with a nonzero component along the axis; if all components
    vanish the stored sign is kept.
    """
    dots = offsets @ axis
    pos = int((dots > 0).sum())
    neg = int((dots < 0).sum())
    if pos > neg:
        return 1.0, pos - neg
    if neg > pos:
        return -1.0, neg - pos
    for d in dots:
        if d > 0:
            return 1.0, 0
        if d < 0:
            return -1.0, 0
    return 1.0, 0


def covariance_frame(offsets, distances, radius):
    """SHOT-style frame from a weighted covariance of support offsets.

    Weights are ``max(radius - distance, 0)``. Eigenvectors sorted by
    decreasing eigenvalue give the x and z axes (largest and smallest);
    their signs orient toward the offset majority; y completes the proper
    rotation as z cross x.

    Returns ``(rotation, reliable, margin)``. Nearly equal eigenvalues or
    fewer than 4 support points yield the identity with ``reliable=False``.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    distances = np.asarray(distances, dtype=np.float64)
    if len(offsets) < 4:
        return np.eye(3), False, 0
    w = np.clip(radius - distances, 0.0, None)
    total = w.sum()
    if total <= 0:
        return np.eye(3), False, 0
    cov = (offsets * w[:, None]).T @ offsets / total
    evals, evecs = np.linalg.eigh(cov)  # ascending
    tol = EIG_GAP_TOL * max(1.0, evals[2])
    if evals[2] - evals[1] <= tol or evals[1] - evals[0] <= tol:
        return np.eye(3), False, 0
    x = evecs[:, 2]
    z = evecs[:, 0]
    sx, mx = _vote_sign(offsets, x)
    sz, mz = _vote_sign(offsets, z)
    x = sx * x
    z = sz * z
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1), True, min(mx, mz)


def lrf_shot(mesh, center, support, radius):
    """Covariance LRF at ``center`` from ``support`` = [(vertex, distance), ...].

    Support is scanned in ascending vertex-index order so tie-breaking is
    independent of how the caller ordered it.
    """
    support = sorted((int(v), float(d)) for v, d in support)
    idx = np.array([v for v, _ in support], dtype=np.int64)
    dist = np.array([d for _, d in support])
    offsets = mesh.vertices[idx] - mesh.vertices[center]
    rot, reliable, margin = covariance_frame(offsets, dist, radius)
    return Lrf(rot, SHOT, reliable, margin)


def lrf_curvature(mesh, center, disambiguate=True):
    """Normal/curvature LRF: x = normal, y = max-curvature direction, z = x cross y.

    The curvature direction is projected onto the tangent plane and, when
    ``disambiguate`` is set, its sign is voted on by the 1-ring offsets
    (ties keep the stored sign). Umbilic or unreliable-curvature vertices
    fall back to the covariance frame over the 2-ring, flagged unreliable.
    """
    if mesh.normals is None or mesh.curvature_dirs is None:
        raise ValueError("lrf_curvature requires normals and curvature directions")
    n = mesh.normals[center]
    if mesh.curvature_reliable is None or not mesh.curvature_reliable[center] \
            or not np.any(n):
        return _two_ring_fallback(mesh, center)
    y = mesh.curvature_dirs[center]
    y = y - n * (y @ n)
    nrm = np.linalg.norm(y)
    if nrm < 1e-12:
        return _two_ring_fallback(mesh, center)
    y = y / nrm
    margin = 0
    if disambiguate:
        ring = mesh.vertex_adjacency[center]
        offsets = mesh.vertices[ring] - mesh.vertices[center]
        s, margin = _vote_sign(offsets, y)
        y = s * y
    z = np.cross(n, y)
    rot = np.stack([n, y, z], axis=1)
    return Lrf(rot, CURVATURE, True, margin)


def _two_ring_fallback(mesh, center):
    ring = mesh.two_ring(center)
    if len(ring) == 0:
        return Lrf(np.eye(3), SHOT, False, 0)
    field = geodesy.geodesic_distances(mesh, center)
    dist = field.distances[ring]
    reach = np.isfinite(dist)
    ring, dist = ring[reach], dist[reach]
    radius = 2.0 * dist.max() if len(dist) else 1.0
    base = lrf_shot(mesh, center, list(zip(ring, dist)), radius)
    return Lrf(base.rotation, SHOT, False, base.sign_margin)


def curvature_lrf_table(mesh, disambiguate=True):
    """Curvature LRFs for every vertex (identity at unusable vertices)."""
    out = []
    for i in range(mesh.n_vertices):
        if mesh.center_ok[i] and np.any(mesh.normals[i]):
            out.append(lrf_curvature(mesh, i, disambiguate))
        else:
            out.append(Lrf(np.eye(3), CURVATURE, False, 0))
    return out
