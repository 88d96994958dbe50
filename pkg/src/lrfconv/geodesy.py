"""Graph geodesics, geodesic-ball queries, and farthest point sampling.

Geodesic distances are shortest paths along mesh edges with Euclidean edge
weights. All comparisons against thresholds and between candidate distances
use a small snapping tolerance so that exact symmetries (which float noise
turns into near-ties) resolve identically across rigidly-moved copies of the
same mesh.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph

# Relative tolerance for tie detection and threshold bands. Float noise from
# a rigid motion perturbs distances at ~1e-13 relative; genuine distance gaps
# on desk-scale meshes are many orders larger.
SNAP_REL = 1e-9


@dataclass(frozen=True)
class GeodesicField:
    """Single-source distances; unreachable vertices hold +inf."""
    source: int
    distances: np.ndarray


@dataclass(frozen=True)
class NeighborhoodSample:
    """K geodesic-ball members in farthest-point order, seeded at the center."""
    center: int
    members: np.ndarray
    geodesics: np.ndarray


def geodesic_distances(mesh, source, cutoff=None):
    """Single-source graph geodesics, optionally truncated at ``cutoff``.

    Vertices farther than ``cutoff`` hold +inf.
    """
    n = mesh.n_vertices
    if not 0 <= source < n:
        raise ValueError(f"source {source} out of range [0, {n})")
    if cutoff is not None and cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    limit = np.inf if cutoff is None else float(cutoff)
    d = csgraph.dijkstra(mesh.length_csr, indices=source, limit=limit)
    return GeodesicField(source=int(source), distances=d)


def geodesic_ball(mesh, center, tau, field=None):
    """Vertices with geodesic distance < tau of ``center``.

    Returns ``(indices, distances)`` sorted by ascending distance (ties by
    index), center first at distance 0. Members inside the snapping band of
    the tau boundary are excluded so membership is stable under rigid motion.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if field is None:
        field = geodesic_distances(mesh, center, cutoff=tau)
    d = field.distances
    eps = SNAP_REL * max(1.0, tau)
    idx = np.flatnonzero(d < tau - eps)
    dd = d[idx]
    order = np.lexsort((idx, np.round(dd / eps) * eps))
    return idx[order], dd[order]


def pairwise_in_ball(mesh, members):
    """Geodesic distance matrix on the subgraph induced by ``members``.

    Paths are restricted to the member set, which keeps farthest-point
    sampling a function of the ball alone.
    """
    sub = mesh.length_csr[members][:, members]
    return csgraph.dijkstra(sub)


def farthest_point_sample(candidates, pairwise_metric, k, seed):
    """Greedy farthest point sampling over ``candidates``.

    The first element is ``seed``; each following element maximizes its
    minimum distance to the already-selected set. Ties (within a relative
    snapping tolerance) break toward the lowest vertex index. If there are
    fewer candidates than ``k``, the selection is padded by cycling through
    itself in order.

    Parameters
    ----------
    candidates : sequence of int
        Vertex indices to sample from.
    pairwise_metric : callable
        ``pairwise_metric(a, b) -> float`` for candidate indices a, b.
    k : int
        Number of samples to return.
    seed : int
        Starting vertex; must be a candidate.
    """
    cand = [int(c) for c in candidates]
    if not cand:
        raise ValueError("farthest_point_sample: empty candidate list")
    if k < 1:
        raise ValueError(f"farthest_point_sample: k must be >= 1, got {k}")
    if seed not in cand:
        raise ValueError(f"farthest_point_sample: seed {seed} not in candidates")

    selected = [seed]
    remaining = [c for c in cand if c != seed]
    mind = {c: float(pairwise_metric(seed, c)) for c in remaining}
    while remaining and len(selected) < k:
        best = max(mind[c] for c in remaining)
        eps = SNAP_REL * max(1.0, abs(best))
        pick = min(c for c in remaining if mind[c] >= best - eps)
        selected.append(pick)
        remaining.remove(pick)
        for c in remaining:
            d = float(pairwise_metric(pick, c))
            if d < mind[c]:
                mind[c] = d
    if len(selected) < k:
        base = list(selected)
        i = 0
        while len(selected) < k:
            selected.append(base[i % len(base)])
            i += 1
    return selected


def sample_neighborhood(mesh, center, tau, k):
    """Geodesic ball followed by farthest point sampling; the center seeds.

    Returns a :class:`NeighborhoodSample` whose ``geodesics`` are the true
    center-to-member distances (not the within-ball FPS metric).
    """
    idx, dist = geodesic_ball(mesh, center, tau)
    pair = pairwise_in_ball(mesh, idx)
    pos = {int(v): i for i, v in enumerate(idx)}

    def metric(a, b):
        return pair[pos[a], pos[b]]

    members = farthest_point_sample(idx, metric, k, seed=center)
    members = np.asarray(members, dtype=np.int64)
    to_center = {int(v): float(g) for v, g in zip(idx, dist)}
    geo = np.array([to_center[int(m)] for m in members])
    return NeighborhoodSample(center=int(center), members=members, geodesics=geo)


def all_pairs_distances(mesh):
    """Dense geodesic distance matrix by repeated single-source Dijkstra."""
    return csgraph.dijkstra(mesh.length_csr)


def mesh_diameter(mesh):
    """Largest finite geodesic distance between any vertex pair."""
    d = all_pairs_distances(mesh)
    finite = d[np.isfinite(d)]
    return float(finite.max()) if finite.size else 0.0
