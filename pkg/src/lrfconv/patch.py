"""Aligned local patches: the 7-dimensional neighbor records fed to the conv.

Each patch gathers K geodesic-ball members around a center, subtracts the
center position, and expresses offsets and neighbor normals in the center's
local reference frame. Geodesic distances pass through unrotated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geodesy, lrf as lrf_mod


@dataclass(frozen=True)
class AlignedPatch:
    """LRF-aligned neighborhood of one center vertex.

    ``coords`` are center-relative member positions expressed in the LRF
    basis (rows R^T (x_j - x_i)); ``normals`` are member normals in the same
    basis; ``geodesics`` are raw center-to-member distances in model units.
    The center itself is always the first member (FPS seed).
    """
    center: int
    k: int
    coords: np.ndarray
    normals: np.ndarray
    geodesics: np.ndarray
    member_indices: np.ndarray


def align(offsets, normals, rotation):
    """Express world-frame offsets and normals in the frame's basis."""
    return offsets @ rotation, normals @ rotation


def build_patch(mesh, center, tau, k, lrf, sample=None):
    """Assemble the aligned patch for one center.

    Parameters
    ----------
    mesh : TriMesh
        Needs normals estimated.
    center : int
        Center vertex index; seeds the farthest point sampling.
    tau : float
        Geodesic ball radius (model units).
    k : int
        Members per patch; short balls pad by cycling.
    lrf : Lrf
        Frame whose basis the patch is expressed in.
    sample : NeighborhoodSample, optional
        Precomputed ball+FPS result to reuse.
    """
    if mesh.normals is None:
        raise ValueError("build_patch requires normals; run estimate_normals first")
    if sample is None:
        sample = geodesy.sample_neighborhood(mesh, center, tau, k)
    members = sample.members
    offsets = mesh.vertices[members] - mesh.vertices[center]
    coords, normals = align(offsets, mesh.normals[members], lrf.rotation)
    return AlignedPatch(center=int(center), k=k, coords=coords, normals=normals,
                        geodesics=sample.geodesics.copy(),
                        member_indices=members.copy())


@dataclass(frozen=True)
class PatchTable:
    """Batched patches for every usable center of one mesh at one (tau, K).

    Row r describes the patch of vertex ``centers[r]``. ``valid`` marks which
    mesh vertices have a row; excluded vertices (isolated, non-manifold,
    zero normal) have none and contribute zero features downstream.
    """
    tau: float
    k: int
    lrf_variant: str
    centers: np.ndarray
    coords: np.ndarray
    normals: np.ndarray
    geodesics: np.ndarray
    members: np.ndarray
    lrf_rotations: np.ndarray
    lrf_reliable: np.ndarray
    sign_margins: np.ndarray
    valid: np.ndarray

    @property
    def n_centers(self):
        return len(self.centers)

    def row_of(self, vertex):
        r = int(np.searchsorted(self.centers, vertex))
        if r >= len(self.centers) or self.centers[r] != vertex:
            raise KeyError(f"vertex {vertex} has no patch row")
        return r


def usable_centers(mesh):
    ok = mesh.center_ok.copy()
    if mesh.normals is not None:
        ok &= np.any(mesh.normals != 0, axis=1)
    return np.flatnonzero(ok)


def build_patch_table(mesh, tau, k, variant, curvature_lrfs=None):
    """Patches plus per-center LRFs for all usable centers.

    ``variant`` selects the frame construction: ``lrf.CURVATURE`` (clean
    synthetic meshes), ``lrf.SHOT`` (scans; the ball doubles as SHOT support
    with support radius tau), or ``lrf.IDENTITY`` (no-LRF ablation).
    ``curvature_lrfs`` lets callers reuse a precomputed per-vertex table.
    """
    centers = usable_centers(mesh)
    n = len(centers)
    coords = np.zeros((n, k, 3))
    normals = np.zeros((n, k, 3))
    geod = np.zeros((n, k))
    members = np.zeros((n, k), dtype=np.int64)
    rots = np.zeros((n, 3, 3))
    reliable = np.zeros(n, dtype=bool)
    margins = np.zeros(n, dtype=np.int64)

    if variant == lrf_mod.CURVATURE and curvature_lrfs is None:
        curvature_lrfs = lrf_mod.curvature_lrf_table(mesh)

    for r, c in enumerate(centers):
        idx, dist = geodesy.geodesic_ball(mesh, int(c), tau)
        if variant == lrf_mod.SHOT:
            frame = lrf_mod.lrf_shot(mesh, int(c), list(zip(idx, dist)), tau)
        elif variant == lrf_mod.CURVATURE:
            frame = curvature_lrfs[int(c)]
        elif variant == lrf_mod.IDENTITY:
            frame = lrf_mod.identity_lrf()
        else:
            raise ValueError(f"unknown LRF variant {variant!r}")
        pair = geodesy.pairwise_in_ball(mesh, idx)
        pos = {int(v): i for i, v in enumerate(idx)}
        sel = geodesy.farthest_point_sample(
            idx, lambda a, b: pair[pos[a], pos[b]], k, seed=int(c))
        sample = geodesy.NeighborhoodSample(
            center=int(c), members=np.asarray(sel, dtype=np.int64),
            geodesics=np.array([dist[pos[int(m)]] for m in sel]))
        p = build_patch(mesh, int(c), tau, k, frame, sample=sample)
        coords[r], normals[r], geod[r] = p.coords, p.normals, p.geodesics
        members[r] = p.member_indices
        rots[r] = frame.rotation
        reliable[r] = frame.reliable
        margins[r] = frame.sign_margin

    valid = np.zeros(mesh.n_vertices, dtype=bool)
    valid[centers] = True
    return PatchTable(tau=float(tau), k=int(k), lrf_variant=variant,
                      centers=centers, coords=coords, normals=normals,
                      geodesics=geod, members=members, lrf_rotations=rots,
                      lrf_reliable=reliable, sign_margins=margins, valid=valid)


def layer_tau(r_b, scale, surface_area):
    """Ball radius for one layer: base radius x schedule scale x sqrt(area).

    The square-root-of-area factor makes the dimensionless base radius
    covariant with global shape scale.
    """
    return r_b * scale * np.sqrt(surface_area)
