"""The continuous geodesic convolution layer and its PointNet ablation twin.

For every neighbor j of a center i, the CC layer expands the aligned
geometry (coords v_ij, normals n_ij, geodesic g_ij) through one small MLP
per entity, concatenates the expansions with the neighbor's feature from the
previous layer, regresses a weight matrix from the concatenation through a
second MLP, applies that matrix to the same concatenation, and sums over
neighbors:

    f_i
 = sum_j W(c_ij) c_ij,   c_ij = [exp_v(v), exp_n(n), exp_g(g), f_ij]

The first layer carries no incoming features; each geometric entity is
expanded to width 9 there so the regressor treats all components equally.
The PN variant replaces the weighted sum with a shared per-neighbor MLP and
a max-pool over neighbors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

ENTITY_DIMS = {"v": 3, "n": 3, "g": 1}
FIRST_LAYER_UNIT = 9


@dataclass(frozen=True)
class LayerConfig:
    """Widths and active input channels of one conv layer.

    ``f_in`` is 0 for the first layer (no incoming features). ``entities``
    lists the active geometric channels among ("v", "n", "g");
    ``propagate_features`` gates the incoming-feature channel (always off on
    the first layer). ``scale_by_k`` divides the neighbor sum by K, a
    stabilizer for deep stacks (disclosed deviation; configurable).
    """
    f_in: int
    f_out: int
    k: int
    entities: tuple = ("v", "n", "g")
    propagate_features: bool = True
    scale_by_k: bool = True

    def __post_init__(self):
        if not self.entities and not self.has_features:
            raise ValueError("layer has no input channels at all")

    @property
    def has_features(self):
        return self.propagate_features and self.f_in > 0

    @property
    def unit_width(self):
        return self.f_in if self.f_in > 0 else FIRST_LAYER_UNIT

    @property
    def concat_width(self):
        w = len(self.entities) * self.unit_width
        if self.has_features:
            w += self.f_in
        return w


def init_cc_params(rng, cfg, prefix, params):
    """Create the CC layer's parameters under ``prefix`` in ``params``."""
    u = cfg.unit_width
    d = cfg.concat_width
    for e in cfg.entities:
        din = ENTITY_DIMS[e]
        params[f"{prefix}.exp_{e}.w"] = ad.glorot(rng, din, u)
        params[f"{prefix}.exp_{e}.b"] = ad.Tensor(np.zeros(u), requires_grad=True)
    params[f"{prefix}.wmlp.w1"] = ad.glorot(rng, d, d)
    params[f"{prefix}.wmlp.b1"] = ad.Tensor(np.zeros(d), requires_grad=True)
    params[f"{prefix}.wmlp.w2"] = ad.glorot(rng, d, d)
    params[f"{prefix}.wmlp.b2"] = ad.Tensor(np.zeros(d), requires_grad=True)
    params[f"{prefix}.wmlp.w3"] = ad.glorot(rng, d, d * cfg.f_out)
    params[f"{prefix}.wmlp.b3"] = ad.Tensor(np.zeros(d * cfg.f_out), requires_grad=True)
    params[f"{prefix}.bias"] = ad.Tensor(np.zeros(cfg.f_out), requires_grad=True)


def init_pn_params(rng, cfg, prefix, params):
    """Create the PN layer's parameters under ``prefix`` in ``params``."""
    din = sum(ENTITY_DIMS[e] for e in cfg.entities)
    if cfg.has_features:
        din += cfg.f_in
    params[f"{prefix}.pn.w1"] = ad.glorot(rng, din, cfg.f_out)
    params[f"{prefix}.pn.b1"] = ad.Tensor(np.zeros(cfg.f_out), requires_grad=True)
    params[f"{prefix}.pn.w2"] = ad.glorot(rng, cfg.f_out, cfg.f_out)
    params[f"{prefix}.pn.b2"] = ad.Tensor(np.zeros(cfg.f_out), requires_grad=True)


def _entity_inputs(cfg, coords, normals, geodesics, n, k):
    """Flattened (N*K, dim) constant tensors for the active entities."""
    raw = {
        "v": np.asarray(coords, dtype=np.float64).reshape(n * k, 3),
        "n": np.asarray(normals, dtype=np.float64).reshape(n * k, 3),
        "g": np.asarray(geodesics, dtype=np.float64).reshape(n * k, 1),
    }
    return {e: ad.Tensor(raw[e]) for e in cfg.entities}


def cc_forward(params, prefix, cfg, coords, normals, geodesics, feature_rows):
    """Batched CC layer over N centers with K neighbors each.

    ``coords``/``normals`` are (N, K, 3) arrays, ``geodesics`` (N, K), all in
    the centers' LRF bases. ``feature_rows`` is a (N*K, f_in) tensor of
    neighbor features in patch order, or None on the first layer. Returns an
    (N, f_out) tensor.
    """
    n, k = np.asarray(geodesics).shape
    if k != cfg.k:
        raise ValueError(f"cc_forward: patch K {k} != layer K {cfg.k}")
    ent = _entity_inputs(cfg, coords, normals, geodesics, n, k)
    parts = []
    for e in cfg.entities:
        w, b = params[f"{prefix}.exp_{e}.w"], params[f"{prefix}.exp_{e}.b"]
        parts.append(ad.relu(ad.add(ad.matmul(ent[e], w), b)))
    if cfg.has_features:
        if feature_rows is None:
            raise ValueError("cc_forward: layer expects features but got None")
        if feature_rows.shape != (n * k, cfg.f_in):
            raise ValueError(f"cc_forward: feature rows {feature_rows.shape} "
                             f"!= {(n * k, cfg.f_in)}")
        parts.append(feature_rows)
    cat = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)

    h = ad.relu(ad.add(ad.matmul(cat, params[f"{prefix}.wmlp.w1"]),
                       params[f"{prefix}.wmlp.b1"]))
    h = ad.relu(ad.add(ad.matmul(h, params[f"{prefix}.wmlp.w2"]),
                       params[f"{prefix}.wmlp.b2"]))
    wflat = ad.add(ad.matmul(h, params[f"{prefix}.wmlp.w3"]),
                   params[f"{prefix}.wmlp.b3"])
    wmat = ad.reshape(wflat, (n * k, cfg.concat_width, cfg.f_out))
    per_neighbor = ad.batched_vecmat(cat, wmat)
    summed = ad.sum_(ad.reshape(per_neighbor, (n, k, cfg.f_out)), axis=1)
    if cfg.scale_by_k:
        summed = ad.scale(summed, 1.0 / k)
    return ad.add(summed, params[f"{prefix}.bias"])


def pn_forward(params, prefix, cfg, coords, normals, geodesics, feature_rows):
    """Batched PN layer: shared per-neighbor MLP, max-pool over K, linear out."""
    n, k = np.asarray(geodesics).shape
    if k != cfg.k:
        raise ValueError(f"pn_forward: patch K {k} != layer K {cfg.k}")
    raw = {
        "v": np.asarray(coords, dtype=np.float64).reshape(n * k, 3),
        "n": np.asarray(normals, dtype=np.float64).reshape(n * k, 3),
        "g": np.asarray(geodesics, dtype=np.float64).reshape(n * k, 1),
    }
    parts = [ad.Tensor(raw[e]) for e in cfg.entities]
    if cfg.has_features:
        if feature_rows is None:
            raise ValueError("pn_forward: layer expects features but got None")
        parts.append(feature_rows)
    cat = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
    h = ad.relu(ad.add(ad.matmul(cat, params[f"{prefix}.pn.w1"]),
                       params[f"{prefix}.pn.b1"]))
    pooled = ad.max_(ad.reshape(h, (n, k, cfg.f_out)), axis=1)
    return ad.add(ad.matmul(pooled, params[f"{prefix}.pn.w2"]),
                  params[f"{prefix}.pn.b2"])


FORWARD = {"cc": cc_forward, "pn": pn_forward}
INIT = {"cc": init_cc_params, "pn": init_pn_params}


def single_patch_forward(variant, params, prefix, cfg, aligned, prev_features=None):
    """Spec-level convenience: one AlignedPatch in, one feature vector out.

    ``prev_features`` is a (K, f_in) tensor/array whose rows follow the
    patch's member order.
    """
    rows = None
    if prev_features is not None:
        rows = prev_features if isinstance(prev_features, ad.Tensor) \
            else ad.Tensor(prev_features)
    out = FORWARD[variant](
        params, prefix, cfg,
        aligned.coords[None], aligned.normals[None], aligned.geodesics[None],
        rows)
    return ad.reshape(out, (cfg.f_out,))
