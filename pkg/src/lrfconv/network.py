"""Backbone of stacked conv+BN+ReLU layers with residual blocks, plus the
segmentation and correspondence heads.

The default backbone is 13 layers: one standalone layer followed by six
residual blocks of two layers each. Neighborhood radius and feature width
double every four layers so deeper layers see farther and say more. The
per-vertex output before any head is the learned shape descriptor (LSD).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import conv, lrf as lrf_mod
from .conv import LayerConfig
from .patch import build_patch_table, layer_tau

DEFAULT_SCALES = (1, 1, 1, 1, 2, 2, 2, 2, 4, 4, 4, 4, 8)
DEFAULT_MULTS = (1, 1, 1, 1, 2, 2, 2, 2, 4, 4, 4, 4, 8)
SEG_HEAD_TOP = 512
SEG_HEAD_BLOCKS = 7
CORR_HEAD_BLOCKS = 7
CORR_HEAD_WIDTH = 352


@dataclass(frozen=True)
class LayerSpec:
    """One backbone layer: neighbors per patch, radius scale, width multiplier."""
    k: int = 16
    radius_scale: float = 1.0
    width_mult: int = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; hashable to tie checkpoints to a config."""
    layers: tuple = tuple(LayerSpec(16, s, m)
                          for s, m in zip(DEFAULT_SCALES, DEFAULT_MULTS))
    o_b: int = 32
    r_b: float = 0.003
    conv_variant: str = "cc"
    lrf_variant: str = lrf_mod.CURVATURE
    use_coords: bool = True
    use_normals: bool = True
    use_geodesic: bool = True
    use_lrf: bool = True
    propagate_features: bool = True
    scale_by_k: bool = True
    head: str = "segmentation"
    num_classes: int = 8
    seg_head_widths: tuple = None
    corr_head_width: int = CORR_HEAD_WIDTH
    corr_head_blocks: int = CORR_HEAD_BLOCKS
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if not self.layers:
            raise ValueError("ModelSpec needs at least one layer")
        for l in self.layers:
            if l.k < 1 or l.width_mult < 1 or l.radius_scale <= 0:
                raise ValueError(f"invalid layer spec {l}")
        if self.o_b < 1 or self.r_b <= 0:
            raise ValueError("o_b and r_b must be positive")
        if self.conv_variant not in ("cc", "pn"):
            raise ValueError(f"conv_variant must be 'cc' or 'pn', got {self.conv_variant!r}")
        if self.head not in ("segmentation", "correspondence"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def entities(self):
        out = []
        if self.use_coords:
            out.append("v")
        if self.use_normals:
            out.append("n")
        if self.use_geodesic:
            out.append("g")
        return tuple(out)

    @property
    def widths(self):
        return tuple(l.width_mult * self.o_b for l in self.layers)

    @property
    def lsd_width(self):
        return self.widths[-1]

    def head_widths(self):
        if self.head == "segmentation":
            if self.seg_head_widths is not None:
                return tuple(self.seg_head_widths)
            w = [SEG_HEAD_TOP // (2 ** i) for i in range(SEG_HEAD_BLOCKS - 1)]
            return tuple(w + [self.num_classes])
        return tuple([self.corr_head_width] * self.corr_head_blocks)

    def patch_keys(self):
        """Unique (radius_scale, k) pairs needing a patch table."""
        seen = []
        for l in self.layers:
            key = (l.radius_scale, l.k)
            if key not in seen:
                seen.append(key)
        return seen

    def table_variant(self):
        return self.lrf_variant if self.use_lrf else lrf_mod.IDENTITY

    def layer_config(self, index):
        f_in = 0 if index == 0 else self.widths[index - 1]
        return LayerConfig(
            f_in=f_in, f_out=self.widths[index], k=self.layers[index].k,
            entities=self.entities,
            propagate_features=self.propagate_features and index > 0,
            scale_by_k=self.scale_by_k)

    def residual_blocks(self):
        """Backbone layer-index pairs grouped into residual blocks.

        Layer 0 stands alone; the remaining layers pair up in order. An even
        layer count leaves the last layer unpaired.
        """
        pairs = []
        i = 1
        while i + 1 <= len(self.layers) - 1:
            pairs.append((i, i + 1))
            i += 2
        return pairs

    def to_json(self):
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        d["layers"] = tuple(LayerSpec(**l) for l in d["layers"])
        if d.get("seg_head_widths") is not None:
            d["seg_head_widths"] = tuple(d["seg_head_widths"])
        return ModelSpec(**d)

    @property
    def spec_hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def default_spec(**overrides):
    """The full 13-layer architecture with paper defaults."""
    return ModelSpec(**overrides)


def toy_spec(n_layers=2, width=4, k=4, radius_scale=1.0, r_b=0.15, **overrides):
    """Small uniform spec for gradient checks and unit tests."""
    layers = tuple(LayerSpec(k, radius_scale, 1) for _ in range(n_layers))
    return ModelSpec(layers=layers, o_b=width, r_b=r_b, **overrides)


# ---------------------------------------------------------------------------
# Parameters

def init_model(spec, rng):
    """Initialize parameters and batchnorm states for backbone plus head.

    Returns ``(params, bn_states)`` with flat dotted names, suitable for
    Adam and checkpointing.
    """
    params = {}
    bn = {}
    for i in range(len(spec.layers)):
        cfg = spec.layer_config(i)
        prefix = f"bb{i:02d}"
        conv.INIT[spec.conv_variant](rng, cfg, prefix, params)
        params[f"{prefix}.bn.gamma"] = ad.Tensor(np.ones(cfg.f_out), requires_grad=True)
        params[f"{prefix}.bn.beta"] = ad.Tensor(np.zeros(cfg.f_out), requires_grad=True)
        bn[f"{prefix}.bn"] = ad.BatchNormState(cfg.f_out, spec.bn_momentum, spec.bn_eps)
    widths = spec.widths
    for bi, (a, b) in enumerate(spec.residual_blocks()):
        w_in = widths[a - 1]
        w_out = widths[b]
        if w_in != w_out:
            params[f"rb{bi}.proj.w"] = ad.glorot(rng, w_in, w_out)

    in_w = spec.lsd_width
    for j, out_w in enumerate(spec.head_widths()):
        prefix = f"head{j}"
        params[f"{prefix}.l1.w"] = ad.glorot(rng, in_w, out_w)
        params[f"{prefix}.l1.b"] = ad.Tensor(np.zeros(out_w), requires_grad=True)
        params[f"{prefix}.bn1.gamma"] = ad.Tensor(np.ones(out_w), requires_grad=True)
        params[f"{prefix}.bn1.beta"] = ad.Tensor(np.zeros(out_w), requires_grad=True)
        params[f"{prefix}.l2.w"] = ad.glorot(rng, out_w, out_w)
        params[f"{prefix}.l2.b"] = ad.Tensor(np.zeros(out_w), requires_grad=True)
        params[f"{prefix}.bn2.gamma"] = ad.Tensor(np.ones(out_w), requires_grad=True)
        params[f"{prefix}.bn2.beta"] = ad.Tensor(np.zeros(out_w), requires_grad=True)
        bn[f"{prefix}.bn1"] = ad.BatchNormState(out_w, spec.bn_momentum, spec.bn_eps)
        bn[f"{prefix}.bn2"] = ad.BatchNormState(out_w, spec.bn_momentum, spec.bn_eps)
        if in_w != out_w:
            params[f"{prefix}.proj.w"] = ad.glorot(rng, in_w, out_w)
        in_w = out_w
    return params, bn


# ---------------------------------------------------------------------------
# Preprocessing

def preprocess_mesh(mesh, spec, curvature_lrfs=None, tables=None):
    """Patch tables for every unique (radius scale, K) the spec needs.

    ``tables`` may carry preloaded entries (from the cache layer) keyed by
    (radius_scale, k); missing keys are built here.
    """
    if mesh.normals is None:
        raise ValueError("preprocess_mesh: estimate normals first")
    variant = spec.table_variant()
    if variant == lrf_mod.CURVATURE and curvature_lrfs is None:
        curvature_lrfs = lrf_mod.curvature_lrf_table(mesh)
    out = dict(tables or {})
    area = mesh.surface_area
    for scale, k in spec.patch_keys():
        if (scale, k) in out:
            continue
        tau = layer_tau(spec.r_b, scale, area)
        out[(scale, k)] = build_patch_table(mesh, tau, k, variant,
                                            curvature_lrfs=curvature_lrfs)
    return out


# ---------------------------------------------------------------------------
# Forward passes

def backbone_forward(tables, n_vertices, spec, params, bn, training=False,
                     update_running=True):
    """Descriptor rows for every vertex; excluded vertices stay zero.

    ``tables`` maps (radius_scale, k) to PatchTable. Returns an
    (n_vertices, lsd_width) tensor.
    """
    feats = None  # (V, F) tensor after each layer
    block_of = {}
    for bi, (a, b) in enumerate(spec.residual_blocks()):
        block_of[a] = ("start", bi)
        block_of[b] = ("end", bi)
    block_input = {}
    widths = spec.widths
    for i in range(len(spec.layers)):
        cfg = spec.layer_config(i)
        layer = spec.layers[i]
        table = tables[(layer.radius_scale, layer.k)]
        prefix = f"bb{i:02d}"
        role = block_of.get(i)
        if role and role[0] == "start":
            block_input[role[1]] = feats

        rows = None
        if cfg.has_features:
            rows = ad.gather_rows(feats, table.members.ravel())
        h = conv.FORWARD[spec.conv_variant](
            params, prefix, cfg, table.coords, table.normals, table.geodesics,
            rows)
        h = ad.batchnorm(h, params[f"{prefix}.bn.gamma"], params[f"{prefix}.bn.beta"],
                         bn[f"{prefix}.bn"], training, update_running)
        h = ad.relu(h)
        feats = ad.scatter_rows(h, table.centers, n_vertices)

        if role and role[0] == "end":
            bi = role[1]
            skip = block_input.pop(bi)
            if skip is not None:
                w_in = skip.shape[1]
                if w_in != widths[i]:
                    skip = ad.matmul(skip, params[f"rb{bi}.proj.w"])
                feats = ad.add(feats, skip)
    return feats


def _head_block(x, params, bn, prefix, training, update_running, final):
    h = ad.add(ad.matmul(x, params[f"{prefix}.l1.w"]), params[f"{prefix}.l1.b"])
    h = ad.relu(ad.batchnorm(h, params[f"{prefix}.bn1.gamma"],
                             params[f"{prefix}.bn1.beta"], bn[f"{prefix}.bn1"],
                             training, update_running))
    y = ad.add(ad.matmul(h, params[f"{prefix}.l2.w"]), params[f"{prefix}.l2.b"])
    y = ad.batchnorm(y, params[f"{prefix}.bn2.gamma"], params[f"{prefix}.bn2.beta"],
                     bn[f"{prefix}.bn2"], training, update_running)
    skip = x
    if f"{prefix}.proj.w" in params:
        skip = ad.matmul(x, params[f"{prefix}.proj.w"])
    y = ad.add(y, skip)
    return y if final else ad.relu(y)


def head_forward(lsd_rows, spec, params, bn, training=False, update_running=True):
    """Task head over per-vertex descriptor rows.

    Segmentation returns class probabilities (rows sum to 1); correspondence
    returns descriptor rows of the configured width.
    """
    x = lsd_rows
    widths = spec.head_widths()
    for j in range(len(widths)):
        x = _head_block(x, params, bn, f"head{j}", training, update_running,
                        final=(j == len(widths) - 1))
    if spec.head == "segmentation":
        return ad.softmax(x)
    return x


def segmentation_loss(probs, labels):
    """Mean negative log-probability of the true class."""
    labels = np.asarray(labels)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"segmentation_loss: probs {probs.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"segmentation_loss: labels outside [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.sum_(ad.mul(ad.log(probs), ad.Tensor(onehot)))
    return ad.scale(picked, -1.0 / n)
