"""Intra/inter prediction of child attributes and the layer coding loop.

Intra prediction (up-sampling): a child of a block is predicted from the
reconstructed means of the parent-layer nodes that touch it: the parent
itself (weight 4), the three face neighbours of the parent on the child's
side (weight 2 each) and the three edge neighbours on that side (weight 1
each). Missing neighbours are dropped and the weights renormalized. The 19
nodes (parent, 6 faces, 12 edges) form the neighbourhood; each child only
sees the 7 of them adjacent to its octant.

Inter prediction looks the child up by Morton key at the same layer of the
reference frame and takes its mean; a miss falls back to intra.

Predictions always use reconstructed values so that encoder and decoder see
the same inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud_io import VoxelCloud
from .coder import quantize
from .errors import LengthMismatch, MissingReference
from .octree import LayeredOctree, build_layers, morton_decode, morton_encode
from .raht import layer_forward, layer_inverse, layer_offsets, node_sums

PARENT_WEIGHT = 4
FACE_WEIGHT = 2
EDGE_WEIGHT = 1

INTRA = "intra"
INTER = "inter"


@dataclass
class ReferenceFrame:
    """Previously reconstructed frame with per-node means at every layer."""

    tree: LayeredOctree
    means: list

    @classmethod
    def from_cloud(cls, cloud: VoxelCloud) -> "ReferenceFrame":
        tree = build_layers(cloud.canonicalize())
        sums = node_sums(tree, tree_attrs(cloud))
        return cls(tree, [s / w[:, None] for s, w in zip(sums, tree.weights)])


def tree_attrs(cloud: VoxelCloud) -> np.ndarray:
    canon = cloud if cloud.is_canonical() else cloud.canonicalize()
    return canon.attrs.astype(np.float64)


@dataclass
class PredictionContext:
    mode: str = INTRA
    reference: ReferenceFrame | None = None

    def __post_init__(self):
        if self.mode not in (INTRA, INTER):
            raise ValueError(f"unknown prediction mode {self.mode!r}")
        if self.mode == INTER and self.reference is None:
            raise MissingReference("inter prediction needs a reference frame")


def _child_neighbours():
    """Per local index: [(dx, dy, dz, weight)] of the 6 touching parent-layer neighbours."""
    table = []
    for c in range(8):
        sx, sy, sz = (2 * ((c >> s) & 1) - 1 for s in (2, 1, 0))
        table.append(
            [
                (sx, 0, 0, FACE_WEIGHT), (0, sy, 0, FACE_WEIGHT), (0, 0, sz, FACE_WEIGHT),
                (sx, sy, 0, EDGE_WEIGHT), (sx, 0, sz, EDGE_WEIGHT), (0, sy, sz, EDGE_WEIGHT),
            ]
        )
    return np.array(table, dtype=np.int64)  # (8, 6, 4)


_NEIGHBOURS = _child_neighbours()


def intra_predict_layer(tree: LayeredOctree, layer: int, parent_means: np.ndarray) -> np.ndarray:
    """Predicted means ``(n_{layer+1}, C)`` of the children of every block of ``layer``."""
    keys = tree.keys[layer]
    parent = tree.parent[layer + 1]
    local = tree.local_index(layer + 1)
    if layer == 0:
        # the root has no neighbours: every child inherits its mean, so AC_pre = 0
        return parent_means[parent].astype(np.float64)
    px, py, pz = morton_decode(keys[parent], layer)
    num = PARENT_WEIGHT * parent_means[parent]
    den = np.full(len(parent), float(PARENT_WEIGHT))
    lim = 1 << layer
    offsets = _NEIGHBOURS[local]  # (n, 6, 4)
    for j in range(offsets.shape[1]):
        nx, ny, nz = px + offsets[:, j, 0], py + offsets[:, j, 1], pz + offsets[:, j, 2]
        inside = (nx >= 0) & (nx < lim) & (ny >= 0) & (ny < lim) & (nz >= 0) & (nz < lim)
        nk = morton_encode(np.clip(nx, 0, lim - 1), np.clip(ny, 0, lim - 1), np.clip(nz, 0, lim - 1), layer)
        idx = np.minimum(np.searchsorted(keys, nk), len(keys) - 1)
        hit = inside & (keys[idx] == nk)
        w = np.where(hit, offsets[:, j, 3], 0).astype(np.float64)
        num = num + w[:, None] * parent_means[idx]
        den = den + w
    return num / den[:, None]


def inter_predict_layer(tree: LayeredOctree, layer: int, reference: ReferenceFrame, fallback: np.ndarray) -> np.ndarray:
    """Co-located reference means for layer+1 nodes; ``fallback`` where absent."""
    if reference.tree.depth != tree.depth:
        raise ValueError("reference frame depth differs from the current frame")
    ref_keys = reference.tree.keys[layer + 1]
    keys = tree.keys[layer + 1]
    idx = np.minimum(np.searchsorted(ref_keys, keys), len(ref_keys) - 1)
    hit = ref_keys[idx] == keys
    return np.where(hit[:, None], reference.means[layer + 1][idx], fallback)


def predict_layer(tree: LayeredOctree, layer: int, parent_means: np.ndarray, ctx: PredictionContext) -> np.ndarray:
    pred = intra_predict_layer(tree, layer, parent_means)
    if ctx.mode == INTER:
        pred = inter_predict_layer(tree, layer, ctx.reference, pred)
    return pred


def predict_ac(tree: LayeredOctree, layer: int, pred_means: np.ndarray) -> np.ndarray:
    """Transform predicted child means and keep the ACs (coding order)."""
    w = tree.weights[layer + 1].astype(np.float64)
    acs, _ = layer_forward(tree, layer, pred_means * np.sqrt(w)[:, None])
    return acs


def residuals(ac_org, ac_pre) -> np.ndarray:
    ac_org = np.asarray(ac_org, dtype=np.float64)
    ac_pre = np.asarray(ac_pre, dtype=np.float64)
    if ac_org.shape != ac_pre.shape:
        raise LengthMismatch(f"shapes differ: {ac_org.shape} vs {ac_pre.shape}")
    return ac_org - ac_pre


@dataclass
class LayerPass:
    """Result of coding layers ``start..depth-1`` (arrays cover only that range)."""

    start: int
    offset: int  # coding-order index of the first entry
    levels: np.ndarray
    ac_pre: np.ndarray
    ac_recon: np.ndarray
    values: dict = field(default_factory=dict)  # layer -> reconstructed normalized node values

    @property
    def leaves(self) -> np.ndarray:
        return self.values[max(self.values)]


def code_layers(
    tree: LayeredOctree,
    ctx: PredictionContext,
    steps,
    start_values: np.ndarray,
    *,
    start: int = 0,
    ac_org: np.ndarray | None = None,
    levels: np.ndarray | None = None,
    skip_from=None,
) -> LayerPass:
    """Predict, quantize and reconstruct layer by layer, top-down.

    ``start_values`` are the reconstructed normalized values of the layer
    ``start`` nodes. Encoders pass ``ac_org`` (full coding order) and levels
    are produced; decoders pass ``levels`` (covering layers ``start..``).
    For channel ``c`` every layer ``>= skip_from[c]`` is reconstructed with
    zero residual.
    """
    depth = tree.depth
    off = layer_offsets(tree)
    steps = np.asarray(steps, dtype=np.float64)
    n_ch = len(steps)
    skip_from = np.full(n_ch, depth) if skip_from is None else np.asarray(skip_from)
    base = int(off[start])
    total = int(off[-1]) - base
    out_levels = np.zeros((total, n_ch), dtype=np.int64)
    out_pre = np.zeros((total, n_ch))
    out_rec = np.zeros((total, n_ch))
    values = {start: np.asarray(start_values, dtype=np.float64)}
    for layer in range(start, depth):
        cur = values[layer]
        means = cur / np.sqrt(tree.weights[layer].astype(np.float64))[:, None]
        pred = predict_layer(tree, layer, means, ctx)
        ac_pre = predict_ac(tree, layer, pred)
        lo, hi = int(off[layer]) - base, int(off[layer + 1]) - base
        if levels is None:
            lv = quantize(residuals(ac_org[base + lo:base + hi], ac_pre) / steps, 1.0)
            lv = np.asarray(lv, dtype=np.int64).reshape(ac_pre.shape)
        else:
            lv = np.array(levels[lo:hi], dtype=np.int64).reshape(ac_pre.shape)
        lv[:, layer >= skip_from] = 0
        rec = lv * steps + ac_pre
        out_levels[lo:hi], out_pre[lo:hi], out_rec[lo:hi] = lv, ac_pre, rec
        values[layer + 1] = layer_inverse(tree, layer, cur, rec)
    return LayerPass(start, base, out_levels, out_pre, out_rec, values)
