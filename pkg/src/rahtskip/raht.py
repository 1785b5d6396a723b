"""Region-adaptive hierarchical transform over a :class:`LayeredOctree`.

Every block at layer ``l`` holds up to eight occupied children from layer
``l+1``. Children enter the block as normalized sums ``A_i / sqrt(w_i)`` and
are merged by weighted two-point Haar butterflies, first along Y, then Z, then
X. Each butterfly that sees two occupied inputs produces one AC coefficient;
the surviving value after the X stage is the block DC, which equals the
normalized sum of the parent node.

Blocks are processed in batches laid out densely as ``(n_blocks, 8, C)``
arrays indexed by local Morton index (absent children have weight 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoefficientCountMismatch
from .octree import LayeredOctree

# (slot, first child, second child); slot order is the AC emission order.
STAGES = (
    ((0, 0, 2), (1, 1, 3), (2, 4, 6), (3, 5, 7)),  # Y
    ((4, 0, 1), (5, 4, 5)),  # Z
    ((6, 0, 4),),  # X
)
N_SLOTS = 7


def _coeffs(w1, w2):
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    tot = w1 + w2
    safe = np.where(tot > 0, tot, 1.0)
    return np.sqrt(w1 / safe), np.sqrt(w2 / safe)


def haar2(a1, a2, w1, w2):
    """Two-point weighted Haar butterfly on normalized inputs.

    Returns ``(dc, ac)`` with ``dc = a*a1 + b*a2`` and ``ac = -b*a1 + a*a2``
    where ``a = sqrt(w1/(w1+w2))`` and ``b = sqrt(w2/(w1+w2))``.
    """
    a, b = _coeffs(w1, w2)
    return a * a1 + b * a2, -b * a1 + a * a2


def haar2_inv(dc, ac, w1, w2):
    a, b = _coeffs(w1, w2)
    return a * dc - b * ac, b * dc + a * ac


def _bcast(x, v):
    return x.reshape(x.shape + (1,) * (v.ndim - x.ndim))


def stage_weights(weights: np.ndarray):
    """Per-slot input weight pairs ``(nb, 7, 2)`` and the AC presence mask."""
    w = np.array(weights, dtype=np.int64)
    pairs = np.zeros(w.shape[:-1] + (N_SLOTS, 2), dtype=np.int64)
    for stage in STAGES:
        for slot, i, j in stage:
            pairs[..., slot, 0] = w[..., i]
            pairs[..., slot, 1] = w[..., j]
            w[..., i] = w[..., i] + w[..., j]
            w[..., j] = 0
    mask = (pairs[..., 0] > 0) & (pairs[..., 1] > 0)
    return pairs, mask


def block_forward(weights: np.ndarray, values: np.ndarray):
    """Forward transform of a batch of blocks.

    ``weights`` is ``(nb, 8)`` and ``values`` ``(nb, 8, C)`` (normalized sums,
    zero where a child is absent). Returns ``dc (nb, C)``, ``ac (nb, 7, C)``
    and the ``(nb, 7)`` mask of slots that carry a coefficient. Absent slots
    hold exactly zero.
    """
    w = np.array(weights, dtype=np.float64)
    v = np.array(values, dtype=np.float64)
    ac = np.zeros(v.shape[:-2] + (N_SLOTS,) + v.shape[-1:])
    pairs, mask = stage_weights(weights)
    for stage in STAGES:
        for slot, i, j in stage:
            a, b = _coeffs(w[..., i], w[..., j])
            a, b = _bcast(a, v[..., i, :]), _bcast(b, v[..., i, :])
            x1, x2 = v[..., i, :], v[..., j, :]
            dc = a * x1 + b * x2
            ac[..., slot, :] = np.where(_bcast(mask[..., slot], x1), -b * x1 + a * x2, 0.0)
            v[..., i, :] = dc
            v[..., j, :] = 0.0
            w[..., i] += w[..., j]
            w[..., j] = 0.0
    return v[..., 0, :], ac, mask


def block_inverse(weights: np.ndarray, dc: np.ndarray, ac: np.ndarray) -> np.ndarray:
    """Invert :func:`block_forward`; returns ``(nb, 8, C)`` child values."""
    pairs, mask = stage_weights(weights)
    dc = np.asarray(dc, dtype=np.float64)
    v = np.zeros(dc.shape[:-1] + (8,) + dc.shape[-1:])
    v[..., 0, :] = dc
    for stage in reversed(STAGES):
        for slot, i, j in reversed(stage):
            a, b = _coeffs(pairs[..., slot, 0], pairs[..., slot, 1])
            d = v[..., i, :]
            a, b = _bcast(a, d), _bcast(b, d)
            c = np.where(_bcast(mask[..., slot], d), ac[..., slot, :], 0.0)
            v[..., i, :], v[..., j, :] = a * d - b * c, b * d + a * c
    return v


def block_matrix(weights) -> np.ndarray:
    """Explicit transform matrix of one block, restricted to occupied children.

    ``weights`` has 8 entries (0 = absent). Row 0 is the DC row; the other
    rows are the ACs in emission order.
    """
    w = np.asarray(weights, dtype=np.int64).reshape(8)
    occ = np.flatnonzero(w > 0)
    basis = np.zeros((1, 8, len(occ)))
    basis[0, occ, np.arange(len(occ))] = 1.0
    dc, ac, mask = block_forward(w[None, :], basis)
    rows = [dc[0]] + [ac[0, s] for s in range(N_SLOTS) if mask[0, s]]
    return np.array(rows)


def transform_block(children, values):
    """Convenience wrapper for a single block.

    ``children`` is a list of ``(local index, weight)``; ``values`` the matching
    normalized sums (scalars or length-C vectors). Returns ``(dc, acs)`` with
    ``len(acs) == len(children) - 1``.
    """
    values = np.asarray(values, dtype=np.float64)
    scalar = values.ndim == 1
    values = values.reshape(len(children), -1)
    w = np.zeros((1, 8), dtype=np.int64)
    v = np.zeros((1, 8, values.shape[1]))
    for (idx, weight), val in zip(children, values):
        w[0, idx] = weight
        v[0, idx] = val
    dc, ac, mask = block_forward(w, v)
    acs = ac[0][mask[0]]
    if scalar:
        return float(dc[0, 0]), acs[:, 0]
    return dc[0], acs


def inverse_transform_block(children, dc, acs):
    w = np.zeros((1, 8), dtype=np.int64)
    for idx, weight in children:
        w[0, idx] = weight
    dc = np.atleast_1d(np.asarray(dc, dtype=np.float64))
    acs = np.asarray(acs, dtype=np.float64).reshape(len(children) - 1, dc.shape[0])
    _, mask = stage_weights(w)
    full = np.zeros((1, N_SLOTS, dc.shape[0]))
    full[0, mask[0]] = acs
    v = block_inverse(w, dc[None, :], full)
    out = np.array([v[0, idx] for idx, _ in children])
    return out[:, 0] if out.shape[1] == 1 else out


# --------------------------------------------------------------- tree level


@dataclass
class LayerLayout:
    """Dense block layout for the blocks rooted at one layer."""

    parent: np.ndarray  # (n_children,) block index of each child
    local: np.ndarray  # (n_children,) local Morton index of each child
    weights: np.ndarray  # (nb, 8)
    mask: np.ndarray  # (nb, 7) slots carrying a coefficient
    pairs: np.ndarray  # (nb, 7, 2) butterfly input weights

    @property
    def n_blocks(self) -> int:
        return len(self.weights)

    @property
    def n_coeffs(self) -> int:
        return int(self.mask.sum())

    def to_dense(self, child_values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_blocks, 8) + child_values.shape[1:])
        out[self.parent, self.local] = child_values
        return out

    def from_dense(self, dense: np.ndarray) -> np.ndarray:
        return dense[self.parent, self.local]


def layer_layout(tree: LayeredOctree, layer: int) -> LayerLayout:
    cache = tree.__dict__.setdefault("_layouts", {})
    if layer not in cache:
        parent = tree.parent[layer + 1]
        local = tree.local_index(layer + 1)
        w = np.zeros((tree.node_count(layer), 8), dtype=np.int64)
        w[parent, local] = tree.weights[layer + 1]
        pairs, mask = stage_weights(w)
        cache[layer] = LayerLayout(parent, local, w, mask, pairs)
    return cache[layer]


def layer_forward(tree: LayeredOctree, layer: int, child_values: np.ndarray):
    """ACs (coding order, ``(M_l, C)``) and block DCs for the blocks of ``layer``."""
    lay = layer_layout(tree, layer)
    dc, ac, _ = block_forward(lay.weights, lay.to_dense(child_values))
    return ac[lay.mask], dc


def layer_inverse(tree: LayeredOctree, layer: int, parent_values: np.ndarray, acs: np.ndarray) -> np.ndarray:
    """Child normalized values of layer+1 from block DCs and coding-order ACs."""
    lay = layer_layout(tree, layer)
    full = np.zeros((lay.n_blocks, N_SLOTS) + parent_values.shape[1:])
    full[lay.mask] = acs
    return lay.from_dense(block_inverse(lay.weights, parent_values, full))


@dataclass
class CoeffStream:
    dc_root: np.ndarray  # (C,)
    values: np.ndarray  # (M, C) ACs in coding order
    layer: np.ndarray  # (M,)
    block: np.ndarray  # (M,) block index within its layer
    slot: np.ndarray  # (M,) butterfly slot 0..6 within the block
    pair_weights: np.ndarray  # (M, 2)
    layer_offsets: np.ndarray  # (depth+1,): layer l occupies [off[l], off[l+1])

    def layer_slice(self, layer: int) -> slice:
        return slice(int(self.layer_offsets[layer]), int(self.layer_offsets[layer + 1]))

    def to_bytes(self) -> bytes:
        parts = [self.dc_root, self.values, self.layer, self.block, self.slot, self.pair_weights, self.layer_offsets]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


def layer_offsets(tree: LayeredOctree) -> np.ndarray:
    counts = [layer_layout(tree, l).n_coeffs for l in range(tree.depth)]
    return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


def node_sums(tree: LayeredOctree, attrs: np.ndarray) -> list:
    """Attribute sums of every node, bottom-up."""
    sums = [None] * (tree.depth + 1)
    sums[tree.depth] = np.asarray(attrs, dtype=np.float64).reshape(tree.count, -1)
    for layer in range(tree.depth - 1, -1, -1):
        n = tree.node_count(layer)
        s = np.zeros((n, sums[layer + 1].shape[1]))
        np.add.at(s, tree.parent[layer + 1], sums[layer + 1])
        sums[layer] = s
    return sums


def forward_raht(tree: LayeredOctree, attrs: np.ndarray) -> CoeffStream:
    sums = node_sums(tree, attrs)
    vals, layers, blocks, slots, pw = [], [], [], [], []
    for layer in range(tree.depth):
        lay = layer_layout(tree, layer)
        norm = sums[layer + 1] / np.sqrt(tree.weights[layer + 1])[:, None]
        acs, _ = layer_forward(tree, layer, norm)
        b, s = np.nonzero(lay.mask)
        vals.append(acs)
        layers.append(np.full(len(b), layer, dtype=np.int64))
        blocks.append(b)
        slots.append(s)
        pw.append(lay.pairs[lay.mask])
    C = sums[0].shape[1]
    return CoeffStream(
        dc_root=sums[0][0] / np.sqrt(tree.weights[0][0]),
        values=np.concatenate(vals) if vals else np.zeros((0, C)),
        layer=np.concatenate(layers) if layers else np.zeros(0, dtype=np.int64),
        block=np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.int64),
        slot=np.concatenate(slots) if slots else np.zeros(0, dtype=np.int64),
        pair_weights=np.concatenate(pw) if pw else np.zeros((0, 2), dtype=np.int64),
        layer_offsets=layer_offsets(tree),
    )


def inverse_raht(tree: LayeredOctree, coeffs: CoeffStream) -> np.ndarray:
    """Per-leaf attributes ``(n, C)`` from a complete coefficient stream."""
    off = layer_offsets(tree)
    if len(coeffs.values) != off[-1]:
        raise CoefficientCountMismatch(f"expected {off[-1]} ACs, got {len(coeffs.values)}")
    values = np.asarray(coeffs.dc_root, dtype=np.float64).reshape(1, -1)
    for layer in range(tree.depth):
        values = layer_inverse(tree, layer, values, coeffs.values[off[layer]:off[layer + 1]])
    # leaves have weight 1, so normalized sums are the attributes themselves
    return values
