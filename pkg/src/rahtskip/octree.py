"""Morton codes and the layered octree that the transform walks.

Bit layout of a Morton key: bit ``i`` of x lands at key bit ``3i+2``, y at
``3i+1`` and z at ``3i``. Within a 2x2x2 block the local child index is
therefore ``4*x + 2*y + z``. Layer 0 is the root, layer ``depth`` holds the
voxels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CoordinateOutOfRange, LayerOutOfRange


def _spread(v: np.ndarray, depth: int) -> np.ndarray:
    out = np.zeros_like(v)
    for i in range(depth):
        out |= ((v >> i) & 1) << (3 * i)
    return out


def _compact(k: np.ndarray, depth: int) -> np.ndarray:
    out = np.zeros_like(k)
    for i in range(depth):
        out |= ((k >> (3 * i)) & 1) << i
    return out


def morton_encode(x, y, z, depth: int):
    """Interleave coordinate bits into a Morton key (scalar or array)."""
    scalar = np.isscalar(x) and np.isscalar(y) and np.isscalar(z)
    xs, ys, zs = (np.asarray(v, dtype=np.int64) for v in (x, y, z))
    lim = 1 << depth
    for name, v in (("x", xs), ("y", ys), ("z", zs)):
        if np.any(v < 0) or np.any(v >= lim):
            raise CoordinateOutOfRange(f"{name} outside [0, {lim}) at depth {depth}")
    key = (_spread(xs, depth) << 2) | (_spread(ys, depth) << 1) | _spread(zs, depth)
    return int(key) if scalar else key


def morton_decode(key, depth: int):
    """Inverse of :func:`morton_encode`; returns (x, y, z)."""
    scalar = np.isscalar(key)
    k = np.asarray(key, dtype=np.int64)
    x, y, z = _compact(k >> 2, depth), _compact(k >> 1, depth), _compact(k, depth)
    if scalar:
        return int(x), int(y), int(z)
    return x, y, z


@dataclass
class LayeredOctree:
    depth: int
    keys: list  # keys[l]: sorted Morton prefixes of the occupied nodes of layer l
    weights: list  # weights[l]: point count under each node
    parent: list  # parent[l][j]: index into layer l-1 of node j (parent[0] is empty)
    child_ptr: list  # children of node i of layer l are child_ptr[l][i]:child_ptr[l][i+1] in layer l+1

    def node_count(self, layer: int) -> int:
        return len(self.keys[layer])

    @property
    def count(self) -> int:
        return len(self.keys[self.depth])

    def local_index(self, layer: int) -> np.ndarray:
        """Position (0..7) of each layer-``layer`` node inside its parent block."""
        return self.keys[layer] & 7


def build_layers(cloud) -> LayeredOctree:
    """Build every layer bottom-up from a canonical (Morton sorted) cloud."""
    depth = cloud.depth
    leaf = cloud.morton_keys()
    if np.any(np.diff(leaf) <= 0):
        raise ValueError("cloud must be canonical: strictly increasing Morton keys")
    keys = [None] * (depth + 1)
    weights = [None] * (depth + 1)
    parent = [None] * (depth + 1)
    child_ptr = [None] * (depth + 1)
    keys[depth] = leaf
    weights[depth] = np.ones(len(leaf), dtype=np.int64)
    for layer in range(depth - 1, -1, -1):
        up, inverse = np.unique(keys[layer + 1] >> 3, return_inverse=True)
        keys[layer] = up
        parent[layer + 1] = inverse.ravel()
        weights[layer] = np.bincount(parent[layer + 1], weights=weights[layer + 1]).astype(np.int64)
        counts = np.bincount(parent[layer + 1], minlength=len(up))
        child_ptr[layer] = np.concatenate([[0], np.cumsum(counts)])
    parent[0] = np.zeros(0, dtype=np.int64)
    child_ptr[depth] = np.zeros(len(leaf) + 1, dtype=np.int64)
    return LayeredOctree(depth, keys, weights, parent, child_ptr)


class Block(NamedTuple):
    parent_key: int
    parent_weight: int
    children: list  # [(local index, weight), ...] in ascending local index


def blocks_of_layer(tree: LayeredOctree, layer: int) -> list:
    """Transform blocks rooted at ``layer``, in ascending Morton order."""
    if not 0 <= layer < tree.depth:
        raise LayerOutOfRange(f"layer {layer} outside [0, {tree.depth})")
    ptr = tree.child_ptr[layer]
    local = tree.local_index(layer + 1).tolist()
    w = tree.weights[layer + 1].tolist()
    out = []
    for i, (key, weight) in enumerate(zip(tree.keys[layer].tolist(), tree.weights[layer].tolist())):
        kids = [(local[j], w[j]) for j in range(ptr[i], ptr[i + 1])]
        out.append(Block(key, weight, kids))
    return out
