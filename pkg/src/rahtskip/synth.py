"""Seeded synthetic content: sphere shells coloured by gradient noise.

Everything is driven by ``numpy.random.default_rng(seed)`` so the same seed
yields the same cloud byte for byte.
"""

from __future__ import annotations

import numpy as np

from .cloud_io import RawCloud, VoxelCloud, voxelize


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


class PerlinNoise3:
    """Classic 3-D gradient noise on the unit lattice, output roughly in [-1, 1]."""

    def __init__(self, rng: np.random.Generator, size: int = 256):
        self.perm = np.tile(rng.permutation(size), 2)
        g = rng.normal(size=(size, 3))
        self.grad = g / np.linalg.norm(g, axis=1, keepdims=True)
        self.size = size

    def _hash(self, ix, iy, iz):
        p, m = self.perm, self.size
        return p[p[p[ix % m] + iy % m] + iz % m]

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        base = np.floor(pts).astype(np.int64)
        frac = pts - base
        u = _fade(frac)
        out = np.zeros(len(pts))
        for corner in range(8):
            o = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
            h = self._hash(base[:, 0] + o[0], base[:, 1] + o[1], base[:, 2] + o[2])
            dot = np.einsum("ij,ij->i", self.grad[h], frac - o)
            w = np.prod(np.where(o == 1, u, 1 - u), axis=1)
            out += w * dot
        return out


def fractal_noise(noise: PerlinNoise3, pts, frequency: float, octaves: int = 3) -> np.ndarray:
    total = np.zeros(len(pts))
    amp, freq, norm = 1.0, frequency, 0.0
    for _ in range(octaves):
        total += amp * noise(np.asarray(pts) * freq)
        norm += amp
        amp *= 0.5
        freq *= 2.0
    return total / norm


def sphere_shell(
    seed: int = 0,
    depth: int = 7,
    n_points: int | None = None,
    thickness: float = 1.5,
    frequency: float = 2.0,
    octaves: int = 3,
    noise_sigma: float = 0.0,
) -> RawCloud:
    """Points on a spherical shell centred in the ``2**depth`` grid.

    ``frequency`` is in cycles per grid width, so the colour field keeps the
    same spatial smoothness at every depth. ``noise_sigma`` adds i.i.d.
    Gaussian noise to the RGB values.
    """
    rng = np.random.default_rng(seed)
    size = 1 << depth
    radius = 0.4 * size
    if n_points is None:
        n_points = int(4 * np.pi * radius**2 * max(thickness, 1.0))
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius + rng.uniform(-thickness / 2, thickness / 2, n_points)
    pos = size / 2 + d * r[:, None]
    pos = np.clip(pos, 0, size - 1e-6)

    noise = PerlinNoise3(rng)
    unit = pos / size
    rgb = []
    for offset in (0.0, 17.3, 41.9):
        f = fractal_noise(noise, unit + offset, frequency, octaves)
        rgb.append(128 + 110 * f)
    rgb = np.stack(rgb, axis=1)
    if noise_sigma > 0:
        rgb = rgb + rng.normal(scale=noise_sigma, size=rgb.shape)
    colors = np.clip(np.rint(rgb), 0, 255).astype(np.int64)
    return RawCloud(pos, colors)


def synthetic_cloud(seed: int = 0, depth: int = 7, **kw) -> VoxelCloud:
    """Voxelized :func:`sphere_shell`."""
    return voxelize(sphere_shell(seed, depth, **kw), depth)


def random_cloud(seed: int, n_points: int, depth: int) -> VoxelCloud:
    """Uniformly scattered voxels with uniform random colours."""
    rng = np.random.default_rng(seed)
    size = 1 << depth
    n = min(n_points, size**3)
    keys = rng.choice(size**3, size=n, replace=False) if size**3 <= 1 << 24 else np.unique(rng.integers(0, size**3, n))
    vox = np.stack([keys // (size * size), (keys // size) % size, keys % size], axis=1)
    attrs = rng.integers(0, 256, size=(len(vox), 3))
    return VoxelCloud(depth, vox.astype(np.int64), attrs.astype(np.int64)).canonicalize()


def synthetic_sequence(seed: int = 0, frames: int = 3, depth: int = 7, drift: float = 0.02, **kw) -> list:
    """Frames of one shell whose colour field slowly drifts; geometry jitters slightly."""
    rng = np.random.default_rng(seed)
    base = sphere_shell(seed, depth, **kw)
    noise = PerlinNoise3(np.random.default_rng(seed + 1))
    out = []
    size = 1 << depth
    for t in range(frames):
        jitter = rng.normal(scale=0.3, size=base.positions.shape) if t else 0.0
        pos = np.clip(base.positions + jitter, 0, size - 1e-6)
        shift = 128 * fractal_noise(noise, pos / size + t * drift, 1.0, 1)[:, None] * (t > 0) * 0.1
        colors = np.clip(np.rint(base.colors + shift), 0, 255).astype(np.int64)
        out.append(voxelize(RawCloud(pos, colors), depth))
    return out
