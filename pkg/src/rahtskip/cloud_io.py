"""Point cloud I/O, color conversion and voxelization.

Colors are carried internally as 8-bit YCbCr using the BT.709 full-range
matrices below (6 decimal places, so conversions are reproducible):

    Y  =  0.212600 R + 0.715200 G + 0.072200 B
    Cb = -0.114572 R - 0.385428 G + 0.500000 B + 128
    Cr =  0.500000 R - 0.454153 G - 0.045847 B + 128

    R = Y + 1.574800 (Cr - 128)
    G = Y - 0.187324 (Cb - 128) - 0.468124 (Cr - 128)
    B = Y + 1.855600 (Cb - 128)

Every conversion result is rounded half away from zero and clamped to
[0, 255].
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import EmptyAfterVoxelize, MalformedHeader, MissingColor, TruncatedPayload
from .octree import morton_encode

RGB_TO_YCBCR = np.array(
    [
        [0.212600, 0.715200, 0.072200],
        [-0.114572, -0.385428, 0.500000],
        [0.500000, -0.454153, -0.045847],
    ]
)
YCBCR_TO_RGB = np.array(
    [
        [1.0, 0.0, 1.574800],
        [1.0, -0.187324, -0.468124],
        [1.0, 1.855600, 0.0],
    ]
)
CHROMA_OFFSET = np.array([0.0, 128.0, 128.0])

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def round_half_away(x):
    """Round half away from zero (numpy's rint rounds half to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class RawCloud:
    positions: np.ndarray  # (n, 3) float64
    colors: np.ndarray  # (n, 3) int64, RGB as stored in the file

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.int64).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError("positions and colors must have the same length")
        if len(self.positions) == 0:
            raise ValueError("a cloud needs at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("coordinates must be finite")

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass
class VoxelCloud:
    depth: int
    voxels: np.ndarray  # (n, 3) int64 in [0, 2**depth)
    attrs: np.ndarray  # (n, 3) int64 YCbCr in [0, 255]

    def __post_init__(self):
        if not 1 <= self.depth <= 16:
            raise ValueError(f"depth {self.depth} outside [1, 16]")
        self.voxels = np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3)
        self.attrs = np.asarray(self.attrs, dtype=np.int64).reshape(-1, 3)
        if len(self.voxels) != len(self.attrs):
            raise ValueError("voxels and attrs must have the same length")
        if len(self.voxels) == 0:
            raise ValueError("a cloud needs at least one voxel")

    @property
    def count(self) -> int:
        return len(self.voxels)

    def morton_keys(self) -> np.ndarray:
        return morton_encode(self.voxels[:, 0], self.voxels[:, 1], self.voxels[:, 2], self.depth)

    def canonicalize(self) -> "VoxelCloud":
        """Return a copy sorted by Morton key; duplicate voxels are an error."""
        keys = self.morton_keys()
        order = np.argsort(keys, kind="stable")
        if np.any(np.diff(keys[order]) == 0):
            raise ValueError("duplicate voxels; use voxelize() to merge them")
        return VoxelCloud(self.depth, self.voxels[order], self.attrs[order])

    def is_canonical(self) -> bool:
        return bool(np.all(np.diff(self.morton_keys()) > 0))


def rgb_to_ycbcr(rgb) -> np.ndarray:
    """Convert RGB triples (shape (3,) or (n, 3)) to integer YCbCr."""
    rgb = np.asarray(rgb, dtype=np.float64)
    out = round_half_away(rgb @ RGB_TO_YCBCR.T + CHROMA_OFFSET)
    return np.clip(out, 0, 255).astype(np.int64)


def ycbcr_to_rgb(ycc) -> np.ndarray:
    ycc = np.asarray(ycc, dtype=np.float64)
    out = round_half_away((ycc - CHROMA_OFFSET) @ YCBCR_TO_RGB.T)
    return np.clip(out, 0, 255).astype(np.int64)


def voxelize(raw: RawCloud, depth: int, scale: float = 1.0, colorspace: str = "RGB") -> VoxelCloud:
    """Quantize positions to a 2**depth grid and merge duplicate points.

    Positions are scaled, floored and clamped to the grid. Points landing in
    the same voxel are merged into one whose YCbCr attribute is the rounded
    per-channel mean. The result is Morton sorted. ``colorspace="YCbCr"``
    means the colours are already YCbCr and are kept as they are.
    """
    if not 1 <= depth <= 16:
        raise ValueError(f"depth {depth} outside [1, 16]")
    if not scale > 0:
        raise ValueError("scale must be positive")
    grid = np.floor(raw.positions * scale)
    grid = np.clip(grid, 0, (1 << depth) - 1).astype(np.int64)
    if colorspace.upper() == "RGB":
        ycc = rgb_to_ycbcr(raw.colors)
    elif colorspace.upper() == "YCBCR":
        ycc = raw.colors.astype(np.float64)
    else:
        raise ValueError(f"unknown colorspace {colorspace!r}")

    keys = morton_encode(grid[:, 0], grid[:, 1], grid[:, 2], depth)
    uniq, first, inverse, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    if len(uniq) == 0:
        raise EmptyAfterVoxelize("no voxels left after voxelization")
    sums = np.zeros((len(uniq), 3), dtype=np.float64)
    np.add.at(sums, inverse.ravel(), ycc)
    attrs = round_half_away(sums / counts[:, None]).astype(np.int64)
    return VoxelCloud(depth, grid[first], np.clip(attrs, 0, 255))


# --------------------------------------------------------------------- PLY


def _parse_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedHeader("header: missing 'ply' magic or 'end_header'")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise MalformedHeader("header: 'end_header' line is not terminated")
    body_start = nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()[1:]

    fmt = None
    elements = []
    for line in lines:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2:
                raise MalformedHeader("format: missing format name")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not re.fullmatch(r"\d+", tok[2]):
                raise MalformedHeader(f"element: bad declaration {line!r}")
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader(f"property: declared before any element ({line!r})")
            if tok[1] == "list":
                if len(tok) != 5:
                    raise MalformedHeader(f"property: bad list declaration {line!r}")
                elements[-1][2].append(("list", tok[4], (tok[2], tok[3])))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise MalformedHeader(f"property: bad declaration {line!r}")
                elements[-1][2].append(("scalar", tok[2], tok[1]))
        else:
            raise MalformedHeader(f"header: unknown keyword {tok[0]!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedHeader(f"format: unsupported {fmt!r}")
    return fmt, elements, body_start


def parse_ply(data: bytes) -> RawCloud:
    """Parse an ASCII or binary little-endian PLY file into a RawCloud."""
    fmt, elements, pos = _parse_header(data)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise MalformedHeader("element: no 'vertex' element")
    vi = names.index("vertex")
    _, count, props = elements[vi]
    pnames = [p[1] for p in props]
    for axis in "xyz":
        if axis not in pnames:
            raise MalformedHeader(f"property: vertex has no {axis!r}")
    for channel in ("red", "green", "blue"):
        if channel not in pnames:
            raise MissingColor(f"property: vertex has no {channel!r}")
    if any(p[0] == "list" for p in props):
        raise MalformedHeader("property: list properties on vertex are not supported")
    if count == 0:
        raise MalformedHeader("element: vertex count is 0")

    if fmt == "ascii":
        text = data[pos:].decode("ascii", errors="replace").splitlines()
        text = [t for t in text if t.strip()]
        skip = sum(e[1] for e in elements[:vi])
        rows = text[skip:skip + count]
        if len(rows) < count:
            raise TruncatedPayload(f"vertex: expected {count} rows, found {len(rows)}")
        try:
            table = np.array([r.split()[: len(props)] for r in rows], dtype=np.float64)
        except ValueError as exc:
            raise TruncatedPayload(f"vertex: malformed row ({exc})") from None
        if table.ndim != 2 or table.shape[1] != len(props):
            raise TruncatedPayload("vertex: row with too few values")
        col = {name: table[:, i] for i, name in enumerate(pnames)}
    else:
        for name, n, eprops in elements[:vi]:
            if any(p[0] == "list" for p in eprops):
                raise MalformedHeader(f"element: list properties in {name!r} before vertex")
            pos += n * np.dtype([(p[1], "<" + _PLY_TYPES[p[2]]) for p in eprops]).itemsize
        dtype = np.dtype([(p[1], "<" + _PLY_TYPES[p[2]]) for p in props])
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise TruncatedPayload(f"vertex: need {need} bytes, have {max(len(data) - pos, 0)}")
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        col = {name: rec[name].astype(np.float64) for name in pnames}

    positions = np.stack([col["x"], col["y"], col["z"]], axis=1)
    colors = np.stack([col["red"], col["green"], col["blue"]], axis=1)
    if np.any(colors < 0) or np.any(colors > 255) or np.any(colors != np.floor(colors)):
        raise MalformedHeader("property: color values must be integers in [0, 255]")
    return RawCloud(positions, colors.astype(np.int64))


def write_ply(cloud: VoxelCloud, colorspace: str = "RGB") -> bytes:
    """Serialize a VoxelCloud as ASCII PLY.

    With ``colorspace="RGB"`` the YCbCr attributes are converted back to RGB;
    with ``"YCbCr"`` they are written unchanged into the red/green/blue
    properties.
    """
    if colorspace.upper() == "RGB":
        colors = ycbcr_to_rgb(cloud.attrs)
    elif colorspace.upper() == "YCBCR":
        colors = cloud.attrs
    else:
        raise ValueError(f"unknown colorspace {colorspace!r}")
    header = (
        "ply\n"
        "format ascii 1.0\n"
        f"comment colorspace {colorspace}\n"
        f"element vertex {cloud.count}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    table = np.concatenate([cloud.voxels, colors], axis=1)
    body = "\n".join(" ".join(map(str, row)) for row in table.tolist())
    return (header + body + "\n").encode("ascii")


def write_ply_binary(raw: RawCloud) -> bytes:
    """Binary little-endian writer, used for test fixtures and generated content."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {raw.count}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    ).encode("ascii")
    dtype = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    rec = np.empty(raw.count, dtype=dtype)
    for i, a in enumerate("xyz"):
        rec[a] = raw.positions[:, i]
    for i, c in enumerate(("red", "green", "blue")):
        rec[c] = raw.colors[:, i]
    return header + rec.tobytes()


def ply_colorspace(data: bytes) -> str:
    """Colour space named by a ``comment colorspace`` header line (RGB if absent)."""
    end = data.find(b"end_header")
    for line in data[: max(end, 0)].splitlines():
        parts = line.split()
        if len(parts) == 3 and parts[0] == b"comment" and parts[1] == b"colorspace":
            return parts[2].decode("ascii", errors="replace")
    return "RGB"


def read_cloud(path, depth: int, scale: float = 1.0) -> VoxelCloud:
    """Read and voxelize a PLY file, honouring a YCbCr colour-space comment."""
    with open(path, "rb") as fh:
        data = fh.read()
    return voxelize(parse_ply(data), depth, scale, ply_colorspace(data))
