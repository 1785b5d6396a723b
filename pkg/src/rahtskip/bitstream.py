"""Frame container and the encoder/decoder drivers.

Layout (little-endian, see docs/FORMAT.md)::

    magic "RSKC" | version u8 | depth u8 | point_count u32
    qp_luma u8 | qp_chroma u8 | c_times_1000 u16 | mode u8 | flags u16
    len_geometry u32 | len_dc u32 | len_luma u32 | len_cb u32 | len_cr u32
    geometry | dc | luma | cb | cr

Bytes after the last declared payload are ignored.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .cloud_io import VoxelCloud, round_half_away
from .coder import BinCoderState, Quantizer, decode_stream, eg0_bits, encode_stream, quantize
from .errors import BadMagic, BadVersion, BitstreamError, FlagOutOfRange, MissingReference, Truncated
from .octree import build_layers, morton_decode
from .predict import INTER, INTRA, PredictionContext, ReferenceFrame, code_layers
from .raht import forward_raht, layer_offsets
from .rdoskip import (
    FLAG_BITS,
    MAX_SKIP,
    SkipCandidateTable,
    SkipDecision,
    apply_skip,
    available_candidates,
    decide,
    distortion_table,
    rate_table,
    rd_lambda,
    split_index,
)

MAGIC = b"RSKC"
SEQ_MAGIC = b"RSKS"
VERSION = 1
HEADER = struct.Struct("<4sBBIBBHBH5I")
N_CHANNELS = 3
CHANNELS = ("luma", "cb", "cr")


@dataclass
class FrameHeader:
    depth: int
    point_count: int
    qp_luma: int
    qp_chroma: int
    c_times_1000: int
    mode: int
    flags: tuple
    lengths: tuple  # geometry, dc, luma, cb, cr
    version: int = VERSION

    def pack(self) -> bytes:
        packed = 0
        for i, k in enumerate(self.flags):
            if not 0 <= k <= MAX_SKIP:
                raise FlagOutOfRange(f"flag {k} outside [0, {MAX_SKIP}]")
            packed |= k << (FLAG_BITS * i)
        return HEADER.pack(
            MAGIC, self.version, self.depth, self.point_count, self.qp_luma, self.qp_chroma,
            self.c_times_1000, self.mode, packed, *self.lengths,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "FrameHeader":
        if len(data) < 4 or data[:4] != MAGIC:
            raise BadMagic("frame does not start with 'RSKC'")
        if len(data) < HEADER.size:
            raise Truncated(f"header needs {HEADER.size} bytes, got {len(data)}")
        magic, version, depth, count, qpl, qpc, c1000, mode, packed, *lengths = HEADER.unpack_from(data)
        if version != VERSION:
            raise BadVersion(f"unsupported version {version}")
        flags = tuple((packed >> (FLAG_BITS * i)) & 0b111 for i in range(N_CHANNELS))
        if any(k > MAX_SKIP for k in flags):
            raise FlagOutOfRange(f"flags {flags} outside [0, {MAX_SKIP}]")
        if mode not in (0, 1):
            raise BitstreamError(f"unknown mode {mode}")
        if not 1 <= depth <= 16:
            raise BitstreamError(f"depth {depth} outside [1, 16]")
        return cls(depth, count, qpl, qpc, c1000, mode, flags, tuple(lengths), version)


@dataclass
class EncoderConfig:
    qp: int = 30
    qp_chroma: int | None = None
    mode: str = INTRA
    skip: bool = True
    c: float = 0.26
    force_flags: tuple | None = None

    def __post_init__(self):
        Quantizer(self.qp)
        Quantizer(self.chroma_qp)
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.mode not in (INTRA, INTER):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def chroma_qp(self) -> int:
        return self.qp if self.qp_chroma is None else self.qp_chroma

    @property
    def qps(self) -> tuple:
        return (self.qp, self.chroma_qp, self.chroma_qp)


@dataclass
class EncodeStats:
    point_count: int
    flags: tuple
    header_bits: int
    geometry_bits: int
    dc_bits: int
    channel_bits: tuple  # payload bytes * 8 per channel
    channel_exact_bits: tuple  # significant bits reported by the range coder
    tables: list  # SkipCandidateTable per channel
    timings: dict
    levels: np.ndarray = field(repr=False)  # full (unskipped) levels, coding order
    layer_offsets: np.ndarray = field(repr=False)
    recon_float: np.ndarray = field(repr=False)  # reconstruction before rounding/clamping
    recon: VoxelCloud = field(repr=False)
    dc_error: np.ndarray = field(repr=False)  # dc_root - reconstructed dc_root

    @property
    def attribute_bits(self) -> int:
        return self.dc_bits + sum(self.channel_bits) + FLAG_BITS * N_CHANNELS

    @property
    def bpop(self) -> float:
        return self.attribute_bits / self.point_count

    @property
    def enc_seconds(self) -> float:
        return self.timings["total"]

    def to_json(self, verbose: bool = False) -> dict:
        out = {
            "points": self.point_count,
            "attribute_bits": self.attribute_bits,
            "geometry_bits": self.geometry_bits,
            "header_bits": self.header_bits,
            "bpop": self.bpop,
            "flags": {name: int(k) for name, k in zip(CHANNELS, self.flags)},
            "channel_bits": dict(zip(CHANNELS, map(int, self.channel_bits))),
            "enc_seconds": self.enc_seconds,
            "timings": self.timings,
        }
        if verbose:
            out["rd_tables"] = {name: t.as_dict() for name, t in zip(CHANNELS, self.tables)}
        return out


# ----------------------------------------------------------- small codecs


def _varint(n: int, out: bytearray):
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def encode_geometry(keys: np.ndarray) -> bytes:
    out = bytearray()
    prev = -1
    for k in keys.tolist():
        _varint(k - prev - 1 if prev >= 0 else k, out)
        prev = k
    return bytes(out)


def decode_geometry(data: bytes, count: int) -> np.ndarray:
    keys = np.empty(count, dtype=np.int64)
    pos = 0
    prev = -1
    for i in range(count):
        n = shift = 0
        while True:
            if pos >= len(data):
                raise Truncated("geometry payload ends mid-varint")
            b = data[pos]
            pos += 1
            n |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
        prev = n if prev < 0 else prev + n + 1
        keys[i] = prev
    return keys


def encode_dc(levels) -> bytes:
    bits = []
    for v in levels:
        bits.extend(eg0_bits(abs(int(v))))
        if v:
            bits.append(int(v < 0))
    bits.extend([0] * (-len(bits) % 8))
    return bytes(int("".join(map(str, bits[i:i + 8])), 2) for i in range(0, len(bits), 8))


def decode_dc(data: bytes, n: int = N_CHANNELS) -> list:
    bits = [(byte >> (7 - i)) & 1 for byte in data for i in range(8)]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(bits):
            raise Truncated("dc payload ends early")
        pos += 1
        return bits[pos - 1]

    out = []
    for _ in range(n):
        zeros = 0
        while take() == 0:
            zeros += 1
        v = 1
        for _ in range(zeros):
            v = (v << 1) | take()
        mag = v - 1
        out.append(-mag if mag and take() else mag)
    return out


# ------------------------------------------------------------------ frames


def _context(mode: str, ref) -> PredictionContext:
    if mode == INTER:
        if ref is None:
            raise MissingReference("inter frame needs a reference frame")
        if not isinstance(ref, ReferenceFrame):
            ref = ReferenceFrame.from_cloud(ref)
        return PredictionContext(INTER, ref)
    return PredictionContext(INTRA)


def _finalize(values: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(values), 0, 255).astype(np.int64)


def encode_frame(cloud: VoxelCloud, cfg: EncoderConfig | None = None, ref=None):
    """Encode one frame; returns ``(bytes, EncodeStats)``.

    ``ref`` is the previous reconstructed frame (a VoxelCloud or a
    ReferenceFrame) and is required in inter mode.
    """
    cfg = cfg or EncoderConfig()
    timings = {}
    t_start = t = time.perf_counter()
    ctx = _context(cfg.mode, ref)
    if not cloud.is_canonical():
        cloud = cloud.canonicalize()
    tree = build_layers(cloud)
    depth = tree.depth
    off = layer_offsets(tree)
    timings["octree"] = time.perf_counter() - t

    t = time.perf_counter()
    coeffs = forward_raht(tree, cloud.attrs.astype(np.float64))
    timings["transform"] = time.perf_counter() - t

    t = time.perf_counter()
    steps = np.array([Quantizer(qp).step for qp in cfg.qps])
    dc_levels = quantize(coeffs.dc_root / steps, 1.0)
    dc_recon = np.asarray(dc_levels) * steps
    full = code_layers(tree, ctx, steps, dc_recon[None, :], ac_org=coeffs.values)
    timings["predict_quantize"] = time.perf_counter() - t

    # candidate passes: layers above the split are identical to the full pass
    t = time.perf_counter()
    cands = available_candidates(off)
    need_tables = cfg.skip or cfg.force_flags is not None
    skipped_pre = {}
    if need_tables:
        for k in cands[1:]:
            start = depth - k
            p = code_layers(
                tree, ctx, steps, full.values[start], start=start,
                ac_org=coeffs.values, skip_from=np.full(N_CHANNELS, start),
            )
            skipped_pre[k] = p.ac_pre
    tables = []
    for c in range(N_CHANNELS):
        lam = rd_lambda(cfg.c, cfg.qps[c])
        if need_tables:
            d = distortion_table(
                coeffs.values[:, c], full.ac_pre[:, c], full.levels[:, c], steps[c], off,
                {k: v[:, c] for k, v in skipped_pre.items()},
            )
            r = rate_table(full.levels[:, c], off)
            # skipping more layers never lowers the error against the full-pass prediction
            lit = distortion_table(coeffs.values[:, c], full.ac_pre[:, c], full.levels[:, c], steps[c], off)
            lit = lit[np.isfinite(lit)]
            if np.any(np.diff(lit) < -1e-9 * max(1.0, lit[-1])):
                raise AssertionError(f"distortion not monotone in k: {lit}")
        else:
            d = np.full(MAX_SKIP + 1, np.nan)
            r = np.full(MAX_SKIP + 1, np.nan)
            d[0] = float(np.sum((coeffs.values[:, c] - full.ac_recon[:, c]) ** 2))
        tables.append(SkipCandidateTable(d, r, lam))

    if cfg.force_flags is not None:
        flags = tuple(int(k) for k in cfg.force_flags)
        for k in flags:
            if k not in cands:
                raise ValueError(f"forced flag {k} unavailable (candidates {cands})")
        decision = SkipDecision(*flags)
    elif cfg.skip:
        decision = decide(tables)
    else:
        decision = SkipDecision(0, 0, 0)
    timings["rdo"] = time.perf_counter() - t

    t = time.perf_counter()
    streams = apply_skip(full.levels, decision, off)
    payloads, exact = [], []
    for s in streams:
        data, nbits = encode_stream(s.tolist(), BinCoderState())
        payloads.append(data)
        exact.append(nbits)
    geometry = encode_geometry(tree.keys[depth])
    dc = encode_dc(np.atleast_1d(dc_levels))
    timings["entropy"] = time.perf_counter() - t

    header = FrameHeader(
        depth=depth, point_count=cloud.count, qp_luma=cfg.qp, qp_chroma=cfg.chroma_qp,
        c_times_1000=int(round(cfg.c * 1000)), mode=1 if cfg.mode == INTER else 0,
        flags=tuple(decision), lengths=(len(geometry), len(dc), *map(len, payloads)),
    )
    data = header.pack() + geometry + dc + b"".join(payloads)

    # mirror the decoder exactly to obtain the reconstruction
    t = time.perf_counter()
    recon_float = _reconstruct(tree, ctx, steps, dc_recon, streams, decision, off)
    recon = VoxelCloud(depth, cloud.voxels, _finalize(recon_float))
    timings["reconstruct"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t_start

    stats = EncodeStats(
        point_count=cloud.count, flags=tuple(decision), header_bits=8 * HEADER.size,
        geometry_bits=8 * len(geometry), dc_bits=8 * len(dc),
        channel_bits=tuple(8 * len(p) for p in payloads), channel_exact_bits=tuple(exact),
        tables=tables, timings=timings, levels=full.levels, layer_offsets=off,
        recon_float=recon_float, recon=recon, dc_error=coeffs.dc_root - dc_recon,
    )
    return data, stats


def _reconstruct(tree, ctx, steps, dc_recon, streams, decision, off) -> np.ndarray:
    total = int(off[-1])
    levels = np.zeros((total, N_CHANNELS), dtype=np.int64)
    for c, s in enumerate(streams):
        levels[: len(s), c] = s
    skip_from = np.array([tree.depth - k for k in decision])
    out = code_layers(tree, ctx, steps, np.asarray(dc_recon, dtype=np.float64)[None, :], levels=levels, skip_from=skip_from)
    return out.leaves


def decode_frame_float(data: bytes, ref=None):
    """Decode geometry and the unrounded attribute reconstruction.

    Returns ``(voxels, attrs_float, header)``.
    """
    header = FrameHeader.unpack(data)
    pos = HEADER.size
    if len(data) < pos + sum(header.lengths):
        raise Truncated(f"frame declares {pos + sum(header.lengths)} bytes, got {len(data)}")
    parts = []
    for n in header.lengths:
        parts.append(bytes(data[pos:pos + n]))
        pos += n
    geometry, dc, *channel_payloads = parts

    depth = header.depth
    keys = decode_geometry(geometry, header.point_count)
    if np.any(np.diff(keys) <= 0) or (len(keys) and keys[-1] >= 1 << (3 * depth)):
        raise BitstreamError("geometry keys are not strictly increasing within the grid")
    x, y, z = morton_decode(keys, depth)
    voxels = np.stack([x, y, z], axis=1)
    geom = VoxelCloud(depth, voxels, np.zeros_like(voxels))
    tree = build_layers(geom)
    off = layer_offsets(tree)
    cands = available_candidates(off)
    for k in header.flags:
        if k not in cands:
            raise FlagOutOfRange(f"flag {k} unusable for a stream with candidates {cands}")

    mode = INTER if header.mode == 1 else INTRA
    ctx = _context(mode, ref)
    steps = np.array([Quantizer(qp).step for qp in (header.qp_luma, header.qp_chroma, header.qp_chroma)])
    dc_recon = np.array(decode_dc(dc), dtype=np.float64) * steps
    streams = []
    for c, payload in enumerate(channel_payloads):
        n = split_index(off, header.flags[c])
        streams.append(np.array(decode_stream(payload, n, BinCoderState()), dtype=np.int64))
    attrs = _reconstruct(tree, ctx, steps, dc_recon, streams, header.flags, off)
    return voxels, attrs, header


def decode_frame(data: bytes, ref=None) -> VoxelCloud:
    voxels, attrs, header = decode_frame_float(data, ref)
    return VoxelCloud(header.depth, voxels, _finalize(attrs))


# --------------------------------------------------------------- sequences


def encode_sequence(frames, cfg: EncoderConfig | None = None) -> list:
    """Encode frames in order; returns ``[(bytes, EncodeStats), ...]``.

    Frame 0 is always intra. With ``cfg.mode == "inter"`` each later frame is
    predicted from the previous reconstruction.
    """
    cfg = cfg or EncoderConfig()
    frames = list(frames)
    if not frames:
        raise ValueError("a sequence needs at least one frame")
    out = []
    ref = None
    for i, frame in enumerate(frames):
        mode = cfg.mode if i > 0 else INTRA
        frame_cfg = EncoderConfig(cfg.qp, cfg.qp_chroma, mode, cfg.skip, cfg.c, cfg.force_flags)
        data, stats = encode_frame(frame, frame_cfg, ref if mode == INTER else None)
        out.append((data, stats))
        ref = stats.recon
    return out


def decode_sequence(frames) -> list:
    out = []
    ref = None
    for data in frames:
        cloud = decode_frame(data, ref)
        out.append(cloud)
        ref = cloud
    return out


def pack_sequence(frames) -> bytes:
    """Concatenate frames: ``"RSKS" | count u32 | (len u32 | frame)*``."""
    out = bytearray(SEQ_MAGIC + struct.pack("<I", len(frames)))
    for f in frames:
        out += struct.pack("<I", len(f)) + f
    return bytes(out)


def unpack_sequence(data: bytes) -> list:
    if data[:4] == MAGIC:
        return [data]
    if data[:4] != SEQ_MAGIC:
        raise BadMagic("not an RSKC frame or RSKS sequence")
    if len(data) < 8:
        raise Truncated("sequence header truncated")
    (count,) = struct.unpack_from("<I", data, 4)
    pos = 8
    frames = []
    for _ in range(count):
        if len(data) < pos + 4:
            raise Truncated("sequence frame length missing")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if len(data) < pos + n:
            raise Truncated("sequence frame truncated")
        frames.append(data[pos:pos + n])
        pos += n
    return frames
