"""Quality and rate metrics: PSNR, BD-rate, weighted totals, layer statistics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .cloud_io import VoxelCloud
from .errors import GeometryMismatch, InsufficientPoints, NoOverlap

PEAK = 255.0
LUMA_WEIGHT = 7
CSV_COLUMNS = ("bpop", "psnr_y", "psnr_cb", "psnr_cr")


def weighted_psnr(y: float, cb: float, cr: float, a: float = LUMA_WEIGHT) -> float:
    return (a * y + cb + cr) / (a + 2)


@dataclass(frozen=True)
class RdPoint:
    bpop: float
    psnr_y: float
    psnr_cb: float
    psnr_cr: float

    @property
    def psnr_weighted(self) -> float:
        return weighted_psnr(self.psnr_y, self.psnr_cb, self.psnr_cr)

    def channel(self, name: str) -> float:
        return {"y": self.psnr_y, "cb": self.psnr_cb, "cr": self.psnr_cr, "weighted": self.psnr_weighted}[name]


@dataclass(frozen=True)
class BdResult:
    y: float
    cb: float
    cr: float

    @property
    def total(self) -> float:
        return bdbr_total(self.y, self.cb, self.cr)


def _aligned(orig: VoxelCloud, recon: VoxelCloud):
    a = orig if orig.is_canonical() else orig.canonicalize()
    b = recon if recon.is_canonical() else recon.canonicalize()
    if a.count != b.count or not np.array_equal(a.voxels, b.voxels):
        raise GeometryMismatch("original and reconstruction occupy different voxels")
    return a.attrs.astype(np.float64), b.attrs.astype(np.float64)


def psnr_from_mse(mse) -> np.ndarray:
    mse = np.asarray(mse, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(mse > 0, 10 * np.log10(PEAK**2 / np.maximum(mse, 1e-300)), np.inf)


def psnr(orig: VoxelCloud, recon: VoxelCloud) -> dict:
    """Per-channel PSNR (``inf`` for a perfect channel) plus the 7:1:1 average."""
    a, b = _aligned(orig, recon)
    y, cb, cr = psnr_from_mse(np.mean((a - b) ** 2, axis=0)).tolist()
    return {"psnr_y": y, "psnr_cb": cb, "psnr_cr": cr, "psnr_weighted": weighted_psnr(y, cb, cr)}


def rd_point(orig: VoxelCloud, recon: VoxelCloud, attribute_bits: int) -> RdPoint:
    p = psnr(orig, recon)
    return RdPoint(attribute_bits / recon.count, p["psnr_y"], p["psnr_cb"], p["psnr_cr"])


def _bd_curve(rates, quality):
    rates = np.asarray(rates, dtype=np.float64)
    quality = np.asarray(quality, dtype=np.float64)
    if len(rates) < 4 or len(quality) != len(rates):
        raise InsufficientPoints(f"need at least 4 RD points per curve, got {len(rates)}")
    if not (np.all(np.isfinite(rates)) and np.all(np.isfinite(quality))) or np.any(rates <= 0):
        raise InsufficientPoints("RD points must be finite with positive rate")
    if len(np.unique(quality)) != len(quality):
        raise InsufficientPoints("PSNR values of a curve must be distinct")
    return np.log(rates), quality


def bd_rate_curve(anchor_rate, anchor_psnr, test_rate, test_psnr) -> float:
    """Bjontegaard rate delta in percent (cubic fit of log-rate against PSNR)."""
    la, qa = _bd_curve(anchor_rate, anchor_psnr)
    lt, qt = _bd_curve(test_rate, test_psnr)
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if not hi > lo:
        raise NoOverlap(f"PSNR ranges do not overlap ([{qa.min():.3f}, {qa.max():.3f}] vs [{qt.min():.3f}, {qt.max():.3f}])")
    pa = np.polyint(np.polyfit(qa, la, 3))
    pt = np.polyint(np.polyfit(qt, lt, 3))
    avg_diff = ((np.polyval(pt, hi) - np.polyval(pt, lo)) - (np.polyval(pa, hi) - np.polyval(pa, lo))) / (hi - lo)
    return float((math.exp(avg_diff) - 1) * 100)


def bd_rate(anchor, test) -> BdResult:
    """Per-channel BD-rate of ``test`` against ``anchor`` (lists of RdPoint).

    Every channel uses the total attribute BPOP as its rate.
    """
    anchor, test = list(anchor), list(test)
    out = []
    for ch in ("y", "cb", "cr"):
        out.append(
            bd_rate_curve(
                [p.bpop for p in anchor], [p.channel(ch) for p in anchor],
                [p.bpop for p in test], [p.channel(ch) for p in test],
            )
        )
    return BdResult(*out)


def bdbr_total(y: float, cb: float, cr: float, a: float = LUMA_WEIGHT) -> float:
    """Luma-weighted aggregate ``a*y + cb + cr``."""
    return a * y + cb + cr


def complexity_ratio(t_pro: float, t_anc: float) -> float:
    """Run time of the proposal as a percentage of the anchor's."""
    if not t_anc > 0:
        raise ValueError("anchor time must be positive")
    if t_pro < 0:
        raise ValueError("time cannot be negative")
    return 100.0 * t_pro / t_anc


@dataclass
class LayerStats:
    ac_count: np.ndarray
    zero_fraction: np.ndarray  # (n_layers,) or (n_layers, C)

    @property
    def total(self) -> int:
        return int(self.ac_count.sum())


def layer_stats(levels, layer_offsets) -> LayerStats:
    """AC count and fraction of zero levels of every transform layer.

    ``levels`` is 1-D or ``(M, C)``; a layer without coefficients reports a
    zero fraction of 1.
    """
    lv = np.asarray(levels)
    off = np.asarray(layer_offsets, dtype=np.int64)
    counts = np.diff(off)
    if lv.shape[0] != off[-1]:
        raise ValueError(f"{lv.shape[0]} levels but offsets cover {off[-1]}")
    fracs = []
    for i in range(len(counts)):
        part = lv[off[i]:off[i + 1]]
        fracs.append(np.mean(part == 0, axis=0) if len(part) else np.ones(lv.shape[1:]))
    return LayerStats(counts, np.array(fracs, dtype=np.float64))


def write_rd_csv(points, stream=None) -> str:
    buf = stream if stream is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in points:
        w.writerow([repr(float(getattr(p, c))) for c in CSV_COLUMNS])
    return buf.getvalue() if stream is None else ""


def read_rd_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows and not text.strip():
        raise ValueError("empty CSV")
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise ValueError(f"CSV header must be {','.join(CSV_COLUMNS)}")
    return [RdPoint(*(float(r[c]) for c in CSV_COLUMNS)) for r in rows]
