"""Quantization, zero-run binarization and adaptive binary range coding.

Token grammar for a level sequence of known length ``n``::

    run value run value ... run

``run`` counts zeros and is binarized as truncated unary (cmax 3, one
context per bin) followed by an order-0 exp-Golomb suffix in bypass mode
when it reaches cmax. ``value`` is always non-zero: a sign bin, an ``isone``
bin, an ``istwo`` bin when ``|v| > 1`` and a bypass EG0 suffix of
``|v| - 3`` when ``|v| > 2``. The last run always reaches position ``n``,
so the decoder stops there without an explicit terminator.

Probabilities are 16-bit fixed point values of P(bin = 1), start at 1/2,
adapt with ``p += (target - p) / 16`` and are clamped to [1/512, 511/512].
"""

from __future__ import annotations

import bisect
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .cloud_io import round_half_away
from .errors import BitstreamError

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
PROB_HALF = PROB_ONE >> 1
PROB_MIN = PROB_ONE // 512
PROB_MAX = PROB_ONE - PROB_MIN
ADAPT_SHIFT = 4

CTX_RUN = (0, 1, 2)
CTX_SIGN = 3
CTX_ISONE = 4
CTX_ISTWO = 5
N_CONTEXTS = 6
RUN_CMAX = 3

BYPASS = None

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF

# -log2 of the coded probability, indexed by the 16-bit state
_COST1 = [0.0] + [-math.log2(p / PROB_ONE) for p in range(1, PROB_ONE)]
_COST0 = [0.0] + [-math.log2((PROB_ONE - p) / PROB_ONE) for p in range(1, PROB_ONE)]


# ---------------------------------------------------------------- quantizer


@dataclass(frozen=True)
class Quantizer:
    qp: int

    def __post_init__(self):
        if not 4 <= self.qp <= 51:
            raise ValueError(f"qp {self.qp} outside [4, 51]")

    @property
    def step(self) -> float:
        return 2.0 ** ((self.qp - 12) / 6)


def _step(q) -> float:
    return q.step if isinstance(q, Quantizer) else float(q)


def quantize(residual, q):
    """Round-half-away-from-zero of residual / Q (scalar or array)."""
    out = round_half_away(np.asarray(residual, dtype=np.float64) / _step(q))
    if out.ndim == 0:
        return int(out)
    return out.astype(np.int64)


def dequantize(level, q):
    out = np.asarray(level, dtype=np.float64) * _step(q)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------- binarization


def eg0_bits(n: int) -> list:
    """Order-0 exp-Golomb code of a non-negative integer."""
    if n < 0:
        raise ValueError("exp-Golomb input must be non-negative")
    v = n + 1
    nbits = v.bit_length()
    return [0] * (nbits - 1) + [(v >> i) & 1 for i in range(nbits - 1, -1, -1)]


def binarize_value(v: int) -> list:
    """Bins ``(context, bit)`` of a non-zero level; context ``None`` is bypass."""
    if v == 0:
        raise ValueError("zero levels are carried by run lengths")
    mag = abs(v)
    bins = [(CTX_SIGN, int(v < 0)), (CTX_ISONE, int(mag == 1))]
    if mag > 1:
        bins.append((CTX_ISTWO, int(mag == 2)))
        if mag > 2:
            bins.extend((BYPASS, b) for b in eg0_bits(mag - 3))
    return bins


def binarize_run(length: int, cmax: int = RUN_CMAX) -> list:
    if length < 0:
        raise ValueError("run length must be non-negative")
    bins = [(CTX_RUN[min(i, len(CTX_RUN) - 1)], 1) for i in range(min(length, cmax))]
    if length < cmax:
        bins.append((CTX_RUN[min(length, len(CTX_RUN) - 1)], 0))
    else:
        bins.extend((BYPASS, b) for b in eg0_bits(length - cmax))
    return bins


def tokenize(levels) -> list:
    """Alternating ``('run', n)`` / ``('value', v)`` tokens, ending with a run."""
    tokens = []
    run = 0
    for v in levels:
        if v == 0:
            run += 1
        else:
            tokens.append(("run", run))
            tokens.append(("value", int(v)))
            run = 0
    tokens.append(("run", run))
    return tokens


def stream_bins(levels) -> list:
    bins = []
    for kind, x in tokenize(levels):
        bins.extend(binarize_run(x) if kind == "run" else binarize_value(x))
    return bins


# ---------------------------------------------------------------- contexts


@dataclass
class BinCoderState:
    contexts: list = field(default_factory=lambda: [PROB_HALF] * N_CONTEXTS)

    def copy(self) -> "BinCoderState":
        return BinCoderState(list(self.contexts))

    def digest(self) -> str:
        return hashlib.sha256(np.asarray(self.contexts, dtype=np.int64).tobytes()).hexdigest()


def _adapt(p: int, bit: int) -> int:
    if bit:
        p += (PROB_ONE - p) >> ADAPT_SHIFT
    else:
        p -= p >> ADAPT_SHIFT
    return PROB_MIN if p < PROB_MIN else PROB_MAX if p > PROB_MAX else p


# ------------------------------------------------------------- range coder


class RangeEncoder:
    """Binary range encoder with carry propagation (LZMA style, 32-bit)."""

    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode_bit(self, contexts: list, ctx: int, bit: int):
        p = contexts[ctx]
        bound = (self.range >> PROB_BITS) * (PROB_ONE - p)
        if bit:
            self.low += bound
            self.range -= bound
        else:
            self.range = bound
        contexts[ctx] = _adapt(p, bit)
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bypass(self, bit: int):
        self.range >>= 1
        if bit:
            self.low += self.range
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self):
        """Flush and return ``(payload, significant bit count)``.

        The final code value is the point of the last interval with the most
        trailing zero bits; trailing zero bytes are dropped because the
        decoder reads zeros past the end of its input.
        """
        lo, hi = self.low, self.low + self.range
        for m in range(32, -1, -1):
            v = ((lo + (1 << m) - 1) >> m) << m
            if v < hi:
                break
        self.low = v
        for _ in range(5):
            self._shift_low()
        # the first byte only ever holds the (impossible) carry out of the initial range
        data = bytes(self.out[1:]).rstrip(b"\0")
        if not data:
            return b"", 0
        last = data[-1]
        trailing = (last & -last).bit_length() - 1
        return data, 8 * len(data) - trailing


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 4
        self.range = _MASK32
        self.code = int.from_bytes(bytes(data[:4]).ljust(4, b"\0"), "big")

    def _next(self) -> int:
        b = self.data[self.pos] if self.pos < len(self.data) else 0
        self.pos += 1
        return b

    def decode_bit(self, contexts: list, ctx: int) -> int:
        p = contexts[ctx]
        bound = (self.range >> PROB_BITS) * (PROB_ONE - p)
        if self.code < bound:
            self.range = bound
            bit = 0
        else:
            self.code -= bound
            self.range -= bound
            bit = 1
        contexts[ctx] = _adapt(p, bit)
        while self.range < _TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next()) & _MASK32
        return bit

    def decode_bypass(self) -> int:
        self.range >>= 1
        if self.code >= self.range:
            self.code -= self.range
            bit = 1
        else:
            bit = 0
        while self.range < _TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next()) & _MASK32
        return bit

    def decode_eg0(self) -> int:
        zeros = 0
        while self.decode_bypass() == 0:
            zeros += 1
            if zeros > 40:
                raise BitstreamError("exp-Golomb prefix too long; corrupt payload")
        v = 1
        for _ in range(zeros):
            v = (v << 1) | self.decode_bypass()
        return v - 1


# ---------------------------------------------------------------- streams


def _emit(enc: RangeEncoder, contexts: list, bins):
    for ctx, bit in bins:
        if ctx is None:
            enc.encode_bypass(bit)
        else:
            enc.encode_bit(contexts, ctx, bit)


def encode_stream(levels, state: BinCoderState | None = None):
    """Entropy-code a level sequence; returns ``(payload, bit count)``.

    ``state`` is updated in place when given (a fresh state is used
    otherwise).
    """
    contexts = (state or BinCoderState()).contexts
    enc = RangeEncoder()
    run = 0
    for v in levels:
        if v == 0:
            run += 1
            continue
        _emit(enc, contexts, binarize_run(run))
        _emit(enc, contexts, binarize_value(int(v)))
        run = 0
    _emit(enc, contexts, binarize_run(run))
    return enc.finish()


def _decode_run(dec: RangeDecoder, contexts: list) -> int:
    n = 0
    while n < RUN_CMAX:
        if not dec.decode_bit(contexts, CTX_RUN[min(n, len(CTX_RUN) - 1)]):
            return n
        n += 1
    return n + dec.decode_eg0()


def _decode_value(dec: RangeDecoder, contexts: list) -> int:
    neg = dec.decode_bit(contexts, CTX_SIGN)
    if dec.decode_bit(contexts, CTX_ISONE):
        mag = 1
    elif dec.decode_bit(contexts, CTX_ISTWO):
        mag = 2
    else:
        mag = 3 + dec.decode_eg0()
    return -mag if neg else mag


def decode_stream(payload: bytes, count: int, state: BinCoderState | None = None) -> list:
    """Inverse of :func:`encode_stream` for a sequence of ``count`` levels."""
    contexts = (state or BinCoderState()).contexts
    dec = RangeDecoder(payload)
    out = []
    while True:
        run = _decode_run(dec, contexts)
        if len(out) + run > count:
            raise BitstreamError(f"run of {run} overflows the {count}-level stream")
        out.extend([0] * run)
        if len(out) == count:
            return out
        out.append(_decode_value(dec, contexts))


def _bins_cost(bins, contexts: list) -> float:
    bits = 0.0
    for ctx, bit in bins:
        if ctx is None:
            bits += 1.0
            continue
        p = contexts[ctx]
        bits += _COST1[p] if bit else _COST0[p]
        contexts[ctx] = _adapt(p, bit)
    return bits


@dataclass
class RateEstimate:
    bits: float
    state: BinCoderState


def estimate_bits(levels, state: BinCoderState | None = None) -> RateEstimate:
    """Estimated size of :func:`encode_stream` output without coding anything.

    Context bins cost ``-log2 p`` under the adapting probabilities, bypass bins
    one bit each. The caller's ``state`` is copied, never modified.
    """
    contexts = list((state or BinCoderState()).contexts)
    bits = _bins_cost(stream_bins(levels), contexts)
    return RateEstimate(bits, BinCoderState(contexts))


def estimate_prefix_bits(levels, splits, state: BinCoderState | None = None) -> list:
    """``estimate_bits(levels[:s]).bits`` for every ``s`` in ``splits``, in one pass.

    A prefix stream shares every token with the full stream up to its last
    non-zero level; only its terminal run differs.
    """
    levels = list(levels)
    nz = [i for i, v in enumerate(levels) if v != 0]
    # last non-zero index strictly before each split (-1 if none)
    anchors = {s: (nz[k - 1] if (k := bisect.bisect_left(nz, s)) else -1) for s in splits}
    wanted = set(anchors.values())
    last = max(wanted, default=-1)
    contexts = list((state or BinCoderState()).contexts)
    snap = {-1: (0.0, list(contexts))}
    bits = 0.0
    prev = -1
    for j in nz:
        if j > last:
            break
        bits += _bins_cost(binarize_run(j - prev - 1), contexts)
        bits += _bins_cost(binarize_value(int(levels[j])), contexts)
        prev = j
        if j in wanted:
            snap[j] = (bits, list(contexts))
    out = []
    for s in splits:
        j = anchors[s]
        base, ctxs = snap[j]
        out.append(base + _bins_cost(binarize_run(s - j - 1), list(ctxs)))
    return out
