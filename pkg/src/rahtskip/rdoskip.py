"""Rate-distortion optimized skipping of the residuals of the last k layers.

For each colour channel the encoder compares five candidates: code every
residual (k = 0) or drop the residuals of the last k = 1..4 transform layers,
in which case the decoder reconstructs those coefficients from their
prediction alone. Distortion is measured in the transform domain (the
transform is orthonormal), rate with the context-tracking bit estimator, and
the candidate minimizing ``D + lambda * R`` is signalled with a 3-bit flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .coder import BinCoderState, Quantizer, estimate_prefix_bits

MAX_SKIP = 4
N_CANDIDATES = MAX_SKIP + 1
FLAG_BITS = 3
DEFAULT_C = 0.26


def rd_lambda(c: float, qp: int) -> float:
    """Lagrange multiplier ``c * 2**((qp - 12) / 3)``."""
    if not c > 0:
        raise ValueError("c must be positive")
    return c * 2.0 ** ((qp - 12) / 3)


@dataclass(frozen=True)
class LambdaParams:
    c: float = DEFAULT_C
    qp: int = 30

    @property
    def value(self) -> float:
        return rd_lambda(self.c, self.qp)


def available_candidates(layer_offsets) -> list:
    """Skip depths usable for a stream with these per-layer offsets.

    ``k`` needs at least ``k + 1`` transform layers and at least one
    coefficient inside the last ``k`` layers.
    """
    off = np.asarray(layer_offsets)
    n_layers = len(off) - 1
    out = [0]
    for k in range(1, MAX_SKIP + 1):
        if k <= n_layers - 1 and off[-1] - off[n_layers - k] > 0:
            out.append(k)
    return out


def split_index(layer_offsets, k: int) -> int:
    """Coding-order index where the last ``k`` layers start."""
    off = np.asarray(layer_offsets)
    return int(off[len(off) - 1 - k])


def distortion_table(ac_org, ac_pre, levels, q, layer_offsets, skipped_pre=None) -> np.ndarray:
    """Transform-domain SSE of each candidate (``nan`` where unavailable).

    ``ac_recon = level * Q + ac_pre``. Under skip ``k`` the last ``k`` layers
    are reconstructed as their prediction. When prediction depends on
    reconstructed parents, the prediction actually seen in the skipped region
    differs from the one of the full pass; ``skipped_pre[k]`` supplies it
    (entries from the split index onward). Without it ``ac_pre`` is used.
    """
    ac_org = np.asarray(ac_org, dtype=np.float64)
    ac_pre = np.asarray(ac_pre, dtype=np.float64)
    step = q.step if isinstance(q, Quantizer) else float(q)
    recon = np.asarray(levels, dtype=np.float64) * step + ac_pre
    err_coded = (ac_org - recon) ** 2
    prefix = np.concatenate([[0.0], np.cumsum(err_coded)])
    table = np.full(N_CANDIDATES, np.nan)
    for k in available_candidates(layer_offsets):
        s = split_index(layer_offsets, k)
        pre = ac_pre[s:] if not skipped_pre or k not in skipped_pre else np.asarray(skipped_pre[k])
        table[k] = prefix[s] + float(np.sum((ac_org[s:] - pre) ** 2))
    return table


def rate_table(levels, layer_offsets, state: BinCoderState | None = None, flag_bits: int = FLAG_BITS) -> np.ndarray:
    """Estimated bits of each candidate (``nan`` where unavailable).

    Every candidate is estimated from its own copy of ``state``; skipped
    layers contribute no tokens and skip candidates pay ``flag_bits``.
    """
    levels = np.asarray(levels, dtype=np.int64).tolist()
    table = np.full(N_CANDIDATES, np.nan)
    ks = available_candidates(layer_offsets)
    ests = estimate_prefix_bits(levels, [split_index(layer_offsets, k) for k in ks], state)
    for k, est in zip(ks, ests):
        table[k] = est + (flag_bits if k else 0)
    return table


@dataclass
class SkipCandidateTable:
    distortion: np.ndarray
    rate: np.ndarray
    lam: float

    @property
    def cost(self) -> np.ndarray:
        return self.distortion + self.lam * self.rate

    @property
    def available(self) -> list:
        return [k for k in range(N_CANDIDATES) if np.isfinite(self.cost[k])]

    def as_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(x) else float(x) for x in a]

        return {"lambda": self.lam, "D": clean(self.distortion), "R": clean(self.rate), "cost": clean(self.cost)}


class SkipDecision(NamedTuple):
    flag_luma: int = 0
    flag_cb: int = 0
    flag_cr: int = 0


def choose_k(costs) -> int:
    """Pick the skip depth from one channel's cost column.

    The cheapest skip candidate wins only if it is strictly cheaper than
    coding everything; among skip candidates ties go to the larger k.
    """
    costs = np.asarray(costs, dtype=np.float64)
    best_k, best = 0, costs[0]
    skip_best_k, skip_best = 0, np.inf
    for k in range(1, len(costs)):
        if np.isfinite(costs[k]) and costs[k] <= skip_best:
            skip_best_k, skip_best = k, costs[k]
    if skip_best_k and skip_best < best:
        return skip_best_k
    return best_k


def decide(tables) -> SkipDecision:
    """Independent per-channel decision from three candidate tables."""
    return SkipDecision(*(choose_k(t.cost if isinstance(t, SkipCandidateTable) else t) for t in tables))


def apply_skip(levels, decision, layer_offsets) -> list:
    """Per-channel level streams with the skipped layers removed."""
    levels = np.asarray(levels, dtype=np.int64)
    return [levels[: split_index(layer_offsets, k), c].copy() for c, k in enumerate(decision)]
