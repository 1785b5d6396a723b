"""Primary acceptance criteria, one test each.

Every test records a PASS/FAIL line; the lines are printed together in the
pytest terminal summary (see conftest.py) and also echoed with ``-s``.
"""

import functools
import time

import numpy as np
import pytest

from rahtskip.bitstream import EncoderConfig, decode_frame, decode_frame_float, encode_frame, encode_sequence
from rahtskip.cli import main as cli_main
from rahtskip.coder import decode_stream, encode_stream, estimate_bits
from rahtskip.metrics import RdPoint, bd_rate, bdbr_total, complexity_ratio, psnr
from rahtskip.octree import build_layers
from rahtskip.raht import STAGES, block_forward, forward_raht, inverse_raht, layer_layout
from rahtskip.rdoskip import FLAG_BITS, available_candidates, rd_lambda, split_index
from rahtskip.synth import random_cloud, synthetic_cloud, synthetic_sequence

REPORT = []


def criterion(name):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                line = f"FAIL  {name}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                REPORT.append(line)
                print(line)
                raise
            line = f"PASS  {name}: {detail} ({time.perf_counter() - t0:.1f}s)"
            REPORT.append(line)
            print(line)

        return run

    return wrap


def layer_block_matrices(tree, layer):
    """Transform matrices (nb, 8, 8) of every block in a layer; row 0 is DC, rows 1..7 the slots."""
    lay = layer_layout(tree, layer)
    occ = lay.weights > 0
    basis = np.broadcast_to(np.eye(8), (lay.n_blocks, 8, 8)) * occ[:, :, None]
    dc, ac, mask = block_forward(lay.weights, basis)
    m = np.concatenate([dc[:, None, :], ac * mask[:, :, None]], axis=1)
    return m, occ, mask


@criterion("transform roundtrip + orthonormal blocks (200 clouds)")
def test_transform_correctness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_rt = worst_orth = 0.0
    n_blocks = 0
    for i in range(200):
        depth = int(rng.integers(3, 9))
        n = int(rng.integers(1, 4097))
        cloud = random_cloud(int(rng.integers(0, 2**31)), n, depth)
        tree = build_layers(cloud)
        x = cloud.attrs.astype(np.float64)
        back = inverse_raht(tree, forward_raht(tree, x))
        worst_rt = max(worst_rt, float(np.max(np.abs(back - x))))
        for layer in range(depth):
            m, occ, mask = layer_block_matrices(tree, layer)
            rows = np.concatenate([np.ones((len(occ), 1), bool), mask], axis=1)
            gram_cols = np.einsum("bki,bkj->bij", m, m) - np.eye(8) * occ[:, :, None]
            gram_rows = np.einsum("bik,bjk->bij", m, m) - np.eye(8) * rows[:, :, None]
            worst_orth = max(worst_orth, float(np.abs(gram_cols).max()), float(np.abs(gram_rows).max()))
            n_blocks += len(occ)
    elapsed = time.perf_counter() - t0
    assert worst_rt <= 1e-9, worst_rt
    assert worst_orth < 1e-12, worst_orth
    assert elapsed < 30, elapsed
    assert len(STAGES) == 3
    return f"max roundtrip err {worst_rt:.1e}, max |T^T T - I| {worst_orth:.1e} over {n_blocks} blocks, {elapsed:.1f}s < 30s"


@criterion("transform-domain D[k] equals decoded SSE (50 encodes)")
def test_parseval_equivalence():
    rng = np.random.default_rng(77)
    worst = 0.0
    checked = 0
    for i in range(50):
        if i % 2:
            cloud = synthetic_cloud(int(rng.integers(0, 10**6)), 5, frequency=float(rng.uniform(0.5, 4)))
        else:
            cloud = random_cloud(int(rng.integers(0, 10**6)), int(rng.integers(50, 2500)), int(rng.integers(4, 8)))
        qp = int(rng.integers(8, 52))
        _, base = encode_frame(cloud, EncoderConfig(qp=qp))
        x = cloud.attrs.astype(np.float64)
        for k in base.tables[0].available:
            data, _ = encode_frame(cloud, EncoderConfig(qp=qp, force_flags=(k, k, k)))
            _, recon, _ = decode_frame_float(data)
            sse = np.sum((recon - x) ** 2, axis=0)
            for c in range(3):
                d = base.tables[c].distortion[k] + base.dc_error[c] ** 2
                rel = abs(d - sse[c]) / max(sse[c], 1e-12)
                worst = max(worst, rel)
                checked += 1
    assert worst <= 1e-6, worst
    return f"{checked} (encode, k, channel) checks, worst relative gap {worst:.1e} <= 1e-6"


def fuzz_sequences(rng, count):
    lengths = rng.integers(0, 48, count)
    density = rng.uniform(0.0, 0.6, count)
    for n, d in zip(lengths.tolist(), density.tolist()):
        mags = rng.geometric(0.35, n)
        mags[rng.random(n) < 0.02] *= 1000
        seq = np.where(rng.random(n) < d, mags * rng.choice((-1, 1), n), 0)
        yield seq.tolist()


@criterion("entropy layer lossless on 10^6 sequences; estimator within 2% on >=10^4 symbols")
def test_entropy_lossless_and_estimator():
    rng = np.random.default_rng(99)
    total = 0
    for seq in fuzz_sequences(rng, 1_000_000):
        data, _ = encode_stream(seq)
        assert decode_stream(data, len(seq)) == seq, seq
        total += 1
    worst = 0.0
    for density in (0.005, 0.02, 0.05, 0.1, 0.3, 0.7):
        for n in (10_000, 40_000):
            mags = rng.geometric(0.4, n)
            seq = np.where(rng.random(n) < density, mags * rng.choice((-1, 1), n), 0).tolist()
            _, actual = encode_stream(seq)
            est = estimate_bits(seq).bits
            worst = max(worst, abs(est - actual) / actual)
    assert total == 1_000_000
    assert worst <= 0.02, worst
    return f"{total} roundtrips exact, worst estimator error {100 * worst:.3f}% <= 2%"


@criterion("forced-flag decode is bit-identical; all-zero tails are cheaper")
def test_skip_protocol():
    checked = 0
    clouds = [synthetic_cloud(s, 6, frequency=f) for s, f in ((1, 1.0), (2, 3.0))] + [random_cloud(5, 3000, 7)]
    for cloud in clouds:
        for mode in ("intra", "inter"):
            ref = None
            if mode == "inter":
                ref = encode_frame(cloud, EncoderConfig(qp=30))[1].recon
            for qp in (22, 40):
                for k in range(5):
                    data, st = encode_frame(cloud, EncoderConfig(qp=qp, mode=mode, force_flags=(k, k, k)), ref)
                    dec = decode_frame(data, ref)
                    assert np.array_equal(dec.attrs, st.recon.attrs)
                    assert np.array_equal(dec.voxels, cloud.voxels)
                    checked += 1
    # smooth content at a coarse step: the last layers quantize to all zero
    zero_tail = 0
    for seed in range(3):
        cloud = synthetic_cloud(seed, 7, frequency=1.0)
        _, st0 = encode_frame(cloud, EncoderConfig(qp=46, force_flags=(0, 0, 0)))
        off = st0.layer_offsets
        for k in available_candidates(off)[1:]:
            if np.any(st0.levels[split_index(off, k):]):
                continue
            _, stk = encode_frame(cloud, EncoderConfig(qp=46, force_flags=(k, k, k)))
            assert np.array_equal(stk.recon.attrs, st0.recon.attrs)
            assert stk.attribute_bits < st0.attribute_bits
            zero_tail += 1
    assert zero_tail > 0
    return f"{checked} forced-flag decodes identical; {zero_tail} all-zero-tail cases cheaper with identical output"


@criterion("RDO choice within 2% of best measured D + lambda R (20 inputs x 4 QPs)")
def test_rdo_soundness():
    # depth 7 keeps every chroma stream long enough that the few bits the
    # range coder's termination can gain or lose stay well below 2% of the cost
    worst = 0.0
    decisions = 0
    nonzero = 0
    for seed in range(20):
        if seed % 2 == 0:
            frames = [synthetic_cloud(seed, 7, frequency=1.0 + seed / 5)]
            mode = "intra"
        else:
            frames = synthetic_sequence(seed, frames=2, depth=7, frequency=1.0 + seed / 5)
            mode = "inter"
        ref = None
        if mode == "inter":
            ref = encode_frame(frames[0], EncoderConfig(qp=30))[1].recon
        cloud = frames[-1]
        x = cloud.attrs.astype(np.float64)
        for qp in (16, 28, 40, 46):
            _, chosen = encode_frame(cloud, EncoderConfig(qp=qp, mode=mode), ref)
            measured = {}
            for k in chosen.tables[0].available:
                _, st = encode_frame(cloud, EncoderConfig(qp=qp, mode=mode, force_flags=(k, k, k)), ref)
                d = np.sum((st.recon_float - x) ** 2, axis=0)
                r = np.array(st.channel_exact_bits) + (FLAG_BITS if k else 0)
                measured[k] = (d, r)
            lam = rd_lambda(0.26, qp)
            for c in range(3):
                costs = {k: dr[0][c] + lam * dr[1][c] for k, dr in measured.items()}
                best = min(costs.values())
                gap = (costs[chosen.flags[c]] - best) / best
                worst = max(worst, gap)
                decisions += 1
                nonzero += chosen.flags[c] > 0
    assert worst <= 0.02, worst
    return f"{decisions} channel decisions ({nonzero} skips), worst excess cost {100 * worst:.3f}% <= 2%"


@criterion("skip on vs off at the two lowest bitrates: BPOP -1% or better at <= 0.05 dB loss")
def test_ab_gain():
    lines = []
    contents = [(s, 7, 1.0) for s in range(3)] + [(0, 8, 2.0)]
    for seed, depth, freq in contents:
        cloud = synthetic_cloud(seed, depth, frequency=freq)
        for qp in (46, 51):
            _, off = encode_frame(cloud, EncoderConfig(qp=qp, skip=False))
            _, on = encode_frame(cloud, EncoderConfig(qp=qp, skip=True))
            d_rate = on.bpop / off.bpop - 1
            d_psnr = psnr(cloud, on.recon)["psnr_weighted"] - psnr(cloud, off.recon)["psnr_weighted"]
            lines.append((seed, depth, qp, d_rate, d_psnr))
    bad = [l for l in lines if not (l[3] <= -0.01 and l[4] >= -0.05)]
    assert not bad, bad
    worst_rate = max(l[3] for l in lines)
    worst_psnr = min(l[4] for l in lines)
    return f"{len(lines)} (content, qp) pairs; smallest BPOP cut {-100 * worst_rate:.2f}%, largest PSNR loss {-worst_psnr:.4f} dB"


@criterion("layer statistics: >95% zeros in the final layer at the highest QP, AC count grows with depth")
def test_stats_trend(tmp_path):
    out = tmp_path / "stats.csv"
    assert cli_main(["stats", "--synthetic", "1", "--seed", "3", "--depth", "7", "-o", str(out)]) == 0
    import csv

    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    qps = sorted({int(r["qp"]) for r in rows})
    top = [r for r in rows if int(r["qp"]) == qps[-1]]
    last = float(top[-1]["zero_fraction"])
    counts = [int(r["ac_count"]) for r in top]
    assert last > 0.95, last
    assert all(a < b for a, b in zip(counts, counts[1:])), counts
    return f"qp {qps[-1]}: final-layer zero fraction {last:.4f}; AC counts {counts}"


@criterion("metric oracles")
def test_metrics_oracles():
    psnrs = [30.0, 33.5, 37.0, 41.0, 44.0]
    rates = [0.04, 0.09, 0.2, 0.45, 0.9]
    anchor = [RdPoint(r, p, p + 1, p + 2) for r, p in zip(rates, psnrs)]
    same = bd_rate(anchor, anchor)
    assert (same.y, same.cb, same.cr) == (0.0, 0.0, 0.0)
    doubled = bd_rate(anchor, [RdPoint(2 * p.bpop, p.psnr_y, p.psnr_cb, p.psnr_cr) for p in anchor])
    assert all(abs(v - 100) <= 0.1 for v in (doubled.y, doubled.cb, doubled.cr))
    total = bdbr_total(-3.50, -5.56, -4.18)
    assert round(total, 10) == -34.24
    assert complexity_ratio(1.3487, 1.0) == pytest.approx(134.87, abs=1e-12)
    assert complexity_ratio(3.0, 3.0) == 100.0
    assert complexity_ratio(0.0, 1.0) == 0.0
    return f"bd(x,x)=0, doubled rate -> {doubled.y:.4f}%, 7(-3.50)+(-5.56)+(-4.18) = {total:.2f}, ratio 1.3487/1 -> 134.87%"


@criterion("near-lossless floor: qp 12 without skip, max error <= 1")
def test_near_lossless():
    clouds = [random_cloud(s, 3000, d) for s, d in ((1, 5), (2, 7), (3, 9))]
    clouds += [synthetic_cloud(s, 6, frequency=f, noise_sigma=n) for s, f, n in ((4, 1.0, 0), (5, 4.0, 8.0))]
    clouds += synthetic_sequence(6, frames=2, depth=6)
    worst = 0
    for cloud in clouds:
        data, _ = encode_frame(cloud, EncoderConfig(qp=12, skip=False))
        err = int(np.max(np.abs(decode_frame(data).attrs - cloud.attrs)))
        worst = max(worst, err)
    # inter coding at qp 12 against a reference
    frames = synthetic_sequence(7, frames=3, depth=6)
    for (data, st), frame in zip(encode_sequence(frames, EncoderConfig(qp=12, mode="inter", skip=False)), frames):
        worst = max(worst, int(np.max(np.abs(st.recon.attrs - frame.attrs))))
    assert worst <= 1, worst
    return f"{len(clouds) + len(frames)} clouds, max per-point per-channel error {worst}"
