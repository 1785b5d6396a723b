"""Command-line front end.

Exit codes: 0 success, 1 pipeline error, 2 usage error. Stats go to stdout
as JSON, artifacts (containers, PLY, CSV) to the named files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .bitstream import EncoderConfig, decode_sequence, encode_sequence, pack_sequence, unpack_sequence
from .cloud_io import read_cloud, write_ply, write_ply_binary
from .errors import CodecError
from .metrics import (
    RdPoint,
    bd_rate,
    bdbr_total,
    complexity_ratio,
    layer_stats,
    psnr,
    read_rd_csv,
)
from .predict import INTER, INTRA
from .rdoskip import DEFAULT_C
from .synth import sphere_shell, synthetic_sequence

SWEEP_QPS = (22, 28, 34, 40, 46, 51)
SWEEP_COLUMNS = ("c", "bd_y", "bd_cb", "bd_cr", "bdbr_total")
STATS_COLUMNS = ("qp", "layer", "ac_count", "zero_fraction", "zero_fraction_y", "zero_fraction_cb", "zero_fraction_cr")


class UsageError(Exception):
    pass


def _qp(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"qp must be an integer, got {text!r}") from None
    if not 4 <= v <= 51:
        raise argparse.ArgumentTypeError(f"qp {v} outside [4, 51]")
    return v


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"value must be positive, got {v}")
    return v


def _depth(text: str) -> int:
    v = int(text)
    if not 1 <= v <= 16:
        raise argparse.ArgumentTypeError(f"depth {v} outside [1, 16]")
    return v


def _qp_list(text: str) -> list:
    return [_qp(t) for t in text.split(",") if t.strip()]


def thread_count() -> int:
    """Worker cap from RSKC_THREADS (default: CPU count)."""
    raw = os.environ.get("RSKC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise UsageError(f"RSKC_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def _pool_map(fn, jobs):
    workers = min(thread_count(), len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ------------------------------------------------------------------ inputs


def _load_frames(args) -> list:
    """Frames from --input PLY files, or a seeded synthetic sequence."""
    if args.input:
        return [read_cloud(p, args.depth, args.scale) for p in args.input]
    if args.synthetic:
        return synthetic_sequence(args.seed, frames=args.synthetic, depth=args.depth)
    raise UsageError("give --input files or --synthetic N")


def _config(args, **over) -> EncoderConfig:
    kw = dict(qp=args.qp, qp_chroma=args.qp_chroma, mode=args.mode, skip=args.skip == "on", c=args.c)
    kw.update(over)
    return EncoderConfig(**kw)


# --------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    frames = max(args.frames, 1)
    for i in range(frames):
        raw = sphere_shell(args.seed + i, args.depth, n_points=args.points, frequency=args.frequency)
        path = args.output if frames == 1 else args.output.format(i=i)
        with open(path, "wb") as fh:
            fh.write(write_ply_binary(raw))
    print(json.dumps({"frames": frames, "output": args.output}))
    return 0


def cmd_encode(args) -> int:
    frames = _load_frames(args)
    t0 = time.perf_counter()
    results = encode_sequence(frames, _config(args))
    elapsed = time.perf_counter() - t0
    blob = results[0][0] if len(results) == 1 else pack_sequence([d for d, _ in results])
    with open(args.output, "wb") as fh:
        fh.write(blob)
    total_bits = sum(s.attribute_bits for _, s in results)
    total_points = sum(s.point_count for _, s in results)
    out = {
        "frames": [s.to_json(args.verbose) for _, s in results],
        "attribute_bits": total_bits,
        "bpop": total_bits / total_points,
        "flags": [list(s.flags) for _, s in results],
        "enc_seconds": elapsed,
        "container_bytes": len(blob),
    }
    if args.anchor_seconds:
        out["complexity_percent"] = complexity_ratio(elapsed, args.anchor_seconds)
    print(json.dumps(out, indent=2 if args.verbose else None))
    return 0


def cmd_decode(args) -> int:
    with open(args.input[0], "rb") as fh:
        blob = fh.read()
    t0 = time.perf_counter()
    clouds = decode_sequence(unpack_sequence(blob))
    elapsed = time.perf_counter() - t0
    paths = []
    for i, cloud in enumerate(clouds):
        path = args.output if len(clouds) == 1 else args.output.format(i=i)
        with open(path, "wb") as fh:
            fh.write(write_ply(cloud, args.colorspace))
        paths.append(path)
    print(json.dumps({"frames": len(clouds), "points": [c.count for c in clouds], "dec_seconds": elapsed, "outputs": paths}))
    return 0


def cmd_metrics(args) -> int:
    orig = read_cloud(args.orig, args.depth, args.scale)
    recon = read_cloud(args.recon, args.depth, 1.0)
    out = psnr(orig, recon)
    if args.bits is not None:
        out["bpop"] = args.bits / recon.count
    print(json.dumps(out))
    return 0


def cmd_bdrate(args) -> int:
    with open(args.anchor) as fh:
        anchor = read_rd_csv(fh.read())
    with open(args.test) as fh:
        test = read_rd_csv(fh.read())
    r = bd_rate(anchor, test)
    print(json.dumps({"bd_y": r.y, "bd_cb": r.cb, "bd_cr": r.cr, "bdbr_total": r.total}))
    return 0


def _rd_job(job):
    frames, cfg = job
    results = encode_sequence(frames, cfg)
    bits = sum(s.attribute_bits for _, s in results)
    pts = sum(s.point_count for _, s in results)
    ps = np.array([[psnr(f, s.recon)[k] for k in ("psnr_y", "psnr_cb", "psnr_cr")] for f, (_, s) in zip(frames, results)])
    secs = sum(s.enc_seconds for _, s in results)
    return RdPoint(bits / pts, *ps.mean(axis=0)), secs


def _c_values(args) -> list:
    if args.c_values:
        vals = [_positive(t) for t in args.c_values.split(",") if t.strip()]
    else:
        n = int(round((args.c_max - args.c_min) / args.c_step)) + 1
        vals = [round(args.c_min + i * args.c_step, 6) for i in range(max(n, 1))]
    if not vals:
        raise UsageError("no c values to sweep")
    return vals


def cmd_sweep(args) -> int:
    inputs = [[f] for f in _load_frames(args)] if args.input else [
        synthetic_sequence(args.seed + i, frames=1, depth=args.depth) for i in range(args.synthetic or 1)
    ]
    qps = args.qps or list(SWEEP_QPS)
    cs = _c_values(args)
    jobs = []
    for seq in inputs:
        for qp in qps:
            jobs.append((seq, _config(args, qp=qp, qp_chroma=None, skip=False)))
            for c in cs:
                jobs.append((seq, _config(args, qp=qp, qp_chroma=None, skip=True, c=c)))
    results = iter(_pool_map(_rd_job, jobs))
    base = {}
    curves = {c: {} for c in cs}
    seconds = {c: 0.0 for c in cs}
    seconds["baseline"] = 0.0
    for si in range(len(inputs)):
        for qp in qps:
            pt, secs = next(results)
            base.setdefault(si, []).append(pt)
            seconds["baseline"] += secs
            for c in cs:
                pt, secs = next(results)
                curves[c].setdefault(si, []).append(pt)
                seconds[c] += secs
    rows = []
    for c in cs:
        per_seq = [bd_rate(base[si], curves[c][si]) for si in range(len(inputs))]
        y, cb, cr = (float(np.mean([getattr(r, ch) for r in per_seq])) for ch in ("y", "cb", "cr"))
        rows.append((c, y, cb, cr, bdbr_total(y, cb, cr)))
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([f"{v:.6g}" if i == 0 else f"{v:.6f}" for i, v in enumerate(r)])
    print(json.dumps({"rows": len(rows), "enc_seconds": {str(k): v for k, v in seconds.items()}}))
    return 0


def cmd_stats(args) -> int:
    frames = _load_frames(args)
    cloud = frames[0]
    qps = args.qps or list(SWEEP_QPS)
    rows = []
    for qp in qps:
        _, st = encode_sequence([cloud], _config(args, qp=qp, qp_chroma=None, mode=INTRA, skip=False))[0]
        ls = layer_stats(st.levels, st.layer_offsets)
        for layer, (n, zf) in enumerate(zip(ls.ac_count, ls.zero_fraction)):
            rows.append((qp, layer, int(n), float(np.mean(zf)), *map(float, zf)))
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1], r[2], *(f"{v:.6f}" for v in r[3:])])
    print(json.dumps({"rows": len(rows), "qps": qps, "layers": int(rows[-1][1]) + 1 if rows else 0}))
    return 0


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rahtskip", description="RAHT point-cloud attribute codec with layer-skip RDO.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, output=True, coding=True):
        sp.add_argument("-i", "--input", nargs="+", help="input PLY file(s); several files form a sequence")
        if output:
            sp.add_argument("-o", "--output", required=True, help="output path ('{i}' expands per frame)")
        sp.add_argument("--depth", type=_depth, default=10, help="voxel grid depth (default 10)")
        sp.add_argument("--scale", type=_positive, default=1.0, help="position scale before voxelization")
        sp.add_argument("--seed", type=int, default=0, help="seed for synthetic content")
        sp.add_argument("--synthetic", type=int, default=0, metavar="N", help="use N seeded synthetic frames/clouds")
        if coding:
            sp.add_argument("--qp", type=_qp, default=30)
            sp.add_argument("--qp-chroma", type=_qp, default=None, help="chroma QP (default: --qp)")
            sp.add_argument("--mode", choices=(INTRA, INTER), default=INTRA)
            sp.add_argument("--skip", choices=("on", "off"), default="on")
            sp.add_argument("--c", type=_positive, default=DEFAULT_C, help="lambda constant (default 0.26)")

    sp = sub.add_parser("encode", help="encode PLY frame(s) to a container")
    common(sp)
    sp.add_argument("--verbose", action="store_true", help="include per-channel D/R tables")
    sp.add_argument("--anchor-seconds", type=_positive, default=None, help="report encode time relative to this anchor")
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="decode a container to PLY")
    sp.add_argument("-i", "--input", nargs=1, required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--colorspace", choices=("RGB", "YCbCr"), default="RGB")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("metrics", help="PSNR between two PLY files")
    sp.add_argument("--orig", required=True)
    sp.add_argument("--recon", required=True)
    sp.add_argument("--depth", type=_depth, default=10)
    sp.add_argument("--scale", type=_positive, default=1.0, help="scale applied to the original only")
    sp.add_argument("--bits", type=int, default=None, help="attribute bits, to report bpop")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("bdrate", help="BD-rate between two RD CSV files")
    sp.add_argument("--anchor", required=True)
    sp.add_argument("--test", required=True)
    sp.set_defaults(func=cmd_bdrate)

    sp = sub.add_parser("sweep", help="BD-rate of skip coding against skip-off for a range of c")
    common(sp)
    sp.add_argument("--c-values", default=None, help="comma-separated c values (overrides the range)")
    sp.add_argument("--c-min", type=_positive, default=0.05)
    sp.add_argument("--c-max", type=_positive, default=0.5)
    sp.add_argument("--c-step", type=_positive, default=0.01)
    sp.add_argument("--qps", type=_qp_list, default=None, help="comma-separated QPs (default 22,28,34,40,46,51)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("stats", help="per-layer AC counts and zero fractions")
    common(sp)
    sp.add_argument("--qps", type=_qp_list, default=None, help="comma-separated QPs (default 22,28,34,40,46,51)")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("generate", help="write a seeded synthetic sphere-shell PLY")
    sp.add_argument("-o", "--output", required=True, help="output path ('{i}' expands per frame)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--depth", type=_depth, default=7)
    sp.add_argument("--points", type=int, default=None, help="points to sample (default: dense shell)")
    sp.add_argument("--frequency", type=_positive, default=2.0, help="colour noise cycles per grid width")
    sp.add_argument("--frames", type=int, default=1)
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"rahtskip: error: {exc}", file=sys.stderr)
        return 2
    except (CodecError, OSError, ValueError) as exc:
        print(f"rahtskip: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
