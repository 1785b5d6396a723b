import csv
import json
import math
import subprocess
import sys

import pytest

from rahtskip.cli import SWEEP_COLUMNS, main


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr().out
    return code, out


@pytest.fixture
def generated(tmp_path, capsys):
    path = tmp_path / "gen.ply"
    assert run(["generate", "-o", path, "--seed", 4, "--depth", 7, "--points", 4096], capsys)[0] == 0
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_encode_decode_metrics(generated, tmp_path, capsys):
    enc = tmp_path / "a.rskc"
    code, out = run(["encode", "-i", generated, "-o", enc, "--depth", 7, "--qp", 30, "--verbose"], capsys)
    assert code == 0
    stats = json.loads(out)
    assert stats["attribute_bits"] > 0 and len(stats["frames"]) == 1
    assert "rd_tables" in stats["frames"][0]
    dec = tmp_path / "a.ply"
    assert run(["decode", "-i", enc, "-o", dec], capsys)[0] == 0
    code, out = run(["metrics", "--orig", generated, "--recon", dec, "--depth", 7], capsys)
    assert code == 0
    m = json.loads(out)
    assert all(math.isfinite(m[k]) for k in ("psnr_y", "psnr_cb", "psnr_cr"))


def test_skip_on_is_smaller_at_high_qp(tmp_path, capsys):
    src = tmp_path / "smooth.ply"
    run(["generate", "-o", src, "--seed", 1, "--depth", 6, "--frequency", 1], capsys)
    bits = {}
    for skip in ("off", "on"):
        code, out = run(["encode", "-i", src, "-o", tmp_path / f"{skip}.rskc", "--depth", 6, "--qp", 46, "--skip", skip], capsys)
        assert code == 0
        bits[skip] = json.loads(out)["attribute_bits"]
    assert bits["on"] < bits["off"]


def test_invalid_qp_is_usage_error(generated, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "rahtskip", "encode", "-i", str(generated), "-o", str(tmp_path / "x"), "--qp", "99"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert "qp" in proc.stderr


def test_pipeline_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.rskc"
    bad.write_bytes(b"garbage bytes")
    code = main(["decode", "-i", str(bad), "-o", str(tmp_path / "o.ply")])
    assert code == 1
    assert "BadMagic" in capsys.readouterr().err


def test_bad_thread_env_is_usage_error(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("RSKC_THREADS", "many")
    code = main(["sweep", "--synthetic", "1", "--depth", "4", "-o", str(tmp_path / "s.csv"), "--c-values", "0.26", "--qps", "30,34,40,46"])
    assert code == 2


def test_sweep_single_c(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code, _ = run(["sweep", "--synthetic", 1, "--depth", 5, "-o", out, "--c-values", "0.26", "--qps", "22,28,34,40,46,51"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert tuple(rows[0]) == SWEEP_COLUMNS
    assert len(rows) == 2
    assert float(rows[1][0]) == 0.26


def test_sweep_three_c(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    code, stdout = run(["sweep", "--synthetic", 1, "--depth", 5, "-o", out, "--c-values", "0.05,0.26,0.5"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert rows[0] == ["c", "bd_y", "bd_cb", "bd_cr", "bdbr_total"]
    assert [float(r[0]) for r in rows[1:]] == [0.05, 0.26, 0.5]
    secs = json.loads(stdout)["enc_seconds"]
    assert all(secs[k] > 0 for k in ("0.05", "0.26", "0.5"))


def test_stats_trends(tmp_path, capsys):
    out = tmp_path / "stats.csv"
    code, _ = run(["stats", "--synthetic", 1, "--depth", 6, "-o", out, "--qps", "16,46"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert rows[0][:4] == ["qp", "layer", "ac_count", "zero_fraction"]
    body = [dict(zip(rows[0], r)) for r in rows[1:]]
    by_qp = {qp: [r for r in body if r["qp"] == qp] for qp in ("16", "46")}
    for qp, rs in by_qp.items():
        assert rs[0]["layer"] == "0" and int(rs[0]["ac_count"]) <= 7
        counts = [int(r["ac_count"]) for r in rs]
        assert all(a < b for a, b in zip(counts, counts[1:]))
    assert float(by_qp["46"][-1]["zero_fraction"]) >= float(by_qp["16"][-1]["zero_fraction"])


def test_outputs_are_deterministic(tmp_path, capsys):
    outs = []
    for i in range(2):
        ply = tmp_path / f"g{i}.ply"
        enc = tmp_path / f"e{i}.rskc"
        st = tmp_path / f"s{i}.csv"
        run(["generate", "-o", ply, "--seed", 11, "--depth", 6], capsys)
        run(["encode", "-i", ply, "-o", enc, "--depth", 6, "--qp", 40], capsys)
        run(["stats", "-i", ply, "-o", st, "--depth", 6, "--qps", "28,46"], capsys)
        outs.append([p.read_bytes() for p in (ply, enc, st)])
    assert outs[0] == outs[1]


def test_inter_sequence_roundtrip(tmp_path, capsys):
    enc = tmp_path / "seq.rskc"
    code, out = run(["encode", "--synthetic", 3, "--depth", 5, "-o", enc, "--mode", "inter", "--qp", 34], capsys)
    assert code == 0
    assert len(json.loads(out)["flags"]) == 3
    code, out = run(["decode", "-i", enc, "-o", str(tmp_path / "f{i}.ply")], capsys)
    assert code == 0
    assert json.loads(out)["frames"] == 3
    assert (tmp_path / "f2.ply").exists()


def test_bdrate_command(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("bpop,psnr_y,psnr_cb,psnr_cr\n0.1,30,31,32\n0.2,33,34,35\n0.4,36,37,38\n0.8,39,40,41\n")
    b.write_text("bpop,psnr_y,psnr_cb,psnr_cr\n0.2,30,31,32\n0.4,33,34,35\n0.8,36,37,38\n1.6,39,40,41\n")
    code, out = run(["bdrate", "--anchor", a, "--test", b], capsys)
    assert code == 0
    r = json.loads(out)
    assert r["bd_y"] == pytest.approx(100.0, abs=0.1)
    assert r["bdbr_total"] == pytest.approx(900.0, abs=1)


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["encode", "-o", str(tmp_path / "x")]) == 2
