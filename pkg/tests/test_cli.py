import csv
import io
import json

import numpy as np
import pytest

from dipfuse.cli import main
from dipfuse.imagecore import Image, read_image, write_image


@pytest.fixture
def pair(tmp_path):
    rng = np.random.default_rng(0)
    yy, xx = np.mgrid[0:32, 0:32]
    a = np.clip(0.5 + 0.4 * np.sin(xx / 4.0), 0, 1)
    b = np.clip(0.3 + 0.3 * np.cos(yy / 3.0) + 0.05 * rng.random((32, 32)), 0, 1)
    pa, pb = tmp_path / "a.pgm", tmp_path / "b.pgm"
    write_image(pa, Image(a))
    write_image(pb, Image(b))
    return pa, pb


def fuse_args(pa, pb, out, *extra):
    return ["fuse", "--src", str(pa), "--src", str(pb), "--out", str(out),
            "--iters", "3", "--channels", "2", *extra]


def test_fuse_deterministic(pair, tmp_path):
    pa, pb = pair
    outs = []
    for i in range(2):
        out, lcsv = tmp_path / f"f{i}.pgm", tmp_path / f"l{i}.csv"
        assert main(fuse_args(pa, pb, out, "--seed", "42", "--loss-csv", str(lcsv))) == 0
        outs.append((out.read_bytes(), lcsv.read_bytes()))
    assert outs[0] == outs[1]
    lines = outs[0][1].decode().splitlines()
    assert lines[0] == "iteration,loss" and len(lines) == 4

    manifest = json.loads((tmp_path / "f0.manifest.json").read_text())
    assert set(manifest) == {"command", "config", "inputs", "outputs", "duration_s", "version"}
    assert manifest["config"]["seed"] == 42 and manifest["config"]["channels"] == 2
    assert len(manifest["inputs"][str(pa)]) == 64


def test_manifest_digest_tracks_input_bytes(pair, tmp_path):
    pa, pb = pair
    main(fuse_args(pa, pb, tmp_path / "f.pgm"))
    d1 = json.loads((tmp_path / "f.manifest.json").read_text())["inputs"]
    write_image(pb, Image(np.zeros((32, 32))))
    main(fuse_args(pa, pb, tmp_path / "f.pgm"))
    d2 = json.loads((tmp_path / "f.manifest.json").read_text())["inputs"]
    assert d1[str(pa)] == d2[str(pa)] and d1[str(pb)] != d2[str(pb)]


def test_fuse_png_output(pair, tmp_path):
    pa, pb = pair
    assert main(fuse_args(pa, pb, tmp_path / "f.png")) == 0
    assert read_image(tmp_path / "f.png").shape == (32, 32)


def test_missing_src(pair, tmp_path, capsys):
    pa, _ = pair
    code = main(["fuse", "--src", str(pa), "--out", str(tmp_path / "f.pgm")])
    assert code == 2
    assert "usage" in capsys.readouterr().err


def test_bad_flag():
    assert main(["fuse", "--bogus"]) == 2
    assert main([]) == 2


def test_dimension_mismatch_and_resize(pair, tmp_path):
    pa, _ = pair
    pc = tmp_path / "c.pgm"
    write_image(pc, Image(np.full((40, 24), 0.5)))
    assert main(fuse_args(pa, pc, tmp_path / "f.pgm")) == 4
    assert main(fuse_args(pa, pc, tmp_path / "f.pgm", "--resize", "32x32")) == 0


def test_unreadable(pair, tmp_path):
    pa, _ = pair
    assert main(fuse_args(pa, tmp_path / "missing.pgm", tmp_path / "f.pgm")) == 3
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5 4 4 255\n\x00")
    assert main(fuse_args(pa, bad, tmp_path / "f.pgm")) == 3


def test_diverged_exit_code(pair, tmp_path, monkeypatch):
    import dipfuse.fusion as fusion_mod

    monkeypatch.setattr(fusion_mod, "fusion_loss_and_grad",
                        lambda *a: (float("inf"), np.zeros(a[0].shape)))
    pa, pb = pair
    assert main(fuse_args(pa, pb, tmp_path / "f.pgm")) == 5


def test_gains_identical_sources(pair, tmp_path):
    pa, _ = pair
    prefix = tmp_path / "g"
    assert main(["gains", "--src", str(pa), "--src", str(pa), "--out-prefix", str(prefix)]) == 0
    for suffix in ("_b1.pgm", "_b2.pgm"):
        data = (tmp_path / f"g{suffix}").read_bytes()
        codes = np.frombuffer(data[-32 * 32:], dtype=np.uint8)
        # 255 / sqrt(2) = 180.31..., round-half-up -> 180
        assert np.all(codes == 180)


def test_gains_swap(pair, tmp_path):
    pa, pb = pair
    main(["gains", "--src", str(pa), "--src", str(pb), "--out-prefix", str(tmp_path / "x")])
    main(["gains", "--src", str(pb), "--src", str(pa), "--out-prefix", str(tmp_path / "y")])
    assert (tmp_path / "x_b1.pgm").read_bytes() == (tmp_path / "y_b2.pgm").read_bytes()
    assert (tmp_path / "x_b2.pgm").read_bytes() == (tmp_path / "y_b1.pgm").read_bytes()


def test_gains_mismatch(pair, tmp_path):
    pa, _ = pair
    pc = tmp_path / "c.pgm"
    write_image(pc, Image(np.zeros((8, 8))))
    assert main(["gains", "--src", str(pa), "--src", str(pc), "--out-prefix", str(tmp_path / "g")]) == 4


def test_metrics_self_fusion(pair, tmp_path, capsys):
    pa, pb = pair
    assert main(["metrics", "--fused", str(pa), "--src", str(pa), "--src", str(pa)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["q"] == 1.0 and payload["cv"] == 1.0
    assert round(payload["pe"], 4) == 0.9748


def test_metrics_swap_and_file_output(pair, tmp_path):
    pa, pb = pair
    fused = tmp_path / "f.pgm"
    main(fuse_args(pa, pb, fused))
    j1, j2 = tmp_path / "m1.json", tmp_path / "m2.json"
    assert main(["metrics", "--fused", str(fused), "--src", str(pa), "--src", str(pb), "--json", str(j1)]) == 0
    assert main(["metrics", "--fused", str(fused), "--src", str(pb), "--src", str(pa), "--json", str(j2)]) == 0
    m1, m2 = json.loads(j1.read_text()), json.loads(j2.read_text())
    assert {k: m1[k] for k in ("pe", "mi", "q", "cv")} == {k: m2[k] for k in ("pe", "mi", "q", "cv")}


def test_metrics_unreadable(pair, tmp_path):
    pa, pb = pair
    assert main(["metrics", "--fused", str(tmp_path / "nope.pgm"), "--src", str(pa), "--src", str(pb)]) == 3


def _sweep(tmp_path, pairs, channels, out_name="sweep.csv", extra=()):
    manifest = tmp_path / "pairs.txt"
    manifest.write_text("\n".join(f"{a} {b}" for a, b in pairs) + "\n")
    out = tmp_path / out_name
    code = main(["sweep", "--pairs", str(manifest), "--channels", channels,
                 "--iters", "2", "--out", str(out), *extra])
    return code, out


def _rows(path):
    return list(csv.reader(io.StringIO(path.read_text())))


def test_sweep_single(pair, tmp_path):
    code, out = _sweep(tmp_path, [pair], "1")
    assert code == 0
    rows = _rows(out)
    assert rows[0] == ["pair", "channels", "pe", "mi", "q", "cv", "best_loss", "seconds"]
    assert len(rows) == 3 and rows[2][0] == "average"
    assert rows[1][2:7] == rows[2][2:7]


def test_sweep_cross_product_and_determinism(pair, tmp_path):
    pairs = [pair, tuple(reversed(pair)), (pair[0], pair[0])]
    code, out1 = _sweep(tmp_path, pairs, "1,10", "s1.csv", ("--jobs", "2"))
    code2, out2 = _sweep(tmp_path, pairs, "1,10", "s2.csv")
    assert code == code2 == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = _rows(out1)[1:]
    data = [r for r in rows if r[0] != "average"]
    avg = [r for r in rows if r[0] == "average"]
    assert len(data) == 6 and len(avg) == 2
    assert [r[1] for r in data] == ["1", "10"] * 3
    pe_1 = np.mean([float(r[2]) for r in data if r[1] == "1"])
    assert float(avg[0][2]) == pytest.approx(pe_1, rel=1e-9)


def test_sweep_error_rows(pair, tmp_path):
    pa, pb = pair
    code, out = _sweep(tmp_path, [(pa, pb), (pa, tmp_path / "missing.pgm")], "1")
    assert code == 0
    rows = _rows(out)[1:]
    assert rows[1][2:7] == ["nan"] * 5
    assert rows[2][0] == "average" and rows[2][2] == rows[0][2]


def test_sweep_all_failed(tmp_path):
    code, _ = _sweep(tmp_path, [(tmp_path / "x.pgm", tmp_path / "y.pgm")], "1")
    assert code == 5


def test_sweep_timings_column(pair, tmp_path):
    code, out = _sweep(tmp_path, [pair], "1", extra=("--timings",))
    assert code == 0 and float(_rows(out)[1][7]) > 0
