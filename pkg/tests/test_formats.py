import csv
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssnqi.config import config_from_dict, load_config
from ssnqi.experiment import simulate, write_run, read_pair, write_alpha_pgm
from ssnqi.frames import FrameStack, read_fstk, write_fstk
from ssnqi.pgm import read_pgm, write_pgm
from ssnqi.validation import ConfigError, DataError

BASE = {
    "version": 1,
    "geometry": {"width": 8, "height": 6, "n_frames": 3},
    "source": {"kind": "twin", "n0": 50.0, "modes": 1e4},
    "detector": {"eta": 0.7},
    "seed": 3,
}


class TestFstk:
    def test_byte_layout(self, tmp_path):
        counts = np.arange(2 * 3 * 4).reshape(2, 3, 4)
        write_fstk(tmp_path / "a.fstk", FrameStack(counts, "idler"))
        raw = (tmp_path / "a.fstk").read_bytes()
        assert raw[:5] == b"FSTK1"
        assert struct.unpack_from("<IIIBB", raw, 5) == (4, 3, 2, 2, 4)
        assert len(raw) == 19 + 4 * counts.size
        # row-major little-endian u32 after the 19-byte header
        assert struct.unpack_from("<3I", raw, 19) == (0, 1, 2)
        assert struct.unpack_from("<I", raw, 19 + 4 * 4)[0] == 4

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5),
           st.sampled_from(["single", "signal", "idler"]), st.integers(0, 2**32))
    def test_round_trip(self, tmp_path_factory, n, h, w, arm, seed):
        counts = np.random.default_rng(seed).integers(0, 2**32, size=(n, h, w), dtype=np.uint64)
        path = tmp_path_factory.mktemp("f") / "x.fstk"
        write_fstk(path, FrameStack(counts.astype(np.int64), arm))
        back = read_fstk(path)
        assert back.arm == arm and np.array_equal(back.counts, counts.astype(np.int64))

    def test_bad_magic(self, tmp_path):
        write_fstk(tmp_path / "a.fstk", FrameStack(np.ones((1, 2, 2), dtype=int)))
        raw = bytearray((tmp_path / "a.fstk").read_bytes())
        raw[:5] = b"FSTK2"
        (tmp_path / "b.fstk").write_bytes(bytes(raw))
        with pytest.raises(DataError, match="magic"):
            read_fstk(tmp_path / "b.fstk")

    def test_truncated(self, tmp_path):
        write_fstk(tmp_path / "a.fstk", FrameStack(np.ones((2, 2, 2), dtype=int)))
        raw = (tmp_path / "a.fstk").read_bytes()
        (tmp_path / "b.fstk").write_bytes(raw[:-1])
        with pytest.raises(DataError):
            read_fstk(tmp_path / "b.fstk")
        (tmp_path / "c.fstk").write_bytes(raw[:10])
        with pytest.raises(DataError):
            read_fstk(tmp_path / "c.fstk")

    def test_rejects_unrepresentable(self, tmp_path):
        with pytest.raises(DataError):
            write_fstk(tmp_path / "a.fstk", FrameStack(np.full((1, 1, 1), 0.5)))
        with pytest.raises(DataError):
            write_fstk(tmp_path / "a.fstk", FrameStack(np.full((1, 1, 1), 2**32)))


class TestPgm:
    @pytest.mark.parametrize("maxval", [255, 65535, 1000])
    def test_round_trip(self, tmp_path, maxval):
        img = np.random.default_rng(0).integers(0, maxval + 1, size=(5, 7))
        write_pgm(tmp_path / "a.pgm", img, maxval)
        back, mv = read_pgm(tmp_path / "a.pgm")
        assert mv == maxval and np.array_equal(back, img)

    def test_sixteen_bit_is_big_endian(self, tmp_path):
        write_pgm(tmp_path / "a.pgm", np.array([[258]]), 65535)
        assert (tmp_path / "a.pgm").read_bytes().endswith(b"\x01\x02")

    def test_header_is_p5(self, tmp_path):
        write_pgm(tmp_path / "a.pgm", np.zeros((2, 3), dtype=int), 255)
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")

    def test_comments_in_header(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P5\n# made by hand\n2 1\n# depth\n255\n\x07\x09")
        img, mv = read_pgm(tmp_path / "a.pgm")
        assert img.tolist() == [[7, 9]] and mv == 255

    def test_rejects_ascii_pgm(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(DataError):
            read_pgm(tmp_path / "a.pgm")

    def test_alpha_pgm_sidecar_scaling(self, tmp_path):
        alpha = np.array([[-0.025, 0.0], [0.05, 0.075]])
        write_alpha_pgm(tmp_path / "m.pgm", alpha, -0.025, 0.075)
        gray, _ = read_pgm(tmp_path / "m.pgm")
        side = json.loads((tmp_path / "m.json").read_text())
        recovered = side["alpha_at_0"] + gray * side["alpha_per_gray"]
        assert np.allclose(recovered, alpha, atol=side["alpha_per_gray"])
        assert gray[0, 0] == 0 and gray[1, 1] == 65535


class TestConfig:
    def test_defaults(self):
        cfg = config_from_dict(BASE)
        assert cfg.detector.eta_signal == cfg.detector.eta_idler == 0.7
        assert cfg.analysis["n_bins"] == 5 and cfg.seed == 3
        assert cfg.mask() is None

    def test_n_frames_zero_rejected_with_line(self, tmp_path):
        text = json.dumps(dict(BASE, geometry={"width": 8, "height": 6, "n_frames": 0}), indent=2)
        (tmp_path / "c.json").write_text(text)
        with pytest.raises(ConfigError) as exc:
            load_config(tmp_path / "c.json")
        line = next(k for k, ln in enumerate(text.splitlines(), 1) if '"n_frames"' in ln)
        assert f"c.json:{line}:" in str(exc.value)
        assert "geometry/n_frames" in str(exc.value)

    def test_json_syntax_error_has_line_and_column(self, tmp_path):
        (tmp_path / "c.json").write_text('{\n  "version": 1,\n  "geometry": ,\n}')
        with pytest.raises(ConfigError, match=r"c\.json:3:\d+"):
            load_config(tmp_path / "c.json")

    @pytest.mark.parametrize("patch", [
        {"version": 2},
        {"source": {"kind": "laser", "n0": 1.0}},
        {"detector": {"eta": 1.5}},
        {"detector": {"eta": 0.5, "eta_signal": 0.5}},
        {"detector": {"bin_factor": 5}},
        {"object": {"kind": "pgm"}},
        {"seed": -1},
        {"extra": 1},
    ])
    def test_invalid(self, patch):
        with pytest.raises(ConfigError):
            config_from_dict(dict(BASE, **patch))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.json")

    def test_masks(self, tmp_path):
        half = config_from_dict(dict(BASE, object={"kind": "half", "alpha": 0.1})).mask()
        assert half.alpha[:, :4].min() == 0.1 and half.alpha[:, 4:].max() == 0.0
        write_pgm(tmp_path / "m.pgm", np.full((6, 8), 51), 255)
        cfg = config_from_dict(dict(BASE, object={"kind": "pgm", "path": "m.pgm"}))
        assert np.allclose(cfg.mask(tmp_path).alpha, 0.2)
        write_pgm(tmp_path / "bad.pgm", np.zeros((2, 2), dtype=int), 255)
        with pytest.raises(ConfigError):
            config_from_dict(dict(BASE, object={"kind": "pgm", "path": "bad.pgm"})).mask(tmp_path)


def test_manifest_round_trip(tmp_path):
    cfg = config_from_dict(BASE)
    pair = simulate(cfg)
    manifest = write_run(cfg, pair, tmp_path / "a")
    assert manifest["seed"] == 3 and manifest["format_version"] == 1
    again = load_config(tmp_path / "a" / "manifest.json")
    write_run(again, simulate(again), tmp_path / "b")
    for name in ("signal.fstk", "idler.fstk", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back = read_pair(tmp_path / "a" / "signal.fstk", tmp_path / "a" / "idler.fstk")
    assert np.array_equal(back.signal.counts, pair.signal.counts)


def test_read_pair_checks_arms(tmp_path):
    write_fstk(tmp_path / "s.fstk", FrameStack(np.ones((1, 2, 2), dtype=int), "single"))
    write_fstk(tmp_path / "i.fstk", FrameStack(np.ones((1, 2, 2), dtype=int), "idler"))
    with pytest.raises(DataError):
        read_pair(tmp_path / "s.fstk", tmp_path / "i.fstk")


def test_csv_rfc4180(tmp_path):
    from ssnqi.experiment import write_sweep_csv, SweepPoint
    pts = [SweepPoint(0.2, 0.8, 0.21, 0.001, 0.0, 1.5, 0.02, 2.1, 0.03, 1.49, 2.13)] * 2
    write_sweep_csv(tmp_path / "s.csv", pts)
    raw = (tmp_path / "s.csv").read_bytes()
    assert raw.count(b"\r\n") == 3 and raw.endswith(b"\r\n")
    with open(tmp_path / "s.csv", newline="") as fh:
        rows = list(csv.reader(fh, strict=True))
    assert len(rows) == 3 and all(len(r) == 11 for r in rows)
    assert float(rows[1][rows[0].index("R_dcl_theory")]) == 2.13


@pytest.mark.parametrize("name", ["twin.json", "sweep.json", "demo_pi.json"])
def test_shipped_configs_load(name):
    from pathlib import Path
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / name)
    assert cfg.geometry.n_frames >= 200
