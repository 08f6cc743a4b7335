import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from fdls import io
from fdls.cli import main
from fdls.geometry import classify_points

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env)


def numeric_rows(path):
    return [r for r in Path(path).read_text().splitlines() if not r.startswith("#")]


@pytest.fixture(scope="module")
def sim3(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim3")
    r = run("simulate", "--config", CONFIGS / "example3.toml", "--out", out, "--grid", "16x32")
    assert r.exit_code == 0, r.output
    return out


def test_simulate_writes_square_files(sim3):
    for name in ("nf_plus.csv", "nf_minus.csv"):
        m = io.read_near_field(sim3 / name).matrix
        assert m.entries.shape == (33, 33)
    man = json.loads((sim3 / "manifest.json").read_text())
    assert man["command"] == "simulate" and len(man["outputs"]) == 2


def test_simulate_background_selection_rule(tmp_path):
    r = run("simulate", "--config", CONFIGS / "background.toml", "--out", tmp_path, "--grid", "16x32")
    assert r.exit_code == 0, r.output
    f = io.read_near_field(tmp_path / "nf_plus.csv")
    j = f.matrix.indices
    off = (j[:, None] - j[None, :]) % 3 != 0
    E = f.matrix.entries
    assert np.abs(E[off]).max() <= 1e-6 * np.abs(E).max()


def test_missing_config(tmp_path):
    r = run("simulate", "--config", tmp_path / "nope.toml", "--out", tmp_path)
    assert r.exit_code == 2 and "config not found" in r.output


def test_bad_grid_option(tmp_path):
    r = run("simulate", "--config", CONFIGS / "example3.toml", "--out", tmp_path, "--grid", "big")
    assert r.exit_code == 2


def test_noise_zero_delta(sim3, tmp_path):
    out = tmp_path / "z.csv"
    r = run("noise", sim3 / "nf_plus.csv", "--delta", 0, "--seed", 1, "--out", out)
    assert r.exit_code == 0, r.output
    assert numeric_rows(out) == numeric_rows(sim3 / "nf_plus.csv")
    assert (tmp_path / "z.manifest.json").is_file()


def test_noise_reproducible_and_bounded(sim3, tmp_path):
    # same file name in two directories, so the manifest reference matches too
    a, b = tmp_path / "a" / "n.csv", tmp_path / "b" / "n.csv"
    for p in (a, b):
        assert run("noise", sim3 / "nf_plus.csv", "--delta", 0.01, "--seed", 5, "--out", p).exit_code == 0
    assert io.file_hash(a) == io.file_hash(b)
    N = io.read_near_field(sim3 / "nf_plus.csv").matrix.entries
    M = io.read_near_field(a).matrix.entries
    assert np.max(np.abs(M - N) / np.abs(N)) <= 0.01 * np.sqrt(2)


def test_noise_negative_delta(sim3, tmp_path):
    r = run("noise", sim3 / "nf_plus.csv", "--delta", -1, "--out", tmp_path / "x.csv")
    assert r.exit_code == 2


def test_image_artifacts(sim3, tmp_path, wp):
    out = tmp_path / "img"
    r = run("image", "--plus", sim3 / "nf_plus.csv", "--minus", sim3 / "nf_minus.csv",
            "--config", CONFIGS / "example3.toml", "--out", out, "--samples", "12x6", "--delta", 0.01)
    assert r.exit_code == 0, r.output
    meta = json.loads((out / "indicator.json").read_text())
    assert meta["shape"] == [12, 6] and meta["q"] == 1
    assert io.read_pgm(out / "indicator.pgm").shape == (6, 12)
    rows = numeric_rows(out / "indicator.csv")
    vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    assert vals.shape == (72, 5) and np.all(vals[:, 4] >= 0)
    # identical with threads
    out2 = tmp_path / "img2"
    r = run("image", "--plus", sim3 / "nf_plus.csv", "--minus", sim3 / "nf_minus.csv",
            "--config", CONFIGS / "example3.toml", "--out", out2, "--samples", "12x6", "--delta", 0.01,
            env={"FDLS_THREADS": "2"})
    assert r.exit_code == 0
    assert numeric_rows(out2 / "indicator.csv") == rows


def test_image_mismatched_M(sim3, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text((sim3 / "nf_minus.csv").read_text().replace(" M=3 ", " M=2 ", 1))
    out = tmp_path / "img"
    r = run("image", "--plus", sim3 / "nf_plus.csv", "--minus", bad,
            "--config", CONFIGS / "example3.toml", "--out", out)
    assert r.exit_code == 3 and "M: file 2 != config 3" in r.output
    assert not out.exists()


def test_image_swapped_signs(sim3, tmp_path):
    r = run("image", "--plus", sim3 / "nf_minus.csv", "--minus", sim3 / "nf_plus.csv",
            "--config", CONFIGS / "example3.toml", "--out", tmp_path / "o")
    assert r.exit_code == 3


def test_validate_quick(tmp_path):
    rep = tmp_path / "r.json"
    r = run("validate", "--level", "quick", "--out", rep)
    assert r.exit_code == 0, r.output
    d = json.loads(rep.read_text())
    assert d["passed"] and len(d["checks"]) == 7


def test_validate_detects_sharp_mutation():
    r = run("validate", "--level", "quick", "--mutate", "sharp-sign")
    assert r.exit_code == 3 and "FAIL sharp_normal_matrix" in r.output


def test_itp_scan_kappa(tmp_path):
    r = run("itp-scan", "--config", CONFIGS / "example1_half.toml", "--out", tmp_path,
            "--kappa-range", "1:4:4", "--per-wavelength")
    assert r.exit_code == 0, r.output
    rows = numeric_rows(tmp_path / "stilde_decay.csv")
    assert rows[0] == "kappa,norm" and len(rows) == 5
    norms = [float(r.split(",")[1]) for r in rows[1:]]
    assert norms == sorted(norms, reverse=True)


def test_itp_scan_needs_one_range(tmp_path):
    r = run("itp-scan", "--config", CONFIGS / "example1_half.toml", "--out", tmp_path)
    assert r.exit_code == 2


def test_itp_scan_sigma(tmp_path):
    r = run("itp-scan", "--config", CONFIGS / "example1_half.toml", "--out", tmp_path,
            "--k-range", "1.0005:1.0005:1")
    assert r.exit_code == 0, r.output
    rows = numeric_rows(tmp_path / "sigma_min.csv")
    assert rows[0] == "k,sigma_min" and float(rows[1].split(",")[1]) > 0
