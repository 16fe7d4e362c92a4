"""End-to-end CLI pipeline on a reduced configuration.

The module fixture runs ``all`` once into a temp directory; read-only
checks share it.  Tests that mutate the output directory (force, cache
corruption) restore an equivalent state because every stage is
deterministic.  Failure-path tests use separate directories.
"""

import hashlib
import json
import shutil

import numpy as np
import pytest

from pumpreadout.cli import (PROTOCOL_HEADER, SCAN_HEADER, main,
                             read_kraus_text)
from pumpreadout.config import config_text, parse_config

TINY_CFG = """
[dot]
dot_points = 128
[scan]
scan_start = 16.4
scan_stop = 16.4
scan_step = 0.05
scan_delta_e = 0.05
[protocol]
protocol_spreads = 0.05
comparison_energy = 16.4
comparison_spread = 0.06
n_cycles = 2
"""

ARTIFACTS = [
    "config.txt", "scan.csv", "timings.json", "manifest.json",
    "kraus_e16.4_de0.05.txt", "kraus_e16.4_de0.06.txt",
    "protocol_e16.4_de0.05.csv", "protocol_e16.4_de0.06.csv",
    "transmission.png", "protocol.png",
]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY_CFG, encoding="utf-8")
    out = root / "out"
    code = main(["all", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    return cfg_path, out


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_all_artifacts_present(tiny_run):
    _, out = tiny_run
    for name in ARTIFACTS:
        assert (out / name).is_file(), name
    assert list((out / "cache").glob("dot_*.qprs"))
    assert list((out / "cache").glob("pot_n*.qprs"))
    assert len(list((out / "cache").glob("kraus_*.qprs"))) == 2


def test_manifest_inventory_and_echo(tiny_run):
    cfg_path, out = tiny_run
    manifest = read_manifest(out)
    inv = manifest["outputs"]
    assert inv["manifest.json"] is None
    assert inv["timings.json"] is None
    for rel, digest in inv.items():
        if digest is None:
            assert rel in manifest["undigested"]
            continue
        data = (out / rel).read_bytes()
        assert hashlib.sha256(data).hexdigest() == digest, rel
    cfg = parse_config(cfg_path.read_text())
    assert manifest["config"] == config_text(cfg)
    assert (out / "config.txt").read_text() == config_text(cfg)
    assert manifest["versions"]["numpy"] != "absent"
    assert manifest["warnings"] == []  # 2 short cycles fit the window
    assert manifest["notes"]["scan"]["rows"] == 1
    assert manifest["notes"]["dot"]["orthonormality_defect"] < 1e-10


def test_scan_csv(tiny_run):
    _, out = tiny_run
    lines = (out / "scan.csv").read_text().splitlines()
    assert lines[0] == SCAN_HEADER
    assert len(lines) == 2
    row = [float(v) for v in lines[1].split(",")]
    assert row[0] == pytest.approx(16.4)
    assert 0.0 <= row[1] <= 1.0 and 0.0 <= row[2] <= 1.0
    assert row[3] < 1e-2  # completeness defect
    assert 0.0 <= row[4] < 0.1  # leakage


def test_protocol_csvs(tiny_run):
    _, out = tiny_run
    for tag in ("e16.4_de0.05", "e16.4_de0.06"):
        lines = (out / f"protocol_{tag}.csv").read_text().splitlines()
        assert lines[0] == PROTOCOL_HEADER
        rows = np.asarray([[float(v) for v in ln.split(",")]
                           for ln in lines[1:]])
        assert rows.shape == (2, 4)
        assert np.array_equal(rows[:, 0], [1.0, 2.0])
        assert np.all((rows[:, 1] >= 0.0) & (rows[:, 1] <= 1.0))
        assert np.all(rows[:, 1] <= rows[:, 2] + 1e-12)  # feedback no worse
        assert np.all(rows[:, 3] < 1e-9)


def test_kraus_text_round_trip(tiny_run):
    _, out = tiny_run
    parsed = read_kraus_text(out / "kraus_e16.4_de0.05.txt")
    header = parsed["header"]
    assert float(header["energy_meV"]) == pytest.approx(16.4)
    assert float(header["energy_spread"]) == pytest.approx(0.05)
    assert int(header["n_channels"]) == 4
    a = parsed["a"]
    assert a.shape == (int(header["n_momenta"]), 4, 2)
    # %.16e is exact for doubles: completeness must hold tightly
    dp = float(header["dp"])
    gram = dp * np.einsum("kij,kil->jl", a.conj(), a)
    defect = float(header["defect"])
    assert np.linalg.norm(gram - np.eye(2), ord=2) <= defect + 1e-12
    assert parsed["weight"].min() >= 0.0
    assert parsed["p"][np.argmax(parsed["weight"])] == pytest.approx(
        float(header["p0"]), abs=2.0 * dp)


def test_timings_sidecar(tiny_run):
    _, out = tiny_run
    timings = json.loads((out / "timings.json").read_text())
    assert set(timings) == {"dot", "couplings", "scan", "kraus", "protocol",
                            "report"}
    assert all(v >= 0.0 for v in timings.values())


def test_warm_rerun_hits_cache_and_reproduces_bytes(tiny_run, capsys):
    cfg_path, out = tiny_run
    before = {name: (out / name).read_bytes() for name in ARTIFACTS
              if name != "timings.json"}
    code = main(["all", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    err = capsys.readouterr().err
    assert "solving" not in err  # every stage came from cache
    assert "assembling" not in err
    for name, data in before.items():
        assert (out / name).read_bytes() == data, name


def test_force_recomputes_deterministically(tiny_run, capsys):
    cfg_path, out = tiny_run
    dot_cache = next((out / "cache").glob("dot_*.qprs"))
    cached = dot_cache.read_bytes()
    code = main(["dot-solve", "--config", str(cfg_path), "--out", str(out),
                 "--force"])
    assert code == 0
    assert "solving" in capsys.readouterr().err
    assert dot_cache.read_bytes() == cached  # same physics, same bytes


def test_corrupt_cache_is_recomputed(tiny_run, capsys):
    cfg_path, out = tiny_run
    dot_cache = next((out / "cache").glob("dot_*.qprs"))
    good = dot_cache.read_bytes()
    bad = bytearray(good)
    bad[len(bad) // 2] ^= 0xFF
    dot_cache.write_bytes(bytes(bad))
    code = main(["dot-solve", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    capsys.readouterr()
    manifest = read_manifest(out)
    assert any("cache rejected" in w for w in manifest["warnings"])
    assert dot_cache.read_bytes() == good  # rebuilt to identical bytes


def test_report_standalone(tiny_run, capsys):
    cfg_path, out = tiny_run
    (out / "transmission.png").unlink()
    code = main(["report", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    capsys.readouterr()
    assert (out / "transmission.png").is_file()


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[dot]\ndot_points = 100\n", encoding="utf-8")
    assert main(["all", "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_exit_code_missing_config_file(tmp_path, capsys):
    assert main(["all", "--config", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "o")]) == 4
    assert "i/o error" in capsys.readouterr().err


def test_exit_code_convergence_failure(tiny_run, tmp_path, capsys):
    cfg_path, out = tiny_run
    broken = tmp_path / "stall.cfg"
    broken.write_text(TINY_CFG + "[stepper]\nmax_steps = 1\n",
                      encoding="utf-8")
    out2 = tmp_path / "out2"
    out2.mkdir()
    shutil.copytree(out / "cache", out2 / "cache")  # reuse the dot solve
    assert main(["scan", "--config", str(broken),
                 "--out", str(out2)]) == 3
    assert "convergence failure" in capsys.readouterr().err


def test_exit_code_report_without_data(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path / "empty")]) == 4
    assert "i/o error" in capsys.readouterr().err
