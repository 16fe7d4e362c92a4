"""Binary snapshot container: round trips, determinism, corruption."""

import numpy as np
import pytest

from pumpreadout.errors import SnapshotError
from pumpreadout.snapshot import load_snapshot, save_snapshot


def sample_sections(rng):
    return {
        "fields": {
            "real": rng.normal(size=(3, 5)),
            "cplx": rng.normal(size=7) + 1j * rng.normal(size=7),
            "ints": np.arange(4, dtype=np.int64),
            "scalar": 3.25,
        },
        "meta": {"n": np.int64(42)},
    }


def test_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    sections = sample_sections(rng)
    path = tmp_path / "snap.qprs"
    save_snapshot(path, sections)
    back = load_snapshot(path)
    assert set(back) == {"fields", "meta"}
    for sec, arrays in sections.items():
        for name, val in arrays.items():
            got = back[sec][name]
            assert np.array_equal(got, np.asarray(val)), (sec, name)
    assert back["fields"]["cplx"].dtype == np.complex128
    assert back["fields"]["ints"].dtype == np.int64
    assert back["fields"]["scalar"].shape == ()


def test_byte_determinism(tmp_path):
    rng = np.random.default_rng(3)
    sections = sample_sections(rng)
    p1, p2 = tmp_path / "a.qprs", tmp_path / "b.qprs"
    save_snapshot(p1, sections)
    save_snapshot(p2, sections)
    assert p1.read_bytes() == p2.read_bytes()
    # int32/float32 inputs are widened, not rejected
    p3, p4 = tmp_path / "c.qprs", tmp_path / "d.qprs"
    save_snapshot(p3, {"s": {"x": np.arange(3, dtype=np.int32)}})
    save_snapshot(p4, {"s": {"x": np.arange(3, dtype=np.int64)}})
    assert p3.read_bytes() == p4.read_bytes()


def test_corruption_detected(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "snap.qprs"
    save_snapshot(path, sample_sections(rng))
    raw = bytearray(path.read_bytes())

    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF  # payload bit flip
    path.write_bytes(bytes(flipped))
    with pytest.raises(SnapshotError, match="CRC"):
        load_snapshot(path)

    path.write_bytes(bytes(raw[: len(raw) - 6]))  # truncation
    with pytest.raises(SnapshotError):
        load_snapshot(path)

    path.write_bytes(b"JUNK" + bytes(raw[4:]))  # wrong magic
    with pytest.raises(SnapshotError, match="magic"):
        load_snapshot(path)

    bad_version = bytearray(raw)
    bad_version[4] = 99
    path.write_bytes(bytes(bad_version))
    with pytest.raises(SnapshotError, match="version"):
        load_snapshot(path)

    path.write_bytes(bytes(raw) + b"xx")  # trailing garbage
    with pytest.raises(SnapshotError, match="trailing"):
        load_snapshot(path)


def test_no_partial_file_on_existing_target(tmp_path):
    # atomic replace: target either keeps old content or has the new file
    path = tmp_path / "snap.qprs"
    save_snapshot(path, {"a": {"x": np.zeros(2)}})
    first = path.read_bytes()
    save_snapshot(path, {"a": {"x": np.ones(2)}})
    assert path.read_bytes() != first
    assert not (tmp_path / "snap.qprs.tmp").exists()
    back = load_snapshot(path)
    assert np.array_equal(back["a"]["x"], np.ones(2))
