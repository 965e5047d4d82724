import numpy as np
import pytest

from scoretrain.data import (DataFormatError, normalize_power, read_channel_dump,
                             synthetic_gaussian, write_channel_dump)


def test_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    h = rng.standard_normal((5, 3, 2)) + 1j * rng.standard_normal((5, 3, 2))
    path = tmp_path / "c.chnl"
    write_channel_dump(path, h)
    assert np.array_equal(read_channel_dump(path), h)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.chnl"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(DataFormatError, match="magic"):
        read_channel_dump(path)


def test_truncated_dump_rejected(tmp_path):
    rng = np.random.default_rng(1)
    h = rng.standard_normal((4, 2, 2)) + 0j
    path = tmp_path / "t.chnl"
    write_channel_dump(path, h)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DataFormatError, match="entries"):
        read_channel_dump(path)


def test_short_header_rejected(tmp_path):
    path = tmp_path / "s.chnl"
    path.write_bytes(b"CH")
    with pytest.raises(DataFormatError):
        read_channel_dump(path)


def test_normalize_power_unit_energy():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((10, 4, 2)) + 1j * rng.standard_normal((10, 4, 2))
    out = normalize_power(h)
    powers = np.sum(np.abs(out) ** 2, axis=(1, 2))
    np.testing.assert_allclose(powers, 8.0, rtol=1e-12)


def test_normalize_power_keeps_zero_samples():
    h = np.zeros((2, 2, 2), dtype=complex)
    assert np.array_equal(normalize_power(h), h)


def test_synthetic_moments():
    h = synthetic_gaussian(20_000, 2, 2, sigma2=2.0, seed=3)
    assert abs(np.mean(np.abs(h) ** 2) - 2.0) < 0.05
    assert abs(np.mean(h)) < 0.02
