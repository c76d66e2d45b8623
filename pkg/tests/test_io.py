import numpy as np
import pytest

from confbend.grid import Grid
from confbend.io import FieldFormatError, read_field, to_json_text, write_field


def test_scalar_roundtrip_bit_identical(tmp_path, rng):
    g = Grid((8, 9, 10))
    a = rng.normal(size=g.shape)
    p = write_field(tmp_path / "a.nfld", g, a)
    raw = read_field(p)
    assert raw.comps == 1 and raw.grid == g
    assert np.array_equal(raw.values, a)


def test_header_and_layout(tmp_path):
    g = Grid((8, 8, 8))
    vals = np.arange(g.npoints * 6, dtype=float).reshape(g.shape + (6,))
    p = write_field(tmp_path / "t.nfld", g, vals)
    data = p.read_bytes()
    head, payload = data.split(b"\n", 1)
    assert head == b"NFLD1 n=3 sizes=8,8,8 comps=6 dtype=f64le"
    flat = np.frombuffer(payload, dtype="<f8")
    # components vary fastest
    assert flat[0] == 0.0 and flat[1] == 1.0 and flat[6] == 6.0
    assert np.array_equal(read_field(p).values, vals)


def test_custom_periods_survive(tmp_path):
    g = Grid((8, 8, 8), (1.0, 2.0, 3.0))
    p = write_field(tmp_path / "p.nfld", g, np.zeros(g.shape))
    assert read_field(p).grid.periods == (1.0, 2.0, 3.0)


def test_rejects_corrupt_files(tmp_path):
    bad = tmp_path / "bad.nfld"
    bad.write_bytes(b"NOPE n=3\n")
    with pytest.raises(FieldFormatError):
        read_field(bad)
    g = Grid.cube(3, 8)
    p = write_field(tmp_path / "short.nfld", g, np.zeros(g.shape))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FieldFormatError):
        read_field(p)
    with pytest.raises(FieldFormatError):
        write_field(tmp_path / "x.nfld", g, np.zeros((8, 8)))


def test_json_handles_numpy():
    text = to_json_text({"a": np.float64(1.5), "b": np.arange(3), "c": np.bool_(True)})
    assert '"a": 1.5' in text and '"c": true' in text
