from __future__ import annotations

import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from landau_lab.artifacts import (artifact_list, digest, dumps_json, read_csv, read_f64, write_csv,
                                  write_f64, write_json)


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_roundtrip_is_exact(values):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        p = write_csv(Path(d) / "a.csv", [{"v": v, "i": i} for i, v in enumerate(values)])
        back = read_csv(p)
    assert [r["v"] for r in back] == values


def test_csv_special_values(tmp_path):
    p = write_csv(tmp_path / "s.csv", [{"a": float("nan"), "b": float("inf"), "c": True, "d": "x"}])
    text = p.read_text().splitlines()
    assert text == ["a,b,c,d", "nan,inf,1,x"]


def test_json_is_sorted_and_stable(tmp_path):
    obj = {"b": np.float64(1.5), "a": np.arange(3), "c": {"z": np.bool_(True), "y": float("nan")}}
    s = dumps_json(obj)
    assert s == dumps_json(obj)
    back = json.loads(s)
    assert list(back) == ["a", "b", "c"]
    assert back["c"]["y"] == "nan"
    p = write_json(tmp_path / "o.json", obj)
    assert p.read_text() == s


def test_f64_roundtrip_real_and_complex(tmp_path):
    a = np.arange(12.0).reshape(3, 4)
    z = a + 1j * a[::-1]
    write_f64(tmp_path / "a.f64", a, {"note": "x"})
    write_f64(tmp_path / "z.f64", z)
    assert np.array_equal(read_f64(tmp_path / "a.f64"), a)
    assert np.array_equal(read_f64(tmp_path / "z.f64"), z)
    side = json.loads((tmp_path / "a.f64.json").read_text())
    assert side["byteorder"] == "little" and side["shape"] == [3, 4] and side["note"] == "x"
    assert (tmp_path / "a.f64").stat().st_size == 12 * 8


def test_digest_and_artifact_list(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    p.parent.mkdir()
    p.write_text("hello")
    assert digest(p) == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
    lst = artifact_list([p, p], tmp_path)
    assert lst == [{"path": "sub/f.txt", "sha256": digest(p)}]
