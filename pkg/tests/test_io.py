import json
import math
from fractions import Fraction

import numpy as np
import pytest

from dynlab import io as rio
from dynlab.plotting import histogram_plot, line_plot, plane_plot, raster_plot
from dynlab.raster import DyadicRaster


def test_fmt_float():
    assert rio.fmt_float(0.1) == "0.10000000000000001"
    assert rio.fmt_float(math.inf) == "inf" and rio.fmt_float(-math.inf) == "-inf"
    assert rio.fmt_float(math.nan) == "nan"
    assert float(rio.fmt_float(1 / 3)) == 1 / 3


def test_cells():
    assert [rio.fmt_cell(v) for v in (True, np.int64(3), 2.5, None, "x")] == ["true", "3", "2.5", "", "x"]


def test_csv(tmp_path):
    p = rio.write_csv(tmp_path / "a.csv", ["a", "b"], [(1, 0.5), (2, math.inf)])
    assert p.read_text() == "a,b\n1,0.5\n2,inf\n"


def test_json_plain_and_sorted(tmp_path):
    obj = {"b": np.arange(2), "a": 1 + 2j, "c": Fraction(1, 3), "d": np.float64(math.nan)}
    text = rio.dumps(obj)
    data = json.loads(text)
    assert list(data) == ["a", "b", "c", "d"]
    assert data == {"a": [1.0, 2.0], "b": [0, 1], "c": "1/3", "d": "nan"}
    assert rio.dumps(obj) == text


def test_pgm_roundtrip(tmp_path):
    bits = np.zeros((8, 8), bool)
    bits[0, 1] = True  # bottom row
    rio.write_pgm(tmp_path / "r.pgm", bits)
    raw = (tmp_path / "r.pgm").read_bytes()
    assert raw.startswith(b"P5\n8 8\n255\n")
    img = np.frombuffer(raw[len(b"P5\n8 8\n255\n"):], np.uint8).reshape(8, 8)
    assert img[7, 1] == 0 and img.sum() == 255 * 63  # top row in the file is the largest y
    r = DyadicRaster((0.0, 1.0, 0.0, 1.0), 3, bits)
    r.to_pgm(tmp_path / "s.pgm")
    assert np.array_equal(DyadicRaster.from_pgm(tmp_path / "s.pgm").bits, bits)


def test_hashes(tmp_path):
    (tmp_path / "x").write_text("abc")
    assert rio.sha256_file(tmp_path / "x") == \
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert list(rio.hash_tree(tmp_path, ["x"])) == ["x"]


def test_figures_are_deterministic(tmp_path):
    def render(d):
        d.mkdir()
        line_plot(d / "l.png", [1, 2, 3], {"a": [1, 2, 4], "b": [1, 1, 1]}, logy=True, hlines=[2])
        histogram_plot(d / "h.png", [0, 0.5, 1], [0.4, 0.6], reference=[0.5, 0.5])
        raster_plot(d / "r.png", np.eye(8, dtype=bool), (0, 1, 0, 1))
        plane_plot(d / "p.png", [0, 1j, 1], weights=[1, 2, 3])
        return rio.hash_tree(d, ["l.png", "h.png", "r.png", "p.png"])
    a, b = render(tmp_path / "a"), render(tmp_path / "b")
    assert a == b
    assert b"Software" not in (tmp_path / "a" / "l.png").read_bytes()
