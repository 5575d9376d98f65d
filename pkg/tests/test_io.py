import json
import math

import numpy as np
import pytest

from plgs.exceptions import DomainError
from plgs.io import emit_plot, fmt, jsonable, write_csv, write_field_csv, write_json_atomic
from plgs.model import CartesianGrid2D, Field, RadialGrid


class TestFmt:
    def test_round_trip_at_17_digits(self):
        rng = np.random.default_rng(0)
        for x in rng.standard_normal(200) * 10.0 ** rng.integers(-30, 30, 200):
            assert float(fmt(x)) == x
        assert fmt(0.1) == "0.10000000000000001"

    @pytest.mark.parametrize("x, text", [(True, "true"), (np.int64(7), "7"), (math.inf, "inf"),
                                         (-math.inf, "-inf"), (math.nan, "nan"), ("w", "w")])
    def test_special_values(self, x, text):
        assert fmt(x) == text


class TestCsv:
    def test_lf_and_header(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(path, ["a", "b"], [(1.0 / 3, 2), (math.pi, False)])
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.decode().splitlines() == ["a,b", "0.33333333333333331,2", "3.1415926535897931,false"]

    def test_radial_field(self, tmp_path):
        g = RadialGrid(1.0, 3, 2)
        write_field_csv(tmp_path / "u.csv", Field(np.array([1.0, 0.5, 0.0]), g), "Q")
        assert (tmp_path / "u.csv").read_text().splitlines() == ["r,Q", "0,1", "0.5,0.5", "1,0"]

    def test_planar_field_is_row_major(self, tmp_path):
        g = CartesianGrid2D(1.0, 3)
        v = np.arange(9.0).reshape(3, 3)
        write_field_csv(tmp_path / "u.csv", Field(v, g))
        lines = (tmp_path / "u.csv").read_text().splitlines()
        assert lines[0] == "x,y,u"
        assert lines[2] == "-1,0,1"
        assert lines[4] == "0,-1,3"


class TestJson:
    def test_atomic_manifest(self, tmp_path):
        path = tmp_path / "m.json"
        write_json_atomic(path, {"z": np.array([1.0, 2.0]), "inf": math.inf, "flag": np.bool_(True)})
        assert json.loads(path.read_text()) == {"flag": True, "inf": "inf", "z": [1.0, 2.0]}
        assert [p.name for p in tmp_path.iterdir()] == ["m.json"]

    def test_nested(self):
        assert jsonable({1: (np.float64(0.5), [np.int32(3)])}) == {"1": [0.5, [3]]}


class TestPlot:
    def test_two_points_make_one_polyline(self):
        svg = emit_plot({"s": ([0.0, 1.0], [0.0, 2.0])})
        assert svg.count("<polyline") == 1
        pts = svg.split('points="')[1].split('"')[0].split()
        assert len(pts) == 2

    def test_deterministic(self):
        series = {"data": ([1e-3, 1e-2, 1e-1], [0.02, 0.07, 0.3]), "law": ([1e-3, 1e-1], [0.02, 0.3])}
        a = emit_plot(series, title="fit", loglog=True, markers=("data",))
        b = emit_plot(dict(series), title="fit", loglog=True, markers=("data",))
        assert a == b
        assert a.count("<circle") == 3 and a.count("<polyline") == 1

    def test_labels_are_escaped(self):
        assert "a &lt; b" in emit_plot({"s": ([0, 1], [1, 0])}, title="a < b")

    @pytest.mark.parametrize("series", [{}, {"s": ([], [])}])
    def test_empty_input(self, series):
        with pytest.raises(DomainError):
            emit_plot(series)

    def test_mismatched_lengths(self):
        with pytest.raises(DomainError):
            emit_plot({"s": ([0, 1, 2], [0, 1])})
