import csv
import math

import pytest

from anmsim.errors import ConfigError
from anmsim.scenario import parse_scenario
from anmsim.sweep import CSV_COLUMNS, sweep_grid
from test_runner import fast_doc


def base():
    return parse_scenario(fast_doc())


class TestGrid:
    def test_rows_in_grid_order(self):
        rows = sweep_grid(base(), {"mu": [0.02, 0.05]})
        assert [r["kind"] for r in rows] == ["run", "run"]
        assert [r["mu"] for r in rows] == [0.02, 0.05]
        for r in rows:
            assert r["faulted"] == 0
            assert r["reduction_db"] > 10

    def test_cartesian_product(self):
        rows = sweep_grid(base(), {"mu": [0.02, 0.05],
                                   "filter_len": [32, 64]})
        assert len(rows) == 4
        combos = {(r["filter_len"], r["mu"]) for r in rows}
        assert combos == {(32, 0.02), (32, 0.05), (64, 0.02), (64, 0.05)}

    def test_divergent_point_contained(self):
        # mu far beyond the normalized stability bound faults that row
        # and only that row
        rows = sweep_grid(base(), {"mu": [0.05, 40.0]})
        assert rows[0]["faulted"] == 0
        assert rows[1]["faulted"] == 1
        assert rows[0]["reduction_db"] > 10

    def test_invalid_point_contained(self):
        # filter_len above the schema cap is rejected per-point
        rows = sweep_grid(base(), {"filter_len": [64, 100000]})
        assert rows[0]["faulted"] == 0
        assert rows[1]["faulted"] == 1
        assert rows[1]["reduction_db"] == ""

    def test_unknown_param_rejected(self):
        with pytest.raises(ConfigError):
            sweep_grid(base(), {"speed": [1, 2]})
        with pytest.raises(ConfigError):
            sweep_grid(base(), {"mu": []})

    def test_parallel_matches_serial(self):
        grid = {"mu": [0.02, 0.05, 0.1]}
        serial = sweep_grid(base(), grid, jobs=1)
        parallel = sweep_grid(base(), grid, jobs=3)
        assert serial == parallel


class TestSpatialRows:
    def test_oracle_agreement(self):
        rows = sweep_grid(base(), {}, d_over_lambda=[0.05, 0.1, 0.2, 0.4])
        assert len(rows) == 4
        for r in rows:
            assert r["kind"] == "spatial"
            assert abs(r["sim_reduction_db"] - r["oracle_reduction_db"]) < 0.5

    def test_separation_monotone(self):
        # wider spacing cancels less of the global field
        rows = sweep_grid(base(), {},
                          d_over_lambda=[0.05, 0.1, 0.2, 0.4, 0.8])
        red = [r["sim_reduction_db"] for r in rows]
        assert red == sorted(red)
        assert red[0] < -10
        assert red[-1] > -3


class TestCsv:
    def test_csv_written(self, tmp_path):
        out = str(tmp_path / "grid.csv")
        rows = sweep_grid(base(), {"mu": [0.05]},
                          d_over_lambda=[0.1], out_csv=out)
        with open(out) as f:
            reader = csv.DictReader(f)
            assert tuple(reader.fieldnames) == CSV_COLUMNS
            back = list(reader)
        assert len(back) == len(rows) == 2
        assert back[0]["kind"] == "run"
        assert back[1]["kind"] == "spatial"
        assert float(back[1]["oracle_reduction_db"]) == pytest.approx(
            rows[1]["oracle_reduction_db"], abs=1e-6)
