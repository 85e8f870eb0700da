import copy
import json
import math

import pytest

from anmsim import scenario
from anmsim.errors import ConfigError, SchemaError


def minimal_doc():
    return {
        "schema_version": 1,
        "sample_rate": 8000,
        # long enough that the default steady window fits a PSD segment
        "duration_s": 4.0,
        "seed": 3,
        "plant": {
            "sources": [{"kind": "tone", "position": [0.0, 0.0, 1.0],
                         "tones": [[100.0, 1.0, 0.0]]}],
            "units": [{"source_position": [0.3, 0.0, 1.0],
                       "mic_position": [0.5, 0.0, 1.0]}],
        },
        "units": [{"mode": "feedforward"}],
    }


class TestSchemaValidation:
    def test_minimal_accepted(self):
        scenario.validate_scenario(minimal_doc())

    def test_missing_required_fields(self):
        with pytest.raises(SchemaError) as ei:
            scenario.validate_scenario({"schema_version": 1})
        msg = str(ei.value)
        for field in ("sample_rate", "duration_s", "seed", "plant", "units"):
            assert field in msg

    def test_unknown_top_level_field_rejected(self):
        doc = minimal_doc()
        doc["extra_knob"] = 1
        with pytest.raises(SchemaError) as ei:
            scenario.validate_scenario(doc)
        assert "extra_knob" in str(ei.value)

    def test_unknown_nested_field_rejected(self):
        doc = minimal_doc()
        doc["units"][0]["stepsize"] = 0.1
        with pytest.raises(SchemaError) as ei:
            scenario.validate_scenario(doc)
        assert "/units/0" in str(ei.value)

    def test_pointer_names_bad_leaf(self):
        doc = minimal_doc()
        doc["units"][0]["mu"] = -0.5
        with pytest.raises(SchemaError) as ei:
            scenario.validate_scenario(doc)
        assert "/units/0/mu" in str(ei.value)

    def test_bad_tone_shape(self):
        doc = minimal_doc()
        doc["plant"]["sources"][0]["tones"] = [[100.0, 1.0]]
        with pytest.raises(SchemaError) as ei:
            scenario.validate_scenario(doc)
        assert "/plant/sources/0/tones/0" in str(ei.value)

    def test_sample_rate_bounds(self):
        doc = minimal_doc()
        doc["sample_rate"] = 10
        with pytest.raises(SchemaError):
            scenario.validate_scenario(doc)

    def test_zero_duration_rejected(self):
        doc = minimal_doc()
        doc["duration_s"] = 0
        with pytest.raises(SchemaError):
            scenario.validate_scenario(doc)

    def test_bad_mode_rejected(self):
        doc = minimal_doc()
        doc["units"][0]["mode"] = "hybrid"
        with pytest.raises(SchemaError) as ei:
            scenario.validate_scenario(doc)
        assert "/units/0/mode" in str(ei.value)

    def test_wrong_schema_version(self):
        doc = minimal_doc()
        doc["schema_version"] = 2
        with pytest.raises(SchemaError):
            scenario.validate_scenario(doc)


class TestDefaults:
    def test_controller_defaults(self):
        cfg = scenario.parse_scenario(minimal_doc())
        u = cfg.units[0]
        assert u.algorithm == "mov_fxlms"
        assert u.mu == scenario.DEFAULT_MU
        assert u.rho == math.inf
        assert u.filter_len == scenario.DEFAULT_FILTER_LEN
        assert u.frame_len == scenario.DEFAULT_FRAME_LEN
        assert u.normalize is True
        assert u.reference_source == 0
        assert u.auto_start is True

    def test_rho_null_means_unconstrained(self):
        doc = minimal_doc()
        doc["units"][0]["rho"] = None
        cfg = scenario.parse_scenario(doc)
        assert cfg.units[0].rho == math.inf

    def test_calibration_defaults_and_seed(self):
        cfg = scenario.parse_scenario(minimal_doc())
        cal = cfg.units[0].calibration
        assert cal.amplitude == scenario.DEFAULT_CAL_AMPLITUDE
        assert cal.duration_s == scenario.DEFAULT_CAL_DURATION_S
        assert cal.model_order == scenario.DEFAULT_CAL_ORDER
        # calibration noise must be decorrelated per unit but reproducible
        assert cal.seed == cfg.seed + 7000

    def test_metrics_and_telemetry_defaults(self):
        cfg = scenario.parse_scenario(minimal_doc())
        assert cfg.metrics.steady_state_fraction == 0.25
        assert cfg.metrics.segment_len == 4096
        assert cfg.telemetry.cadence_hz == 10.0
        assert cfg.telemetry.bands is False


class TestSemanticChecks:
    def test_unit_count_mismatch(self):
        doc = minimal_doc()
        doc["units"].append({"mode": "feedforward"})
        with pytest.raises(ConfigError):
            scenario.parse_scenario(doc)

    def test_reference_source_out_of_range(self):
        doc = minimal_doc()
        doc["units"][0]["reference_source"] = 1
        with pytest.raises(ConfigError):
            scenario.parse_scenario(doc)

    def test_segment_len_power_of_two(self):
        doc = minimal_doc()
        doc["metrics"] = {"segment_len": 3000}
        with pytest.raises(ConfigError):
            scenario.parse_scenario(doc)

    def test_paths_must_come_in_pairs(self):
        doc = minimal_doc()
        doc["plant"]["source_paths"] = [[{"delay": 10, "gain": 1.0}]]
        with pytest.raises(ConfigError):
            scenario.parse_scenario(doc)

    def test_explicit_paths_accepted(self):
        doc = minimal_doc()
        doc["plant"]["source_paths"] = [[{"delay": 10, "gain": 1.0}]]
        doc["plant"]["unit_paths"] = [[{"delay": 4, "gain": 0.9}]]
        cfg = scenario.parse_scenario(doc)
        assert cfg.n_units == 1


class TestHashing:
    def test_hash_stable_across_parses(self):
        a = scenario.parse_scenario(minimal_doc())
        b = scenario.parse_scenario(minimal_doc())
        assert a.config_hash() == b.config_hash()

    def test_hash_ignores_key_order(self):
        doc = minimal_doc()
        shuffled = json.loads(json.dumps(doc, sort_keys=True))
        reordered = dict(reversed(list(shuffled.items())))
        a = scenario.parse_scenario(doc)
        b = scenario.parse_scenario(reordered)
        assert a.config_hash() == b.config_hash()

    def test_hash_changes_with_content(self):
        doc = minimal_doc()
        a = scenario.parse_scenario(doc)
        doc2 = copy.deepcopy(doc)
        doc2["seed"] = 4
        b = scenario.parse_scenario(doc2)
        assert a.config_hash() != b.config_hash()

    def test_canonical_json_round_trips(self):
        cfg = scenario.parse_scenario(minimal_doc())
        assert json.loads(cfg.canonical_json()) == cfg.doc


class TestLoading:
    def test_load_from_file(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(minimal_doc()))
        cfg = scenario.load_scenario(str(path))
        assert cfg.name == "scene"
        assert cfg.sample_rate == 8000

    def test_load_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError):
            scenario.load_scenario(str(path))

    def test_load_missing_file(self):
        with pytest.raises(ConfigError):
            scenario.load_scenario("/nonexistent/scene.json")

    def test_bundled_scenarios_all_parse(self):
        names = scenario.list_bundled()
        assert "tonal_saturation" in names
        assert "genset_dual_unit" in names
        for name in names:
            cfg = scenario.load_bundled(name)
            assert cfg.name == name
            assert cfg.n_units >= 1

    def test_load_bundled_unknown(self):
        with pytest.raises(ConfigError):
            scenario.load_bundled("no_such_scene")
