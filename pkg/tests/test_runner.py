import copy
import json
import math
import os

import numpy as np
import pytest

from anmsim.errors import ConfigError
from anmsim.runner import SimEngine, run_scenario
from anmsim.scenario import parse_scenario


def fast_doc(**controller):
    """Small feedforward tonal scenario that converges in a few seconds."""
    unit = {
        "mode": "feedforward",
        "mu": 0.05,
        "filter_len": 64,
        "frame_len": 32,
        "calibration": {"amplitude": 2.0, "duration_s": 2.0,
                        "model_order": 12, "mu_id": 0.02},
    }
    unit.update(controller)
    return {
        "schema_version": 1,
        "sample_rate": 4000,
        "duration_s": 6.0,
        "seed": 11,
        "plant": {
            "sources": [{"kind": "tone", "tones": [[150.0, 1.0, 0.0]]},
                        {"kind": "white", "amplitude": 0.001}],
            "units": [{}],
            "source_paths": [[{"delay": 12, "gain": 1.0},
                              {"delay": 3, "gain": 1.0}]],
            "unit_paths": [[{"delay": 4, "gain": 0.8}]],
        },
        "units": [unit],
        "metrics": {"psd": False, "third_octave": False,
                    "write_signals": False},
    }


def dual_doc(frame_a, frame_b):
    """Two units with distinct frame lengths; path matrices are
    [n_mics][n_sources] and [n_mics][n_units]."""
    doc = fast_doc()
    doc["plant"]["units"].append({})
    doc["plant"]["source_paths"] = [
        [{"delay": 12, "gain": 1.0}, {"delay": 3, "gain": 1.0}],
        [{"delay": 14, "gain": 0.9}, {"delay": 3, "gain": 1.0}],
    ]
    doc["plant"]["unit_paths"] = [
        [{"delay": 4, "gain": 0.8}, {"delay": 9, "gain": 0.2}],
        [{"delay": 9, "gain": 0.2}, {"delay": 5, "gain": 0.8}],
    ]
    doc["units"].append(copy.deepcopy(doc["units"][0]))
    doc["units"][0]["frame_len"] = frame_a
    doc["units"][1]["frame_len"] = frame_b
    return doc


def calibrate(eng, unit=0):
    reply = eng.apply_command(unit, {"cmd": "calibrate"})
    assert reply["ok"], reply
    events = []
    while eng.machines[unit].state == "calibrating":
        events += eng.advance()
    return events


def start(eng, unit=0, mode="feedforward"):
    reply = eng.apply_command(unit, {"cmd": "set_mode", "mode": mode})
    assert reply["ok"], reply
    return reply


class TestEngineLifecycle:
    def test_calibration_identifies_path(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        events = calibrate(eng)
        done = [p for _, p in events if p.get("event") == "calibrated"]
        assert len(done) == 1
        assert done[0]["gs"] == pytest.approx(0.8 ** 2, rel=0.05)
        assert done[0]["misalignment_db"] < -20
        assert eng.machines[0].calibrated

    def test_divergent_calibration_faults(self):
        doc = fast_doc(calibration={"amplitude": 0.8, "duration_s": 2.0,
                                    "model_order": 12, "mu_id": 30.0})
        eng = SimEngine(parse_scenario(doc))
        events = calibrate(eng)
        assert eng.machines[0].state == "fault"
        assert 0 in eng.faults
        kinds = [p.get("event") for _, p in events]
        assert "fault" in kinds and "calibrated" not in kinds
        # reset recovers command authority but not calibration
        reply = eng.apply_command(0, {"cmd": "reset"})
        assert reply["ok"] and eng.machines[0].state == "idle"
        assert not eng.machines[0].calibrated

    def test_feedforward_converges(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        calibrate(eng)
        start(eng)
        n = round(5.0 * eng.fs / eng.hop)
        events = eng.advance(n)
        frames = [p for t, p in events if t.endswith("/telemetry")]
        assert frames[-1]["reduction_db"] > 20
        assert frames[-1]["converged"] is True
        assert not eng.faults

    def test_weights_frozen_through_settle_window(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        calibrate(eng)
        start(eng)
        # histories refill before adaptation may touch the weights
        settle_hops = (eng._settle_until[0] - eng.sample_index) // eng.hop
        assert settle_hops >= 1
        for _ in range(settle_hops):
            eng.advance()
            assert np.all(eng._W[0] == 0.0)
        eng.advance(4)
        assert np.any(eng._W[0] != 0.0)

    def test_unknown_unit_rejected(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        assert not eng.apply_command(5, {"cmd": "calibrate"})["ok"]
        assert not eng.apply_command(-1, {"cmd": "reset"})["ok"]

    def test_hop_is_lcm_of_frame_lens(self):
        cfg = parse_scenario(dual_doc(48, 32))
        assert SimEngine(cfg).hop == 96

    def test_oversized_hop_rejected(self):
        with pytest.raises(ConfigError):
            SimEngine(parse_scenario(dual_doc(6144, 8192)))


class TestFaultContainment:
    def test_runaway_loop_trips(self):
        # unnormalized with a huge step size diverges immediately
        doc = fast_doc(normalize=False, mu=50.0)
        eng = SimEngine(parse_scenario(doc))
        calibrate(eng)
        start(eng)
        events = eng.advance(200)
        assert eng.machines[0].state == "fault"
        assert 0 in eng.faults
        faults = [p for t, p in events if p.get("event") == "fault"]
        assert faults and faults[0]["reason"]

    def test_telemetry_stays_finite_after_trip(self):
        doc = fast_doc(normalize=False, mu=50.0)
        eng = SimEngine(parse_scenario(doc))
        calibrate(eng)
        start(eng)
        eng.advance(200)
        assert eng.machines[0].state == "fault"
        events = eng.advance(2 * round(eng.fs / eng.hop))
        frames = [p for t, p in events if t.endswith("/telemetry")]
        assert frames
        for p in frames:
            json.dumps(p, allow_nan=False)
            assert p["state"] == "fault"
        assert frames[-1]["output_power"] == 0.0

    def test_trip_is_fast(self):
        doc = fast_doc(normalize=False, mu=50.0)
        eng = SimEngine(parse_scenario(doc))
        calibrate(eng)
        start(eng)
        hops = 0
        while eng.machines[0].state != "fault" and hops < 1000:
            eng.advance()
            hops += 1
        # well inside the metering window, not after it fills
        assert hops * eng.hop <= 4096

    def test_reset_after_trip_allows_rerun(self):
        doc = fast_doc(normalize=False, mu=50.0)
        eng = SimEngine(parse_scenario(doc))
        calibrate(eng)
        start(eng)
        eng.advance(200)
        assert eng.machines[0].state == "fault"
        assert eng.apply_command(0, {"cmd": "reset"})["ok"]
        assert eng.apply_command(
            0, {"cmd": "set_param", "params": {"mu": 0.005}})["ok"]
        start(eng)
        eng.advance(400)
        assert eng.machines[0].state == "running_ff"
        assert not np.any(~np.isfinite(eng._W))


class TestCommandProtocol:
    def test_params_atomic_within_frames(self):
        eng = SimEngine(parse_scenario(fast_doc()), debug_hashes=True)
        calibrate(eng)
        start(eng)
        eng.advance(10)
        eng.apply_command(0, {"cmd": "set_param", "params": {"mu": 0.01}})
        eng.advance(10)
        for n0, pre, post in eng.frame_hashes:
            assert pre == post, f"params changed inside frame at {n0}"
        # within the running stretch the digest changes exactly at the
        # set_param boundary, ten frames from the end
        digests = [pre for _, pre, _ in eng.frame_hashes[-20:]]
        changed = [i for i in range(1, len(digests))
                   if digests[i] != digests[i - 1]]
        assert changed == [10]

    def test_structural_param_change_in_idle(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        calibrate(eng)
        reply = eng.apply_command(
            0, {"cmd": "set_param", "params": {"filter_len": 32}})
        assert reply["ok"]
        start(eng)
        eng.advance(100)
        assert np.all(eng._W[0, 32:] == 0.0)
        assert np.any(eng._W[0, :32] != 0.0)

    def test_filter_len_capacity_limit(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        reply = eng.apply_command(
            0, {"cmd": "set_param", "params": {"filter_len": 4096}})
        assert not reply["ok"]

    def test_frame_len_must_divide_hop(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        reply = eng.apply_command(
            0, {"cmd": "set_param", "params": {"frame_len": 24}})
        assert not reply["ok"]
        reply = eng.apply_command(
            0, {"cmd": "set_param", "params": {"frame_len": 16}})
        assert reply["ok"]

    def test_rho_drop_engages_penalty(self):
        eng = SimEngine(parse_scenario(fast_doc(rho=None)))
        calibrate(eng)
        start(eng)
        eng.advance(round(4.0 * eng.fs / eng.hop))
        assert eng._alpha[0] == 0.0
        eng.apply_command(0, {"cmd": "set_param", "params": {"rho": 0.05}})
        events = eng.advance(round(3.0 * eng.fs / eng.hop))
        frames = [p for t, p in events if t.endswith("/telemetry")]
        assert eng._alpha[0] > 0.0
        assert frames[-1]["output_power"] <= 1.1 * 0.05 ** 2


class TestTelemetry:
    def test_cadence_count(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        n_hops = round(10.0 * eng.fs) // eng.hop
        events = eng.advance(n_hops)
        frames = [p for t, p in events if t.endswith("/telemetry")]
        assert abs(len(frames) - 100) <= 1
        ts = [p["t"] for p in frames]
        assert ts == sorted(ts)
        assert ts[0] == pytest.approx(0.1)
        steps = np.diff(ts)
        assert np.allclose(steps, 0.1, atol=1e-9)

    def test_snapshot_does_not_advance_stream(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        eng.advance(5)
        count = eng.telemetry_frames
        a = eng.telemetry_snapshot()
        b = eng.telemetry_snapshot()
        assert eng.telemetry_frames == count
        assert a == b
        assert a[0][1]["t"] == pytest.approx(eng.sim_time, abs=1e-9)

    def test_frame_shape(self):
        eng = SimEngine(parse_scenario(fast_doc()))
        calibrate(eng)
        start(eng)
        events = eng.advance(round(eng.fs / eng.hop))
        topic, p = [e for e in events if e[0].endswith("/telemetry")][-1]
        assert topic == "unit/0/telemetry"
        for key in ("t", "unit", "state", "calibrated", "alpha",
                    "output_power", "spl_error_dbc", "spl_monitor_dbc",
                    "reduction_db", "converged"):
            assert key in p


class TestRunScenario:
    def test_summary_deterministic(self):
        cfg = parse_scenario(fast_doc())
        a = run_scenario(cfg).summary
        b = run_scenario(parse_scenario(fast_doc())).summary
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_summary_content(self):
        res = run_scenario(parse_scenario(fast_doc()))
        s = res.summary
        assert not res.faulted
        assert s["units"][0]["state"] == "running_ff"
        err = [m for m in s["mics"] if m["role"] == "error"]
        assert err[0]["reduction_db"] > 20
        assert s["calibration"][0]["misalignment_db"] < -20
        assert s["config_hash"] == parse_scenario(fast_doc()).config_hash()

    def test_artifact_tree(self, tmp_path):
        doc = fast_doc()
        doc["metrics"] = {"psd": True, "third_octave": True,
                          "write_signals": True, "segment_len": 2048}
        out = str(tmp_path / "artifacts")
        res = run_scenario(parse_scenario(doc), out_dir=out)
        assert os.path.isfile(os.path.join(out, "config.json"))
        assert os.path.isfile(os.path.join(out, "summary.json"))
        assert os.path.isfile(res.log_path)
        for f in ("error0_off.f32", "error0_on.f32", "error0_off.wav",
                  "unit0_y.f32"):
            assert os.path.isfile(os.path.join(out, "signals", f)), f
        assert os.path.isfile(
            os.path.join(out, "metrics", "psd_error0_off.csv"))
        assert os.path.isfile(
            os.path.join(out, "metrics", "third_octave_error0.csv"))

    def test_config_copy_hash_verified(self, tmp_path):
        out = str(tmp_path / "artifacts")
        run_scenario(parse_scenario(fast_doc()), out_dir=out)
        written = json.load(open(os.path.join(out, "config.json")))
        summary = json.load(open(os.path.join(out, "summary.json")))
        assert parse_scenario(written).config_hash() == summary["config_hash"]

    def test_log_contains_lifecycle(self):
        envs = []
        run_scenario(parse_scenario(fast_doc()), log_hook=envs.append)
        topics = {e["topic"] for e in envs}
        assert "unit/0/telemetry" in topics
        assert "unit/0/event" in topics
        assert "unit/0/ack" in topics
        states = [e["payload"] for e in envs
                  if e["topic"] == "unit/0/event"
                  and e["payload"].get("event") == "state"]
        seq = [(p["from"], p["to"]) for p in states]
        assert ("idle", "calibrating") in seq
        assert ("calibrating", "idle") in seq
        assert ("idle", "running_ff") in seq
        seqs = [e["seq"] for e in envs]
        assert seqs == sorted(seqs)

    def test_auto_start_false_stays_idle(self):
        doc = fast_doc(auto_start=False)
        res = run_scenario(parse_scenario(doc))
        assert res.summary["units"][0]["state"] == "idle"
        err = [m for m in res.summary["mics"] if m["role"] == "error"][0]
        assert abs(err["reduction_db"]) < 0.5
