"""Closed-loop scenario execution.

SimEngine advances the plant and every controller in lockstep, applies
operator commands only on block boundaries, runs secondary-path
identification for calibrating units, and emits telemetry frames on a
fixed simulated-time cadence. run_scenario() drives it through the
standard headless phases (calibrate, run, report) and writes the
artifact tree.
"""

import hashlib
import json
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .control import ALG_NAMES
from .controlplane.units import (
    CALIBRATING,
    FAULT,
    IDLE,
    RUNNING,
    RUNNING_FB,
    RUNNING_FF,
    UnitStateMachine,
)
from .errors import ConfigError
from .metrics import (
    StreamingSplMeter,
    harmonic_ratio,
    spl_dbc,
    third_octave_reduction,
    welch_psd,
)
from .signals import SignalGen, write_f32, write_wav

# kernel state codes for each machine state
_KSTATE = {
    IDLE: kernels.STATE_OFF,
    CALIBRATING: kernels.STATE_CALIBRATING,
    RUNNING_FF: kernels.STATE_RUN_FF,
    RUNNING_FB: kernels.STATE_RUN_FB,
    FAULT: kernels.STATE_OFF,
}

MAX_HOP = 8192

# output-runaway fail-safe: windowed residual power more than 10x the
# windowed disturbance power freezes the unit
TRIP_WINDOW = 1024
TRIP_FACTOR = 10.0
TRIP_FLOOR = 1e-12

# convergence flag: reduction above 3 dB and stable within 0.5 dB
# across one second of telemetry
CONVERGED_MIN_DB = 3.0
CONVERGED_STABLE_DB = 0.5

BAND_WINDOW_S = 4.0


@dataclass
class _CalRun:
    """Live identification state for one calibrating unit."""

    gen: SignalGen
    start_n: int
    end_n: int
    order: int
    mu_eff: float
    sh: np.ndarray
    uh: np.ndarray
    uh_mask: int
    residuals: list = field(default_factory=list)
    _acc: float = 0.0
    _acc_n: int = 0

    def add_residual(self, sumsq, count, fs):
        self._acc += sumsq
        self._acc_n += count
        if self._acc_n >= fs:
            self.residuals.append(self._acc / self._acc_n)
            self._acc = 0.0
            self._acc_n = 0

    def diverged(self) -> bool:
        r = self.residuals
        if len(r) < 4:
            return not np.all(np.isfinite(self.sh))
        q = max(len(r) // 4, 1)
        return (not np.all(np.isfinite(self.sh))
                or float(np.mean(r[-q:])) > 10.0 * float(np.mean(r[:q])))


class SimEngine:
    """One scenario's plant, controllers and state machines, advanced
    a block at a time.

    Commands are applied between advance() calls, so every parameter
    and state change lands exactly on a block boundary. advance()
    returns the (topic, payload) pairs produced while stepping.
    """

    def __init__(self, config, debug_hashes=False):
        self.config = config
        self.fs = config.sample_rate
        self.plant = config.build_plant()
        self.n_units = config.n_units
        self.n_mics = self.plant.n_mics
        self.machines = []
        for i, u in enumerate(config.units):
            self.machines.append(UnitStateMachine(i, params={
                "mu": u.mu,
                "rho": None if math.isinf(u.rho) else u.rho,
                "filter_len": u.filter_len,
                "frame_len": u.frame_len,
            }))

        nu = max(self.n_units, 1)
        units = config.units
        L = [u.filter_len for u in units] or [1]
        K = [u.calibration.model_order for u in units] or [1]
        M = [u.frame_len for u in units] or [64]
        self._L = np.array(L, dtype=np.int64)
        self._K = np.array(K, dtype=np.int64)
        self._M = np.array(M, dtype=np.int64)
        L_cap, K_cap, M_cap = max(L), max(K), max(M)
        xr_size = kernels.next_pow2(L_cap + K_cap + 1)
        yb_size = kernels.next_pow2(K_cap + 1)
        self._W = np.zeros((nu, L_cap))
        self._XR = np.zeros((nu, xr_size))
        self._XF = np.zeros((nu, xr_size))
        self._YB = np.zeros((nu, yb_size))
        self._SH = np.zeros((nu, K_cap))
        self._DHW = np.zeros((nu, M_cap))
        self._xr_mask = xr_size - 1
        self._yb_mask = yb_size - 1

        self._ustate = np.zeros(nu, dtype=np.int64)
        self._refsrc = np.array(
            [u.reference_source for u in units] or [0], dtype=np.int64)
        self._err_mic = np.array(
            [self.plant.error_mic_of(i) for i in range(self.n_units)] or [0],
            dtype=np.int64)
        self._alg = np.array(
            [ALG_NAMES[u.algorithm] for u in units] or [0], dtype=np.int64)
        self._gs = np.zeros(nu)
        self._rho2 = np.array(
            [u.rho * u.rho for u in units] or [math.inf])
        self._mu = np.array([u.mu for u in units] or [0.0])
        self._normalize = np.array(
            [1 if u.normalize else 0 for u in units] or [0], dtype=np.int64)
        self._alpha = np.zeros(nu)
        self._dhat_prev = np.zeros(nu)
        self._finite_ok = np.ones(nu, dtype=np.int64)
        self._adapt = np.ones(nu, dtype=np.int64)
        self._settle_until = np.zeros(nu, dtype=np.int64)

        self.hop = math.lcm(*M)
        if self.hop > MAX_HOP:
            raise ConfigError(
                f"frame lengths {sorted(set(M))} need a {self.hop}-sample "
                f"block, above the {MAX_HOP} limit")

        self._n = 0
        self._cal = {}
        self.faults = {}

        # telemetry
        t = config.telemetry
        self._cad = self.fs / t.cadence_hz
        self._mark = 1
        self._meters_mic = [StreamingSplMeter(self.fs)
                            for _ in range(self.n_mics)]
        self._meters_true = [StreamingSplMeter(self.fs)
                             for _ in range(self.n_mics)]
        self._red_hist = [deque(maxlen=11) for _ in range(self.n_units)]
        self.telemetry_frames = 0
        self._bands_on = bool(t.bands)
        if self._bands_on:
            win = int(round(BAND_WINDOW_S * self.fs))
            self._band_buf_mic = np.zeros((self.n_units, win))
            self._band_buf_true = np.zeros((self.n_units, win))
            self._band_fill = 0
            self._band_next = t.bands_every_s

        # output-runaway watchdog, per-hop chunked sums
        chunks = max(int(math.ceil(TRIP_WINDOW / self.hop)), 1)
        self._trip = [deque(maxlen=chunks) for _ in range(self.n_units)]

        self._recorder = None
        self._events = []
        self.debug_hashes = debug_hashes
        self.frame_hashes = []

    # -- time ---------------------------------------------------------

    @property
    def sample_index(self):
        return self._n

    @property
    def sim_time(self):
        return self._n / self.fs

    # -- commands -----------------------------------------------------

    def apply_command(self, unit, payload):
        """Validate and apply one command at the current block boundary.

        Returns the ack payload. State transitions additionally queue an
        event frame picked up by the next advance().
        """
        if not isinstance(unit, int) or not 0 <= unit < self.n_units:
            return {"ok": False, "reason": f"no unit {unit!r}"}
        m = self.machines[unit]
        err = self._precheck(unit, payload)
        if err:
            reply = {"ok": False, "reason": err}
            reply.update(m.snapshot())
            return reply
        before = m.state
        reply, action = m.command(payload)
        if action:
            self._dispatch(unit, action)
        if m.state != before:
            self._push_event(unit, {
                "event": "state", "from": before, "to": m.state})
        return reply

    def _precheck(self, unit, payload) -> str:
        """Capacity limits the state machine cannot know about."""
        if not isinstance(payload, dict) or payload.get("cmd") != "set_param":
            return ""
        p = payload.get("params")
        if not isinstance(p, dict):
            return ""
        fl = p.get("filter_len")
        if fl is not None and isinstance(fl, int):
            if fl > self._W.shape[1]:
                return (f"filter_len {fl} exceeds the allocated "
                        f"{self._W.shape[1]} taps")
        fr = p.get("frame_len")
        if fr is not None and isinstance(fr, int) and fr >= 1:
            if fr > self._DHW.shape[1]:
                return (f"frame_len {fr} exceeds the allocated "
                        f"{self._DHW.shape[1]} samples")
            if self.hop % fr:
                return (f"frame_len {fr} does not divide the "
                        f"{self.hop}-sample block")
        return ""

    def _dispatch(self, u, action):
        if isinstance(action, tuple):
            name, arg = action
        else:
            name, arg = action, None
        if name == "start_calibration":
            self._start_calibration(u)
        elif name in ("enter_running_ff", "enter_running_fb"):
            # fresh constraint window and filtered-reference history;
            # weights are kept so a paused unit resumes warm. Adaptation
            # stays frozen until the normalization window holds real
            # data: the error is already at full power when a run starts
            # mid-stream, and a near-empty regressor history would make
            # the normalized step explosively large.
            self._DHW[u, :] = 0.0
            self._XF[u, :] = 0.0
            self._YB[u, :] = 0.0
            self._alpha[u] = 0.0
            self._dhat_prev[u] = 0.0
            self._finite_ok[u] = 1
            self._trip[u].clear()
            self._red_hist[u].clear()
            warm = int(self._L[u] + self._K[u] + self._M[u])
            hops = -(-warm // self.hop)
            self._settle_until[u] = self._n + hops * self.hop
            self._adapt[u] = 0
            self._ustate[u] = (kernels.STATE_RUN_FF
                               if name.endswith("ff")
                               else kernels.STATE_RUN_FB)
        elif name == "enter_idle":
            self._ustate[u] = kernels.STATE_OFF
        elif name == "reset":
            self._cal.pop(u, None)
            self.faults.pop(u, None)
            self._W[u, :] = 0.0
            self._DHW[u, :] = 0.0
            self._XF[u, :] = 0.0
            self._YB[u, :] = 0.0
            self._alpha[u] = 0.0
            self._dhat_prev[u] = 0.0
            self._finite_ok[u] = 1
            self._trip[u].clear()
            self._ustate[u] = kernels.STATE_OFF
        elif name == "set_param":
            self._apply_params(u, arg)

    def _apply_params(self, u, changes):
        if "mu" in changes:
            self._mu[u] = float(changes["mu"])
        if "rho" in changes:
            r = changes["rho"]
            self._rho2[u] = math.inf if r is None else float(r) ** 2
        if "filter_len" in changes and changes["filter_len"] != self._L[u]:
            self._L[u] = int(changes["filter_len"])
            self._W[u, :] = 0.0
        if "frame_len" in changes and changes["frame_len"] != self._M[u]:
            self._M[u] = int(changes["frame_len"])
            self._DHW[u, :] = 0.0
            self._alpha[u] = 0.0

    def _start_calibration(self, u):
        cal = self.config.units[u].calibration
        amp = cal.amplitude
        # uniform white in [-1,1) has mean square 1/3
        p_train = amp * amp / 3.0
        self._cal[u] = _CalRun(
            gen=SignalGen(kind="white", fs=self.fs, amplitude=amp,
                          seed=cal.seed),
            start_n=self._n,
            end_n=self._n + int(round(cal.duration_s * self.fs)),
            order=cal.model_order,
            mu_eff=cal.mu_id / (cal.model_order * max(p_train, 1e-12)),
            sh=np.zeros((1, cal.model_order)),
            uh=np.zeros((1, kernels.next_pow2(cal.model_order + 1))),
            uh_mask=kernels.next_pow2(cal.model_order + 1) - 1,
        )
        self._ustate[u] = kernels.STATE_CALIBRATING

    # -- stepping -----------------------------------------------------

    def attach_recorder(self, n_samples):
        """Start capturing every signal for the next n_samples."""
        self._recorder = {
            "n": int(n_samples),
            "pos": 0,
            "start_n": self._n,
            "mic": np.zeros((self.n_mics, n_samples)),
            "true": np.zeros((self.n_mics, n_samples)),
            "y": np.zeros((max(self.n_units, 1), n_samples)),
            "e": np.zeros((max(self.n_units, 1), n_samples)),
            "alpha": [],
        }

    @property
    def recording(self):
        return self._recorder

    def advance(self, hops=1):
        """Step hops blocks; returns emitted (topic, payload) pairs."""
        for _ in range(hops):
            self._advance_hop()
        out = self._events
        self._events = []
        return out

    def _push_event(self, u, payload):
        payload = dict(payload)
        payload.setdefault("t", round(self.sim_time, 6))
        payload["unit"] = u
        self._events.append((f"unit/{u}/event", payload))

    def _advance_hop(self):
        nt = self.hop
        n0 = self._n
        nu = max(self.n_units, 1)
        plant = self.plant
        src = plant.source_block(n0, nt)
        calib = np.zeros((nu, nt))
        for u, cal in self._cal.items():
            calib[u] = cal.gen.block(n0, nt)
        mic = np.empty((self.n_mics, nt))
        true = np.empty((self.n_mics, nt))
        y_out = np.empty((nu, nt))
        e_out = np.empty((nu, nt))
        dh_out = np.empty((nu, nt))

        if self.debug_hashes:
            h0 = self._param_digest()
        kernels.engine_frame(
            n0, nt, src, calib,
            self._ustate, self._refsrc, self._err_mic,
            self._W, self._L, self._XR, self._XF, self._xr_mask,
            self._YB, self._yb_mask, self._SH, self._K, self._DHW, self._M,
            self._alg, self._gs, self._rho2, self._mu, self._normalize,
            self._adapt, self._alpha, self._dhat_prev,
            plant._SRING, plant._s_size - 1, plant._ORING, plant._o_size - 1,
            plant._sat_kind, plant._sat_limit,
            plant._ms_delay, plant._ms_gain, plant._ms_fir, plant._ms_flen,
            plant._mu_delay, plant._mu_gain, plant._mu_fir, plant._mu_flen,
            mic, true, y_out, e_out, dh_out, self._finite_ok,
        )
        if self.debug_hashes:
            self.frame_hashes.append((n0, h0, self._param_digest()))
        self._n += nt
        plant._n = self._n

        rec = self._recorder
        if rec is not None and rec["pos"] < rec["n"]:
            k = min(nt, rec["n"] - rec["pos"])
            p = rec["pos"]
            rec["mic"][:, p:p + k] = mic[:, :k]
            rec["true"][:, p:p + k] = true[:, :k]
            rec["y"][:, p:p + k] = y_out[:, :k]
            rec["e"][:, p:p + k] = e_out[:, :k]
            rec["alpha"].append(self._alpha.copy())
            rec["pos"] = p + k

        for m in range(self.n_mics):
            self._meters_mic[m].push(mic[m])
            self._meters_true[m].push(true[m])
        if self._bands_on and self.n_units:
            win = self._band_buf_mic.shape[1]
            k = min(nt, win)
            self._band_buf_mic[:, :-k] = self._band_buf_mic[:, k:]
            self._band_buf_true[:, :-k] = self._band_buf_true[:, k:]
            for u in range(self.n_units):
                em = self._err_mic[u]
                self._band_buf_mic[u, -k:] = mic[em, -k:]
                self._band_buf_true[u, -k:] = true[em, -k:]
            self._band_fill = min(self._band_fill + nt, win)

        for u in range(self.n_units):
            st = self.machines[u].state
            if st == CALIBRATING:
                self._step_calibration(u, calib[u], e_out[u])
            elif st in RUNNING:
                if not self._adapt[u] and self._n >= self._settle_until[u]:
                    self._adapt[u] = 1
                self._check_trip(u, e_out[u], true[self._err_mic[u]])

        while self._n >= int(round(self._mark * self._cad)):
            self._emit_telemetry(self._mark / self.config.telemetry.cadence_hz)
            self._mark += 1

    def _param_digest(self):
        h = hashlib.sha1()
        for a in (self._ustate, self._mu, self._rho2, self._L, self._M,
                  self._gs):
            h.update(a.tobytes())
        return h.hexdigest()

    # -- calibration --------------------------------------------------

    def _step_calibration(self, u, u_block, m_block):
        cal = self._cal[u]
        nt = u_block.shape[0]
        acc = kernels.sysid_block(
            self._n - nt, nt, u_block, m_block,
            cal.sh, cal.order, cal.uh, cal.uh_mask, cal.mu_eff)
        cal.add_residual(acc, nt, self.fs)
        if self._n >= cal.end_n:
            self._finish_calibration(u)

    def _state_event(self, u, old):
        new = self.machines[u].state
        if new != old:
            self._push_event(u, {"event": "state", "from": old, "to": new})

    def _finish_calibration(self, u):
        cal = self._cal.pop(u)
        m = self.machines[u]
        old = m.state
        shat = cal.sh[0].copy()
        gs = float(np.dot(shat, shat))
        if not np.all(np.isfinite(shat)) or cal.diverged():
            reason = "secondary path identification diverged"
            m.calibration_finished(False, reason)
            self._ustate[u] = kernels.STATE_OFF
            self.faults[u] = reason
            self._push_event(u, {"event": "fault", "reason": reason})
            self._state_event(u, old)
            return
        if gs <= kernels.GS_FLOOR:
            reason = "identified secondary path is numerically zero"
            m.calibration_finished(False, reason)
            self._ustate[u] = kernels.STATE_OFF
            self.faults[u] = reason
            self._push_event(u, {"event": "fault", "reason": reason})
            self._state_event(u, old)
            return
        self._SH[u, :] = 0.0
        self._SH[u, :cal.order] = shat
        self._gs[u] = gs
        self._ustate[u] = kernels.STATE_OFF
        mis = self._misalignment_db(u, shat)
        m.calibration_finished(True)
        self._push_event(u, {
            "event": "calibrated",
            "gs": round(gs, 6),
            "misalignment_db": round(mis, 3),
            "samples": cal.end_n - cal.start_n,
        })
        self._state_event(u, old)

    def _misalignment_db(self, u, shat):
        """Simulation-side check against the true unit-to-error-mic path."""
        h = self.plant.composite_path(int(self._err_mic[u]), u)
        n = max(h.size, shat.size)
        hp = np.zeros(n)
        sp = np.zeros(n)
        hp[:h.size] = h
        sp[:shat.size] = shat
        denom = float(np.dot(hp, hp))
        if denom <= 0.0:
            return float("inf")
        return 10.0 * math.log10(
            max(float(np.dot(hp - sp, hp - sp)), 1e-300) / denom)

    # -- fail-safe ----------------------------------------------------

    def _check_trip(self, u, e_block, d_block):
        tr = self._trip[u]
        tr.append((float(np.dot(e_block, e_block)),
                   float(np.dot(d_block, d_block))))
        reason = ""
        if not self._finite_ok[u] or not np.all(np.isfinite(self._W[u])):
            reason = "non-finite controller state"
        else:
            # checked on the partial window too: a diverging loop must
            # trip within a block or two, not after the window fills
            se = sum(a for a, _ in tr)
            sd = sum(b for _, b in tr)
            if se > TRIP_FACTOR * max(sd, TRIP_FLOOR):
                reason = (f"residual power {se:.3e} above "
                          f"{TRIP_FACTOR:g}x the disturbance {sd:.3e}")
        if reason:
            old = self.machines[u].state
            self.machines[u].fault(reason)
            self._ustate[u] = kernels.STATE_OFF
            self.faults[u] = reason
            # the unit is frozen silent from here on; clear the live
            # views so telemetry stays finite while the rings flush
            self._alpha[u] = 0.0
            self._dhat_prev[u] = 0.0
            self._YB[u, :] = 0.0
            self._push_event(u, {"event": "fault", "reason": reason})
            self._state_event(u, old)

    # -- telemetry ----------------------------------------------------

    def _emit_telemetry(self, t_mark):
        bands = bool(
            self._bands_on and self.n_units
            and t_mark + 1e-9 >= self._band_next
            and self._band_fill >= self._band_buf_mic.shape[1])
        if bands:
            self._band_next += self.config.telemetry.bands_every_s
        for item in self._telemetry_frames(t_mark, live=True, bands=bands):
            self._events.append(item)
            self.telemetry_frames += 1

    def telemetry_snapshot(self):
        """Telemetry frames for the current instant without advancing.

        Used by a paused server to keep clients fed: the frame clock and
        convergence history are left untouched, so resuming emits the
        same stream it would have without the snapshots.
        """
        return self._telemetry_frames(self.sim_time, live=False, bands=False)

    def _telemetry_frames(self, t_mark, live, bands):
        mon0 = self.n_units
        mon_spl = [round(self._meters_mic[m].reading(), 4)
                   for m in range(mon0, self.n_mics)]
        out = []
        for u in range(self.n_units):
            m = self.machines[u]
            em = self._err_mic[u]
            spl_err = self._meters_mic[em].reading()
            spl_true = self._meters_true[em].reading()
            red = spl_true - spl_err
            hist = self._red_hist[u]
            if live:
                hist.append(red)
            converged = bool(
                m.state in RUNNING
                and len(hist) == hist.maxlen
                and red >= CONVERGED_MIN_DB
                and abs(hist[-1] - hist[0]) <= CONVERGED_STABLE_DB)
            payload = {
                "t": round(t_mark, 6),
                "unit": u,
                "state": m.state,
                "calibrated": m.calibrated,
                "alpha": round(float(self._alpha[u]), 6),
                "output_power": round(self._output_power(u), 6),
                "spl_error_dbc": round(spl_err, 4),
                "spl_monitor_dbc": mon_spl,
                "reduction_db": round(red, 4),
                "converged": converged,
            }
            if bands:
                payload["bands"] = self._band_report(u)
            out.append((f"unit/{u}/telemetry", payload))
        return out

    def _output_power(self, u):
        mw = int(self._M[u])
        idx = (self._n - 1 - np.arange(mw)) & self._yb_mask
        return float(np.mean(self._YB[u, idx] ** 2))

    def _band_report(self, u):
        rep = third_octave_reduction(
            self._band_buf_true[u], self._band_buf_mic[u], self.fs)
        return {
            "centers_hz": list(rep.centers),
            "reduction_db": [
                round(r, 3) if v and math.isfinite(r) else None
                for r, v in zip(rep.reduction, rep.valid)],
        }


# -- headless run ----------------------------------------------------


@dataclass
class RunResult:
    summary: dict
    faulted: bool
    out_dir: str = ""
    log_path: str = ""
    summary_path: str = ""


def run_scenario(config, out_dir=None, log_hook=None):
    """Execute the standard headless phases of one scenario.

    Calibrates every auto-start unit, switches them to their configured
    mode, runs the main horizon, then computes steady-state metrics and
    (when out_dir is given) writes the artifact tree. log_hook, when
    given, receives every published envelope.
    """
    from .controlplane.broker import Broker

    eng = SimEngine(config)
    broker = Broker()
    writer = None
    log_path = ""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        from .controlplane.log import NdjsonLogWriter

        log_path = os.path.join(out_dir, "telemetry.ndjson")
        writer = NdjsonLogWriter(log_path)
    sink = broker.attach("log", filters=("#",), queue_len=1 << 30)

    def publish(topic, payload):
        broker.publish(topic, payload)
        for env in sink.drain():
            if writer is not None:
                writer.write(env)
            if log_hook is not None:
                log_hook(env)

    def pump(events):
        for topic, payload in events:
            publish(topic, payload)

    auto = [i for i, u in enumerate(config.units) if u.auto_start]
    for u in auto:
        reply = eng.apply_command(u, {"cmd": "calibrate"})
        publish(f"unit/{u}/ack", reply)
        pump(eng.advance(0))
        if not reply["ok"]:
            raise ConfigError(f"unit {u}: {reply['reason']}")
    while any(m.state == CALIBRATING for m in eng.machines):
        pump(eng.advance())

    for u in auto:
        if eng.machines[u].state != IDLE or not eng.machines[u].calibrated:
            continue
        mode = config.units[u].mode
        reply = eng.apply_command(u, {"cmd": "set_mode", "mode": mode})
        publish(f"unit/{u}/ack", reply)
        pump(eng.advance(0))
        if not reply["ok"]:
            raise ConfigError(f"unit {u}: {reply['reason']}")

    n_main = int(round(config.duration_s * eng.fs))
    eng.attach_recorder(n_main)
    main0 = eng.sample_index
    while eng.sample_index - main0 < n_main:
        pump(eng.advance())

    summary = _summarize(config, eng)
    result = RunResult(summary=summary, faulted=bool(eng.faults))
    if out_dir is not None:
        result.out_dir = str(out_dir)
        result.log_path = log_path
        result.summary_path = _write_artifacts(config, eng, summary, out_dir)
    if writer is not None:
        writer.close()
    return result


def _steady_slice(config, n_main):
    k = int(round(config.metrics.steady_state_fraction * n_main))
    return slice(n_main - max(k, 1), n_main)


def _summarize(config, eng):
    rec = eng.recording
    n_main = rec["n"]
    ss = _steady_slice(config, n_main)
    fs = eng.fs
    mc = config.metrics

    mics = []
    for m in range(eng.n_mics):
        role = "error" if m < eng.n_units else "monitor"
        off = spl_dbc(rec["true"][m, ss], fs)
        on = spl_dbc(rec["mic"][m, ss], fs)
        mics.append({
            "mic": m,
            "role": role,
            "spl_off_dbc": round(off, 4),
            "spl_on_dbc": round(on, 4),
            "reduction_db": round(off - on, 4),
        })

    alpha_tr = np.array(rec["alpha"]) if rec["alpha"] else np.zeros(
        (1, max(eng.n_units, 1)))
    n_hops_ss = max(int(round(len(alpha_tr)
                              * config.metrics.steady_state_fraction)), 1)
    alpha_ss = alpha_tr[-n_hops_ss:]

    units = []
    for u in range(eng.n_units):
        m = eng.machines[u]
        y_ss = rec["y"][u, ss]
        y2 = float(np.mean(y_ss ** 2))
        rho2 = float(eng._rho2[u])
        entry = {
            "unit": u,
            "state": m.state,
            "calibrated": m.calibrated,
            "faulted": u in eng.faults,
            "fault_reason": eng.faults.get(u, ""),
            "algorithm": config.units[u].algorithm,
            "mode": config.units[u].mode,
            "output_power": round(y2, 6),
            "alpha_mean": round(float(np.mean(alpha_ss[:, u])), 6),
            "alpha_max": round(float(np.max(alpha_tr[:, u])), 6),
            "alpha_final": round(float(eng._alpha[u]), 6),
        }
        if math.isfinite(rho2):
            entry["rho2"] = round(rho2, 6)
            entry["y2_over_rho2"] = round(y2 / rho2, 6)
            entry["constraint_ok"] = bool(y2 <= 1.1 * rho2)
        if mc.harmonics_fundamental > 0.0:
            em = int(eng._err_mic[u])
            hr_on = harmonic_ratio(rec["mic"][em, ss], fs,
                                   mc.harmonics_fundamental,
                                   mc.harmonics_k_max, mc.segment_len)
            hr_off = harmonic_ratio(rec["true"][em, ss], fs,
                                    mc.harmonics_fundamental,
                                    mc.harmonics_k_max, mc.segment_len)
            entry["harmonics_on_db"] = {
                str(k): round(v, 3) for k, v in hr_on.items()}
            entry["harmonics_off_db"] = {
                str(k): round(v, 3) for k, v in hr_off.items()}
        units.append(entry)

    bands = {}
    if mc.third_octave:
        for u in range(eng.n_units):
            em = int(eng._err_mic[u])
            rep = third_octave_reduction(
                rec["true"][em, ss], rec["mic"][em, ss], fs, mc.segment_len)
            bands[f"error{u}"] = rep.to_dict()
        for m in range(eng.n_units, eng.n_mics):
            rep = third_octave_reduction(
                rec["true"][m, ss], rec["mic"][m, ss], fs, mc.segment_len)
            bands[f"monitor{m - eng.n_units}"] = rep.to_dict()

    cal_events = []
    for u in range(eng.n_units):
        if eng.machines[u].calibrated:
            mis = eng._misalignment_db(u, eng._SH[u, :eng._K[u]])
            cal_events.append({
                "unit": u,
                "gs": round(float(eng._gs[u]), 6),
                "misalignment_db": round(mis, 3),
            })

    ss_t0 = (n_main - (ss.stop - ss.start)) / fs
    return {
        "scenario": config.name,
        "config_hash": config.config_hash(),
        "sample_rate": fs,
        "duration_s": config.duration_s,
        "total_sim_s": round(eng.sim_time, 6),
        "steady_window_s": [round(ss_t0, 3), round(n_main / fs, 3)],
        "calibration": cal_events,
        "mics": mics,
        "units": units,
        "third_octave": bands,
        "telemetry_frames": eng.telemetry_frames,
        "faulted": bool(eng.faults),
    }


def _write_artifacts(config, eng, summary, out_dir):
    rec = eng.recording
    fs = eng.fs
    mc = config.metrics
    ss = _steady_slice(config, rec["n"])

    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config.doc, f, indent=2, sort_keys=True)
        f.write("\n")

    if mc.write_signals:
        sdir = os.path.join(out_dir, "signals")
        os.makedirs(sdir, exist_ok=True)
        for m in range(eng.n_mics):
            tag = (f"error{m}" if m < eng.n_units
                   else f"monitor{m - eng.n_units}")
            write_f32(os.path.join(sdir, f"{tag}_on.f32"), rec["mic"][m])
            write_wav(os.path.join(sdir, f"{tag}_on.wav"), rec["mic"][m], fs)
            write_f32(os.path.join(sdir, f"{tag}_off.f32"), rec["true"][m])
            write_wav(os.path.join(sdir, f"{tag}_off.wav"), rec["true"][m], fs)
        for u in range(eng.n_units):
            write_f32(os.path.join(sdir, f"unit{u}_y.f32"), rec["y"][u])
            write_wav(os.path.join(sdir, f"unit{u}_y.wav"), rec["y"][u], fs)

    mdir = os.path.join(out_dir, "metrics")
    os.makedirs(mdir, exist_ok=True)
    if mc.psd:
        for u in range(eng.n_units):
            em = int(eng._err_mic[u])
            welch_psd(rec["true"][em, ss], fs, mc.segment_len).to_csv(
                os.path.join(mdir, f"psd_error{u}_off.csv"))
            welch_psd(rec["mic"][em, ss], fs, mc.segment_len).to_csv(
                os.path.join(mdir, f"psd_error{u}_on.csv"))
    if mc.third_octave:
        for u in range(eng.n_units):
            em = int(eng._err_mic[u])
            rep = third_octave_reduction(
                rec["true"][em, ss], rec["mic"][em, ss], fs, mc.segment_len)
            rep.to_csv(os.path.join(mdir, f"third_octave_error{u}.csv"))
        for m in range(eng.n_units, eng.n_mics):
            rep = third_octave_reduction(
                rec["true"][m, ss], rec["mic"][m, ss], fs, mc.segment_len)
            rep.to_csv(
                os.path.join(mdir, f"third_octave_monitor{m - eng.n_units}.csv"))

    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
