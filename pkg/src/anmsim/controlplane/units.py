"""Per-unit lifecycle state machine.

Pure command -> (reply, action) logic with no engine or transport
dependencies, so the transition rules can be tested exhaustively. The
engine owns the DSP consequences and performs the action the machine
hands back.

States and legal transitions:

    idle        -> calibrating (calibrate)
    calibrating -> idle        (calibration success, or reset to cancel)
    calibrating -> fault       (calibration failure)
    idle        -> running_ff | running_fb (set_mode, only if calibrated)
    running_*   -> idle        (set_mode idle)
    any         -> fault       (engine fail-safe)
    fault       -> idle        (reset only)
"""

from dataclasses import dataclass, field

IDLE = "idle"
CALIBRATING = "calibrating"
RUNNING_FF = "running_ff"
RUNNING_FB = "running_fb"
FAULT = "fault"

STATES = (IDLE, CALIBRATING, RUNNING_FF, RUNNING_FB, FAULT)
RUNNING = (RUNNING_FF, RUNNING_FB)

_MODE_TO_STATE = {"feedforward": RUNNING_FF, "feedback": RUNNING_FB,
                  "idle": IDLE}

# params an operator may change while the unit is running
LIVE_PARAMS = ("mu", "rho")
LOCKED_PARAMS = ("filter_len", "frame_len")

COMMANDS = ("calibrate", "set_mode", "set_param", "reset", "get_state")


@dataclass
class UnitStateMachine:
    """Tracks one unit's state and validates every command against it."""

    unit_id: int
    params: dict = field(default_factory=dict)
    state: str = IDLE
    calibrated: bool = False
    fault_reason: str = ""

    def snapshot(self):
        return {
            "unit": self.unit_id,
            "state": self.state,
            "calibrated": self.calibrated,
            "fault_reason": self.fault_reason,
            "params": dict(self.params),
        }

    def _ok(self, action=None, **extra):
        reply = {"ok": True}
        reply.update(self.snapshot())
        reply.update(extra)
        return reply, action

    def _err(self, reason):
        reply = {"ok": False, "reason": reason}
        reply.update(self.snapshot())
        return reply, None

    def command(self, payload):
        """Validate one command dict.

        Returns (reply, action): reply is the ack payload; action is a
        directive for the engine ("start_calibration", "enter_idle",
        "enter_running_ff", "enter_running_fb", "reset",
        ("set_param", changed)) or None when nothing must happen.
        """
        if not isinstance(payload, dict):
            return self._err("command payload must be an object")
        cmd = payload.get("cmd")
        if cmd not in COMMANDS:
            return self._err(f"unknown command {cmd!r}")

        if cmd == "get_state":
            return self._ok()

        if cmd == "calibrate":
            if self.state != IDLE:
                return self._err(f"calibrate not allowed in state {self.state}")
            self.state = CALIBRATING
            return self._ok("start_calibration")

        if cmd == "set_mode":
            mode = payload.get("mode")
            if mode not in _MODE_TO_STATE:
                return self._err(f"unknown mode {mode!r}")
            target = _MODE_TO_STATE[mode]
            if target == IDLE:
                if self.state not in RUNNING:
                    return self._err(
                        f"set_mode idle not allowed in state {self.state}")
                self.state = IDLE
                return self._ok("enter_idle")
            if self.state != IDLE:
                return self._err(f"set_mode not allowed in state {self.state}")
            if not self.calibrated:
                return self._err("unit is not calibrated")
            self.state = target
            return self._ok("enter_" + target)

        if cmd == "set_param":
            changes = payload.get("params")
            if not isinstance(changes, dict) or not changes:
                return self._err("set_param needs a non-empty params object")
            for k in changes:
                if k not in LIVE_PARAMS + LOCKED_PARAMS:
                    return self._err(f"unknown parameter {k!r}")
            locked = [k for k in changes if k in LOCKED_PARAMS]
            if locked and self.state != IDLE:
                return self._err(
                    f"{','.join(sorted(locked))} locked in state {self.state}")
            bad = _validate_params(changes)
            if bad:
                return self._err(bad)
            self.params.update(changes)
            return self._ok(("set_param", dict(changes)))

        # reset: from any state back to idle; calibration survives, the
        # engine zeroes the adaptive weights
        self.state = IDLE
        self.fault_reason = ""
        return self._ok("reset")

    def calibration_finished(self, ok, reason=""):
        """Engine callback when an identification run ends."""
        if self.state != CALIBRATING:
            return
        if ok:
            self.state = IDLE
            self.calibrated = True
        else:
            self.state = FAULT
            self.fault_reason = reason or "calibration failed"

    def fault(self, reason):
        self.state = FAULT
        self.fault_reason = reason


def _validate_params(changes) -> str:
    for k in ("mu", "rho"):
        if k in changes:
            v = changes[k]
            if v is None and k == "rho":
                continue
            if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
                return f"{k} must be a positive number"
    for k in ("filter_len", "frame_len"):
        if k in changes:
            v = changes[k]
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                return f"{k} must be a positive integer"
    return ""
