"""Adaptive noise-control algorithms.

Feedforward FxLMS, its feedback counterpart built on internal model
control, and the output-power-constrained variant that scales a leak term
by a time-varying penalty factor. All per-sample work is delegated to the
compiled loops in kernels.py; the plain functions here are the reference
semantics the kernels are tested against.

Sign convention: the control filter is adapted with the "+" update
    w <- w + mu * (e * x' - alpha * y * x)
while the output stage drives the loudspeaker with -y. Under the plant's
additive mixing e = d - s*sat(y), which makes the update a descent step
and the disturbance estimate d_hat = e + shat*y recover d when shat = s.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CalibrationError, ConfigError, ControllerFault
from .signals import FirFilter

DEFAULT_L = 128
DEFAULT_M = 64
DEFAULT_MU = 0.05
GS_FLOOR = kernels.GS_FLOOR

MODE_FEEDFORWARD = "feedforward"
MODE_FEEDBACK = "feedback"
ALG_NAMES = {"fxlms": kernels.ALG_FXLMS, "mov_fxlms": kernels.ALG_MOV}


def penalty_factor(dhat_window, gs, rho, frame_len=None):
    """Penalty factor from the last M disturbance-estimate samples.

    alpha = max{ gs * (sqrt(sum d^2 / (M*gs*rho^2)) - 1), 0 }

    rho may be math.inf, which always yields 0 (constraint disabled).
    """
    if gs <= 0.0:
        raise ConfigError(f"secondary-path gain must be > 0, got {gs}")
    if not rho > 0.0:
        raise ConfigError(f"output constraint rho must be > 0, got {rho}")
    w = np.asarray(dhat_window, dtype=np.float64)
    m = int(frame_len) if frame_len is not None else w.size
    if m < 1:
        raise ConfigError(f"frame length must be >= 1, got {m}")
    if w.size != m:
        raise ConfigError(f"window has {w.size} samples, expected {m}")
    return kernels.penalty_alpha(float(np.dot(w, w)), m, float(gs), rho * rho)


def mov_fxlms_update(w, e, x_filt, y, x, mu, alpha):
    """One weight update: w + mu*(e*x_filt - alpha*y*x), elementwise.

    x_filt and x are tap-aligned histories (index 0 = newest sample).
    With alpha = 0 this is the plain FxLMS update.
    """
    w = np.asarray(w, dtype=np.float64)
    x_filt = np.asarray(x_filt, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_filt.shape != w.shape or x.shape != w.shape:
        raise ConfigError("w, x_filt and x must have equal length")
    out = w + mu * (e * x_filt - alpha * y * x)
    if not np.all(np.isfinite(out)):
        raise ControllerFault("non-finite weight update")
    return out


def estimate_disturbance(e, y_hist, shat):
    """Reconstruct the disturbance: d_hat = e + (shat * y)(n).

    y_hist index 0 is the newest control sample. Equals the true
    disturbance exactly when shat matches the physical secondary path.
    """
    y_hist = np.asarray(y_hist, dtype=np.float64)
    shat = np.asarray(shat, dtype=np.float64)
    k = min(shat.size, y_hist.size)
    return float(e + np.dot(shat[:k], y_hist[:k]))


def secondary_path_gain(shat):
    """Power gain of the secondary-path estimate: sum of squared taps.

    Floored at 1e-12 so downstream divisions stay defined; a floored
    value means the calibration is degenerate.
    """
    shat = np.asarray(shat, dtype=np.float64)
    return max(float(np.dot(shat, shat)), GS_FLOOR)


@dataclass
class CalibrationResult:
    """Outcome of secondary-path identification."""

    shat: FirFilter
    misalignment_db: float
    training_samples: int


class Controller:
    """One adaptive-control unit, sample-synchronous and single-threaded.

    Exposes frame-in/frame-out steps over aligned reference/error streams.
    The closed-loop engine in runner.py uses the same compiled per-tick
    helpers, so trajectories match between the two entry points.
    """

    def __init__(self, filter_len=DEFAULT_L, frame_len=DEFAULT_M,
                 mu=DEFAULT_MU, rho=math.inf, mode=MODE_FEEDFORWARD,
                 algorithm="mov_fxlms", normalize=True):
        if filter_len < 1:
            raise ConfigError(f"filter_len must be >= 1, got {filter_len}")
        if frame_len < 1:
            raise ConfigError(f"frame_len must be >= 1, got {frame_len}")
        if mu <= 0.0:
            raise ConfigError(f"mu must be > 0, got {mu}")
        if not rho > 0.0:
            raise ConfigError(f"rho must be > 0, got {rho}")
        if mode not in (MODE_FEEDFORWARD, MODE_FEEDBACK):
            raise ConfigError(f"unknown mode {mode!r}")
        if algorithm not in ALG_NAMES:
            raise ConfigError(f"unknown algorithm {algorithm!r}")
        self.filter_len = int(filter_len)
        self.frame_len = int(frame_len)
        self.mu = float(mu)
        self.rho = float(rho)
        self.mode = mode
        self.algorithm = algorithm
        self.normalize = bool(normalize)
        self.alpha = 0.0
        self.gs = GS_FLOOR
        self.shat = None
        self.faulted = False
        self._n = 0
        self._dhat_prev = 0.0
        self._k = 1
        self._alloc(1)

    def _alloc(self, k):
        L = self.filter_len
        self._k = k
        self._xr_size = kernels.next_pow2(max(L + k, 2))
        self._yb_size = kernels.next_pow2(max(k + 1, 2))
        self.w = np.zeros((1, L))
        self._XR = np.zeros((1, self._xr_size))
        self._XF = np.zeros((1, self._xr_size))
        self._YB = np.zeros((1, self._yb_size))
        self._SH = np.zeros((1, k))
        self._DHW = np.zeros((1, self.frame_len))

    def set_secondary_path(self, shat):
        """Install the path estimate; resets adaptation history."""
        taps = shat.taps if isinstance(shat, FirFilter) else np.asarray(
            shat, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise ConfigError("secondary path estimate must be 1-d, non-empty")
        self.shat = taps.copy()
        self.gs = secondary_path_gain(taps)
        self._alloc(taps.size)
        self._SH[0, :] = taps
        self._n = 0
        self._dhat_prev = 0.0
        self.alpha = 0.0

    @property
    def calibrated(self):
        return self.shat is not None and self.gs > GS_FLOOR

    def reset(self):
        """Zero weights and history; clears a fault. Keeps shat."""
        self.w[:] = 0.0
        self._XR[:] = 0.0
        self._XF[:] = 0.0
        self._YB[:] = 0.0
        self._DHW[:] = 0.0
        self._n = 0
        self._dhat_prev = 0.0
        self.alpha = 0.0
        self.faulted = False

    def _step(self, feedback, x_frame, e_frame, adapt=True):
        if self.shat is None:
            raise CalibrationError("secondary path not calibrated")
        if self.faulted:
            raise ControllerFault("controller is in fault state")
        e_frame = np.ascontiguousarray(e_frame, dtype=np.float64)
        nt = e_frame.size
        if feedback:
            x_frame = np.zeros(0)
        else:
            x_frame = np.ascontiguousarray(x_frame, dtype=np.float64)
            if x_frame.size != nt:
                raise ConfigError("x and e frames must have equal length")
        y = np.empty(nt)
        dh = np.empty(nt)
        al = np.empty(nt)
        alpha, dhat_prev, ok = kernels.ctl_block(
            self._n, nt, feedback, x_frame, e_frame,
            self.w, self.filter_len, self._XR, self._XF, self._xr_size - 1,
            self._YB, self._yb_size - 1, self._SH, self._k,
            self._DHW, self.frame_len,
            ALG_NAMES[self.algorithm], self.gs, self.rho * self.rho,
            self.mu, self.normalize, adapt, self.alpha, self._dhat_prev,
            y, dh, al,
        )
        self.alpha = float(alpha)
        self._dhat_prev = float(dhat_prev)
        self._n += nt
        if not (ok and np.all(np.isfinite(self.w))):
            self.faulted = True
            raise ControllerFault(
                f"non-finite signal or weight at sample {self._n}")
        return y, dh, al

    def fxlms_step(self, x_frame, e_frame):
        """Feedforward step over one aligned reference/error frame."""
        if self.mode != MODE_FEEDFORWARD:
            raise ConfigError("controller is not in feedforward mode")
        y, _dh, _al = self._step(False, x_frame, e_frame)
        return y

    def feedback_fxlms_step(self, e_frame):
        """Feedback step: the reference is the reconstructed disturbance."""
        if self.mode != MODE_FEEDBACK:
            raise ConfigError("controller is not in feedback mode")
        y, _dh, _al = self._step(True, None, e_frame)
        return y


def _composite_misalignment(true_path, shat):
    n = max(true_path.size, shat.size)
    t = np.zeros(n)
    t[: true_path.size] = true_path
    s = np.zeros(n)
    s[: shat.size] = shat
    denom = float(np.dot(t, t))
    if denom <= 0.0:
        return math.inf
    return 10.0 * math.log10(max(float(np.dot(t - s, t - s)), 1e-300) / denom)


def estimate_secondary_path(plant, training, n_samples, model_order,
                            unit=0, mu_id=0.05, block=1024):
    """LMS identification of the unit-output -> error-mic path.

    Drives the plant's unit output with the training signal while ambient
    sources keep playing, and adapts shat on the (u, mic) pairs:
        eps = mic - shat . u_hist;  shat += mu_id * eps * u_hist
    The step is normalized by the running training power. Raises
    CalibrationError when the misalignment trend over the last quarter of
    training is rising (divergence).
    """
    if model_order < 1:
        raise ConfigError(f"model_order must be >= 1, got {model_order}")
    if n_samples < 4 * block:
        raise ConfigError("training run too short for trend monitoring")
    mic_idx = plant.error_mic_of(unit)
    true_path = plant.composite_path(mic_idx, unit)
    SH = np.zeros((1, model_order))
    uh_size = kernels.next_pow2(max(model_order, 2))
    UH = np.zeros((1, uh_size))
    n_units = plant.n_units
    checkpoints = []
    n = 0
    # normalize the identification step by average training power so the
    # caller-facing mu_id is amplitude-independent
    probe = training.block(0, min(n_samples, 8192))
    p_train = float(np.mean(probe**2))
    mu_eff = mu_id / (model_order * max(p_train, 1e-12))
    while n < n_samples:
        nt = min(block, n_samples - n)
        u = training.block(n, nt)
        emis = np.zeros((n_units, nt))
        emis[unit] = u
        mic, _true = plant.step_block(emis)
        kernels.sysid_block(n, nt, u, mic[mic_idx], SH, model_order,
                            UH, uh_size - 1, mu_eff)
        n += nt
        checkpoints.append(_composite_misalignment(true_path, SH[0]))
    q = len(checkpoints) // 4
    if q >= 1 and len(checkpoints) >= 8:
        last = float(np.mean(checkpoints[-q:]))
        prev = float(np.mean(checkpoints[-2 * q : -q]))
        if last > prev + 3.0:
            raise CalibrationError(
                f"identification diverging: misalignment {prev:.1f} -> "
                f"{last:.1f} dB over final quarter of training")
    mis = _composite_misalignment(true_path, SH[0])
    if not math.isfinite(mis):
        raise CalibrationError("plant has a zero secondary path")
    return CalibrationResult(
        shat=FirFilter(SH[0].copy()),
        misalignment_db=mis,
        training_samples=n_samples,
    )
