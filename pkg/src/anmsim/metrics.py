"""Acoustic evaluation: C-weighted SPL, spectra, band reductions.

Calibration convention throughout: digital amplitude 1.0 corresponds to
94 dB SPL (1 Pa), so dB = 20*log10(rms) + 94.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import ConfigError

CAL_DB = 94.0
SPL_FLOOR_DB = -120.0

# nominal third-octave centers reported for machinery noise
NOMINAL_CENTERS = (31.5, 40.0, 50.0, 63.0, 80.0, 100.0, 125.0, 160.0, 200.0)

# analog C-weighting corner frequencies
_F1 = 20.598997
_F4 = 12194.217


class CWeighting:
    """Digital C-weighting filter for one sample rate.

    Built from the standard analog response (double pole at 20.6 Hz,
    double pole at 12194 Hz, double zero at DC) via the bilinear
    transform, then gain-normalized to exactly 0 dB at 1 kHz. Accuracy
    target versus the published weighting table is +/-0.3 dB for
    20-200 Hz; the warped upper pole only matters near Nyquist.
    """

    def __init__(self, fs):
        if fs <= 0:
            raise ConfigError(f"fs must be positive, got {fs}")
        if fs < 4000:
            raise ConfigError("C-weighting needs fs >= 4000 for a sane "
                              "1 kHz reference")
        self.fs = int(fs)
        w1 = 2.0 * math.pi * _F1
        w4 = 2.0 * math.pi * _F4
        z, p, k = sps.bilinear_zpk([0.0, 0.0], [-w1, -w1, -w4, -w4],
                                   w4 * w4, fs)
        sos = sps.zpk2sos(z, p, k)
        _w, h = sps.sosfreqz(sos, worN=[1000.0], fs=fs)
        sos[0, :3] /= abs(h[0])
        self.sos = sos
        self._zi = np.zeros((sos.shape[0], 2))

    def process(self, block):
        """Streaming filter application; state persists across calls."""
        out, self._zi = sps.sosfilt(self.sos, np.asarray(block, float),
                                    zi=self._zi)
        return out

    def apply(self, x):
        """One-shot filter of a whole signal from zero state."""
        return sps.sosfilt(self.sos, np.asarray(x, float))

    def response_db(self, freqs):
        _w, h = sps.sosfreqz(self.sos, worN=np.atleast_1d(freqs), fs=self.fs)
        return 20.0 * np.log10(np.maximum(np.abs(h), 1e-30))

    def reset(self):
        self._zi = np.zeros((self.sos.shape[0], 2))


def spl_dbc(x, fs):
    """C-weighted SPL of a stream at least one second long.

    Returns SPL_FLOOR_DB (with a warning) for digital silence. The first
    eighth of a second is dropped after filtering to let the weighting
    filter settle.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < fs:
        raise ConfigError(f"need at least 1 s of samples ({fs}), got {x.size}")
    y = CWeighting(fs).apply(x)
    warm = min(x.size // 4, int(fs) // 8)
    rms = float(np.sqrt(np.mean(y[warm:] ** 2)))
    if rms <= 10.0 ** ((SPL_FLOOR_DB - CAL_DB) / 20.0):
        warnings.warn("silent input, SPL floored", stacklevel=2)
        return SPL_FLOOR_DB
    return 20.0 * math.log10(rms) + CAL_DB


def spl_db(x):
    """Unweighted SPL of a block under the same calibration."""
    rms = float(np.sqrt(np.mean(np.square(np.asarray(x, dtype=np.float64)))))
    if rms <= 10.0 ** ((SPL_FLOOR_DB - CAL_DB) / 20.0):
        return SPL_FLOOR_DB
    return 20.0 * math.log10(rms) + CAL_DB


class StreamingSplMeter:
    """C-weighted SPL over a sliding window, fed block by block.

    Used by the telemetry path: the weighting filter state persists, so
    there is no restart transient, and the reading is the RMS of the last
    window_s seconds of weighted samples.
    """

    def __init__(self, fs, window_s=1.0):
        self.fs = int(fs)
        self._filt = CWeighting(fs)
        self._win = max(int(round(window_s * fs)), 1)
        self._buf = np.zeros(self._win)
        self._pos = 0
        self._filled = 0

    def push(self, block):
        y = self._filt.process(block)
        k = y.size
        if k == 0:
            return
        if k >= self._win:
            self._buf[:] = y[-self._win:]
            self._pos = 0
            self._filled = self._win
            return
        end = self._pos + k
        if end <= self._win:
            self._buf[self._pos:end] = y
        else:
            first = self._win - self._pos
            self._buf[self._pos:] = y[:first]
            self._buf[: end - self._win] = y[first:]
        self._pos = end % self._win
        self._filled = min(self._filled + k, self._win)

    def reading(self):
        """Current dBC, or the floor when no samples have arrived.

        Non-finite window contents (a tripped controller's last samples
        passing through) read as the floor until they age out; the fault
        itself is reported through the state machine, not here.
        """
        if self._filled == 0:
            return SPL_FLOOR_DB
        rms = float(np.sqrt(np.mean(self._buf[: self._filled] ** 2)))
        if not math.isfinite(rms):
            return SPL_FLOOR_DB
        if rms <= 10.0 ** ((SPL_FLOOR_DB - CAL_DB) / 20.0):
            return SPL_FLOOR_DB
        return 20.0 * math.log10(rms) + CAL_DB


@dataclass
class SpectrumEstimate:
    """Welch PSD with both linear density and dB views."""

    freqs: np.ndarray
    psd: np.ndarray
    psd_linear: np.ndarray
    window: str
    segment_len: int
    overlap: float

    @property
    def df(self):
        return float(self.freqs[1] - self.freqs[0])

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["freq_hz", "psd_db"])
            for fr, p in zip(self.freqs, self.psd):
                w.writerow([f"{fr:.6f}", f"{p:.6f}"])


def welch_psd(x, fs, segment_len=4096, overlap=0.5):
    """Hann-windowed averaged periodogram (power density, re full scale)."""
    x = np.asarray(x, dtype=np.float64)
    if segment_len < 2 or segment_len & (segment_len - 1):
        raise ConfigError(
            f"segment_len must be a power of two, got {segment_len}")
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must be in [0, 1), got {overlap}")
    hop = int(segment_len * (1.0 - overlap))
    if x.size < segment_len + hop:
        raise ConfigError(
            f"need at least two segments ({segment_len + hop} samples), "
            f"got {x.size}")
    freqs, p = sps.welch(x, fs=fs, window="hann", nperseg=segment_len,
                         noverlap=segment_len - hop, detrend="constant",
                         scaling="density")
    return SpectrumEstimate(
        freqs=freqs,
        psd=10.0 * np.log10(np.maximum(p, 1e-30)),
        psd_linear=p,
        window="hann",
        segment_len=segment_len,
        overlap=overlap,
    )


def band_edges(center):
    """Third-octave band edges for a center frequency."""
    return center * 2.0 ** (-1.0 / 6.0), center * 2.0 ** (1.0 / 6.0)


def band_power(spec, lo, hi):
    """Integrated PSD over [lo, hi): bin powers summed at bin resolution.

    Each bin belongs to exactly one band, so band powers plus the
    out-of-band remainder add up to the total signal power.
    """
    mask = (spec.freqs >= lo) & (spec.freqs < hi)
    n = int(np.count_nonzero(mask))
    if n == 0:
        return 0.0, 0
    return float(np.sum(spec.psd_linear[mask]) * spec.df), n


@dataclass
class ThirdOctaveReport:
    """Per-band SPL off/on and the reduction, nominal centers."""

    centers: tuple
    band_spl_off: list
    band_spl_on: list
    reduction: list
    valid: list = field(default_factory=list)

    def mean_reduction(self, lo_center=None, hi_center=None):
        """Mean reduction over valid bands within [lo_center, hi_center]."""
        vals = [r for c, r, v in zip(self.centers, self.reduction, self.valid)
                if v
                and (lo_center is None or c >= lo_center)
                and (hi_center is None or c <= hi_center)]
        if not vals:
            raise ConfigError("no valid bands in requested range")
        return float(np.mean(vals))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["center_hz", "off_db", "on_db", "reduction_db",
                        "valid"])
            for c, o, on, r, v in zip(self.centers, self.band_spl_off,
                                      self.band_spl_on, self.reduction,
                                      self.valid):
                w.writerow([c, f"{o:.4f}", f"{on:.4f}", f"{r:.4f}", int(v)])

    def to_dict(self):
        return {
            "centers_hz": list(self.centers),
            "band_spl_off_db": [round(v, 6) for v in self.band_spl_off],
            "band_spl_on_db": [round(v, 6) for v in self.band_spl_on],
            "reduction_db": [round(v, 6) for v in self.reduction],
            "valid": [bool(v) for v in self.valid],
        }

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)


def _power_db(p):
    if p <= 0.0:
        return SPL_FLOOR_DB
    return 10.0 * math.log10(p) + CAL_DB


def third_octave_reduction(off, on, fs, segment_len=4096, overlap=0.5,
                           centers=NOMINAL_CENTERS):
    """Band-by-band reduction between two equal-calibration recordings.

    A band is invalid when the PSD resolution leaves it without bins.
    """
    off = np.asarray(off, dtype=np.float64)
    on = np.asarray(on, dtype=np.float64)
    if off.size != on.size:
        raise ConfigError("off/on streams must have equal length")
    s_off = welch_psd(off, fs, segment_len, overlap)
    s_on = welch_psd(on, fs, segment_len, overlap)
    spl_off, spl_on, red, valid = [], [], [], []
    for c in centers:
        lo, hi = band_edges(c)
        p_off, n_off = band_power(s_off, lo, hi)
        p_on, _n_on = band_power(s_on, lo, hi)
        ok = n_off >= 2 and hi < fs / 2.0
        valid.append(ok)
        spl_off.append(_power_db(p_off) if ok else float("nan"))
        spl_on.append(_power_db(p_on) if ok else float("nan"))
        red.append(spl_off[-1] - spl_on[-1] if ok else float("nan"))
    return ThirdOctaveReport(tuple(centers), spl_off, spl_on, red, valid)


def harmonic_ratio(x, fs, fundamental, k_max=5, segment_len=4096,
                   overlap=0.5):
    """Harmonic levels relative to the fundamental, in dB.

    Powers are summed over a +/-1-bin neighborhood of each k*f0 line.
    Harmonics at or above Nyquist are skipped. Returns {k: dB} for
    k = 2..k_max.
    """
    if fundamental <= 0.0:
        raise ConfigError("fundamental must be positive")
    spec = welch_psd(x, fs, segment_len, overlap)
    df = spec.df
    if fundamental < 2.0 * df:
        raise ConfigError(
            f"fundamental {fundamental} Hz not resolvable at {df:.2f} Hz bins")

    def line_power(f):
        idx = int(round(f / df))
        lo = max(idx - 1, 0)
        hi = min(idx + 2, spec.psd_linear.size)
        return float(np.sum(spec.psd_linear[lo:hi]) * df)

    p1 = line_power(fundamental)
    if p1 <= 0.0:
        raise ConfigError("no power at the fundamental")
    out = {}
    for k in range(2, k_max + 1):
        fk = k * fundamental
        if fk >= fs / 2.0:
            continue
        out[k] = 10.0 * math.log10(max(line_power(fk), 1e-30) / p1)
    return out


def noise_reduction_db(off, on, fs):
    """Broadband C-weighted reduction: spl_dbc(off) - spl_dbc(on)."""
    return spl_dbc(off, fs) - spl_dbc(on, fs)
