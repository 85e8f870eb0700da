"""Signal sources and small streaming DSP blocks.

Generators are deterministic functions of (seed, sample index): regenerating
any block at any offset yields the same samples, so batch and streaming use
are interchangeable.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AliasingError, ConfigError, SignalFaultError

DEFAULT_FS = 8000

# genset default spectrum: firing fundamental plus two harmonics and a
# broadband floor, levels relative to the fundamental
GENSET_F0 = 77.0
GENSET_HARMONICS = ((1, 0.0), (2, -10.0), (3, -16.0))
GENSET_FLOOR_DB = -40.0


def _check_freq(freq, fs):
    if freq <= 0.0:
        raise ConfigError(f"frequency must be positive, got {freq}")
    if freq >= fs / 2.0:
        raise AliasingError(
            f"frequency {freq} Hz at or above Nyquist for fs={fs}"
        )


def _splitmix64(idx, seed):
    """Counter-based generator: uniform [0,1) from (seed, sample index).

    Stateless, so any sub-range of the stream can be produced on demand.
    uint64 arithmetic wraps mod 2^64 by construction.
    """
    z = np.uint64(seed) + (idx + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def white_block(seed, start, count):
    """Uniform white noise in [-1, 1), element i depending only on start+i."""
    idx = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        u = _splitmix64(idx, seed)
    return 2.0 * u - 1.0


@dataclass
class SignalGen:
    """Deterministic block generator for one acoustic source.

    kind: "tone" | "multi_tone" | "white" | "genset"
    tones: list of (freq_hz, amplitude, phase_rad) for tone kinds
    amplitude: overall scale (white: peak; genset: fundamental amplitude)
    """

    kind: str = "tone"
    fs: int = DEFAULT_FS
    amplitude: float = 1.0
    tones: list = field(default_factory=list)
    seed: int = 0
    genset_f0: float = GENSET_F0
    genset_harmonics: tuple = GENSET_HARMONICS
    genset_floor_db: float = GENSET_FLOOR_DB

    def __post_init__(self):
        if self.fs <= 0:
            raise ConfigError(f"fs must be positive, got {self.fs}")
        if self.kind not in ("tone", "multi_tone", "white", "genset"):
            raise ConfigError(f"unknown signal kind {self.kind!r}")
        if self.kind in ("tone", "multi_tone"):
            if not self.tones:
                raise ConfigError(f"{self.kind} generator needs tones")
            if self.kind == "tone" and len(self.tones) != 1:
                raise ConfigError("tone generator takes exactly one tone")
            for f, _a, _p in self.tones:
                _check_freq(f, self.fs)
        if self.kind == "genset":
            for mult, _db in self.genset_harmonics:
                _check_freq(self.genset_f0 * mult, self.fs)

    def block(self, start, count):
        """Samples [start, start+count) as float64."""
        n = np.arange(start, start + count, dtype=np.float64)
        t = n / self.fs
        if self.kind in ("tone", "multi_tone"):
            out = np.zeros(count)
            for f, a, ph in self.tones:
                out += a * np.sin(2.0 * math.pi * f * t + ph)
            return self.amplitude * out
        if self.kind == "white":
            return self.amplitude * white_block(self.seed, start, count)
        # genset: harmonic stack plus low-level broadband floor
        out = np.zeros(count)
        for mult, db in self.genset_harmonics:
            a = 10.0 ** (db / 20.0)
            out += a * np.sin(2.0 * math.pi * self.genset_f0 * mult * t)
        floor = 10.0 ** (self.genset_floor_db / 20.0)
        out += floor * white_block(self.seed, start, count)
        return self.amplitude * out


@dataclass
class SampleFrame:
    """A labelled block of samples with its position in the global stream."""

    data: np.ndarray
    start: int
    fs: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise SignalFaultError(
                f"non-finite sample in frame starting at {self.start}"
            )

    @property
    def count(self):
        return self.data.shape[0]


class FirFilter:
    """Streaming FIR filter; feeding blocks matches one-shot filtering.

    Keeps the last taps-1 input samples so successive process() calls
    produce exactly what a single call over the concatenated input would.
    """

    def __init__(self, taps):
        taps = np.asarray(taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise ConfigError("FIR taps must be a non-empty 1-d array")
        self.taps = taps
        self._hist = np.zeros(taps.size - 1)

    def process(self, block):
        block = np.asarray(block, dtype=np.float64)
        buf = np.concatenate([self._hist, block])
        out = np.convolve(buf, self.taps, mode="full")[
            self._hist.size : self._hist.size + block.size
        ]
        if self.taps.size > 1:
            keep = self.taps.size - 1
            self._hist = buf[-keep:].copy()
        return out

    def reset(self):
        self._hist = np.zeros(self.taps.size - 1)


class DelayLine:
    """Integer-sample delay with zero initial state."""

    def __init__(self, delay):
        if delay < 0:
            raise ConfigError(f"delay must be >= 0, got {delay}")
        self.delay = int(delay)
        self._hist = np.zeros(self.delay)

    def process(self, block):
        block = np.asarray(block, dtype=np.float64)
        if self.delay == 0:
            return block.copy()
        buf = np.concatenate([self._hist, block])
        out = buf[: block.size].copy()
        self._hist = buf[block.size :].copy()
        return out

    def reset(self):
        self._hist = np.zeros(self.delay)


def write_f32(path, samples):
    """Raw dump: 32-bit float little-endian mono, no header."""
    np.asarray(samples, dtype="<f4").tofile(str(path))


def write_wav(path, samples, fs):
    """Mono IEEE-float WAV for listening checks (format tag 3).

    The stdlib wave module only writes integer PCM headers, so the 44-byte
    header is assembled directly.
    """
    data = np.asarray(samples, dtype="<f4").tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, 3, 1, int(fs), int(fs) * 4, 4, 32,
        b"data", len(data),
    )
    with open(str(path), "wb") as f:
        f.write(hdr)
        f.write(data)
