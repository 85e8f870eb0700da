"""Virtual acoustic environment.

Noise sources, propagation paths, output saturation, mitigation units and
microphones, advanced in lockstep with the controllers one sample at a
time. Paths are delay + gain + optional FIR; free-field geometry derives
them from positions. A phasor model of the two-monopole arrangement backs
the spatial (d over lambda) studies.

Microphone ordering convention: error mics first, one per unit in unit
order, then the monitor mics.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError

SPEED_OF_SOUND = 343.0
R_MIN = 0.05

_SAT_KINDS = {
    "none": kernels.SAT_NONE,
    "hard-clip": kernels.SAT_HARD,
    "tanh-soft": kernels.SAT_TANH,
}


@dataclass
class PathModel:
    """Propagation path: composite response = gain * (delay o fir)."""

    delay: int = 0
    gain: float = 1.0
    fir: np.ndarray = None

    def __post_init__(self):
        if self.delay < 0:
            raise ConfigError(f"path delay must be >= 0, got {self.delay}")
        if self.fir is None:
            self.fir = np.ones(1)
        self.fir = np.asarray(self.fir, dtype=np.float64)
        if self.fir.ndim != 1 or self.fir.size == 0:
            raise ConfigError("path FIR must be 1-d and non-empty")

    def composite(self):
        """Full impulse response including delay and gain."""
        out = np.zeros(self.delay + self.fir.size)
        out[self.delay :] = self.gain * self.fir
        return out


@dataclass
class SaturationModel:
    """Amplifier output stage: none, hard-clip, or tanh-soft."""

    kind: str = "none"
    limit: float = 1.0

    def __post_init__(self):
        if self.kind not in _SAT_KINDS:
            raise ConfigError(f"unknown saturation kind {self.kind!r}")
        if self.limit <= 0.0:
            raise ConfigError(f"saturation limit must be > 0, got {self.limit}")

    def apply(self, x):
        """Saturate a scalar or array."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "hard-clip":
            return np.clip(x, -self.limit, self.limit)
        if self.kind == "tanh-soft":
            return self.limit * np.tanh(x / self.limit)
        return x.copy()


def saturate(model, sample):
    """Pointwise saturation through a SaturationModel."""
    return model.apply(sample)


@dataclass
class UnitPlacement:
    """One mitigation unit: secondary source plus its error microphone."""

    source_pos: tuple = None
    mic_pos: tuple = None
    saturation: SaturationModel = field(default_factory=SaturationModel)


@dataclass
class PlantTopology:
    """Everything the plant needs: sources, units, mics and paths.

    Paths are either derived from positions (free field) or given
    explicitly as matrices indexed [mic][source] and [mic][unit], with
    mics ordered error-first then monitors.
    """

    sources: list
    units: list
    monitor_mics: list = field(default_factory=list)
    sample_rate: int = 8000
    speed_of_sound: float = SPEED_OF_SOUND
    source_paths: list = None
    unit_paths: list = None

    @property
    def n_mics(self):
        return len(self.units) + len(self.monitor_mics)

    def mic_positions(self):
        return [u.mic_pos for u in self.units] + list(self.monitor_mics)


def geometry_to_paths(src_positions, mic_positions, sample_rate,
                      speed_of_sound=SPEED_OF_SOUND):
    """Free-field point-to-point paths: delay round(fs*r/c), gain 1/r.

    Distances below R_MIN are clamped with a warning (monopole model
    breaks down at the source).
    """
    out = []
    for mp in mic_positions:
        row = []
        for sp in src_positions:
            r = math.dist(tuple(sp), tuple(mp))
            r_gain = r
            if r_gain < R_MIN:
                warnings.warn(
                    f"source/mic spacing {r:.3f} m below {R_MIN} m, "
                    "gain clamped", stacklevel=2)
                r_gain = R_MIN
            row.append(PathModel(
                delay=int(round(sample_rate * r / speed_of_sound)),
                gain=1.0 / r_gain,
            ))
        out.append(row)
    return out


def global_power_reduction(d_over_lambda):
    """Total radiated power ratio (dB) for the optimally driven pair.

    10*log10(1 - sinc^2(kd)) with kd = 2*pi*d/lambda and sinc x = sin x / x.
    Negative values mean net reduction; -inf as d/lambda -> 0.
    """
    if d_over_lambda <= 0.0:
        raise ConfigError("d_over_lambda must be > 0")
    kd = 2.0 * math.pi * d_over_lambda
    s = math.sin(kd) / kd
    ratio = 1.0 - s * s
    if ratio <= 0.0:
        return -math.inf
    return 10.0 * math.log10(ratio)


def _fibonacci_sphere(n):
    i = np.arange(n, dtype=np.float64) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def grid_power_reduction(d_over_lambda, n_points=2048, radius_wavelengths=200.0):
    """Numerical counterpart of global_power_reduction.

    Places the primary monopole at the origin and the secondary a distance
    d away, drives the secondary with the complex amplitude that minimizes
    power integrated over a far-field sphere, and reports the achieved
    power ratio in dB. Agreement with the analytic value validates the
    free-field model.
    """
    lam = 1.0
    d = d_over_lambda * lam
    k = 2.0 * math.pi / lam
    pts = _fibonacci_sphere(n_points) * (radius_wavelengths * lam)
    p_pos = np.array([0.0, 0.0, 0.0])
    s_pos = np.array([d, 0.0, 0.0])
    rp = np.linalg.norm(pts - p_pos, axis=1)
    rs = np.linalg.norm(pts - s_pos, axis=1)
    gp = np.exp(-1j * k * rp) / rp
    gs = np.exp(-1j * k * rs) / rs
    q = -np.vdot(gs, gp) / np.vdot(gs, gs)
    total = gp + q * gs
    ratio = float(np.sum(np.abs(total) ** 2) / np.sum(np.abs(gp) ** 2))
    if ratio <= 0.0:
        return -math.inf
    return 10.0 * math.log10(ratio)


class Plant:
    """Compiled simulation state for one PlantTopology.

    step_block() mixes caller-supplied unit emissions (saturated at the
    unit output) with the plant's own source signals and returns every
    microphone signal plus the source-only part (the true disturbance)
    for oracle checks.
    """

    def __init__(self, topology):
        topo = topology
        self.topology = topo
        self.fs = int(topo.sample_rate)
        self.n_sources = len(topo.sources)
        self.n_units = len(topo.units)
        self.n_mics = topo.n_mics
        if self.n_sources == 0:
            raise ConfigError("plant needs at least one source")
        if self.n_mics == 0:
            raise ConfigError("plant needs at least one microphone")
        self.generators = [s[0] for s in topo.sources]

        if topo.source_paths is None or topo.unit_paths is None:
            src_pos = [s[1] for s in topo.sources]
            unit_pos = [u.source_pos for u in topo.units]
            mic_pos = topo.mic_positions()
            if any(p is None for p in src_pos + unit_pos + mic_pos):
                raise ConfigError(
                    "positions required when paths are not explicit")
            sp = geometry_to_paths(src_pos, mic_pos, self.fs,
                                   topo.speed_of_sound)
            up = geometry_to_paths(unit_pos, mic_pos, self.fs,
                                   topo.speed_of_sound) if self.n_units else []
        else:
            sp = topo.source_paths
            up = topo.unit_paths
        if len(sp) != self.n_mics or any(len(r) != self.n_sources for r in sp):
            raise ConfigError("source path matrix must be [n_mics][n_sources]")
        if self.n_units and (len(up) != self.n_mics or any(
                len(r) != self.n_units for r in up)):
            raise ConfigError("unit path matrix must be [n_mics][n_units]")
        self._pack_paths(sp, up)

        nu = max(self.n_units, 1)
        self._sat_kind = np.zeros(nu, dtype=np.int64)
        self._sat_limit = np.ones(nu)
        for i, u in enumerate(topo.units):
            self._sat_kind[i] = _SAT_KINDS[u.saturation.kind]
            self._sat_limit[i] = u.saturation.limit
        self.reset()

    def _pack_paths(self, sp, up):
        def pack(rows, n_cols):
            n_rows = len(rows)
            flen = max((p.fir.size for r in rows for p in r), default=1)
            delay = np.zeros((n_rows, n_cols), dtype=np.int64)
            gain = np.zeros((n_rows, n_cols))
            fir = np.zeros((n_rows, n_cols, flen))
            fl = np.ones((n_rows, n_cols), dtype=np.int64)
            span = 1
            for i, r in enumerate(rows):
                for j, p in enumerate(r):
                    delay[i, j] = p.delay
                    gain[i, j] = p.gain
                    fir[i, j, : p.fir.size] = p.fir
                    fl[i, j] = p.fir.size
                    span = max(span, p.delay + p.fir.size)
            return delay, gain, fir, fl, span

        (self._ms_delay, self._ms_gain, self._ms_fir, self._ms_flen,
         s_span) = pack(sp, self.n_sources)
        if self.n_units:
            (self._mu_delay, self._mu_gain, self._mu_fir, self._mu_flen,
             u_span) = pack(up, self.n_units)
        else:
            self._mu_delay = np.zeros((self.n_mics, 1), dtype=np.int64)
            self._mu_gain = np.zeros((self.n_mics, 1))
            self._mu_fir = np.zeros((self.n_mics, 1, 1))
            self._mu_flen = np.ones((self.n_mics, 1), dtype=np.int64)
            u_span = 1
        self._s_size = kernels.next_pow2(s_span + 1)
        self._o_size = kernels.next_pow2(u_span + 1)
        self._sp = sp
        self._up = up

    def reset(self):
        """Rewind to sample 0 with silent history."""
        self._n = 0
        self._SRING = np.zeros((self.n_sources, self._s_size))
        self._ORING = np.zeros((max(self.n_units, 1), self._o_size))

    @property
    def sample_index(self):
        return self._n

    def error_mic_of(self, unit):
        """Mic index of a unit's error microphone (error mics come first)."""
        if not 0 <= unit < self.n_units:
            raise ConfigError(f"no unit {unit}")
        return unit

    def composite_path(self, mic, unit):
        """Linear impulse response from a unit's output to a microphone."""
        return self._up[mic][unit].composite()

    def source_block(self, start, count):
        """The plant's own source samples for [start, start+count)."""
        out = np.empty((self.n_sources, count))
        for i, g in enumerate(self.generators):
            out[i] = g.block(start, count)
        return out

    def step_block(self, emis_block):
        """Advance count samples; emis_block is [n_units, count].

        Returns (mic_block, true_block), both [n_mics, count]; true_block
        is the source-only superposition (disturbance with units silent).
        """
        emis_block = np.ascontiguousarray(emis_block, dtype=np.float64)
        if self.n_units:
            if emis_block.shape[0] != self.n_units:
                raise ConfigError(
                    f"expected {self.n_units} unit rows, "
                    f"got {emis_block.shape[0]}")
        else:
            emis_block = np.zeros((1, emis_block.shape[1]))
        nt = emis_block.shape[1]
        src = self.source_block(self._n, nt)
        mic = np.empty((self.n_mics, nt))
        true = np.empty((self.n_mics, nt))
        kernels.plant_block(
            self._n, nt, src, emis_block,
            self._SRING, self._s_size - 1, self._ORING, self._o_size - 1,
            self._sat_kind, self._sat_limit,
            self._ms_delay, self._ms_gain, self._ms_fir, self._ms_flen,
            self._mu_delay, self._mu_gain, self._mu_fir, self._mu_flen,
            mic, true,
        )
        self._n += nt
        return mic, true


def step_plant(plant, y_block):
    """Drive the plant one block and split mics into (error, monitor)."""
    mic, _true = plant.step_block(y_block)
    nu = plant.n_units
    return mic[:nu], mic[nu:]
