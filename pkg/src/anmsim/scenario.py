"""Scenario files: schema validation and construction of runnable objects.

A scenario JSON is the single input to a headless run or a served
session. Validation is strict (unknown fields are rejected) and
failures report JSON pointers to the offending nodes. The parsed
config is canonicalized so its hash identifies the run.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .errors import AnmError, ConfigError, SchemaError
from .plant import Plant, PlantTopology, PathModel, SaturationModel, UnitPlacement
from .signals import (
    GENSET_F0,
    GENSET_FLOOR_DB,
    GENSET_HARMONICS,
    SignalGen,
)

_SCHEMA = None

# defaults filled in for optional controller fields
DEFAULT_MU = 0.05
DEFAULT_FILTER_LEN = 128
DEFAULT_FRAME_LEN = 64
DEFAULT_CAL_AMPLITUDE = 1.0
DEFAULT_CAL_DURATION_S = 8.0
DEFAULT_CAL_ORDER = 16
DEFAULT_CAL_MU_ID = 0.02


def _schema():
    global _SCHEMA
    if _SCHEMA is None:
        text = (
            resources.files("anmsim") / "schemas" / "scenario.schema.json"
        ).read_text()
        _SCHEMA = json.loads(text)
    return _SCHEMA


def _pointer(err) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def validate_scenario(doc) -> None:
    """Schema-check a scenario document; SchemaError lists every violation."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=_pointer)
    if errors:
        raise SchemaError(
            "scenario does not match schema",
            pointers=[f"{_pointer(e)}: {e.message}" for e in errors],
        )


@dataclass
class CalibrationConfig:
    amplitude: float = DEFAULT_CAL_AMPLITUDE
    duration_s: float = DEFAULT_CAL_DURATION_S
    model_order: int = DEFAULT_CAL_ORDER
    mu_id: float = DEFAULT_CAL_MU_ID
    seed: int = 0


@dataclass
class UnitConfig:
    """Controller settings for one unit, defaults resolved."""

    mode: str
    algorithm: str = "mov_fxlms"
    mu: float = DEFAULT_MU
    rho: float = math.inf
    filter_len: int = DEFAULT_FILTER_LEN
    frame_len: int = DEFAULT_FRAME_LEN
    normalize: bool = True
    reference_source: int = 0
    auto_start: bool = True
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)


@dataclass
class MetricsConfig:
    psd: bool = True
    third_octave: bool = True
    harmonics_fundamental: float = 0.0
    harmonics_k_max: int = 5
    steady_state_fraction: float = 0.25
    segment_len: int = 4096
    write_signals: bool = True


@dataclass
class TelemetryConfig:
    cadence_hz: float = 10.0
    bands: bool = False
    bands_every_s: float = 1.0


def _build_source(spec, fs, scenario_seed, idx):
    kind = spec["kind"]
    kw = {
        "kind": kind,
        "fs": fs,
        "amplitude": spec.get("amplitude", 1.0),
        "seed": spec.get("seed", scenario_seed + 100 + idx),
    }
    if kind in ("tone", "multi_tone"):
        kw["tones"] = [tuple(t) for t in spec.get("tones", [])]
    if kind == "genset":
        g = spec.get("genset", {})
        kw["genset_f0"] = g.get("f0", GENSET_F0)
        kw["genset_harmonics"] = tuple(
            tuple(h) for h in g.get("harmonics", GENSET_HARMONICS)
        )
        kw["genset_floor_db"] = g.get("floor_db", GENSET_FLOOR_DB)
    try:
        gen = SignalGen(**kw)
    except AnmError as e:
        raise ConfigError(f"/plant/sources/{idx}: {e}") from e
    pos = spec.get("position")
    return gen, tuple(pos) if pos is not None else None


def _build_paths(rows):
    if rows is None:
        return None
    return [
        [
            PathModel(
                delay=p.get("delay", 0),
                gain=p.get("gain", 1.0),
                fir=p.get("fir"),
            )
            for p in row
        ]
        for row in rows
    ]


class ScenarioConfig:
    """A validated scenario plus typed views of its parts.

    Construction performs the semantic checks the schema cannot express
    (list length agreement, index ranges, power-of-two constraints).
    """

    def __init__(self, doc, name=None):
        validate_scenario(doc)
        self.doc = doc
        self.name = doc.get("name", name or "scenario")
        self.sample_rate = int(doc["sample_rate"])
        self.duration_s = float(doc["duration_s"])
        self.seed = int(doc["seed"])
        self.speed_of_sound = float(doc.get("speed_of_sound", 343.0))

        plant = doc["plant"]
        n_sources = len(plant["sources"])
        n_units = len(plant.get("units", []))
        ctl = doc["units"]
        if len(ctl) != n_units:
            raise ConfigError(
                f"/units: {len(ctl)} controller entries for "
                f"{n_units} plant units"
            )
        if (plant.get("source_paths") is None) != (
            plant.get("unit_paths") is None
        ):
            raise ConfigError(
                "/plant: source_paths and unit_paths must be given together"
            )

        self.units = []
        for i, u in enumerate(ctl):
            ref = u.get("reference_source", 0)
            if ref >= n_sources:
                raise ConfigError(
                    f"/units/{i}/reference_source: no source {ref} "
                    f"(have {n_sources})"
                )
            cal = u.get("calibration", {})
            rho = u.get("rho")
            self.units.append(UnitConfig(
                mode=u["mode"],
                algorithm=u.get("algorithm", "mov_fxlms"),
                mu=u.get("mu", DEFAULT_MU),
                rho=math.inf if rho is None else float(rho),
                filter_len=u.get("filter_len", DEFAULT_FILTER_LEN),
                frame_len=u.get("frame_len", DEFAULT_FRAME_LEN),
                normalize=u.get("normalize", True),
                reference_source=ref,
                auto_start=u.get("auto_start", True),
                calibration=CalibrationConfig(
                    amplitude=cal.get("amplitude", DEFAULT_CAL_AMPLITUDE),
                    duration_s=cal.get("duration_s", DEFAULT_CAL_DURATION_S),
                    model_order=cal.get("model_order", DEFAULT_CAL_ORDER),
                    mu_id=cal.get("mu_id", DEFAULT_CAL_MU_ID),
                    seed=cal.get("seed", self.seed + 7000 + i),
                ),
            ))

        m = doc.get("metrics", {})
        harm = m.get("harmonics", {})
        self.metrics = MetricsConfig(
            psd=m.get("psd", True),
            third_octave=m.get("third_octave", True),
            harmonics_fundamental=harm.get("fundamental", 0.0),
            harmonics_k_max=harm.get("k_max", 5),
            steady_state_fraction=m.get("steady_state_fraction", 0.25),
            segment_len=m.get("segment_len", 4096),
            write_signals=m.get("write_signals", True),
        )
        seg = self.metrics.segment_len
        if seg & (seg - 1):
            raise ConfigError(
                f"/metrics/segment_len: {seg} is not a power of two"
            )
        mc = self.metrics
        if mc.psd or mc.third_octave or mc.harmonics_fundamental > 0:
            steady = round(mc.steady_state_fraction * self.duration_s
                           * self.sample_rate)
            # spectral estimates average at least two half-overlapped
            # segments, so the steady window must cover 1.5 segments
            need = seg + seg // 2
            if steady < need:
                raise ConfigError(
                    f"/metrics/segment_len: steady-state window holds "
                    f"{steady} samples but the requested spectra need "
                    f"{need}; shorten segment_len or lengthen the run"
                )

        t = doc.get("telemetry", {})
        self.telemetry = TelemetryConfig(
            cadence_hz=t.get("cadence_hz", 10.0),
            bands=t.get("bands", False),
            bands_every_s=t.get("bands_every_s", 1.0),
        )

        # construct once eagerly so bad configs fail at load, not mid-run
        self.build_plant()

    @property
    def n_units(self):
        return len(self.units)

    def build_topology(self) -> PlantTopology:
        plant = self.doc["plant"]
        sources = [
            _build_source(s, self.sample_rate, self.seed, i)
            for i, s in enumerate(plant["sources"])
        ]
        units = []
        for u in plant.get("units", []):
            sat = u.get("saturation", {})
            sp = u.get("source_position")
            mp = u.get("mic_position")
            units.append(UnitPlacement(
                source_pos=tuple(sp) if sp is not None else None,
                mic_pos=tuple(mp) if mp is not None else None,
                saturation=SaturationModel(
                    kind=sat.get("kind", "none"),
                    limit=sat.get("limit", 1.0),
                ),
            ))
        return PlantTopology(
            sources=sources,
            units=units,
            monitor_mics=[tuple(p) for p in plant.get("monitor_mics", [])],
            sample_rate=self.sample_rate,
            speed_of_sound=self.speed_of_sound,
            source_paths=_build_paths(plant.get("source_paths")),
            unit_paths=_build_paths(plant.get("unit_paths")),
        )

    def build_plant(self) -> Plant:
        return Plant(self.build_topology())

    def canonical_json(self) -> bytes:
        return json.dumps(
            self.doc, sort_keys=True, separators=(",", ":"),
            allow_nan=False,
        ).encode()

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json()).hexdigest()


def parse_scenario(doc, name=None) -> ScenarioConfig:
    return ScenarioConfig(doc, name=name)


def load_scenario(path) -> ScenarioConfig:
    """Load and validate a scenario file."""
    try:
        with open(str(path)) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path} is not valid JSON: {e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e}") from e
    base = os.path.splitext(os.path.basename(str(path)))[0]
    return ScenarioConfig(doc, name=base)


def list_bundled():
    """Names of the scenario files shipped with the package."""
    root = resources.files("anmsim") / "scenarios"
    return sorted(
        p.name[: -len(".json")]
        for p in root.iterdir()
        if p.name.endswith(".json")
    )


def load_bundled(name) -> ScenarioConfig:
    root = resources.files("anmsim") / "scenarios"
    path = root / f"{name}.json"
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(
            f"no bundled scenario {name!r}; have {', '.join(list_bundled())}"
        ) from None
    return ScenarioConfig(doc, name=name)
