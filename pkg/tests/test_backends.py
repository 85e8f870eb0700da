"""The compiled and interpreted kernel backends must agree bit for bit."""

import hashlib
import json
import os
import subprocess
import sys

from anmsim import kernels

_DOC = {
    "schema_version": 1,
    "sample_rate": 4000,
    "duration_s": 4.0,
    "seed": 23,
    "plant": {
        "sources": [{"kind": "tone", "tones": [[150.0, 1.0, 0.0]]},
                    {"kind": "white", "amplitude": 0.001}],
        "units": [{"saturation": {"kind": "hard-clip", "limit": 2.0}}],
        "source_paths": [[{"delay": 12, "gain": 1.0},
                          {"delay": 3, "gain": 1.0}]],
        "unit_paths": [[{"delay": 4, "gain": 0.8}]],
    },
    "units": [{"mode": "feedforward", "algorithm": "mov_fxlms",
               "mu": 0.05, "rho": 0.6, "filter_len": 64, "frame_len": 32,
               "calibration": {"amplitude": 2.0, "duration_s": 2.0,
                               "model_order": 12, "mu_id": 0.02}}],
    "metrics": {"psd": False, "third_octave": False,
                "write_signals": False},
}

_CHILD = r"""
import hashlib, json, sys
from anmsim import kernels
from anmsim.runner import run_scenario
from anmsim.scenario import parse_scenario

doc = json.loads(sys.stdin.read())
res = run_scenario(parse_scenario(doc, name="backend-parity"))
blob = json.dumps(res.summary, sort_keys=True).encode()
print(json.dumps({"numba": kernels.NUMBA_ENABLED,
                  "digest": hashlib.sha256(blob).hexdigest()}))
"""


def _run_child(disable):
    env = dict(os.environ)
    env["ANMSIM_DISABLE_NUMBA"] = "1" if disable else ""
    out = subprocess.run([sys.executable, "-c", _CHILD],
                         input=json.dumps(_DOC), env=env, timeout=300,
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    return json.loads(out.stdout)


def test_interpreted_backend_matches_compiled():
    assert kernels.NUMBA_ENABLED, "compiled backend expected in-process"
    compiled = _run_child(disable=False)
    interpreted = _run_child(disable=True)
    assert compiled["numba"] is True
    assert interpreted["numba"] is False
    assert compiled["digest"] == interpreted["digest"]
