"""Timing comparison of the compiled and interpreted kernel backends.

The backend is chosen at import time by ANMSIM_DISABLE_NUMBA, so the
script re-runs itself in two child processes, one per backend, and
collates their timings. Each child also reports a digest of the signals
it produced; the digests must match, demonstrating that the speedup does
not change a single bit of output.

Usage: python benchmarks/bench_kernels.py [--duration-s 4.0]
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def scenario_doc(duration_s):
    return {
        "schema_version": 1,
        "sample_rate": 8000,
        "duration_s": duration_s,
        "seed": 23,
        "plant": {
            "sources": [{"kind": "multi_tone", "amplitude": 1.5,
                         "tones": [[63.0, 0.5, 0.0], [77.0, 1.0, 0.0],
                                   [100.0, 0.4, 1.0]]},
                        {"kind": "white", "amplitude": 0.01}],
            "units": [{"saturation": {"kind": "tanh-soft", "limit": 4.0}},
                      {"saturation": {"kind": "tanh-soft", "limit": 4.0}}],
            "source_paths": [
                [{"delay": 20, "gain": 1.0}, {"delay": 3, "gain": 1.0}],
                [{"delay": 22, "gain": 0.9}, {"delay": 3, "gain": 1.0}],
            ],
            "unit_paths": [
                [{"delay": 5, "gain": 0.9}, {"delay": 11, "gain": 0.2}],
                [{"delay": 11, "gain": 0.2}, {"delay": 6, "gain": 0.9}],
            ],
        },
        "units": [
            {"mode": "feedback", "algorithm": "mov_fxlms", "mu": 0.05,
             "rho": 2.0, "filter_len": 128, "frame_len": 64,
             "calibration": {"amplitude": 1.5, "duration_s": 2.0,
                             "model_order": 16, "mu_id": 0.02}},
            {"mode": "feedback", "algorithm": "mov_fxlms", "mu": 0.05,
             "rho": 2.0, "filter_len": 128, "frame_len": 64,
             "calibration": {"amplitude": 1.5, "duration_s": 2.0,
                             "model_order": 16, "mu_id": 0.02}},
        ],
        "metrics": {"psd": False, "third_octave": False,
                    "write_signals": False},
    }


def child(duration_s):
    import numpy as np

    from anmsim import kernels
    from anmsim.runner import SimEngine
    from anmsim.scenario import parse_scenario

    fs = 8000
    eng = SimEngine(parse_scenario(scenario_doc(duration_s)))

    # calibration phase exercises sysid_block
    for u in (0, 1):
        assert eng.apply_command(u, {"cmd": "calibrate"})["ok"]
    t0 = time.perf_counter()
    while any(m.state == "calibrating" for m in eng.machines):
        eng.advance()
    t_cal = time.perf_counter() - t0
    cal_samples = eng.sample_index

    # main phase exercises the coupled controller/plant frame kernel
    for u in (0, 1):
        assert eng.apply_command(u, {"cmd": "set_mode",
                                     "mode": "feedback"})["ok"]
    n = int(duration_s * fs)
    eng.attach_recorder(n)
    s0 = eng.sample_index
    t0 = time.perf_counter()
    while eng.sample_index - s0 < n:
        eng.advance()
    t_run = time.perf_counter() - t0

    digest = hashlib.sha256(
        np.ascontiguousarray(eng.recording["mic"]).tobytes()).hexdigest()
    print(json.dumps({
        "backend": "numba" if kernels.NUMBA_ENABLED else "interpreted",
        "calibration_s": t_cal,
        "calibration_samples": cal_samples,
        "run_s": t_run,
        "run_samples": n,
        "digest": digest,
    }))


def spawn(duration_s, disable):
    env = dict(os.environ)
    env["ANMSIM_DISABLE_NUMBA"] = "1" if disable else ""
    out = subprocess.run(
        [sys.executable, __file__, "--child",
         "--duration-s", str(duration_s)],
        env=env, capture_output=True, text=True)
    if out.returncode != 0:
        sys.stderr.write(out.stderr)
        raise SystemExit(out.returncode)
    return json.loads(out.stdout.splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration-s", type=float, default=4.0,
                    help="simulated seconds for the main phase")
    ap.add_argument("--child", action="store_true",
                    help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.child:
        child(args.duration_s)
        return

    print(f"two feedback units, fs 8000, {args.duration_s:g} s simulated; "
          f"first numba timing includes JIT compilation on a cold cache")
    results = []
    for disable in (False, True):
        r = spawn(args.duration_s, disable)
        results.append(r)
        print(f"  {r['backend']}: measured")

    print()
    print(f"{'backend':<12} {'phase':<12} {'wall s':>9} {'samples/s':>12}")
    walls = {}
    for r in results:
        for phase in ("calibration", "run"):
            wall = r[f"{phase}_s"]
            sps = r[f"{phase}_samples"] / wall
            print(f"{r['backend']:<12} {phase:<12} {wall:>9.3f} "
                  f"{sps:>12,.0f}")
            walls.setdefault(phase, {})[r["backend"]] = wall
    print()
    for phase, t in walls.items():
        print(f"{phase}: numba is {t['interpreted'] / t['numba']:.1f}x "
              f"faster")
    same = results[0]["digest"] == results[1]["digest"]
    print(f"identical output signals: {'yes' if same else 'NO'}")
    if not same:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
