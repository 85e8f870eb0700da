"""Command line entry point: run, serve, and sweep scenarios.

Exit codes: 0 clean run, 2 bad scenario or grid (with JSON-pointer
diagnostics where available), 3 controller fault during a run, 4 serve
port already taken. Log verbosity comes from the ANMSIM_LOG env var
(debug/info/warning/error; default warning).
"""

import argparse
import json
import logging
import os
import sys

from .errors import AnmError, ConfigError, SchemaError
from .runner import run_scenario
from .scenario import list_bundled, load_bundled, load_scenario
from .sweep import sweep_grid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAULT = 3
EXIT_PORT_BUSY = 4

log = logging.getLogger("anmsim")


def _resolve_scenario(ref):
    """A scenario argument is a file path or a bundled scenario name."""
    if os.path.exists(ref):
        return load_scenario(ref)
    name = ref[:-5] if ref.endswith(".json") else ref
    if name in list_bundled():
        return load_bundled(name)
    raise ConfigError(
        f"no such scenario file or bundled name: {ref!r} "
        f"(bundled: {', '.join(list_bundled())})")


def _cmd_run(args):
    config = _resolve_scenario(args.scenario)
    print(f"scenario {config.name} "
          f"({config.sample_rate} Hz, {config.duration_s:g} s, "
          f"{config.n_units} unit{'s' if config.n_units != 1 else ''}, "
          f"hash {config.config_hash()[:12]})")
    res = run_scenario(config, out_dir=args.out)
    s = res.summary
    for c in s["calibration"]:
        print(f"unit {c['unit']} calibrated: path gain {c['gs']:.4f}, "
              f"model error {c['misalignment_db']:+.1f} dB")
    for u in s["units"]:
        line = (f"unit {u['unit']}: {u['state']}"
                + (f", fault: {u['fault_reason']}" if u["faulted"] else ""))
        if "y2_over_rho2" in u:
            line += f", output power at {100 * u['y2_over_rho2']:.0f}% of limit"
        print(line)
    for m in s["mics"]:
        print(f"{m['role']} mic {m['mic']}: {m['reduction_db']:+.2f} dB "
              f"({m['spl_off_dbc']:.1f} -> {m['spl_on_dbc']:.1f} dBC)")
    if res.summary_path:
        print(f"summary: {res.summary_path}")
    if res.faulted:
        reasons = [u["fault_reason"] for u in s["units"] if u["faulted"]]
        print(f"controller fault: {'; '.join(reasons)}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def _cmd_serve(args):
    # imported late so run/sweep work without the server dependencies
    from .controlplane.server import SimServer

    config = _resolve_scenario(args.scenario)
    server = SimServer(config, host=args.host, tcp_port=args.tcp,
                       http_port=args.http, speed=args.speed,
                       out_dir=args.out, static_dir=args.static)
    port = server.busy_port()
    if port is not None:
        print(f"port {port} is already in use", file=sys.stderr)
        return EXIT_PORT_BUSY
    print(f"serving {config.name}: tcp {args.host}:{args.tcp}, "
          f"http {args.host}:{args.http}, speed {args.speed:g}")
    return server.run()


def _cmd_sweep(args):
    try:
        with open(args.grid) as f:
            grid_doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read grid file: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"grid file is not valid JSON: {e}")
    if not isinstance(grid_doc, dict) or "scenario" not in grid_doc:
        raise ConfigError(
            'grid file must be an object with "scenario" plus optional '
            '"params" and "d_over_lambda"')
    extra = set(grid_doc) - {"scenario", "params", "d_over_lambda"}
    if extra:
        raise ConfigError(f"unknown grid keys: {sorted(extra)}")
    config = _resolve_scenario(grid_doc["scenario"])
    params = grid_doc.get("params", {})
    if not isinstance(params, dict) or not all(
            isinstance(v, list) for v in params.values()):
        raise ConfigError('"params" must map names to value lists')
    dl = grid_doc.get("d_over_lambda", [])
    rows = sweep_grid(config, params, d_over_lambda=dl, out_csv=args.out,
                      progress=None if args.quiet else print,
                      jobs=args.jobs)
    print(f"{len(rows)} rows" + (f" -> {args.out}" if args.out else ""))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="anmsim",
        description="Adaptive noise mitigation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario headlessly")
    run.add_argument("scenario", help="scenario file or bundled name")
    run.add_argument("--out", default=None,
                     help="artifact directory (default: no artifacts)")
    run.set_defaults(fn=_cmd_run)

    serve = sub.add_parser("serve", help="host the control plane")
    serve.add_argument("scenario", help="scenario file or bundled name")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--tcp", type=int, default=7788,
                       help="NDJSON envelope port (default 7788)")
    serve.add_argument("--http", type=int, default=8080,
                       help="HTTP/WebSocket port (default 8080)")
    serve.add_argument("--speed", type=float, default=1.0,
                       help="simulated seconds per wall second; 0 pauses")
    serve.add_argument("--out", default=None,
                       help="directory for the telemetry log")
    serve.add_argument("--static", default=None,
                       help="static asset directory to serve at /")
    serve.set_defaults(fn=_cmd_serve)

    sweep = sub.add_parser("sweep", help="run a parameter grid")
    sweep.add_argument("grid", help="grid spec JSON file")
    sweep.add_argument("--out", default=None, help="output CSV path")
    sweep.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes (default 1)")
    sweep.add_argument("--quiet", action="store_true")
    sweep.set_defaults(fn=_cmd_sweep)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging,
                      os.environ.get("ANMSIM_LOG", "warning").upper(),
                      logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SchemaError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AnmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
