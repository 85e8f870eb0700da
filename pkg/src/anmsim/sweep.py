"""Parameter sweeps: grid runs over controller settings plus spatial
separation rows checked against the closed-form two-source result.

Each grid point is one full scenario run; a faulted point is recorded
and the sweep continues, so one unstable corner cannot take down the
whole table. Points are independent simulations, so with jobs > 1 they
run in a process pool; rows always come back in grid order.
"""

import concurrent.futures
import copy
import csv
import itertools
import math

from .errors import ConfigError
from .plant import global_power_reduction, grid_power_reduction
from .runner import run_scenario
from .scenario import ScenarioConfig

# controller parameters a sweep may vary, applied to every unit
SWEEP_PARAMS = ("mu", "rho", "filter_len")

CSV_COLUMNS = (
    "kind", "mu", "rho", "filter_len", "d_over_lambda",
    "reduction_db", "y2_over_rho2", "alpha_mean", "faulted",
    "sim_reduction_db", "oracle_reduction_db",
)


def _apply_point(doc, point):
    doc = copy.deepcopy(doc)
    for unit in doc["units"]:
        for k, v in point.items():
            unit[k] = v
    return doc


def _eval_point(doc, name, point):
    """One grid point, start to finish; must stay picklable for the pool."""
    try:
        config = ScenarioConfig(_apply_point(doc, point), name=name)
    except ConfigError as e:
        return {"faulted": 1, "error": str(e)}
    res = run_scenario(config, out_dir=None)
    s = res.summary
    err = [m["reduction_db"] for m in s["mics"] if m["role"] == "error"]
    ratios = [u["y2_over_rho2"] for u in s["units"] if "y2_over_rho2" in u]
    alphas = [u["alpha_mean"] for u in s["units"]]
    return {
        "reduction_db": round(sum(err) / len(err), 4) if err else "",
        "y2_over_rho2": round(max(ratios), 6) if ratios else "",
        "alpha_mean": round(max(alphas), 6) if alphas else "",
        "faulted": int(res.faulted),
    }


def sweep_grid(base_config, grid, d_over_lambda=(), out_csv=None,
               progress=None, jobs=1):
    """Run the cartesian grid and the spatial rows; returns the rows.

    grid maps parameter name -> list of values; every combination is
    applied to all units of the base scenario. d_over_lambda values
    produce spatial rows comparing the sampled-sphere power reduction
    with the analytic two-source curve.
    """
    for k in grid:
        if k not in SWEEP_PARAMS:
            raise ConfigError(
                f"cannot sweep {k!r}; choose from {SWEEP_PARAMS}")
        if not grid[k]:
            raise ConfigError(f"empty value list for {k!r}")
    jobs = max(1, int(jobs))

    names = sorted(grid)
    points = [dict(zip(names, values))
              for values in itertools.product(*(grid[k] for k in names))
              ] if names else []

    results = []
    if jobs > 1 and len(points) > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(jobs, len(points))) as pool:
            futs = [pool.submit(_eval_point, base_config.doc,
                                base_config.name, p) for p in points]
            for i, fut in enumerate(futs):
                results.append(fut.result())
                if progress:
                    progress(f"run {i + 1}/{len(points)} done")
    else:
        for i, point in enumerate(points):
            if progress:
                progress(f"run {i + 1}/{len(points)}: "
                         + ", ".join(f"{k}={point[k]}" for k in names))
            results.append(_eval_point(base_config.doc,
                                       base_config.name, point))

    rows = []
    for point, result in zip(points, results):
        row = {c: "" for c in CSV_COLUMNS}
        row["kind"] = "run"
        row.update(point)
        err = result.pop("error", None)
        if err and progress:
            progress(f"  rejected: {err}")
        row.update(result)
        rows.append(row)

    for dl in d_over_lambda:
        row = {c: "" for c in CSV_COLUMNS}
        row["kind"] = "spatial"
        row["d_over_lambda"] = dl
        sim = grid_power_reduction(dl)
        oracle = global_power_reduction(dl)
        row["sim_reduction_db"] = round(sim, 4)
        row["oracle_reduction_db"] = (
            round(oracle, 4) if math.isfinite(oracle) else oracle)
        rows.append(row)

    if out_csv is not None:
        with open(out_csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    return rows
