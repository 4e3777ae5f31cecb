"""Experiment matrix runner and cross-seed aggregation.

Output layout for ``run_matrix(config, out_dir)``::

    out_dir/<run_id>.jsonl   every event of one run, one JSON object per line
    out_dir/<run_id>.csv     the run's log rows (SUMMARY_COLUMNS)
    out_dir/aggregate.csv    one row per (method, env), AGGREGATE_COLUMNS

A run that raises still gets both files: the JSONL ends with an
``{"event": "error"}`` record and the CSV holds whatever rows were logged.
Floats are written with ``repr`` so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ExperimentConfig, RunConfig
from .planner import run_exploration

__all__ = [
    "SUMMARY_COLUMNS",
    "AGGREGATE_COLUMNS",
    "iqm",
    "iqm_ci",
    "run_single",
    "run_matrix",
]

SUMMARY_COLUMNS = (
    "run_id",
    "method",
    "env",
    "seed",
    "env_steps",
    "coverage",
    "mean_reward",
    "sigma2",
    "mean_lifelong",
    "mean_prefix_explained",
    "episode_entropy",
)

AGGREGATE_COLUMNS = (
    "method",
    "env",
    "n_runs",
    "n_failed",
    "coverage_iqm",
    "coverage_lo",
    "coverage_hi",
    "steps_to_90_iqm",
    "steps_to_90_lo",
    "steps_to_90_hi",
    "n_reached_90",
)

AGGREGATE_FILE = "aggregate.csv"


def iqm(values) -> float:
    """Interquartile mean with fractional trimming.

    Each of the ``n`` sorted values carries mass ``1/n``; the lowest and
    highest quarter of the mass is removed, splitting a value that straddles
    a cut, and the rest is averaged. For ``n = 5`` the weights are
    ``(0, .3, .4, .3, 0)``.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = len(x)
    if n == 0:
        raise ValueError("iqm needs at least one value")
    lo_edge = np.arange(n) / n
    hi_edge = lo_edge + 1.0 / n
    w = np.clip(np.minimum(hi_edge, 0.75) - np.maximum(lo_edge, 0.25), 0.0, None)
    return float(w @ x / w.sum())


def iqm_ci(values, n_bootstrap: int = 2000, seed: int = 0, confidence: float = 0.95):
    """IQM and a percentile bootstrap interval over seeds.

    ``values`` is ``(n_seeds,)`` or ``(n_seeds, n_tasks)``; with several
    tasks the seeds are resampled independently within each task column
    (stratified) and the IQM is taken over the pooled matrix.

    Returns
    -------
    (iqm, lo, hi)
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.size == 0:
        raise ValueError("iqm_ci needs a non-empty (n_seeds,) or (n_seeds, n_tasks) array")
    if not np.isfinite(x).all():
        raise ValueError("iqm_ci values must be finite")
    if n_bootstrap < 1:
        raise ValueError(f"n_bootstrap must be >= 1, got {n_bootstrap}")
    point = iqm(x)
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    idx = rng.integers(0, n, size=(n_bootstrap, n, x.shape[1]))
    samples = np.take_along_axis(x[None], idx, axis=1)
    stats = np.array([iqm(s) for s in samples])
    tail = 100 * (1 - confidence) / 2
    lo, hi = np.percentile(stats, [tail, 100 - tail])
    # percentile interpolation can stray an ulp outside [min, max]
    lo, hi = float(min(lo, point)), float(max(hi, point))
    return point, lo, hi


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _json_safe(event):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in event.items()}


def run_single(config: RunConfig, out_dir) -> dict:
    """Run one matrix cell and write its JSONL and CSV files.

    Returns the summary event, or an ``{"event": "error"}`` record if the
    run raised.
    """
    rows = []
    result = None
    with open(os.path.join(out_dir, config.run_id + ".jsonl"), "w") as fh:
        try:
            for event in run_exploration(config):
                fh.write(json.dumps(_json_safe(event), sort_keys=True) + "\n")
                if event["event"] == "log":
                    rows.append(event)
                else:
                    result = event
        except Exception as exc:  # recorded per run; the matrix continues
            result = {
                "event": "error",
                "run_id": config.run_id,
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc(),
            }
            fh.write(json.dumps(result, sort_keys=True) + "\n")
    _write_csv(os.path.join(out_dir, config.run_id + ".csv"), SUMMARY_COLUMNS, rows)
    return result


def _run_cell(args):
    return run_single(*args)


def aggregate(runs, results, n_bootstrap: int = 2000, seed: int = 0):
    """Aggregate rows per (method, env) in first-appearance order.

    Runs that never reached 90% coverage enter the steps-to-90 statistics
    censored at their step count.
    """
    groups = {}
    for cfg, res in zip(runs, results):
        groups.setdefault((cfg.method, cfg.env_name), []).append(res)
    rows = []
    for (method, env), group in groups.items():
        ok = [r for r in group if r.get("event") == "summary"]
        row = {"method": method, "env": env, "n_runs": len(group), "n_failed": len(group) - len(ok)}
        if ok:
            cov = [r["coverage"] for r in ok]
            row["coverage_iqm"], row["coverage_lo"], row["coverage_hi"] = iqm_ci(cov, n_bootstrap, seed)
            steps = [r["steps_to_90"] if r["steps_to_90"] is not None else r["env_steps"] for r in ok]
            stats = iqm_ci(steps, n_bootstrap, seed)
            row["steps_to_90_iqm"], row["steps_to_90_lo"], row["steps_to_90_hi"] = stats
            row["n_reached_90"] = sum(r["steps_to_90"] is not None for r in ok)
        rows.append(row)
    return rows


def run_matrix(config: ExperimentConfig, out_dir, workers: int | None = None) -> list:
    """Run every (method, env, seed) cell and write the aggregate CSV.

    Parameters
    ----------
    config : ExperimentConfig
    out_dir : path
        Created if missing.
    workers : int, optional
        Process count; defaults to ``config.workers``.

    Returns
    -------
    list of dict
        Per-run summary or error records in matrix order.
    """
    os.makedirs(out_dir, exist_ok=True)
    runs = config.runs()
    workers = config.workers if workers is None else workers
    jobs = [(cfg, out_dir) for cfg in runs]
    if workers > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    _write_csv(os.path.join(out_dir, AGGREGATE_FILE), AGGREGATE_COLUMNS, aggregate(runs, results))
    return results
