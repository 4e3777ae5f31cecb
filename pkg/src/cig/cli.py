"""Command-line entry point: ``cig run | verify | reward | demo``.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure,
3 an oracle check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import oracle
from .config import ConfigError, load_config
from .harness import run_matrix
from .kernel import build_full_covariance_gram, build_kernel, compute_deviations
from .reward import (
    cig_rewards,
    lifelong_only_rewards,
    no_prefix_rewards,
    no_trace_reduction_rewards,
    trace_to_jsonl,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_ORACLE = 0, 1, 2, 3

# Three members, four steps, d = 2. Steps 1 and 2 disagree along the same
# direction, step 3 along an orthogonal one, step 4 barely at all.
DEMO_PREDICTIONS = np.array(
    [
        [[1.0, 0.0], [0.9, 0.0], [0.0, 0.0], [0.05, 0.0]],
        [[-1.0, 0.0], [-0.9, 0.0], [0.0, 1.0], [-0.05, 0.0]],
        [[0.0, 0.0], [0.0, 0.0], [0.0, -1.0], [0.0, 0.0]],
    ]
)
DEMO_RIDGE = 0.1


def _cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out or os.path.join("runs", config.name)
    results = run_matrix(config, out, workers=args.workers)
    failed = [r for r in results if r.get("event") == "error"]
    for r in failed:
        print(f"run {r['run_id']} failed: {r['error']}", file=sys.stderr)
    print(f"{len(results) - len(failed)}/{len(results)} runs finished; results in {out}")
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_verify(args) -> int:
    reports = oracle.run_all(seed=args.seed, quick=args.quick)
    if args.json:
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        print(f"{'check':<32} {'instances':>9} {'max_abs_error':>14} {'tolerance':>10}  result")
        for r in reports:
            status = "PASS" if r.passed else "FAIL"
            print(f"{r.check_name:<32} {r.instances:>9} {r.max_abs_error:>14.3e} {r.tolerance:>10.1e}  {status}")
            if r.note:
                print(f"    {r.note}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_ORACLE


def _read_rollout(path):
    """Member predictions ``(M, T, d)`` from a JSONL file, one step per line."""
    steps = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                steps.append(np.asarray(row["member_predictions"], dtype=np.float64))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: expected {{\"member_predictions\": M x d}}: {exc}") from exc
    if not steps:
        raise ValueError(f"{path}: no rollout steps")
    if len({s.shape for s in steps}) != 1 or steps[0].ndim != 2:
        raise ValueError(f"{path}: every step needs an M x d member_predictions array of the same shape")
    return np.stack(steps, axis=1)


def _cmd_reward(args) -> int:
    try:
        preds = _read_rollout(args.rollout)
        dev = compute_deviations(preds)
        if not args.ridge > 0:
            raise ValueError(f"--ridge must be > 0, got {args.ridge}")
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    kernel = build_kernel(dev, args.ridge)
    traces = [cig_rewards(kernel), no_prefix_rewards(kernel)]
    if (kernel.lifelong > 0).all():
        traces.append(lifelong_only_rewards(kernel))
    full = build_full_covariance_gram(dev, args.ridge / dev.d)
    traces.append(no_trace_reduction_rewards(full, dev.T, method="gram"))
    text = "".join(trace_to_jsonl(t) for t in traces)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _matrix(name, A):
    rows = "\n".join("  " + " ".join(f"{v:9.4f}" for v in row) for row in A)
    return f"{name}\n{rows}"


def _cmd_demo(args) -> int:
    dev = compute_deviations(DEMO_PREDICTIONS)
    kernel = build_kernel(dev, DEMO_RIDGE)
    cig = cig_rewards(kernel)
    flat = no_prefix_rewards(kernel)
    L = np.linalg.cholesky(kernel.K_ridged)
    print(f"M={dev.M} members, T={dev.T} steps, d={dev.d}, ridge={DEMO_RIDGE}")
    print(_matrix("K (trace-reduced disagreement kernel)", kernel.K))
    print(_matrix("L (Cholesky factor of K + ridge I)", L))
    print(f"{'step':>4} {'K_tt':>9} {'explained':>10} {'cig':>9} {'no_prefix':>10}")
    for t in range(dev.T):
        print(
            f"{t + 1:>4} {cig.lifelong[t]:9.4f} {cig.prefix_explained[t]:10.4f}"
            f" {cig.rewards[t]:9.4f} {flat.rewards[t]:10.4f}"
        )
    logdet = np.linalg.slogdet(kernel.K_ridged)[1]
    print(f"sum of cig rewards {cig.total:.6f} = log det(K + ridge I) {logdet:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cig", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment matrix from a TOML config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default runs/<experiment name>)")
    p.add_argument("--workers", type=int, help="override experiment.workers")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="run the oracle checks")
    p.add_argument("--json", action="store_true", help="print reports as JSON")
    p.add_argument("--quick", action="store_true", help="10x fewer instances")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("reward", help="rewards of a dumped rollout, one JSONL trace per variant")
    p.add_argument("rollout", help='JSONL, one {"member_predictions": M x d} object per step')
    p.add_argument("--ridge", type=float, default=1.0, help="kernel ridge (sigma^2 d)")
    p.add_argument("--out", help="write traces here instead of stdout")
    p.set_defaults(func=_cmd_reward)

    p = sub.add_parser("demo", help="print a worked four-step example")
    p.set_defaults(func=_cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
