"""snctl: run one experiment on a scenario file and write its artifacts."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, SnlabError
from .pipelines import RunOutput, run_command
from .scenario import COMMANDS, load_scenario

log = logging.getLogger("snlab")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows, digest: str):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scenario_digest",) + tuple(header))
        for row in rows:
            w.writerow([digest] + [_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_outputs(out_dir: Path, command: str, digest: str, result: RunOutput | None, error=None, seconds=0.0):
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "command": command,
        "scenario_digest": digest,
        "version": __version__,
        "passed": bool(result.passed) if result else False,
        "wall_clock_seconds": seconds,
        "results": result.summary if result else {},
    }
    if error is not None:
        summary["error"] = {"type": type(error).__name__, "message": str(error)}
    (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    empty = ((), [])
    for name, table in (
        ("timeseries.csv", result.timeseries if result else empty),
        ("controls.csv", result.controls if result else empty),
        ("weights.csv", result.weights if result else empty),
    ):
        write_csv(out_dir / name, table[0], table[1], digest)


def build_parser():
    p = argparse.ArgumentParser(prog="snctl", description="Stackelberg-Nash control experiments on a binomial lattice.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="YAML scenario file")
    p.add_argument("--out", default="snctl-out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="Carleman parameter lambda")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load_scenario(args.scenario).with_overrides(args.seed, args.lam, args.epsilon)
    except ConfigError as exc:
        print(f"snctl: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        res = run_command(args.command, sc)
    except SnlabError as exc:
        write_outputs(out, args.command, sc.digest, None, exc, time.perf_counter() - t0)
        print(f"snctl: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    write_outputs(out, args.command, sc.digest, res, None, time.perf_counter() - t0)
    status = "passed" if res.passed else "FAILED"
    print(f"{args.command}: {status} (digest {sc.digest}, outputs in {out})")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
