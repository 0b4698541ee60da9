"""Command-line runner: ``simulate`` executes a scenario, ``simulate-report`` summarizes a run.

Exit codes: 0 success, 2 configuration error, 3 precondition failure,
4 assertion failure (or checksum mismatch in a report), 5 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._validation import NumericalAbort, PreconditionError
from .io import EVENT_COLUMNS, format_value, sha256_file, write_csv, write_events
from .scenarios import CHECK_COLUMNS, ConfigError, resolve_config, run

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_ASSERTION, EXIT_NUMERICAL = 0, 2, 3, 4, 5

log = logging.getLogger("wpreduce")


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return resolve_config(raw)


def dump_config(cfg):
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def _check_json(c):
    return {
        "criterion": c.criterion,
        "name": c.name,
        "value": float(c.value) if not isinstance(c.value, (bool, np.bool_)) else bool(c.value),
        "relation": c.relation,
        "tolerance": c.tolerance,
        "passed": c.passed,
        "detail": c.detail,
    }


def run_scenario(cfg, out_dir, threads=1):
    """Run a resolved config into ``out_dir``; returns ``(exit code, result)``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    start = time.perf_counter()
    result = run(cfg, threads=threads)
    wall = time.perf_counter() - start

    files = ["config.yaml"]
    stable = [c for c in result.checks if not c.timing]
    timing = [c for c in result.checks if c.timing]
    write_csv(out / "checks.csv", CHECK_COLUMNS, (c.as_row() for c in stable))
    files.append("checks.csv")
    for name, (cols, rows) in sorted(result.tables.items()):
        write_csv(out / name, cols, rows)
        files.append(name)
    if result.events:
        write_events(out / "events.csv", result.events)
        files.append("events.csv")
    summary = {
        "scenario": cfg["scenario"],
        "passed": all(c.passed for c in stable),
        "checks": [_check_json(c) for c in stable],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append("summary.json")
    manifest = {
        "scenario": cfg["scenario"],
        "config": cfg,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": cfg["seeds"],
        "threads": threads,
        "wall_time_s": wall,
        "timing_checks": [_check_json(c) for c in timing],
        "files": {f: sha256_file(out / f) for f in files},
        "event_columns": list(EVENT_COLUMNS),
        "passed": summary["passed"] and all(c.passed for c in timing),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return (EXIT_OK if manifest["passed"] else EXIT_ASSERTION), result


def emit_report(run_dir):
    """Human-readable table of a finished run; returns ``(text, ok)``."""
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no manifest in {run_dir}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    lines = [f"scenario {manifest['scenario']}  version {manifest['version']}  wall {manifest['wall_time_s']:.1f}s"]
    ok = True
    for name, digest in sorted(manifest["files"].items()):
        path = run_dir / name
        if not path.is_file():
            lines.append(f"MISSING   {name}")
            ok = False
        elif sha256_file(path) != digest:
            lines.append(f"CHECKSUM MISMATCH  {name}")
            ok = False
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    rows = summary["checks"] + manifest.get("timing_checks", [])
    width = max((len(r["name"]) for r in rows), default=4)
    lines.append(f"{'crit':>4}  {'check':<{width}}  {'value':>24}  rel  {'tolerance':>10}  status")
    for r in rows:
        status = "ok" if r["passed"] else "FAIL"
        ok = ok and r["passed"]
        lines.append(
            f"{r['criterion']:>4}  {r['name']:<{width}}  {format_value(r['value']):>24}  {r['relation']:>3}  "
            f"{format_value(r['tolerance']):>10}  {status}"
        )
    lines.append("all checks within tolerance" if ok else "FAILURES present")
    return "\n".join(lines), ok


def main(argv=None):
    parser = argparse.ArgumentParser(prog="simulate", description="Run a verification scenario from a YAML config.")
    parser.add_argument("config", help="scenario config file (YAML)")
    parser.add_argument("--out", default=None, help="output directory (default: runs/<scenario>)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    parser.add_argument("--verify-only", action="store_true", help="validate the config and exit")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    if args.verify_only:
        log.info("config ok: %s", cfg["scenario"])
        return EXIT_OK
    out = args.out or str(Path("runs") / cfg["scenario"])
    try:
        code, result = run_scenario(cfg, out, args.threads)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except PreconditionError as exc:
        log.error("precondition failed: %s", exc)
        return EXIT_PRECONDITION
    except NumericalAbort as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERICAL
    for c in result.checks:
        log.info("%s criterion %d %s = %s (%s %s)", "PASS" if c.passed else "FAIL", c.criterion, c.name,
                 format_value(c.value), c.relation, format_value(c.tolerance))
    log.info("wrote %s", out)
    return code


def report_main(argv=None):
    parser = argparse.ArgumentParser(prog="simulate-report", description="Summarize a finished run directory.")
    parser.add_argument("run_dir")
    args = parser.parse_args(argv)
    try:
        text, ok = emit_report(args.run_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(text)
    return EXIT_OK if ok else EXIT_ASSERTION


if __name__ == "__main__":
    sys.exit(main())
