"""Command line entry point.

Exit codes: 0 when every check that ran passed, 2 when a check failed
(or a manifest checksum no longer matches), 1 on an execution error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .io import STAGES, RunConfig, RunDir, default_config, export_dataset, minimal_config, open_run
from .pipeline import Pipeline

log = logging.getLogger("binormal")


def _stages(text):
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in names if s not in STAGES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown stages {bad}; choose from {', '.join(STAGES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="binormal", description="Perturbed self-similar vortex filament runs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run",) + STAGES:
        sp = sub.add_parser(name, help="run every configured stage" if name == "run" else f"run the {name} stage")
        sp.add_argument("--config", help="JSON run configuration (default: the run directory's config.json)")
        sp.add_argument("--run-dir", help="run directory (default: $BINORMAL_RUNS_ROOT/<run id>)")
        sp.add_argument("--stages", type=_stages, help="comma separated stage filter")
    ex = sub.add_parser("export", help="export a dataset of a finished run")
    ex.add_argument("what", choices=("curves", "frames", "rates", "modes"))
    ex.add_argument("--format", choices=("csv", "json"), default="csv")
    ex.add_argument("--run-id")
    ex.add_argument("--run-dir")
    mf = sub.add_parser("manifest", help="print a run manifest and verify its checksums")
    mf.add_argument("--run-id")
    mf.add_argument("--run-dir")
    cf = sub.add_parser("config", help="print a starting configuration")
    cf.add_argument("--minimal", action="store_true", help="unperturbed baseline to t = 10")
    return p


def _load_config(args) -> RunConfig:
    if args.config:
        return RunConfig.load(args.config)
    if args.run_dir and RunDir(args.run_dir).exists("config.json"):
        return RunConfig.load(RunDir(args.run_dir).path("config.json"))
    raise ValueError("give --config, or --run-dir of a run that has a config.json")


def _run(args) -> int:
    cfg = _load_config(args)
    stages = args.stages or (cfg.stages if args.command == "run" else (args.command,))
    res = Pipeline(cfg, args.run_dir).run(stages)
    for name, ok in res.checks.items():
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    print(f"run {res.manifest.run_id} {res.manifest.status} in {res.run_dir.root}")
    return 0 if res.passed else 2


def _manifest(args) -> int:
    rd = open_run(args.run_id, args.run_dir)
    m = rd.load_manifest()
    print(json.dumps(m.to_dict(), indent=1, sort_keys=True))
    bad = rd.verify(m)
    for name, got in bad.items():
        print(f"checksum mismatch: {name} ({'missing' if got is None else got})", file=sys.stderr)
    return 2 if bad else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        if args.command == "config":
            print((minimal_config() if args.minimal else default_config()).dumps())
            return 0
        if args.command == "export":
            print(export_dataset(args.run_id, args.what, args.format, args.run_dir))
            return 0
        if args.command == "manifest":
            return _manifest(args)
        return _run(args)
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
