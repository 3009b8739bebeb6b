"""Command line: ``vnslab run | analyze | presets | resume``.

Exit status: 0 success, 2 invalid configuration or input, 3 runtime abort,
4 an asserted probe failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import runner
from .errors import ConfigError, SchemaError, SimulationAborted, StepRejected

EXIT_OK, EXIT_INVALID, EXIT_ABORT, EXIT_PROBE = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vnslab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a preset or a YAML config")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="path to a YAML config")
    src.add_argument("--preset", help="name of a built-in preset")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int, help="override the particle sampling seed")
    r.add_argument("--sample-every", type=int, help="override the sampling interval in steps")
    r.add_argument("--T-end", type=float, dest="T_end", help="override the final time")

    a = sub.add_parser("analyze", help="summarize a diagnostics CSV")
    a.add_argument("csv")
    a.add_argument("--config", help="config used for the run (fit windows, monitors)")

    p = sub.add_parser("presets", help="list presets or write them as YAML")
    p.add_argument("--write", metavar="DIR", help="write each preset to DIR/<name>.yaml")

    s = sub.add_parser("resume", help="continue a run from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--out", help="output directory (default: the checkpoint's directory)")
    return ap


def _load_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.preset(args.preset)
    overrides = {}
    if args.seed is not None:
        overrides["particles.seed"] = args.seed
    if args.sample_every is not None:
        overrides["time.sample_every"] = args.sample_every
    if args.T_end is not None:
        overrides["time.T_end"] = args.T_end
    return cfgmod.with_overrides(cfg, **overrides) if overrides else cfg


def _report(summary: dict) -> int:
    print(json.dumps(summary, indent=2, default=float))
    return EXIT_OK if summary.get("all_asserted_pass", True) else EXIT_PROBE


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "presets":
            for name, cfg in cfgmod.presets().items():
                print(f"{name}: {cfgmod.preset_doc(name)}")
                if args.write:
                    d = Path(args.write)
                    d.mkdir(parents=True, exist_ok=True)
                    cfgmod.save(cfg, d / f"{name}.yaml")
            return EXIT_OK
        if args.verb == "run":
            arts = runner.run(_load_config(args), args.out)
            return _report(arts.summary)
        if args.verb == "resume":
            arts = runner.resume(args.checkpoint, args.out)
            return _report(arts.summary)
        if args.verb == "analyze":
            cfg = cfgmod.load(args.config) if args.config else None
            return _report(runner.analyze(args.csv, cfg))
    except (ConfigError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationAborted, StepRejected) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
