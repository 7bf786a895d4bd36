"""``beamlab run`` and ``beamlab validate``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure. On failure
the component error name is printed first on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ExperimentConfig, validate
from .errors import BeamlabError, ConfigError
from .io import canonical_json, write_json
from .kernels import BACKEND
from .pipeline import STAGES, RunContext

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("beamlab")


def provenance() -> dict:
    # component versions only; no timestamps or hostnames so reports stay byte-stable
    return {
        "beamlab": __version__,
        "kernel_backend": BACKEND,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def run(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> dict:
    """Execute every stage of ``cfg`` and write the report set into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(canonical_json(cfg.resolved))
    np.random.seed(cfg.seed)
    ctx = RunContext(cfg=cfg, out=out, jobs=jobs)
    stages = {}
    for name in cfg.stages():
        log.info("stage %s", name)
        try:
            stages[name] = STAGES[name](ctx)
        except BeamlabError as exc:
            exc.stage = name
            raise
    report = {"task": cfg.task, "seed": cfg.seed, "stages": stages, "provenance": provenance(),
              "files": sorted(set(ctx.files))}
    write_json(out / "report.json", report)
    return report


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    run(cfg, Path(args.out), jobs=args.jobs)
    print(f"wrote {Path(args.out) / 'report.json'}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(canonical_json({"violations": [{"path": "", "message": str(exc), "clause": "file"}]}), end="")
        return EXIT_CONFIG
    report = validate(raw)
    print(canonical_json(report), end="")
    return EXIT_OK if not report["violations"] else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamlab", description="Gaussian-beam inverse-problem experiments")
    p.add_argument("--version", action="version", version=f"beamlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the task described by a config file")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for parallel stages")
    r.add_argument("--verbose", action="store_true")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="schema and admissibility checks, no solvers")
    v.add_argument("config")
    v.add_argument("--verbose", action="store_true")
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BeamlabError as exc:
        stage = getattr(exc, "stage", None)
        where = f" (stage {stage})" if stage else ""
        print(f"{exc.name}{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
