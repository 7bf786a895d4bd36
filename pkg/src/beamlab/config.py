"""Experiment configuration: JSON schema validation, canonical serialization, pre-run checks."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import BeamlabError, ConfigError, ConfigInvalid
from .io import canonical_json

TASKS = ("forward", "beam-check", "transform-check", "recover-a-c1", "recover-b2", "recover-ck", "full-pipeline")

DEFAULTS = {
    "seed": 0,
    "model": {"a": 1.0},
    "grid": {"cells": 32, "T": 1.0, "cfl": 0.5},
    "signal": {"type": "zero"},
    "beam": {"delta_prime": 0.8, "order": 2, "taus": [16, 32, 64, 128], "extend": 0.8},
    "transform": {"m": [1, 2, 3], "eta_list": [0.1, 0.03, 0.01, 0.003], "n_angles": 64, "n_offsets": 64,
                  "grid_points": 65},
    "reconstruct": {"mode": "manufactured", "taus": [32, 64, 128, 256], "k": 3, "delta_prime": 0.8,
                    "n_angles": 64, "n_offsets": 64, "grid_points": 65},
}


def load_schema() -> dict:
    text = resources.files("beamlab").joinpath("config_schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def schema_violations(raw) -> list:
    """Every schema violation as ``{"path": json-pointer, "message": ...}``, sorted by path."""
    validator = jsonschema.Draft7Validator(load_schema())
    out = []
    for err in validator.iter_errors(raw):
        path = "/" + "/".join(str(p) for p in err.absolute_path)
        out.append({"path": path, "message": err.message, "clause": "schema"})
    return sorted(out, key=lambda v: (v["path"], v["message"]))


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment. ``raw`` is what the user wrote, ``resolved`` has every default filled in."""

    raw: dict
    resolved: dict
    base_dir: Optional[Path] = field(default=None, compare=False)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        errs = schema_violations(raw)
        if errs:
            first = errs[0]
            raise ConfigInvalid(first["message"], first["path"])
        resolved = _merge(DEFAULTS, raw)
        return cls(raw=copy.deepcopy(raw), resolved=resolved, base_dir=base_dir)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigInvalid(f"no such file {str(path)!r}") from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def to_json(self) -> str:
        return canonical_json(self.raw)

    @property
    def task(self) -> str:
        return self.resolved["task"]

    @property
    def seed(self) -> int:
        return int(self.resolved["seed"])

    def section(self, name: str) -> dict:
        return self.resolved.get(name, {})

    def metric(self):
        from .geometry import metric_from_descriptor

        return metric_from_descriptor(self.resolved["metric"], base_dir=self.base_dir)

    def model(self, which: str = "model"):
        from .forward import Coefficients

        return Coefficients.from_spec(self.resolved.get(which, {"a": 1.0}), which)

    def grid(self, metric=None, coeffs=None):
        from .forward import make_grid

        g = self.section("grid")
        metric = metric or self.metric()
        return make_grid(metric, g["cells"], float(g["T"]), coeffs or self.model(), float(g["cfl"]))

    def signal(self):
        return build_signal(self.section("signal"), self.resolved["metric"]["dim"])

    def stages(self) -> list:
        if self.task != "full-pipeline":
            return [self.task]
        return list(self.resolved.get("stages", ["forward", "beam-check", "transform-check", "recover-b2"]))


def build_signal(spec: dict, dim: int):
    """``zero`` or a Gaussian ``pulse`` in space, switched on by the C^2 onset window."""
    from .forward import BoundarySignal, onset_window, zero_signal

    if spec.get("type", "zero") == "zero":
        return zero_signal()
    amp = float(spec.get("amplitude", 1.0))
    center = np.asarray(spec.get("center", [0.5] * dim), dtype=float)
    if center.shape != (dim,):
        raise ConfigInvalid(f"center needs {dim} entries", "/signal/center")
    width = float(spec.get("width", 0.2))
    freq = float(spec.get("frequency", 0.0))
    t_on = float(spec.get("t_on", 0.25))

    def fn(t, x):
        r2 = np.sum((np.asarray(x) - center) ** 2, axis=-1)
        return amp * onset_window(t, t_on) * np.cos(2 * np.pi * freq * t) * np.exp(-r2 / width**2)

    return BoundarySignal(fn, label="pulse")


def _violation(path: str, exc: BeamlabError, clause: str) -> list:
    if hasattr(exc, "clauses"):
        return [{"path": path, "message": c, "clause": clause} for c in exc.clauses]
    return [{"path": getattr(exc, "path", "") or path, "message": str(exc), "clause": clause}]


def validate(raw) -> dict:
    """Schema, admissibility and compatibility checks without running any solver."""
    from .forward import check_admissible, check_compatibility

    violations = schema_violations(raw)
    report = {"violations": violations, "checks": {}}
    if violations:
        return report
    cfg = ExperimentConfig.from_dict(raw)
    try:
        metric = cfg.metric()
    except ConfigError as exc:
        report["violations"] += _violation("/metric", exc, "metric")
        return report
    models = [w for w in ("model", "model2") if w in cfg.resolved]
    coeffs = {}
    for which in models:
        try:
            coeffs[which] = cfg.model(which)
            report["checks"][which] = check_admissible(coeffs[which], metric)
        except ConfigError as exc:
            report["violations"] += _violation("/" + which, exc, "admissibility")
    if "forward" in cfg.stages() and "model" in report["checks"]:
        try:
            grid = cfg.grid(metric, coeffs["model"])
            report["checks"]["compatibility"] = check_compatibility(cfg.signal(), None, None, coeffs["model"],
                                                                    grid=grid)
        except ConfigError as exc:
            report["violations"] += _violation("/signal", exc, "compatibility")
        except BeamlabError as exc:
            report["violations"] += _violation("/grid", exc, exc.name)
    return report
