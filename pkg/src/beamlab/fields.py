"""Closed-form scalar fields used for wave speeds and nonlinearity coefficients.

A field is described by a small JSON-able dict so that experiment configs can
round-trip; ``ScalarField.from_spec`` compiles it into a vectorised callable
``f(x, t=0.0)`` with ``x`` of shape ``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ConfigInvalid

_TYPES = ("constant", "affine", "gaussian", "bump", "stereographic", "sum")


def smooth_bump_profile(r: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1 - r^2)) on r < 1, zero outside; equals 1 at r = 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    ri = r[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ri * ri))
    return out


def _compile(spec: dict, path: str) -> Callable[[np.ndarray], np.ndarray]:
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigInvalid("field spec must be an object with a 'type'", path)
    kind = spec["type"]
    if kind not in _TYPES:
        raise ConfigInvalid(f"unknown field type {kind!r}", path + "/type")
    try:
        if kind == "constant":
            value = float(spec["value"])
            return lambda x: np.full(np.shape(x)[:-1], value)
        if kind == "affine":
            value = float(spec.get("value", 0.0))
            grad = np.asarray(spec["gradient"], dtype=float)

            def affine(x):
                x = np.asarray(x)
                n = x.shape[-1]
                gvec = np.zeros(n)
                gvec[: min(n, grad.size)] = grad[:n]
                return value + x @ gvec

            return affine
        if kind == "gaussian":
            base = float(spec.get("base", 0.0))
            amp = float(spec["amplitude"])
            center = np.asarray(spec["center"], dtype=float)
            width = float(spec["width"])

            def gauss(x):
                r2 = np.sum((np.asarray(x) - center) ** 2, axis=-1)
                return base + amp * np.exp(-0.5 * r2 / width**2)

            return gauss
        if kind == "bump":
            base = float(spec.get("base", 0.0))
            amp = float(spec["amplitude"])
            center = np.asarray(spec["center"], dtype=float)
            radius = float(spec["radius"])

            def bump(x):
                r = np.sqrt(np.sum((np.asarray(x) - center) ** 2, axis=-1)) / radius
                return base + amp * smooth_bump_profile(r)

            return bump
        if kind == "stereographic":
            # a(x) whose optical metric I/a is the round sphere of radius R
            radius = float(spec["radius"])
            center = np.asarray(spec.get("center", [0.0]), dtype=float)

            def stereo(x):
                r2 = np.sum((np.asarray(x) - center) ** 2, axis=-1)
                return ((radius**2 + r2) / (2.0 * radius**2)) ** 2

            return stereo
        terms = [_compile(t, f"{path}/terms/{i}") for i, t in enumerate(spec["terms"])]
        return lambda x: sum(term(x) for term in terms)
    except KeyError as exc:
        raise ConfigInvalid(f"missing key {exc.args[0]!r}", path) from None


@dataclass(frozen=True)
class ScalarField:
    """Vectorised scalar field with an optional linear-in-time factor."""

    spec: dict
    _fn: Callable = field(repr=False, compare=False)
    time_rate: float = 0.0

    @classmethod
    def from_spec(cls, spec: Any, path: str = "field") -> "ScalarField":
        if isinstance(spec, ScalarField):
            return spec
        if isinstance(spec, (int, float)):
            spec = {"type": "constant", "value": float(spec)}
        return cls(spec=dict(spec), _fn=_compile(spec, path), time_rate=float(spec.get("time_rate", 0.0)))

    @classmethod
    def constant(cls, value: float) -> "ScalarField":
        return cls.from_spec({"type": "constant", "value": float(value)})

    @property
    def time_dependent(self) -> bool:
        return self.time_rate != 0.0

    @property
    def is_constant(self) -> bool:
        return self.spec["type"] == "constant" and not self.time_dependent

    def __call__(self, x, t: float = 0.0) -> np.ndarray:
        values = np.asarray(self._fn(np.asarray(x, dtype=float)), dtype=float)
        if self.time_rate:
            values = values * (1.0 + self.time_rate * t)
        return values

    def to_spec(self) -> dict:
        return dict(self.spec)


def zero_field() -> ScalarField:
    return ScalarField.constant(0.0)
