"""Scenario files: UTF-8 ``key = value`` lines, ``#`` starts a comment.

Example::

    name = born-third
    model = mmi-unitary
    weights = 1/3, 2/3
    N = 9000
    M = 100
    seed = 42
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .frequency import SystemSpec, parse_weight

MODELS = ("everett-frequency", "mmi-stochastic", "mmi-unitary", "envariance-check", "wallace-chain")
MODE_ALIASES = {"exact": "exact", "monte-carlo": "monte-carlo", "mc": "monte-carlo"}

REQUIRED = {
    "everett-frequency": ("weights", "N", "epsilon"),
    "mmi-stochastic": ("weights", "N"),
    "mmi-unitary": ("weights", "N"),  # M only for monte-carlo runs
    "envariance-check": ("weights",),
    "wallace-chain": ("weights",),
}
# sampled runs need a seed; exact runs do not
SEEDED = ("everett-frequency", "mmi-stochastic", "mmi-unitary")

KEYS = ("name", "model", "weights", "outcomes", "N", "M", "T", "seed", "mode", "epsilon", "csv", "json")


class ScenarioError(ValueError):
    def __init__(self, message: str, path: str = "<scenario>", line: Optional[int] = None):
        self.path, self.line, self.message = path, line, message
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


@dataclass
class ScenarioFile:
    name: str
    model: str
    spec: SystemSpec
    n: Optional[int] = None
    m: Optional[int] = None
    t: Optional[int] = None
    seed: Optional[int] = None
    mode: str = "monte-carlo"
    epsilon: Optional[float] = None
    csv_path: Optional[str] = None
    json_path: Optional[str] = None
    source: str = "<scenario>"
    lines: dict = field(default_factory=dict)

    def require_seed(self):
        if self.model in SEEDED and self.mode == "monte-carlo" and self.seed is None:
            raise ScenarioError(f"missing required key 'seed' for model {self.model} in monte-carlo mode",
                                self.source)


def _int(value: str, key: str, path: str, line: int, minimum: int = 0, maximum: Optional[int] = None) -> int:
    try:
        out = int(value)
    except ValueError:
        raise ScenarioError(f"{key} must be an integer, got {value!r}", path, line) from None
    if out < minimum or (maximum is not None and out > maximum):
        raise ScenarioError(f"{key} out of range: {out}", path, line)
    return out


def _weights(value: str, path: str, line: int) -> tuple:
    try:
        weights = tuple(parse_weight(w) for w in value.split(","))
    except (ValueError, ZeroDivisionError):
        raise ScenarioError(f"malformed weights {value!r}", path, line) from None
    if any(w < 0 for w in weights):
        raise ScenarioError("weights must be non-negative", path, line)
    if all(isinstance(w, Fraction) for w in weights):
        ok = sum(weights) == 1
    else:
        ok = abs(math.fsum(float(w) for w in weights) - 1.0) <= 1e-12
    if not ok:
        raise ScenarioError("weights must sum to 1", path, line)
    return weights


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioFile:
    raw: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ScenarioError(f"expected 'key = value', got {content!r}", source, lineno)
        key, value = (part.strip() for part in content.split("=", 1))
        if key not in KEYS:
            raise ScenarioError(f"unknown key {key!r}", source, lineno)
        if key in raw:
            raise ScenarioError(f"duplicate key {key!r}", source, lineno)
        raw[key], lines[key] = value, lineno

    def line_of(key):
        return lines.get(key)

    model = raw.get("model")
    if model is None:
        raise ScenarioError("missing required key 'model'", source)
    if model not in MODELS:
        raise ScenarioError(f"unknown model {model!r}; expected one of {', '.join(MODELS)}", source, line_of("model"))
    for key in REQUIRED[model]:
        if key not in raw:
            raise ScenarioError(f"missing required key {key!r} for model {model}", source)

    weights = _weights(raw["weights"], source, line_of("weights"))
    outcomes = None
    if "outcomes" in raw:
        outcomes = tuple(o.strip() for o in raw["outcomes"].split(","))
        if len(outcomes) != len(weights):
            raise ScenarioError("outcomes and weights differ in length", source, line_of("outcomes"))
    try:
        spec = SystemSpec.from_weights(weights, outcomes)
    except ValueError as exc:
        raise ScenarioError(str(exc), source, line_of("weights")) from None

    sc = ScenarioFile(name=raw.get("name", Path(source).stem or "scenario"), model=model, spec=spec,
                      source=source, lines=lines)
    if "N" in raw:
        sc.n = _int(raw["N"], "N", source, line_of("N"), minimum=1)
    if "M" in raw:
        sc.m = _int(raw["M"], "M", source, line_of("M"), minimum=1)
    if "T" in raw and raw["T"].lower() != "auto":
        sc.t = _int(raw["T"], "T", source, line_of("T"), minimum=1)
    if "seed" in raw:
        sc.seed = _int(raw["seed"], "seed", source, line_of("seed"), maximum=2**64 - 1)
    if "mode" in raw:
        if raw["mode"] not in MODE_ALIASES:
            raise ScenarioError(f"mode must be exact or monte-carlo, got {raw['mode']!r}", source, line_of("mode"))
        sc.mode = MODE_ALIASES[raw["mode"]]
    if "epsilon" in raw:
        try:
            sc.epsilon = float(raw["epsilon"])
        except ValueError:
            raise ScenarioError(f"epsilon must be a number, got {raw['epsilon']!r}", source, line_of("epsilon")) from None
        if not sc.epsilon > 0:
            raise ScenarioError("epsilon must be positive", source, line_of("epsilon"))
    sc.csv_path = raw.get("csv")
    sc.json_path = raw.get("json")
    return sc


def load_scenario(path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", str(path)) from None
    return parse_scenario(text, str(path))
