"""Load and validate model files.

A model file is a JSON document::

    {
      "classes": [
        {"lambda": 1.0, "mu": 1.0, "bandwidth": 1, "omega": 1},
        ...
      ],
      "policy": {"type": "full_sharing", "capacity": 4}
    }

or with ``"type": "per_class"`` and ``"thresholds": [c1, ..., cK]``.
``bandwidth`` defaults to 1 and ``omega`` to 0.  Validation errors carry the
offending JSON path and, where it can be located in the source text, a
1-based line number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .model import AdmissionPolicy, FullSharing, ModelError, PerClassThreshold, TrafficClass

__all__ = ["ModelFileError", "load_model", "parse_model"]


class ModelFileError(ModelError):
    """Bad model file; ``path`` is the JSON path, ``line`` the source line."""

    def __init__(self, message: str, json_path: str = "", line: int | None = None):
        self.json_path = json_path
        self.line = line
        loc = f" at {json_path}" if json_path else ""
        if line is not None:
            loc += f" (line {line})"
        super().__init__(message + loc)


def _key_line(text: str, key: str, occurrence: int) -> int | None:
    """Line of the n-th occurrence (0-based) of a quoted key, best effort."""
    needle = f'"{key}"'
    pos = -1
    for _ in range(occurrence + 1):
        pos = text.find(needle, pos + 1)
        if pos < 0:
            return None
    return text.count("\n", 0, pos) + 1


@dataclass
class _Source:
    text: str

    def error(self, message: str, json_path: str, key: str, occurrence: int = 0) -> ModelFileError:
        return ModelFileError(message, json_path, _key_line(self.text, key, occurrence))


def _require(obj: dict, key: str, src: _Source, path: str, occ: int = 0) -> Any:
    if key not in obj:
        raise src.error(f"missing required field '{key}'", path, key.split(".")[-1], occ)
    return obj[key]


def _number(value: Any, src: _Source, path: str, key: str, occ: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise src.error(f"expected a number, got {value!r}", path, key, occ)
    return float(value)


def _integer(value: Any, src: _Source, path: str, key: str, occ: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise src.error(f"expected an integer, got {value!r}", path, key, occ)
    return value


def parse_model(text: str) -> tuple[tuple[TrafficClass, ...], AdmissionPolicy]:
    """Parse and validate a model document from its JSON source text."""
    src = _Source(text)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ModelFileError("top-level value must be an object")

    raw_classes = _require(doc, "classes", src, "$")
    if not isinstance(raw_classes, list) or not raw_classes:
        raise src.error("'classes' must be a non-empty array", "$.classes", "classes")

    classes = []
    for i, item in enumerate(raw_classes):
        path = f"$.classes[{i}]"
        if not isinstance(item, dict):
            raise src.error("each class must be an object", path, "classes")
        lam = _number(_require(item, "lambda", src, path, i), src, path + ".lambda", "lambda", i)
        mu = _number(_require(item, "mu", src, path, i), src, path + ".mu", "mu", i)
        bandwidth = item.get("bandwidth", 1)
        bandwidth = _integer(bandwidth, src, path + ".bandwidth", "bandwidth", i)
        omega = item.get("omega", 0)
        omega = _integer(omega, src, path + ".omega", "omega", i)
        unknown = set(item) - {"lambda", "mu", "bandwidth", "omega"}
        if unknown:
            key = sorted(unknown)[0]
            raise src.error(f"unknown field '{key}'", path, key, 0)
        try:
            classes.append(TrafficClass(lam=lam, mu=mu, bandwidth=bandwidth, omega=omega))
        except ModelError as exc:
            raise src.error(str(exc), path, "lambda", i) from exc

    raw_policy = _require(doc, "policy", src, "$")
    if not isinstance(raw_policy, dict):
        raise src.error("'policy' must be an object", "$.policy", "policy")
    ptype = _require(raw_policy, "type", src, "$.policy")
    policy: AdmissionPolicy
    if ptype == "full_sharing":
        capacity = _integer(
            _require(raw_policy, "capacity", src, "$.policy"), src, "$.policy.capacity", "capacity", 0
        )
        try:
            policy = FullSharing(capacity=capacity)
        except ModelError as exc:
            raise src.error(str(exc), "$.policy.capacity", "capacity", 0) from exc
    elif ptype == "per_class":
        thresholds = _require(raw_policy, "thresholds", src, "$.policy")
        if not isinstance(thresholds, list) or not all(
            isinstance(t, int) and not isinstance(t, bool) for t in thresholds
        ):
            raise src.error("'thresholds' must be an array of integers", "$.policy.thresholds", "thresholds")
        if len(thresholds) != len(classes):
            raise src.error(
                f"{len(thresholds)} thresholds for {len(classes)} classes",
                "$.policy.thresholds",
                "thresholds",
            )
        try:
            policy = PerClassThreshold(thresholds=tuple(thresholds))
        except ModelError as exc:
            raise src.error(str(exc), "$.policy.thresholds", "thresholds", 0) from exc
    else:
        raise src.error(
            f"unknown policy type {ptype!r} (expected 'full_sharing' or 'per_class')",
            "$.policy.type",
            "type",
        )
    return tuple(classes), policy


def load_model(path: str | Path) -> tuple[tuple[TrafficClass, ...], AdmissionPolicy]:
    """Read and validate a model file."""
    return parse_model(Path(path).read_text())
