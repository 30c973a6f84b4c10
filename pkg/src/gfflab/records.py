"""Experiment configs (flat key=value text) and append-only JSON-lines result records."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from . import __version__


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when there is one."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


def _scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def parse_value(text: str):
    """``1`` -> int, ``0.5`` -> float, ``a, b`` -> list, ``2..5`` -> inclusive int range."""
    t = text.strip()
    if ".." in t and "," not in t:
        a, b = t.split("..", 1)
        try:
            return list(range(int(a), int(b) + 1))
        except ValueError:
            pass
    if "," in t:
        return [_scalar(p) for p in t.split(",") if p.strip()]
    return _scalar(t)


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not key.replace("_", "").replace("-", "").isalnum():
            raise ConfigError(f"line {lineno}: malformed key {key!r}", key)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", key)
        if not val:
            raise ConfigError(f"empty value for key {key!r}", key)
        out[key] = parse_value(val)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    params: dict = field(default_factory=dict)

    def get(self, key: str):
        return self.params[key]

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, **self.params}


def build_config(raw: dict, schema: dict, seed_override: Optional[int] = None) -> ExperimentConfig:
    """Validate ``raw`` against ``schema`` (name -> (default, kind)); kinds: int, float, str,
    bool, ints, floats.  Unknown keys are rejected by name."""
    raw = dict(raw)
    name = raw.pop("experiment", None)
    seed = raw.pop("seed", None)
    if seed_override is not None:
        seed = seed_override
    if seed is None:
        raise ConfigError("a seed is required", "seed")
    if not isinstance(seed, int) or seed < 0 or seed >= 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}", "seed")
    params = {}
    for key, val in raw.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for experiment {name!r}", key)
    for key, (default, kind) in schema.items():
        val = raw.get(key, default)
        params[key] = _coerce(key, val, kind)
    return ExperimentConfig(str(name), int(seed), params)


def _coerce(key: str, val: Any, kind: str):
    try:
        if kind == "int":
            if isinstance(val, bool) or not float(val).is_integer():
                raise ValueError
            return int(val)
        if kind == "float":
            return float(val)
        if kind == "str":
            return str(val)
        if kind == "bool":
            if not isinstance(val, bool):
                raise ValueError
            return val
        if kind in ("ints", "floats"):
            vals = val if isinstance(val, list) else [val]
            if not vals:
                raise ValueError
            return [_coerce(key, v, kind[:-1]) for v in vals]
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r}: cannot interpret {val!r} as {kind}", key) from None
    raise ConfigError(f"key {key!r}: unknown kind {kind}", key)


def load_config(path, schemas: dict, seed_override: Optional[int] = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    name = raw.get("experiment")
    if name is None:
        raise ConfigError("missing key 'experiment'", "experiment")
    if name not in schemas:
        raise ConfigError(f"unknown experiment {name!r}", "experiment")
    return build_config(raw, schemas[name], seed_override)


# ---------------------------------------------------------------------------
# records


@dataclass
class ResultRecord:
    experiment: str
    params: dict
    estimate: float
    stderr: float
    replicas: int
    seed: int
    version: str = __version__
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        return cls(**json.loads(line))

    def content(self) -> dict:
        """Everything except the wall time (the reproducible part)."""
        d = asdict(self)
        d.pop("wall_time")
        return d


def append_records(path, records) -> None:
    """Append records as JSON lines; existing lines are never touched."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "a") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path) -> list:
    with open(path) as fh:
        return [ResultRecord.from_json(line) for line in fh if line.strip()]


def same_content(a, b) -> bool:
    """Bit-exact equality of everything but wall time (compared as canonical JSON, so NaN == NaN)."""
    key = lambda r: json.dumps(r.content(), sort_keys=True, allow_nan=True)
    return len(a) == len(b) and all(key(x) == key(y) for x, y in zip(a, b))
