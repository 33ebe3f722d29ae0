"""Run configuration for the command line: strict JSON, unknown keys rejected."""

import json
import math
import re
from dataclasses import dataclass, field, fields, asdict
from typing import Optional

from .errors import ConfigError, MimicError
from .simulate import SimConfig


@dataclass
class RunConfig:
    family: str = "gaussian"
    family_params: dict = field(default_factory=dict)
    kernel: str = "hk"
    eps: float = 0.01
    T: float = 1.0
    n_paths: int = 10000
    seed: int = 0
    checkpoints: list = field(default_factory=list)
    freeze: bool = False
    chunk: int = 20000
    out: Optional[str] = None         # paths.csv / dump CSV
    summary: Optional[str] = None     # summary JSON
    paths: Optional[str] = None       # hedge-check input
    t: float = 1.0                    # slice for transport-dump / psi-dump
    grid: int = 201                   # x points in dumps
    x_grid: Optional[list] = None     # explicit [a, b, n] source grid for transport-dump
    bins: int = 10
    tolerance: float = 1e-6
    threads: Optional[int] = None

    def sim_config(self):
        return SimConfig(self.family, dict(self.family_params), self.kernel, self.eps, self.T,
                         self.n_paths, self.seed, tuple(self.checkpoints), self.freeze,
                         self.chunk)

    def validate(self):
        from .families import get_family
        self.sim_config().validate()
        try:
            get_family(self.family, **self.family_params)
        except (MimicError, TypeError, OSError) as exc:
            raise ConfigError(f"family {self.family!r}: {exc}") from None
        if self.chunk < 1 or self.grid < 2 or self.bins < 1:
            raise ConfigError("chunk, grid and bins must be positive (grid >= 2)")
        if not self.t > 0:
            raise ConfigError("t must be positive")
        if self.x_grid is not None and (len(self.x_grid) != 3 or self.x_grid[2] < 1
                                        or self.x_grid[0] > self.x_grid[1]):
            raise ConfigError("x_grid must be [a, b, n] with a <= b and n >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)


_KINDS = {
    "family": (str,), "family_params": (dict,), "kernel": (str,), "eps": (float,),
    "T": (float,), "n_paths": (int,), "seed": (int,), "checkpoints": (list,),
    "freeze": (bool,), "chunk": (int,), "out": (str, None), "summary": (str, None),
    "paths": (str, None), "t": (float,), "grid": (int,), "x_grid": (list, None), "bins": (int,),
    "tolerance": (float,), "threads": (int, None),
}


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, key):
    line = _line_of(text, key)
    return f"line {line}: " if line else ""


def _no_duplicates(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ConfigError(f"duplicate key {k!r}")
        seen[k] = v
    return seen


def _coerce(key, value, kinds, text):
    at = _where(text, key)
    if value is None:
        if None in kinds:
            return None
        raise ConfigError(f"{at}{key!r} must not be null")
    if isinstance(value, bool):
        if bool in kinds:
            return value
        raise ConfigError(f"{at}{key!r} must not be a boolean")
    if float in kinds and isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ConfigError(f"{at}{key!r} must be finite")
        return float(value)
    for k in kinds:
        if k is not None and k is not float and isinstance(value, k):
            if k is list and not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                     for v in value):
                raise ConfigError(f"{at}{key!r} must be a list of numbers")
            return [float(v) for v in value] if k is list else value
    names = " or ".join("null" if k is None else k.__name__ for k in kinds)
    raise ConfigError(f"{at}{key!r} must be {names}, got {type(value).__name__}")


def parse_config(text):
    """RunConfig from JSON text; errors carry line numbers where possible."""
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = [k for k in raw if k not in known]
    if unknown:
        k = unknown[0]
        raise ConfigError(f"{_where(text, k)}unknown key {k!r}")
    vals = {k: _coerce(k, v, _KINDS[k], text) for k, v in raw.items()}
    return RunConfig(**vals).validate()


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)
