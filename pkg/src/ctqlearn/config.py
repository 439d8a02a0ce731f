"""Run configuration: INI-style files with sections, plus shipped presets."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .basis import BASIS_PRESETS, BasisSet, quadratic_basis
from .dynamics import MODELS, LinearModel, QuadraticCost
from .errors import ConfigError

PRESETS = ("example1", "example2", "scalar")


def _matrix(text, key):
    text = text.strip()
    try:
        rows = [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse matrix {text!r}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{key}: rows must be nonempty and of equal length")
    return rows


def _vector(text, key):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse vector {text!r}") from None


@dataclass
class RunConfig:
    name: str = "run"
    model: str = "f16"
    A: list | None = None
    B: list | None = None
    S: str | list = "identity"
    W: str | list = "identity"
    M: int = 100
    delta_t: float = 0.1
    substeps: int = 10
    seed: int = 0
    x_lower: list = field(default_factory=list)
    x_upper: list = field(default_factory=list)
    mu_lower: list = field(default_factory=list)
    mu_upper: list = field(default_factory=list)
    basis: str = "lqr"
    algorithm: str = "piql"
    xi: float = 1e-5
    max_iterations: int = 5000
    svd_tolerance: float = 1e-10
    holdout_fraction: float = 0.2
    holdout_seed: int = 0
    initial_policy: str = "zero"
    initial_theta: str = "default"
    x0: list = field(default_factory=list)
    horizon: float = 30.0
    step: float = 0.01

    def validate(self):
        if self.model == "linear":
            if self.A is None or self.B is None:
                raise ConfigError("system.A and system.B are required for model = linear")
        elif self.model not in MODELS:
            raise ConfigError(f"system.model: unknown model {self.model!r} "
                              f"(choose from {sorted(MODELS) + ['linear']})")
        if self.M < 1:
            raise ConfigError(f"sampling.M must be >= 1, got {self.M}")
        if not self.delta_t > 0:
            raise ConfigError(f"sampling.delta_t must be positive, got {self.delta_t}")
        if self.substeps < 1:
            raise ConfigError(f"sampling.substeps must be >= 1, got {self.substeps}")
        if self.algorithm not in ("piql", "viql"):
            raise ConfigError(f"learner.algorithm must be piql or viql, got {self.algorithm!r}")
        if not self.xi > 0:
            raise ConfigError(f"learner.xi must be positive, got {self.xi}")
        if self.max_iterations < 1:
            raise ConfigError(f"learner.max_iterations must be >= 1, got {self.max_iterations}")
        if not 0 < self.svd_tolerance < 1:
            raise ConfigError("learner.svd_tolerance must lie in (0, 1)")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("learner.holdout_fraction must lie in [0, 1)")
        if not self.horizon > 0 or not self.step > 0:
            raise ConfigError("evaluate.horizon and evaluate.step must be positive")
        model = self.build_model()
        for key, size in (("x_lower", model.n), ("x_upper", model.n),
                          ("mu_lower", model.m), ("mu_upper", model.m)):
            if len(getattr(self, key)) != size:
                raise ConfigError(f"sampling.{key} needs {size} entries, got {len(getattr(self, key))}")
        if np.any(np.array(self.x_upper) <= np.array(self.x_lower)) or np.any(
                np.array(self.mu_upper) <= np.array(self.mu_lower)):
            raise ConfigError("sampling bounds: every upper bound must exceed its lower bound")
        self.build_cost()
        basis = self.build_basis()
        if basis.n != model.n or basis.m != model.m:
            raise ConfigError("learner.basis dimensions do not match the model")
        return self

    def build_model(self):
        if self.model == "linear":
            try:
                return LinearModel(self.A, self.B)
            except ValueError as exc:
                raise ConfigError(f"system.A/B: {exc}") from None
        return MODELS[self.model]()

    def _weight(self, spec, size, key):
        if spec == "identity":
            return np.eye(size)
        mat = np.array(spec, dtype=float)
        if mat.shape != (size, size):
            raise ConfigError(f"cost.{key} must be {size}x{size}")
        return mat

    def build_cost(self):
        model = self.build_model()
        S = self._weight(self.S, model.n, "S")
        W = self._weight(self.W, model.m, "W")
        name = "identity" if self.S == "identity" and self.W == "identity" else "quadratic"
        return QuadraticCost(S, W, name=name)

    def build_basis(self) -> BasisSet:
        model = self.build_model()
        spec = self.basis.strip()
        try:
            if spec == "lqr":
                return quadratic_basis(model.n, model.m)
            if spec in BASIS_PRESETS:
                return BASIS_PRESETS[spec]()
            return BasisSet.from_strings(model.n, model.m, [t for t in spec.split(",") if t.strip()])
        except ValueError as exc:
            raise ConfigError(f"learner.basis: {exc}") from None

    @property
    def bounds(self):
        return (self.x_lower, self.x_upper), (self.mu_lower, self.mu_upper)

    def config_hash(self):
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SCHEMA = {
    "run": {"name": str},
    "system": {"model": str, "A": "matrix", "B": "matrix"},
    "cost": {"S": "weight", "W": "weight"},
    "sampling": {"M": int, "delta_t": float, "substeps": int, "seed": int,
                 "x_lower": "vector", "x_upper": "vector", "mu_lower": "vector", "mu_upper": "vector"},
    "learner": {"basis": str, "algorithm": str, "xi": float, "max_iterations": int,
                "svd_tolerance": float, "holdout_fraction": float, "holdout_seed": int,
                "initial_policy": str, "initial_theta": str},
    "evaluate": {"x0": "vector", "horizon": float, "step": float},
}


def parse_config(text, source="<string>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            kind = _SCHEMA[section].get(key)
            if kind is None:
                raise ConfigError(f"{source}: unknown field {section}.{key}")
            where = f"{section}.{key}"
            if kind == "matrix":
                val = _matrix(raw, where)
            elif kind == "weight":
                val = "identity" if raw.strip() == "identity" else _matrix(raw, where)
            elif kind == "vector":
                val = _vector(raw, where)
            else:
                try:
                    val = kind(raw.strip())
                except ValueError:
                    raise ConfigError(f"{where}: expected {kind.__name__}, got {raw!r}") from None
            values[key] = val
    return RunConfig(**values)


def load_config(path_or_preset, **overrides) -> RunConfig:
    """Read a config file, or a shipped preset by name, then apply overrides and validate."""
    name = str(path_or_preset)
    if name in PRESETS:
        text = resources.files("ctqlearn.presets").joinpath(f"{name}.ini").read_text()
        source = f"preset:{name}"
    else:
        path = Path(name)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path} (presets: {', '.join(PRESETS)})")
        text, source = path.read_text(), str(path)
    cfg = parse_config(text, source)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides).validate()
