"""Run configuration shared by the command-line tools."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

__all__ = ["METHODS", "RunConfig", "load_config"]

METHODS = ("sn-lasso", "sh-ridge", "scsd8", "scsd12", "scsd16")


@dataclass(frozen=True)
class RunConfig:
    l_max: int = 8
    eval_grid: str = "ico4"
    gradient_grid: str | None = None  # None: chosen from n_gradients
    n_gradients: int = 41
    b_value: float = 1000.0  # acquisition used by precompute and fit
    response_ratio: float = 10.0
    diffusivity: float = 1e-3
    lambda_count: int = 500
    lambda_min: float = 1e-5
    lambda_max: float = 1e-2
    window: int = 25
    eps: float = 2e-4
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_iter: int = 5000
    refine: bool = True  # tighter final solve at the selected penalty
    tau: float = 0.1
    scsd_lambda: float = 1.0
    methods: tuple = METHODS
    scenarios: tuple = ()  # empty: every scenario
    reps: int | None = None  # None: scenario default
    seed: int = 20240101
    out: str = "fodkit-out"
    peak_neighborhood_deg: float = 25.0
    peak_alpha: float = 0.25
    peak_cluster_deg: float = 5.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigurationError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.l_max < 0 or self.l_max % 2:
            raise ConfigurationError("l_max must be a nonnegative even integer")
        if not (0 < self.lambda_min < self.lambda_max) or self.lambda_count < 2:
            raise ConfigurationError("lambda grid needs 0 < min < max and at least two points")
        if self.window < 1 or self.eps <= 0:
            raise ConfigurationError("selection window must be positive")
        if self.eps_abs <= 0 or self.eps_rel <= 0 or self.max_iter < 1:
            raise ConfigurationError("invalid ADMM tolerances")
        if not self.b_value > 0:
            raise ConfigurationError("b-value must be positive")
        if self.reps is not None and self.reps < 1:
            raise ConfigurationError("reps must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        d["scenarios"] = list(self.scenarios)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(data)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then non-None ``overrides``."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {p} not found")
        cfg = RunConfig.from_json(p.read_text(encoding="utf-8"))
    changes = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**changes) if changes else cfg
