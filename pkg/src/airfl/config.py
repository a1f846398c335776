"""Experiment configuration, loaded from a single JSON document.

Defaults follow the reference simulation setup (K=20 devices, batch 64,
Q=1, 2 uW power budget, -83 dBm noise, 2.4 GHz carrier, 100 m cell).
``ExperimentConfig.desk()`` returns the small synthetic setup used by the
test suite.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .channel import dbm_to_watts
from .errors import ConfigError
from .feedback import SCHEMES
from .learning import OBJECTIVES

THRESHOLD_MODES = ("optimized", "fixed")


@dataclass
class ExperimentConfig:
    schemes: list = field(default_factory=lambda: list(SCHEMES))
    objective: str = "mnist-mlp"
    K: int = 20
    # model length; None means "whatever the objective implies"
    d: int | None = None
    Q: int = 1
    T: int = 100
    batch_size: int = 64
    eta: float = 0.05
    sigma2_dbm: float = -83.0
    # overrides sigma2_dbm when set
    sigma2_w: float | None = None
    P: float | list = 2e-6
    cell_radius: float = 100.0
    f_c: float = 2.4e9
    threshold_mode: str = "optimized"
    eps: float | list = 0.01
    B: float = 0.1
    L: float = 0.1
    lambda_min: float = 1e-4
    seeds: list = field(default_factory=lambda: [0])
    out: str = "airfl_out"
    heterogeneity: float = 1.0
    n_per_device: int = 200
    signal: float = 3.0
    l2: float = 0.0
    mnist_images: str | None = None
    mnist_labels: str | None = None
    workers: int = 1

    def __post_init__(self):
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> "ExperimentConfig":
        """Synthetic logistic regression, K=10, d=200, T=200, eta=0.2, 5 seeds."""
        base = dict(objective="synthetic-logistic", K=10, d=200, T=200, eta=0.2, seeds=[0, 1, 2, 3, 4])
        base.update(overrides)
        return cls(**base)

    @property
    def sigma2(self) -> float:
        if self.sigma2_w is not None:
            return float(self.sigma2_w)
        return dbm_to_watts(self.sigma2_dbm)

    @property
    def model_dim(self) -> int:
        if self.objective == "mnist-mlp":
            return OBJECTIVES["mnist-mlp"]().dim
        return int(self.d)

    def validate(self) -> None:
        if isinstance(self.schemes, str):
            self.schemes = [self.schemes]
        if not self.schemes:
            raise ConfigError("at least one scheme is required", "schemes")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}; expected one of {list(SCHEMES)}", "schemes")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; expected one of {list(OBJECTIVES)}", "objective")
        if self.objective == "mnist-mlp":
            if self.d is not None and self.d != self.model_dim:
                raise ConfigError(f"the MLP has {self.model_dim} parameters, got d={self.d}", "d")
        elif self.d is None:
            self.d = 200
        for name in ("K", "Q", "T", "batch_size", "n_per_device", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"must be a positive integer, got {v!r}", name)
        if self.d is not None and (not isinstance(self.d, int) or self.d < 1):
            raise ConfigError(f"must be a positive integer, got {self.d!r}", "d")
        for name in ("eta", "cell_radius", "f_c", "B", "L", "signal"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"must be positive, got {v!r}", name)
        if self.sigma2_w is not None and self.sigma2_w < 0:
            raise ConfigError("noise power must be nonnegative", "sigma2_w")
        if not 0 < self.lambda_min < 0.5:
            raise ConfigError("must lie in (0, 0.5)", "lambda_min")
        if self.heterogeneity < 0 or self.l2 < 0:
            raise ConfigError("must be nonnegative", "heterogeneity" if self.heterogeneity < 0 else "l2")
        self.P = self._per_device("P", self.P, positive=True)
        self.eps = self._per_device("eps", self.eps, positive=False)
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"expected one of {list(THRESHOLD_MODES)}", "threshold_mode")
        if isinstance(self.seeds, int):
            self.seeds = [self.seeds]
        if not self.seeds or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of nonnegative integers", "seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seed", "seeds")

    def _per_device(self, name, value, positive: bool):
        if isinstance(value, (list, tuple)):
            if len(value) != self.K:
                raise ConfigError(f"expected {self.K} entries, got {len(value)}", name)
            vals = [float(v) for v in value]
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            vals = float(value)
        else:
            raise ConfigError(f"expected a number or a list, got {value!r}", name)
        check = vals if isinstance(vals, list) else [vals]
        if any((v <= 0) if positive else (v < 0) for v in check):
            raise ConfigError("must be positive" if positive else "must be nonnegative", name)
        return vals

    def per_device(self, name) -> list:
        v = getattr(self, name)
        return list(v) if isinstance(v, list) else [v] * self.K

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        for k in data:
            if k not in known:
                raise ConfigError("unknown field", k)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())
