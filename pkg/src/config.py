"""Configuration for reservoir-gradient experiments.

Defaults are the reference damped-oscillator experiment. Config files
hold flat keys mirroring the command-line flag names, one ``key = value``
per line with ``#`` comments; YAML ``key: value`` mappings are read too.
"""

import os
import re
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import ConfigError
from .integrators import Integrator

REFERENCE_ICS = (0.0, 2.3, -3.1, 0.0)  # (t, q, p, w)
REFERENCE_H0 = 0.001
REFERENCE_H_SET = (0.036, 0.03, 0.028, 0.02, 0.017, 0.01)
DEFAULT_T_END = 20.0
DEFAULT_H = 0.01
DEFAULT_FP_TOL = 1e-14
DEFAULT_FP_MAX_ITER = 500
# Delta denominator guard of the order protocol
ORDER_DELTA_GUARD = 3e-3

COMMANDS = ("simulate", "order", "compare", "exact")

DEFAULT_INTEGRATORS = {
    "simulate": ["moddg"],
    "order": ["moddg"],
    "compare": ["moddg", "pqplf", "erk4"],
    "exact": [],
}


class RunConfig(BaseModel):
    """Fully resolved settings of one CLI run."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    command: Literal["simulate", "order", "compare", "exact"] = "simulate"
    system: Literal["dho", "duffing", "vdp"] = "dho"
    b: float = 0.1
    k: float = 1.0
    mu: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    integrator: Optional[List[str]] = None
    q0: float = REFERENCE_ICS[1]
    p0: float = REFERENCE_ICS[2]
    w0: float = REFERENCE_ICS[3]
    h: float = DEFAULT_H
    h0: float = REFERENCE_H0
    h_set: Tuple[float, ...] = Field(REFERENCE_H_SET, alias="h-set")
    t_end: float = Field(DEFAULT_T_END, alias="t-end")
    steps: Optional[int] = None
    fp_tol: float = Field(DEFAULT_FP_TOL, alias="fp-tol")
    fp_max_iter: int = Field(DEFAULT_FP_MAX_ITER, alias="fp-max-iter")
    delta_guard: Optional[float] = Field(None, alias="delta-guard")
    workers: int = 1
    out: str = "results"

    @field_validator("h_set", "integrator", mode="before")
    @classmethod
    def _split_text(cls, value: Any) -> Any:
        # key = value files give lists as comma-separated text
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("h", "h0", "t_end", "fp_tol")
    @classmethod
    def _positive(cls, value: float, info) -> float:
        if not value > 0.0:
            raise ValueError(f"{_flag(info.field_name)} must be positive")
        return value

    @field_validator("delta_guard")
    @classmethod
    def _positive_guard(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0.0:
            raise ValueError("delta-guard must be positive")
        return value

    @field_validator("h_set")
    @classmethod
    def _positive_set(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not h > 0.0 for h in value):
            raise ValueError("h-set values must be positive")
        if len(set(value)) < 2:
            raise ValueError("h-set needs at least two distinct values")
        return value

    @field_validator("fp_max_iter", "workers")
    @classmethod
    def _at_least_one(cls, value: int, info) -> int:
        if value < 1:
            raise ValueError(f"{_flag(info.field_name)} must be at least 1")
        return value

    @field_validator("steps")
    @classmethod
    def _non_negative_steps(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 0:
            raise ValueError("steps must be non-negative")
        return value

    @field_validator("integrator")
    @classmethod
    def _known_integrators(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        if value is None:
            return None
        return [Integrator.parse(text).spec for text in value]

    @model_validator(mode="after")
    def _resolve(self) -> "RunConfig":
        if self.b < 0.0:
            raise ValueError("b must be non-negative")
        if self.k <= 0.0:
            raise ValueError("k must be positive")
        if self.command == "order" and self.t_end <= max(self.h_set):
            raise ValueError("t-end must exceed the largest h in h-set")
        if self.integrator is None:
            object.__setattr__(self, "integrator", list(DEFAULT_INTEGRATORS[self.command]))
        return self

    @property
    def system_params(self) -> Dict[str, float]:
        return {"b": self.b, "k": self.k, "mu": self.mu, "alpha": self.alpha, "beta": self.beta}

    @property
    def integrators(self) -> List[Integrator]:
        """Parsed integrators, with delta-guard applied to delta variants."""
        return [Integrator.parse(text).with_delta_guard(self.delta_guard) for text in self.integrator]

    @property
    def n_steps(self) -> int:
        if self.steps is not None:
            return self.steps
        return int(self.t_end / self.h + 1e-9)


def _flag(field_name: str) -> str:
    return RunConfig.model_fields[field_name].alias or field_name


def flag_names() -> Dict[str, str]:
    """Map flag/file key names to RunConfig field names."""
    return {(f.alias or name): name for name, f in RunConfig.model_fields.items()}


def render_config(cfg: RunConfig) -> str:
    """Serialize a configuration as a config file (the command is not stored)."""
    values = cfg.model_dump(mode="json", by_alias=True, exclude={"command"})
    return yaml.dump(values, default_flow_style=False, sort_keys=False)


# "key = value" at the start of a line, rewritten to "key: value" before YAML parsing
_ASSIGNMENT = re.compile(r"^[ \t]*([A-Za-z_][\w-]*)[ \t]*=[ \t]*(.*)$", re.MULTILINE)


class Config:
    """Configuration file manager."""

    def __init__(self, config_path: Optional[str] = None):
        """Initialize from the given path; without a path the configuration is empty."""
        self.config_path = config_path
        self.config: Dict[str, Any] = {}
        if config_path is not None:
            self.reload()

    @classmethod
    def from_text(cls, text: str) -> "Config":
        config = cls()
        config.config = cls._parse(text, "<text>")
        return config

    @staticmethod
    def _parse(text: str, source: str) -> Dict[str, Any]:
        try:
            data = yaml.safe_load(_ASSIGNMENT.sub(r"\1: \2", text))
        except yaml.YAMLError as e:
            raise ConfigError(f"Could not parse {source}: {e}") from e
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"{source} must contain a mapping of key: value pairs")
        return data

    def reload(self) -> None:
        """Reload configuration from disk."""
        if not os.path.exists(self.config_path):
            raise ConfigError(f"Config file not found: {self.config_path}", self.config_path)
        with open(self.config_path, "r", encoding="utf-8") as f:
            self.config = self._parse(f.read(), self.config_path)

    def save(self) -> None:
        """Save current configuration to disk."""
        directory = os.path.dirname(self.config_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self.config_path, "w", encoding="utf-8") as f:
            yaml.dump(self.config, f, default_flow_style=False, sort_keys=False)

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.config)
