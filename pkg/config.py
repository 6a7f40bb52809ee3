"""
Experiment configuration: one flat schema holding every leaf field.

Resolution order is defaults < JSON file < command-line flags. A JSON
sidecar written by a previous run is accepted as a config file.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from chi_process import DEFAULT_MESH_DELTA, FEASIBILITY_FLOOR, ModelSpec
from covariance import DEFAULT_BERMAN_TOLERANCE, CovarianceModel, Family
from errors import ConfigError
from gaussian_sim import DEFAULT_EMBEDDING_TOLERANCE

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240611


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # model
    m: int = Field(default=1, ge=1)
    k: int = Field(default=0, ge=0)
    kappa: float = Field(default=2.0, gt=0)
    alpha: float = Field(default=1.0, gt=0, le=2)
    family: Family = Field(default="power_exponential", description="Used when models is not given")
    C: List[float] = Field(default_factory=lambda: [1.0], description="One constant, or one per component")
    gamma: Optional[float] = Field(default=None, gt=0)
    models: Optional[List[CovarianceModel]] = Field(default=None, description="Explicit per-component models")

    # grids
    t_max: float = Field(default=10.0, gt=0)
    n: int = Field(default=1025, ge=2)
    lags: List[float] = Field(default_factory=lambda: [1e-3, 1e-4, 1e-5, 1e-6])
    u: List[float] = Field(default_factory=lambda: [4.0])
    T: List[float] = Field(default_factory=lambda: [5.0])
    x_grid: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 4.0])
    t_values: List[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])
    t_window: float = Field(default=5.0, gt=0)
    a: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])
    horizon: float = Field(default=30.0, gt=0, description="a * J")
    J: Optional[int] = Field(default=None, ge=1, description="Overrides horizon / a when set")

    # replication
    reps: int = Field(default=10_000, ge=1)
    limit_reps: Optional[int] = Field(default=None, ge=1, description="Limit-process replications, defaults to reps")
    parallelism: int = Field(default=1, ge=1)
    master_seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2 ** 64)

    # tolerances and constants
    quadrature_tol: float = Field(default=1e-9, gt=0)
    embedding_tol: float = Field(default=DEFAULT_EMBEDDING_TOLERANCE, gt=0)
    berman_tolerance: float = Field(default=DEFAULT_BERMAN_TOLERANCE, gt=0)
    berman_horizon: Optional[float] = Field(default=None, gt=0)
    mesh_delta: float = Field(default=DEFAULT_MESH_DELTA, gt=0)
    piterbarg_K: float = Field(default=10.0, gt=0)
    piterbarg_beta: Optional[float] = Field(default=None, description="Defaults to 2/kappa + 1")
    h_override: Optional[float] = Field(default=None, gt=0, description="Use this H instead of estimating it")
    min_tail: float = Field(default=FEASIBILITY_FLOOR, gt=0)
    permutations: int = Field(default=199, ge=1)
    out: Optional[str] = Field(default=None, description="CSV path; the sidecar is written next to it")

    def component_models(self) -> List[CovarianceModel]:
        if self.models:
            return list(self.models)
        total = self.m + self.k
        if len(self.C) not in (1, total):
            raise ConfigError(f"C needs 1 or {total} values, got {len(self.C)}")
        constants = self.C * total if len(self.C) == 1 else self.C
        try:
            return [
                CovarianceModel(family=self.family, C=c, alpha=self.alpha, gamma=self.gamma)
                for c in constants
            ]
        except ValidationError as exc:
            raise ConfigError(f"invalid covariance model: {_first_error(exc)}") from exc

    def model_spec(self) -> ModelSpec:
        try:
            return ModelSpec(m=self.m, k=self.k, kappa=self.kappa, alpha=self.alpha, models=self.component_models())
        except ValidationError as exc:
            raise ConfigError(f"invalid model spec: {_first_error(exc)}") from exc

    def J_for(self, a: float) -> int:
        if self.J is not None:
            return self.J
        return max(math.ceil(self.horizon / a), 1)


def _first_error(exc: ValidationError) -> str:
    error = exc.errors()[0]
    location = ".".join(str(part) for part in error.get("loc", ()))
    return f"{location}: {error['msg']}" if location else error["msg"]


def load_config_file(path: str) -> Dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        logger.debug("reading config from sidecar %s", path)
        data = data["config"]
    return data


def resolve_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    data: Dict[str, Any] = load_config_file(path) if path else {}
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_first_error(exc)}") from exc
