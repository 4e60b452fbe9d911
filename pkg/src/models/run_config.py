"""Run configuration models: column schema, grid axes and experiment settings."""

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ..utils.config import get_config
from ..utils.exceptions import ConfigurationError
from .synthetic import SynthConfig

Method = Literal["matching", "entropy", "iptw"]
Variant = Literal["x-only", "x-plus-u"]
Experiment = Literal["benchmark", "rct-equivalence", "cross-center-hr", "cross-center-survival", "synthetic"]
PermutationMode = Literal["y-within-arm", "u-within-arm", "u-global"]
AblationVariant = Literal["signed-outcome", "signed-rmst", "random-neighbors"]
ScoreSource = Literal["external", "crossfit"]

VARIANTS: tuple = ("x-only", "x-plus-u")
PERMUTATION_MODES: tuple = ("y-within-arm", "u-within-arm", "u-global")
ABLATION_VARIANTS: tuple = ("signed-outcome", "signed-rmst", "random-neighbors")


class ColumnSchema(BaseModel):
    """Maps the canonical column roles onto CSV header names."""

    id: str = "id"
    time: str = "time"
    event: str = "event"
    treatment: str = "treatment"
    external_score: str = "external_score"
    center: str = "center"
    # None means "every remaining column is a covariate"
    covariates: Optional[List[str]] = None

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ColumnSchema":
        """Load a schema from a JSON or YAML mapping file."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
            return cls(**data)
        except (OSError, yaml.YAMLError, ValidationError, TypeError) as e:
            raise ConfigurationError(f"Invalid schema file {path}: {e}", details={"path": str(path)})


def _yaml_defaults() -> Dict[str, object]:
    """Analysis and grid defaults from config/config.yml."""
    config = get_config()
    analysis, grids = config.analysis, config.grids
    return {
        "tau": analysis.tau,
        "pseudo_scope": analysis.pseudo_scope,
        "winsor_quantile": analysis.winsor_quantile,
        "landmark": analysis.landmark,
        "standardize_per_center": analysis.standardize_per_center,
        "include_score_in_cox": analysis.include_score_in_cox,
        "score_horizon": analysis.score_horizon,
        "score_folds": analysis.score_folds,
        "k_grid": list(grids.k),
        "include_score_grid": list(grids.include_score),
        "n_bins_grid": list(grids.n_bins),
        "moments_grid": list(grids.moments),
        "clip_grid": list(grids.clip),
    }


class SyntheticExperimentConfig(BaseModel):
    """
    Seed sweep over the synthetic generator. Each generated cohort is
    analysed as ``analysis`` with the generator's theta as benchmark.
    """

    seeds: List[int] = Field(default_factory=lambda: list(range(20)))
    base: SynthConfig = Field(default_factory=SynthConfig)
    analysis: Literal["benchmark", "rct-equivalence", "cross-center-hr"] = "benchmark"

    @field_validator("seeds")
    @classmethod
    def _nonempty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("seeds must be nonempty")
        return v


class RunConfig(BaseModel):
    """
    Everything a grid run needs. Loaded from JSON; CLI flags override
    individual fields through ``build``.
    """

    inputs: List[str] = Field(default_factory=list)
    schema_mapping: ColumnSchema = Field(default_factory=ColumnSchema, alias="schema")

    tau: float = 60.0
    pseudo_scope: Literal["full", "per-arm"] = "full"
    winsor_quantile: float = 0.95
    landmark: float = 60.0
    standardize_per_center: bool = False
    include_score_in_cox: bool = True

    k_grid: List[int] = Field(default_factory=lambda: [5, 10, 20])
    include_score_grid: List[bool] = Field(default_factory=lambda: [False, True])
    score_sources: List[ScoreSource] = Field(default_factory=lambda: ["crossfit"])
    score_horizon: float = 60.0
    score_folds: int = 5

    methods: List[Method] = Field(default_factory=lambda: ["matching", "entropy", "iptw"])
    n_bins_grid: List[int] = Field(default_factory=lambda: [3, 5, 10])
    moments_grid: List[Literal[1, 2]] = Field(default_factory=lambda: [1, 2])
    clip_grid: List[float] = Field(default_factory=lambda: [0.01, 0.05, 0.10])

    experiment: Experiment = "benchmark"
    benchmark_loghr: Optional[Union[float, Dict[str, float]]] = None
    margin: float = math.log(1.10)
    permutation: Optional[PermutationMode] = None
    ablation: Optional[AblationVariant] = None
    synthetic: Optional[SyntheticExperimentConfig] = None

    seed: int = 0

    model_config = {"populate_by_name": True}

    @field_validator("k_grid", "include_score_grid", "score_sources", "methods",
                     "n_bins_grid", "moments_grid", "clip_grid")
    @classmethod
    def _grid_nonempty(cls, v):
        if not v:
            raise ValueError("grid axes must be nonempty")
        return v

    @field_validator("k_grid", "n_bins_grid")
    @classmethod
    def _positive_ints(cls, v: List[int]) -> List[int]:
        if any(x < 1 for x in v):
            raise ValueError("k and n_bins values must be >= 1")
        return v

    @field_validator("clip_grid")
    @classmethod
    def _clip_range(cls, v: List[float]) -> List[float]:
        if any(not (0.0 < c < 0.5) for c in v):
            raise ValueError("clip values must lie in (0, 0.5)")
        return v

    @field_validator("winsor_quantile")
    @classmethod
    def _winsor_range(cls, v: float) -> float:
        if not (0.5 < v <= 1.0):
            raise ValueError("winsor_quantile must lie in (0.5, 1]")
        return v

    @field_validator("tau", "landmark", "score_horizon", "margin")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @model_validator(mode="after")
    def _experiment_fields(self) -> "RunConfig":
        if self.experiment == "synthetic" and self.synthetic is None:
            self.synthetic = SyntheticExperimentConfig()
        if self.permutation is not None and self.ablation is not None:
            raise ValueError("permutation and ablation are mutually exclusive")
        if self.score_folds < 2:
            raise ValueError("score_folds must be >= 2")
        return self

    # ------------------------------------------------------------------

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "RunConfig":
        """Load a JSON config file, then apply non-None overrides."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"Cannot read config {path}: {e}", details={"path": str(path)})
        return cls.build(data, **overrides)

    @classmethod
    def build(cls, data: Optional[dict] = None, **overrides) -> "RunConfig":
        """Validate a mapping plus overrides, converting failures to ConfigurationError."""
        merged = dict(data or {})
        merged.update({k: v for k, v in overrides.items() if v is not None})
        for key, value in _yaml_defaults().items():
            merged.setdefault(key, value)
        try:
            return cls.model_validate(merged)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid run configuration: {e}", details={"errors": e.errors()})

    def benchmark_for(self, dataset: str) -> Optional[float]:
        """Benchmark log-HR for a dataset (scalar applies to all datasets)."""
        if isinstance(self.benchmark_loghr, dict):
            return self.benchmark_loghr.get(dataset)
        return self.benchmark_loghr

    def config_hash(self) -> str:
        """Stable SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def grid_instances(self) -> List["GridInstance"]:
        """Cartesian product of the grid axes, in a fixed order."""
        instances: List[GridInstance] = []
        for method in self.methods:
            if method == "matching":
                params = [("n_bins", v) for v in self.n_bins_grid]
            elif method == "entropy":
                params = [("moments", v) for v in self.moments_grid]
            else:
                params = [("clip", v) for v in self.clip_grid]
            for source in self.score_sources:
                for k in self.k_grid:
                    for include in self.include_score_grid:
                        for name, value in params:
                            instances.append(GridInstance(method, k, include, source, name, value))
        return instances

    def default_instance(self, method: str) -> "GridInstance":
        """One-off configuration: first value per axis, except moments (last) and clip (0.05 when listed)."""
        if method == "matching":
            param = ("n_bins", self.n_bins_grid[0])
        elif method == "entropy":
            param = ("moments", self.moments_grid[-1])
        else:
            param = ("clip", 0.05 if 0.05 in self.clip_grid else self.clip_grid[0])
        return GridInstance(method, self.k_grid[0], self.include_score_grid[0], self.score_sources[0], *param)


@dataclass(frozen=True)
class GridInstance:
    """One hyperparameter configuration of one balancing method."""

    method: str
    k: int
    include_score: bool
    score_source: str
    param_name: str
    param_value: float

    @property
    def config_id(self) -> str:
        value = self.param_value
        shown = int(value) if self.param_name in ("n_bins", "moments") else value
        return (
            f"{self.method}|k={self.k}|score_in_distance={str(self.include_score).lower()}"
            f"|score={self.score_source}|{self.param_name}={shown}"
        )

    @property
    def baseline_key(self) -> tuple:
        """Fields the X-only variant depends on (k and distance flag do not matter)."""
        return (self.method, self.score_source, self.param_name, self.param_value)

    def axis_values(self) -> Dict[str, object]:
        shown = int(self.param_value) if self.param_name in ("n_bins", "moments") else self.param_value
        return {
            "k": self.k,
            "include_score": self.include_score,
            "score_source": self.score_source,
            self.param_name: shown,
        }
