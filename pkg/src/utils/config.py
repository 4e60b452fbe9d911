"""Configuration management using pydantic-settings."""

from functools import lru_cache
from pathlib import Path
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent.parent / "config" / "config.yml"


class AnalysisConfig(BaseModel):
    """Analysis defaults shared by every pipeline stage."""
    tau: float = 60.0
    pseudo_scope: Literal["full", "per-arm"] = "full"
    winsor_quantile: float = 0.95
    landmark: float = 60.0
    score_horizon: float = 60.0
    score_folds: int = 5
    standardize_per_center: bool = False
    include_score_in_cox: bool = True


class CoxSolverConfig(BaseModel):
    """Weighted Cox Newton solver settings."""
    max_iter: int = 100
    grad_tol: float = 1e-8
    ridge: float = 1e-9
    max_halvings: int = 30


class EntropySolverConfig(BaseModel):
    """Entropy balancing dual solver settings."""
    max_iter: int = 200
    tol: float = 1e-8


class LogisticSolverConfig(BaseModel):
    """Regularized logistic regression settings."""
    l2: float = 1e-4
    max_iter: int = 100
    tol: float = 1e-10


class ScalarWeightConfig(BaseModel):
    """Bounds for the matched-cohort scalar weight."""
    lower: float = 0.5
    upper: float = 20.0


class SolverConfig(BaseModel):
    """Numerical solver configuration."""
    cox: CoxSolverConfig = CoxSolverConfig()
    entropy: EntropySolverConfig = EntropySolverConfig()
    logistic: LogisticSolverConfig = LogisticSolverConfig()
    scalar_weight: ScalarWeightConfig = ScalarWeightConfig()


class GridDefaults(BaseModel):
    """Default sensitivity grids."""
    k: List[int] = [5, 10, 20]
    include_score: List[bool] = [False, True]
    n_bins: List[int] = [3, 5, 10]
    moments: List[int] = [1, 2]
    clip: List[float] = [0.01, 0.05, 0.10]


class PipelineConfig(BaseModel):
    """Grid execution settings."""
    max_workers: int = 1
    cache_baseline_runs: bool = True


class LoggingFilesConfig(BaseModel):
    """Log file paths."""
    pipeline: str = "logs/pipeline.log"
    numerics: str = "logs/numerics.log"
    error: str = "logs/error.log"


class LoggingConfig(BaseModel):
    """Logging configuration."""
    level: str = "INFO"
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    json_format: bool = False
    file_logging: bool = True
    max_bytes: int = 10485760  # 10MB
    backup_count: int = 5
    files: LoggingFilesConfig = LoggingFilesConfig()


class YAMLConfig(BaseModel):
    """Configuration loaded from YAML file."""
    analysis: AnalysisConfig = AnalysisConfig()
    solvers: SolverConfig = SolverConfig()
    grids: GridDefaults = GridDefaults()
    pipeline: PipelineConfig = PipelineConfig()
    logging: LoggingConfig = LoggingConfig()


class Settings(BaseSettings):
    """Application settings from environment variables."""

    environment: str = Field(default="development", description="Environment (development/production)")
    log_level: Optional[str] = Field(default=None, description="Override log level")
    analysis_config: Optional[str] = Field(default=None, description="Alternate YAML config path")
    max_workers: Optional[int] = Field(default=None, description="Override grid worker count")

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


class AppConfig:
    """Combined application configuration."""

    def __init__(self):
        self.env = Settings()

        config_path = Path(self.env.analysis_config) if self.env.analysis_config else DEFAULT_CONFIG_PATH
        if config_path.exists():
            with open(config_path, "r") as f:
                yaml_data = yaml.safe_load(f) or {}
                self.yaml = YAMLConfig(**yaml_data)
        else:
            self.yaml = YAMLConfig()

        # Environment overrides
        if self.env.log_level:
            self.yaml.logging.level = self.env.log_level
        if self.env.max_workers:
            self.yaml.pipeline.max_workers = self.env.max_workers

    @property
    def analysis(self) -> AnalysisConfig:
        return self.yaml.analysis

    @property
    def solvers(self) -> SolverConfig:
        return self.yaml.solvers

    @property
    def grids(self) -> GridDefaults:
        return self.yaml.grids

    @property
    def pipeline(self) -> PipelineConfig:
        return self.yaml.pipeline

    @property
    def logging(self) -> LoggingConfig:
        return self.yaml.logging

    @property
    def is_production(self) -> bool:
        return self.env.environment.lower() == "production"


@lru_cache()
def get_config() -> AppConfig:
    """Get cached configuration instance."""
    return AppConfig()
