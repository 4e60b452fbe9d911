"""Prognostic score and latent factor models."""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

EVENT_DIRECTION = "longer-survivors"
CENSORED_DIRECTION = "earlier-events"


@dataclass(frozen=True)
class ScoreAssignment:
    """
    Baseline prognostic score per patient.

    ``fold_of`` records which cross-fitting fold produced each score;
    -1 marks patients scored by the model fitted on every labeled patient.
    """

    scores: np.ndarray
    source: str  # "external" | "crossfit"
    horizon: Optional[float] = None
    folds: Optional[int] = None
    fold_of: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None  # 1 / 0 / -1 (unlabeled); crossfit only
    scale_warning: bool = False
    attempts: int = 1

    def __post_init__(self):
        if np.any(np.isnan(self.scores)):
            raise ValueError("scores must not contain missing values")

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class NeighborSet:
    """Directional same-arm neighbors of one anchor patient."""

    anchor: int
    neighbors: Tuple[int, ...]
    candidate_count: int
    direction: str

    @property
    def is_empty(self) -> bool:
        return not self.neighbors


@dataclass(frozen=True)
class LatentConfig:
    """Hyperparameters of one latent factor construction."""

    k: int = 10
    include_score: bool = False
    winsor_quantile: float = 0.95
    tau: float = 60.0
    pseudo_scope: str = "full"
    random_neighbors: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.5 < self.winsor_quantile <= 1.0):
            raise ValueError("winsor_quantile must lie in (0.5, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "include_score_in_distance": self.include_score,
            "winsor_quantile": self.winsor_quantile,
            "tau": self.tau,
            "pseudo_scope": self.pseudo_scope,
            "random_neighbors": self.random_neighbors,
        }


@dataclass(frozen=True)
class LatentAssignment:
    """Raw and normalized latent factor with neighbor provenance."""

    raw_u: np.ndarray
    normalized_u: np.ndarray
    fallback_flags: np.ndarray
    config: LatentConfig
    neighbor_sets: Tuple[NeighborSet, ...] = ()
    pseudo_values: Optional[np.ndarray] = None
    variant: str = "standard"
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.raw_u) != len(self.normalized_u):
            raise ValueError("raw_u and normalized_u must align")
        if np.any(np.abs(self.normalized_u) > 1.0):
            raise ValueError("normalized latent values must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.normalized_u)

    @property
    def fallback_count(self) -> int:
        return int(np.sum(self.fallback_flags))

    def with_values(self, normalized_u: np.ndarray, variant: str, raw_u: Optional[np.ndarray] = None,
                    **metadata) -> "LatentAssignment":
        """Copy with replaced latent values (permutation and ablation variants)."""
        merged = dict(self.metadata)
        merged.update(metadata)
        return replace(
            self,
            normalized_u=np.asarray(normalized_u, dtype=float),
            raw_u=self.raw_u if raw_u is None else np.asarray(raw_u, dtype=float),
            variant=variant,
            metadata=merged,
        )

    def neighbor_ids(self, ids: List[str]) -> List[str]:
        """Per-patient ';'-joined neighbor ids."""
        joined = ["" for _ in range(len(self))]
        for ns in self.neighbor_sets:
            joined[ns.anchor] = ";".join(ids[j] for j in ns.neighbors)
        return joined
