"""Particle Filter Models"""

from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.landmark import RoomPosterior


class FilterConfig(BaseModel):
    """Enhanced particle filter settings"""
    particles: int = Field(default=2500, gt=0)
    n_prime_pct: float = Field(default=10.0, ge=0, le=100)
    sigma_base_m: float = Field(default=1.0, gt=0)
    sigma_per_m: float = Field(default=0.25, ge=0)
    seed: int = 42

    def sigma_for(self, distance_m: float) -> float:
        """Range-proportional Gaussian spread for one anchor"""
        return self.sigma_base_m + self.sigma_per_m * distance_m


class ParticleSet(BaseModel):
    """
    N weighted particles over graph nodes

    The generator is shared between successive sets of one tracking
    session; every stochastic phase draws from it in a fixed order.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    nodes: np.ndarray  # int node indices, shape (N,)
    weights: np.ndarray  # shape (N,)
    rng: np.random.Generator
    degenerate: bool = False

    @model_validator(mode="after")
    def _shapes_agree(self) -> "ParticleSet":
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ValueError("nodes and weights must be equal-length vectors")
        if (self.weights < 0).any():
            raise ValueError("weights must be non-negative")
        return self

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])


class ObservationBundle(BaseModel):
    """Range and landmark observations for one filter step"""
    ranges: Dict[str, float] = {}  # an_id -> estimated distance (m)
    sigma: Dict[str, float] = {}  # an_id -> Gaussian spread (m)
    room_posterior: Optional[RoomPosterior] = None

    @model_validator(mode="after")
    def _sigma_per_range(self) -> "ObservationBundle":
        for an_id in self.ranges:
            s = self.sigma.get(an_id)
            if s is None or s <= 0:
                raise ValueError(f"anchor {an_id} needs a positive sigma")
        for an_id, d in self.ranges.items():
            if d < 0:
                raise ValueError(f"anchor {an_id}: negative range {d}")
        return self


class StepRecord(BaseModel):
    """Outcome of one sample/update/resample/estimate cycle"""
    estimate: Tuple[float, float]
    degenerate: bool = False
    elapsed_ms: float = 0.0
