"""Landmark Detection Models"""

from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator


class RoomPosterior(BaseModel):
    """Per-room probability distribution p(Zld_t | room)"""
    probabilities: Dict[str, float]

    @field_validator("probabilities")
    @classmethod
    def _is_distribution(cls, v: Dict[str, float]) -> Dict[str, float]:
        if not v:
            raise ValueError("posterior needs at least one room")
        if any(p < 0 for p in v.values()):
            raise ValueError("probabilities must be non-negative")
        total = sum(v.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {total}")
        return v

    def get(self, room_id: str) -> float:
        return self.probabilities.get(room_id, 0.0)

    def argmax(self) -> str:
        """Most probable room; ties go to the lexicographically smallest id"""
        return min(self.probabilities, key=lambda r: (-self.probabilities[r], r))

    @classmethod
    def certain(cls, room_id: str) -> "RoomPosterior":
        return cls(probabilities={room_id: 1.0})

    @classmethod
    def uniform(cls, rooms: List[str]) -> "RoomPosterior":
        return cls(probabilities={r: 1.0 / len(rooms) for r in rooms})


class KStarSpec(BaseModel):
    """KStar classifier configuration"""
    type: Literal["kstar"] = "kstar"
    blend: float = Field(default=30.0, gt=0, le=100)


class KnnSpec(BaseModel):
    """KNN classifier configuration"""
    type: Literal["knn"] = "knn"
    k: int = Field(default=3, ge=1)


ClassifierSpec = Annotated[Union[KStarSpec, KnnSpec], Field(discriminator="type")]


class CrossValidationResult(BaseModel):
    """k-fold evaluation of a classifier on a fingerprint database"""
    classifier: str
    accuracy: float  # percent
    folds: int
    fold_accuracies: List[float]
    stratified: bool = True
    warning: Optional[str] = None
    build_time_ms: float = 0.0
    instances: int
