"""Sensing Models"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Vector3 = Tuple[float, float, float]

RSSI_FLOOR_DBM = -120.0
RSSI_CEIL_DBM = 0.0


class ObservationFrame(BaseModel):
    """One time step's sensor snapshot (phone frame)"""
    timestamp: float
    rssi: Dict[str, float] = {}  # absent = not heard
    mf: Optional[Vector3] = None  # µT
    gravity: Optional[Vector3] = None  # m/s²

    @field_validator("rssi")
    @classmethod
    def _rssi_in_range(cls, v: Dict[str, float]) -> Dict[str, float]:
        for an_id, dbm in v.items():
            if not RSSI_FLOOR_DBM <= dbm <= RSSI_CEIL_DBM:
                raise ValueError(f"rssi for {an_id} out of [-120, 0] dBm: {dbm}")
        return v

    @model_validator(mode="after")
    def _gravity_with_mf(self) -> "ObservationFrame":
        if self.mf is not None:
            if self.gravity is None or math.hypot(*self.gravity) <= 0:
                raise ValueError("magnetometer reading requires a non-zero gravity vector")
        return self


class MagneticSignature(BaseModel):
    """Orientation-independent magnetic field (vertical, horizontal)"""
    mf_v: float
    mf_h: float = Field(ge=0)


class FingerprintDatabase(BaseModel):
    """
    Labeled <fingerprint, room> instances

    Each feature row is [rssi(ap_1), ..., rssi(ap_k), mf_v, mf_h].
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    ap_list: List[str]
    features: np.ndarray
    labels: Tuple[str, ...]
    missing_fill: float = -100.0
    include_mf: bool = True

    @model_validator(mode="after")
    def _shapes_agree(self) -> "FingerprintDatabase":
        width = len(self.ap_list) + (2 if self.include_mf else 0)
        if self.features.ndim != 2 or self.features.shape[1] != width:
            raise ValueError(
                f"feature matrix must be (n, {width}), got {self.features.shape}"
            )
        if self.features.shape[0] != len(self.labels):
            raise ValueError("one label per feature row required")
        return self

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def width(self) -> int:
        return int(self.features.shape[1])

    @property
    def classes(self) -> List[str]:
        return sorted(set(self.labels))

    def class_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for label in self.labels:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def subset(self, indices: Sequence[int]) -> "FingerprintDatabase":
        idx = np.asarray(indices, dtype=int)
        return self.model_copy(update={
            "features": self.features[idx],
            "labels": tuple(self.labels[i] for i in idx),
        })

    def select(self, aps: Optional[Sequence[str]] = None, include_mf: bool = True) -> "FingerprintDatabase":
        """Feature-set view: keep only `aps` (in that order) and optionally the MF pair"""
        if include_mf and not self.include_mf:
            raise ValueError("database carries no MF columns")
        aps = list(self.ap_list if aps is None else aps)
        missing = [a for a in aps if a not in self.ap_list]
        if missing:
            raise ValueError(f"unknown APs: {missing}")
        columns = [self.ap_list.index(a) for a in aps]
        if include_mf:
            k = len(self.ap_list)
            columns += [k, k + 1]
        return FingerprintDatabase(
            ap_list=aps,
            features=self.features[:, columns],
            labels=self.labels,
            missing_fill=self.missing_fill,
            include_mf=include_mf,
        )


class CoordFingerprintDatabase(BaseModel):
    """Fingerprints labeled with survey-point coordinates (KNN baseline)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    ap_list: List[str]
    features: np.ndarray
    coords: np.ndarray  # (n, 2), meters
    missing_fill: float = -100.0

    @model_validator(mode="after")
    def _shapes_agree(self) -> "CoordFingerprintDatabase":
        width = len(self.ap_list) + 2
        if self.features.ndim != 2 or self.features.shape[1] != width:
            raise ValueError(f"feature matrix must be (n, {width}), got {self.features.shape}")
        if self.coords.shape != (self.features.shape[0], 2):
            raise ValueError("one (x, y) coordinate per feature row required")
        return self

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def check_bounds(self, bounds: Tuple[float, float]):
        """Raise if any survey point lies outside the plan rectangle"""
        width, height = bounds
        inside = (
            (self.coords[:, 0] >= 0) & (self.coords[:, 0] <= width)
            & (self.coords[:, 1] >= 0) & (self.coords[:, 1] <= height)
        )
        if not inside.all():
            raise ValueError(f"survey point {int(np.argmin(inside))} outside floor-plan bounds")
