"""Simulation Models"""

import math
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from src.models.floor_plan import FloorPlan, XY
from src.models.ranging import RangingParams
from src.utils.config import settings


class MagneticRoomField(BaseModel):
    """Smooth per-room magnetic field: base value plus a sinusoid"""
    base_v: float  # µT
    base_h: float = Field(ge=0)  # µT
    amplitude: float = Field(default=0.0, ge=0)
    wavelength_m: float = Field(default=4.0, gt=0)
    phase: float = 0.0

    def value(self, x: float, y: float) -> Tuple[float, float]:
        k = 2 * math.pi / self.wavelength_m
        wave_x = math.sin(k * x + self.phase)
        wave_y = math.cos(k * y + self.phase)
        mf_v = self.base_v + self.amplitude * wave_x * wave_y
        mf_h = self.base_h + self.amplitude * wave_y * math.cos(k * x + self.phase)
        return mf_v, max(mf_h, 0.0)


class EnvironmentModel(BaseModel):
    """Ground truth used to synthesize sensor readings"""
    plan: FloorPlan
    truth_ranging: RangingParams
    shadowing_sigma_db: float = Field(default=0.0, ge=0)
    mf_rooms: Dict[str, MagneticRoomField]
    mf_noise_sigma: float = Field(default=0.0, ge=0)
    # Positions of anchors the plan lists without coordinates
    hidden_anchor_positions: Dict[str, XY] = {}
    audibility_dbm: float = -95.0
    max_speed_mps: float = Field(default_factory=lambda: settings.MAX_WALK_SPEED_MPS, gt=0)

    @model_validator(mode="after")
    def _consistent(self) -> "EnvironmentModel":
        registry = set(self.plan.anchor_ids)
        for an_id in self.truth_ranging.anchors:
            if an_id not in registry:
                raise ValueError(f"truth ranging anchor '{an_id}' missing from plan")
        known = self.plan.anchor_positions()
        for an_id in self.truth_ranging.anchors:
            if an_id not in known and an_id not in self.hidden_anchor_positions:
                raise ValueError(f"anchor '{an_id}' has no position to simulate from")
        for room_id in self.plan.room_ids:
            if room_id not in self.mf_rooms:
                raise ValueError(f"no magnetic field defined for '{room_id}'")
        return self

    def anchor_position(self, an_id: str) -> XY:
        known = self.plan.anchor_positions()
        if an_id in known:
            return known[an_id]
        if an_id in self.hidden_anchor_positions:
            return self.hidden_anchor_positions[an_id]
        raise ValueError(f"unknown anchor '{an_id}'")


class TracePoint(BaseModel):
    """Ground-truth position sample"""
    t: float
    x: float
    y: float
    room: str


class GroundTruthTrace(BaseModel):
    """Time-ordered ground-truth positions"""
    points: List[TracePoint]

    def __len__(self) -> int:
        return len(self.points)

    def segments(self) -> List[Tuple[int, int]]:
        """Index ranges [start, stop) of runs at an unchanged position"""
        runs: List[Tuple[int, int]] = []
        start = 0
        for i in range(1, len(self.points) + 1):
            if i == len(self.points) or (
                (self.points[i].x, self.points[i].y) != (self.points[start].x, self.points[start].y)
            ):
                runs.append((start, i))
                start = i
        return runs


class SurveySpec(BaseModel):
    """Per-room random-walk survey plan"""
    instances_per_room: Dict[str, int] = {}
    default_instances: Optional[int] = None
    speed_mps: float = Field(default=0.8, gt=0)
    rate_hz: float = Field(default=3.0, gt=0)

    def instances_for(self, room_id: str) -> Optional[int]:
        return self.instances_per_room.get(room_id, self.default_instances)
