"""Ranging Models"""

import math
from typing import Dict, List

from pydantic import BaseModel, Field


class AnchorRangingParams(BaseModel):
    """Propagation constants for one anchor node"""
    an_id: str
    alpha: float = Field(gt=0)  # meters
    beta: float = Field(lt=0)  # per dBm
    gamma: float = Field(gt=0)  # path-loss exponent
    p_r0: float = Field(ge=-120, le=0)  # dBm at r0 = 1 m

    @classmethod
    def from_ldpl(cls, an_id: str, gamma: float, p_r0: float) -> "AnchorRangingParams":
        """NLR constants that reproduce the LDPL curve exactly"""
        beta = -math.log(10) / (10 * gamma)
        return cls(an_id=an_id, alpha=math.exp(-beta * p_r0), beta=beta, gamma=gamma, p_r0=p_r0)


class RangingParams(BaseModel):
    """Per-anchor ranging constants plus the LOS switch distance"""
    anchors: Dict[str, AnchorRangingParams]
    los_threshold_m: float = Field(default=5.0, gt=0)

    def __getitem__(self, an_id: str) -> AnchorRangingParams:
        try:
            return self.anchors[an_id]
        except KeyError:
            raise ValueError(f"no ranging parameters for anchor '{an_id}'") from None

    def __contains__(self, an_id: str) -> bool:
        return an_id in self.anchors

    @classmethod
    def from_rows(cls, rows: List[AnchorRangingParams], los_threshold_m: float = 5.0) -> "RangingParams":
        return cls(anchors={r.an_id: r for r in rows}, los_threshold_m=los_threshold_m)


class ReferencePoint(BaseModel):
    """Measured RSSI at a known distance from an anchor"""
    an_id: str
    true_distance_m: float = Field(gt=0)
    rssi_dbm: float


class RangingErrorStats(BaseModel):
    """Ranging accuracy of one propagation model"""
    model: str
    samples: int
    mean_abs_error_m: float
    sd_error_m: float
    max_abs_error_m: float


# Six-AN office calibration (alpha, beta, gamma, p_r0)
OFFICE_ANCHOR_PARAMS: List[AnchorRangingParams] = [
    AnchorRangingParams(an_id="AN1", alpha=1.264, beta=-0.03614, gamma=2.7, p_r0=-30),
    AnchorRangingParams(an_id="AN2", alpha=1.278, beta=-0.03711, gamma=2.7, p_r0=-32),
    AnchorRangingParams(an_id="AN3", alpha=0.3701, beta=-0.05153, gamma=2.7, p_r0=-30),
    AnchorRangingParams(an_id="AN4", alpha=0.5663, beta=-0.05153, gamma=2.7, p_r0=-31),
    AnchorRangingParams(an_id="AN5", alpha=0.3496, beta=-0.05328, gamma=2.7, p_r0=-30),
    AnchorRangingParams(an_id="AN6", alpha=0.9739, beta=-0.03578, gamma=2.7, p_r0=-30),
]
