"""Ranging Service"""

import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from src.models.ranging import (
    AnchorRangingParams,
    RangingErrorStats,
    RangingParams,
    ReferencePoint,
)
from src.models.sensing import RSSI_CEIL_DBM, RSSI_FLOOR_DBM
from src.utils.config import settings

logger = structlog.get_logger()

R0_M = 1.0

PathLike = Union[str, Path]


def _clamp(p: float) -> float:
    return min(max(p, RSSI_FLOOR_DBM), RSSI_CEIL_DBM)


def forward_ldpl_power(r: float, params: AnchorRangingParams) -> float:
    """Received power at distance r under the log-distance model (noiseless)"""
    return params.p_r0 - 10.0 * params.gamma * math.log10(r / R0_M)


def ldpl_range(p: float, params: AnchorRangingParams) -> float:
    return R0_M * 10.0 ** ((params.p_r0 - _clamp(p)) / (10.0 * params.gamma))


def nlr_range(p: float, params: AnchorRangingParams) -> float:
    return params.alpha * math.exp(params.beta * _clamp(p))


def los_threshold_power(params: AnchorRangingParams, los_threshold_m: Optional[float] = None) -> float:
    """Power expected under LOS at the switch distance (5 m by default)"""
    threshold = settings.LOS_THRESHOLD_M if los_threshold_m is None else los_threshold_m
    return forward_ldpl_power(threshold, params)


def hybrid_range(p: float, params: AnchorRangingParams, los_threshold_m: Optional[float] = None) -> float:
    """LDPL strictly above the LOS threshold power, NLR at or below it"""
    if _clamp(p) > los_threshold_power(params, los_threshold_m):
        return ldpl_range(p, params)
    return nlr_range(p, params)


def fit_nlr(reference: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """
    Fit r = alpha * exp(beta * p) from (distance m, rssi dBm) pairs

    Ordinary least squares of ln r on p; alpha = exp(intercept), beta = slope.
    """
    if len(reference) < 2:
        raise ValueError("underdetermined fit")
    r = np.array([d for d, _ in reference], dtype=float)
    p = np.array([power for _, power in reference], dtype=float)
    if np.ptp(p) == 0:
        raise ValueError("underdetermined fit")
    if (r <= 0).any():
        raise ValueError("reference distances must be positive")
    slope, intercept = np.polyfit(p, np.log(r), 1)
    return float(math.exp(intercept)), float(slope)


def fit_ldpl(reference: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Fit p = p_r0 - 10 * gamma * log10(r); returns (gamma, p_r0)"""
    if len(reference) < 2:
        raise ValueError("underdetermined fit")
    r = np.array([d for d, _ in reference], dtype=float)
    p = np.array([power for _, power in reference], dtype=float)
    if (r <= 0).any():
        raise ValueError("reference distances must be positive")
    x = np.log10(r / R0_M)
    if np.ptp(x) == 0:
        raise ValueError("underdetermined fit")
    slope, intercept = np.polyfit(x, p, 1)
    return float(-slope / 10.0), float(intercept)


def fit_ranging_params(
    reference: Iterable[ReferencePoint],
    los_threshold_m: Optional[float] = None,
) -> RangingParams:
    """Per-anchor NLR and LDPL fit from reference measurements"""
    threshold = settings.LOS_THRESHOLD_M if los_threshold_m is None else los_threshold_m
    grouped: Dict[str, List[Tuple[float, float]]] = {}
    for ref in reference:
        grouped.setdefault(ref.an_id, []).append((ref.true_distance_m, ref.rssi_dbm))

    rows = []
    for an_id in sorted(grouped):
        points = grouped[an_id]
        alpha, beta = fit_nlr(points)
        gamma, p_r0 = fit_ldpl(points)
        rows.append(AnchorRangingParams(
            an_id=an_id, alpha=alpha, beta=beta, gamma=gamma, p_r0=_clamp(p_r0)
        ))
        logger.info("ranging_fitted", an_id=an_id, alpha=alpha, beta=beta, gamma=gamma, p_r0=p_r0,
                    points=len(points))
    return RangingParams.from_rows(rows, los_threshold_m=threshold)


def evaluate_ranging_models(
    params: RangingParams,
    samples: Iterable[ReferencePoint],
) -> List[RangingErrorStats]:
    """Ranging error of LDPL, NLR and the hybrid model against true distances"""
    models = {
        "ldpl": lambda p, a: ldpl_range(p, a),
        "nlr": lambda p, a: nlr_range(p, a),
        "hybrid": lambda p, a: hybrid_range(p, a, params.los_threshold_m),
    }
    samples = list(samples)
    stats = []
    for name, model in models.items():
        errors = np.array([
            model(s.rssi_dbm, params[s.an_id]) - s.true_distance_m for s in samples
        ])
        if errors.size == 0:
            raise ValueError("no samples to evaluate")
        stats.append(RangingErrorStats(
            model=name,
            samples=int(errors.size),
            mean_abs_error_m=float(np.abs(errors).mean()),
            sd_error_m=float(errors.std()),
            max_abs_error_m=float(np.abs(errors).max()),
        ))
    return stats


def load_ranging_params(path: PathLike, los_threshold_m: Optional[float] = None) -> RangingParams:
    """Read `an_id,alpha,beta,gamma,p_r0`"""
    frame = pd.read_csv(path, dtype={"an_id": str})
    expected = ["an_id", "alpha", "beta", "gamma", "p_r0"]
    if list(frame.columns) != expected:
        raise ValueError(f"ranging params header must be {','.join(expected)}")
    rows = [AnchorRangingParams(**record) for record in frame.to_dict(orient="records")]
    threshold = settings.LOS_THRESHOLD_M if los_threshold_m is None else los_threshold_m
    return RangingParams.from_rows(rows, los_threshold_m=threshold)


def save_ranging_params(params: RangingParams, path: PathLike):
    frame = pd.DataFrame([a.model_dump() for a in params.anchors.values()],
                         columns=["an_id", "alpha", "beta", "gamma", "p_r0"])
    frame.to_csv(path, index=False, lineterminator="\n")


def load_reference_points(path: PathLike) -> List[ReferencePoint]:
    """Read `an_id,true_distance_m,rssi_dbm`"""
    frame = pd.read_csv(path, dtype={"an_id": str})
    expected = ["an_id", "true_distance_m", "rssi_dbm"]
    if list(frame.columns) != expected:
        raise ValueError(f"reference header must be {','.join(expected)}")
    return [ReferencePoint(**record) for record in frame.to_dict(orient="records")]


def save_reference_points(points: Sequence[ReferencePoint], path: PathLike):
    frame = pd.DataFrame([p.model_dump() for p in points],
                         columns=["an_id", "true_distance_m", "rssi_dbm"])
    frame.to_csv(path, index=False, lineterminator="\n")
