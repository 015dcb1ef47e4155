"""Baseline Localization Service"""

from typing import Mapping, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel

from src.models.floor_plan import XY
from src.models.sensing import CoordFingerprintDatabase
from src.services.landmark_service import nearest_indices
from src.utils.config import settings
from src.utils.errors import DegenerateGeometryError

logger = structlog.get_logger()

STEP_TOLERANCE_M = 1e-9
MAX_ITERATIONS = 100
INITIAL_DAMPING = 1e-3


class NlstResult(BaseModel):
    """Trilateration outcome"""
    position: Tuple[float, float]
    converged: bool
    iterations: int
    residual: float  # sum of squared range residuals


def _residuals(x: np.ndarray, anchors: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x - anchors, axis=1) - ranges


def _cost(x: np.ndarray, anchors: np.ndarray, ranges: np.ndarray) -> float:
    r = _residuals(x, anchors, ranges)
    return float(r @ r)


def nlst_locate(
    ranges: Mapping[str, float],
    an_positions: Mapping[str, XY],
    initial: Optional[XY] = None,
) -> NlstResult:
    """
    Nonlinear least-squares trilateration (Gauss-Newton, Levenberg damping)

    Minimizes sum_j (|x - a_j| - d_j)^2. Damping starts at 1e-3 and is
    multiplied by 10 on a rejected step, divided by 10 on an accepted one.
    Stops when the step norm drops below 1e-9 m or after 100 iterations.
    """
    an_ids = [a for a in sorted(ranges) if a in an_positions]
    if len(an_ids) < 3:
        raise DegenerateGeometryError("degenerate geometry: fewer than 3 ranging anchors")
    anchors = np.array([an_positions[a] for a in an_ids], dtype=float)
    d = np.array([ranges[a] for a in an_ids], dtype=float)
    if np.linalg.matrix_rank(anchors[1:] - anchors[0], tol=1e-9) < 2:
        raise DegenerateGeometryError("degenerate geometry: anchors are collinear")

    x = anchors.mean(axis=0) if initial is None else np.asarray(initial, dtype=float)
    cost = _cost(x, anchors, d)
    damping = INITIAL_DAMPING
    converged = False
    iterations = 0

    for iterations in range(1, MAX_ITERATIONS + 1):
        diff = x - anchors
        dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-12)
        jac = diff / dist[:, None]
        r = dist - d
        step = np.linalg.solve(jac.T @ jac + damping * np.eye(2), -jac.T @ r)
        candidate = x + step
        candidate_cost = _cost(candidate, anchors, d)
        if candidate_cost < cost:
            x, cost = candidate, candidate_cost
            damping /= 10.0
        else:
            damping *= 10.0
        if np.linalg.norm(step) < STEP_TOLERANCE_M:
            converged = True
            break

    if not converged:
        logger.warning("nlst_not_converged", iterations=iterations, residual=cost)
    return NlstResult(position=(float(x[0]), float(x[1])), converged=converged,
                      iterations=iterations, residual=cost)


def knn_locate(db: CoordFingerprintDatabase, features: np.ndarray, k: Optional[int] = None) -> XY:
    """Unweighted mean of the k nearest survey points' coordinates"""
    k = settings.KNN_K if k is None else k
    features = np.asarray(features, dtype=float)
    if features.shape != (db.features.shape[1],):
        raise ValueError(f"feature width {features.shape} does not match database width {db.features.shape[1]}")
    idx = nearest_indices(db.features, features, k)
    x, y = db.coords[idx].mean(axis=0)
    return float(x), float(y)
