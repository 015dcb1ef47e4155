"""Metrics Service"""

import math
from typing import List, Optional, Sequence

import numpy as np

from src.models.run import MetricsReport, SurveyTimeInputs


def p90(errors: Sequence[float]) -> float:
    """90th percentile, linear interpolation between order statistics"""
    return float(np.percentile(np.asarray(errors, dtype=float), 90, method="linear"))


def error_cdf(errors: Sequence[float]) -> List[tuple]:
    """(error, fraction <= error) for each sorted error"""
    ordered = np.sort(np.asarray(errors, dtype=float))
    n = ordered.size
    return [(float(e), (i + 1) / n) for i, e in enumerate(ordered)]


def build_report(
    method: str,
    errors: Sequence[float],
    step_timing_ms: Sequence[float] = (),
    degeneracy_count: int = 0,
    skipped_frames: int = 0,
    survey_time_min: Optional[float] = None,
) -> MetricsReport:
    """Summary statistics recomputable from per_point_errors"""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors to summarize")
    mean = float(e.mean())
    sd = float(e.std())
    half = 1.96 * sd / math.sqrt(e.size)
    timing = [float(t) for t in step_timing_ms]
    return MetricsReport(
        method=method,
        per_point_errors=[float(v) for v in e],
        mean_error=mean,
        sd_error=sd,
        p90_error=p90(e),
        ci95_mean=(mean - half, mean + half),
        cdf=error_cdf(e),
        step_timing_ms=timing,
        median_step_ms=float(np.median(timing)) if timing else None,
        degeneracy_count=degeneracy_count,
        skipped_frames=skipped_frames,
        survey_time_min=survey_time_min,
    )


def survey_time_minutes(inputs: SurveyTimeInputs) -> float:
    """
    Offline survey effort in minutes

    pfml: instances * s_rate + ranging time
    knn:  survey_points * (t_sp + t_sw) + instances * s_rate
    with s_rate in seconds per instance (1 / rate_hz).
    """
    s_rate = 1.0 / inputs.rate_hz
    fingerprinting_s = inputs.instances * s_rate
    if inputs.method == "pfml":
        return fingerprinting_s / 60.0 + inputs.ranging_min
    return (inputs.survey_points * (inputs.t_sp_s + inputs.t_sw_s) + fingerprinting_s) / 60.0
