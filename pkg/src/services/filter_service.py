"""Particle Filter Service"""

import math
import time
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog

from src.models.filter import FilterConfig, ObservationBundle, ParticleSet, StepRecord
from src.models.floor_plan import XY, FloorPlanGraph
from src.models.landmark import RoomPosterior
from src.models.ranging import RangingParams
from src.models.sensing import ObservationFrame
from src.services.ranging_service import hybrid_range

logger = structlog.get_logger()

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def range_exponents(ranges: Sequence[float]) -> np.ndarray:
    """m_j = (1/d_j) / sum_n (1/d_n): nearer anchors weigh more"""
    d = np.maximum(np.asarray(ranges, dtype=float), 1e-6)
    inv = 1.0 / d
    return inv / inv.sum()


def build_bundle(
    frame: ObservationFrame,
    params: RangingParams,
    anchor_positions: Mapping[str, XY],
    config: FilterConfig,
    posterior: Optional[RoomPosterior] = None,
) -> ObservationBundle:
    """Hybrid-ranged distances for heard anchors with known position and params"""
    ranges: Dict[str, float] = {}
    sigma: Dict[str, float] = {}
    for an_id, dbm in sorted(frame.rssi.items()):
        if an_id not in anchor_positions or an_id not in params:
            continue
        d = hybrid_range(dbm, params[an_id], params.los_threshold_m)
        ranges[an_id] = d
        sigma[an_id] = config.sigma_for(d)
    return ObservationBundle(ranges=ranges, sigma=sigma, room_posterior=posterior)


class ParticleFilter:
    """
    Enhanced particle filter over a floor-plan graph

    Each step runs sample -> update_weights -> resample -> estimate. All
    randomness comes from the ParticleSet's generator: redistribution
    targets first, then motion choices in particle order, then the
    resampling offset.
    """

    def __init__(
        self,
        graph: FloorPlanGraph,
        config: Optional[FilterConfig] = None,
        anchor_positions: Optional[Mapping[str, XY]] = None,
    ):
        if graph.num_nodes == 0:
            raise ValueError("graph has no nodes")
        self.graph = graph
        self.config = config or FilterConfig()
        self.anchor_positions = dict(anchor_positions or {})

    def init(self, n: Optional[int] = None, seed: Optional[int] = None) -> ParticleSet:
        """N particles on nodes drawn uniformly with replacement, equal weights"""
        n = self.config.particles if n is None else n
        if n <= 0:
            raise ValueError("particle count must be positive")
        rng = np.random.default_rng(self.config.seed if seed is None else seed)
        nodes = rng.integers(0, self.graph.num_nodes, size=n)
        return ParticleSet(nodes=nodes, weights=np.full(n, 1.0 / n), rng=rng)

    def sample(self, ps: ParticleSet, n_prime: Optional[float] = None) -> ParticleSet:
        """
        Redistribute the lowest-weight N'% uniformly; the rest stay or hop

        Survivors pick uniformly among their closed neighborhood (stay plus
        each neighbor). Weight-order ties are broken by particle index.
        """
        n_prime = self.config.n_prime_pct if n_prime is None else n_prime
        if not 0 <= n_prime <= 100:
            raise ValueError("n_prime must be within [0, 100]")
        n = ps.size
        order = np.argsort(ps.weights, kind="stable")
        nodes = ps.nodes[order].copy()
        weights = ps.weights[order].copy()

        n_moved = int(math.floor(n_prime * n / 100.0 + 1e-9))
        if n_moved:
            nodes[:n_moved] = ps.rng.integers(0, self.graph.num_nodes, size=n_moved)

        survivors = nodes[n_moved:]
        if survivors.size:
            degree = self.graph.degree[survivors]
            choice = np.floor(ps.rng.random(survivors.size) * (degree + 1)).astype(int)
            choice = np.minimum(choice, degree)
            hop = choice > 0
            table = self.graph.neighbor_table[survivors[hop]]
            # column of the choice-th existing neighbor in the padded row
            cumulative = np.cumsum(table >= 0, axis=1)
            column = np.argmax(cumulative >= choice[hop][:, None], axis=1)
            survivors = survivors.copy()
            survivors[hop] = table[np.arange(table.shape[0]), column]
            nodes[n_moved:] = survivors

        return ParticleSet(nodes=nodes, weights=weights, rng=ps.rng)

    def _log_ranging_likelihood(self, ps: ParticleSet, bundle: ObservationBundle) -> np.ndarray:
        if not bundle.ranges:
            return np.zeros(ps.size)
        an_ids = list(bundle.ranges)
        missing = [a for a in an_ids if a not in self.anchor_positions]
        if missing:
            raise ValueError(f"ranging anchors without known position: {missing}")

        d_hat = np.array([bundle.ranges[a] for a in an_ids])
        sigma = np.array([bundle.sigma[a] for a in an_ids])
        exponents = range_exponents(d_hat)
        anchors = np.array([self.anchor_positions[a] for a in an_ids])

        px = self.graph.x[ps.nodes][:, None]
        py = self.graph.y[ps.nodes][:, None]
        dist = np.hypot(px - anchors[:, 0], py - anchors[:, 1])
        residual = d_hat - dist
        log_p = -np.log(sigma) - _LOG_SQRT_2PI - residual ** 2 / (2 * sigma ** 2)
        return log_p @ exponents

    def _log_landmark_likelihood(self, ps: ParticleSet, bundle: ObservationBundle) -> np.ndarray:
        if bundle.room_posterior is None:
            return np.zeros(ps.size)
        probs = np.array([bundle.room_posterior.get(r) for r in self.graph.room_names])
        with np.errstate(divide="ignore"):
            return np.log(probs)[self.graph.room_codes[ps.nodes]]

    def update_weights(self, ps: ParticleSet, bundle: ObservationBundle) -> ParticleSet:
        """
        New weight ∝ prior × ranging likelihood × landmark likelihood

        Normalized once after the full product. If every weight vanishes the
        set is reset to uniform weights and flagged degenerate.
        """
        with np.errstate(divide="ignore"):
            log_w = (
                np.log(ps.weights)
                + self._log_ranging_likelihood(ps, bundle)
                + self._log_landmark_likelihood(ps, bundle)
            )
        peak = log_w.max()
        if not np.isfinite(peak):
            logger.warning("filter_degenerate_reset", particles=ps.size)
            return ParticleSet(nodes=ps.nodes, weights=np.full(ps.size, 1.0 / ps.size),
                               rng=ps.rng, degenerate=True)
        w = np.exp(log_w - peak)
        return ParticleSet(nodes=ps.nodes, weights=w / w.sum(), rng=ps.rng)

    def resample(self, ps: ParticleSet) -> ParticleSet:
        """Systematic resampling: one offset u in [0, 1/N) over the cumulative weights"""
        n = ps.size
        cumulative = np.cumsum(ps.weights)
        cumulative /= cumulative[-1]  # zero-weight particles keep an empty interval
        positions = (ps.rng.random() + np.arange(n)) / n
        picks = np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)
        return ParticleSet(nodes=ps.nodes[picks], weights=np.full(n, 1.0 / n),
                           rng=ps.rng, degenerate=ps.degenerate)

    def estimate(self, ps: ParticleSet) -> Tuple[float, float]:
        """Weighted centroid of particle positions"""
        return (
            float(ps.weights @ self.graph.x[ps.nodes]),
            float(ps.weights @ self.graph.y[ps.nodes]),
        )

    def step(self, ps: ParticleSet, bundle: ObservationBundle) -> Tuple[ParticleSet, StepRecord]:
        started = time.perf_counter()
        ps = self.sample(ps)
        ps = self.update_weights(ps, bundle)
        ps = self.resample(ps)
        position = self.estimate(ps)
        record = StepRecord(
            estimate=position,
            degenerate=ps.degenerate,
            elapsed_ms=(time.perf_counter() - started) * 1000.0,
        )
        return ps, record
