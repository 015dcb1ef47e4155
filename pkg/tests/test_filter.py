"""Tests for Particle Filter Service"""

import numpy as np
import pytest
from scipy.stats import chisquare

from src.models.filter import FilterConfig, ObservationBundle, ParticleSet
from src.models.floor_plan import FloorPlan, Region
from src.models.landmark import RoomPosterior
from src.models.simulation import GroundTruthTrace, TracePoint
from src.services.filter_service import ParticleFilter, build_bundle, range_exponents
from src.services.simulation_service import EnvironmentSimulator, mirrored_rooms_environment, stationary_trace
from src.services.state_space_service import build_grid, walkable_centroid
from tests.conftest import rect


@pytest.fixture
def line_graph():
    """Nodes at x = 0..4, y = 0"""
    plan = FloorPlan(bounds=(4.0, 0.5), rooms=[Region(id="strip", polygon=rect(0, 0, 4, 0.5))])
    return build_grid(plan, 1.0)


@pytest.fixture
def office_graph(office_env):
    return build_grid(office_env.plan)


def particle_set(nodes, weights, seed=0):
    return ParticleSet(nodes=np.asarray(nodes), weights=np.asarray(weights, dtype=float),
                       rng=np.random.default_rng(seed))


class TestInit:
    """Initial uniform particle spread"""

    def test_single_particle(self, line_graph):
        """One particle carries all the weight"""
        ps = ParticleFilter(line_graph).init(n=1, seed=0)
        assert ps.size == 1
        assert ps.weights[0] == 1.0

    def test_default_count(self, office_graph):
        """Default population is 2500 equally weighted particles"""
        ps = ParticleFilter(office_graph).init(seed=0)
        assert ps.size == 2500
        assert np.allclose(ps.weights, 1 / 2500)

    def test_nodes_valid(self, office_graph):
        """Every particle sits on a graph node"""
        ps = ParticleFilter(office_graph).init(n=500, seed=1)
        assert ((ps.nodes >= 0) & (ps.nodes < office_graph.num_nodes)).all()

    def test_non_positive_count(self, line_graph):
        """A non-positive particle count is rejected"""
        with pytest.raises(ValueError):
            ParticleFilter(line_graph).init(n=0)

    @pytest.mark.parametrize("seed", range(3))
    def test_uniform_over_rooms(self, office_graph, seed):
        """Per-room particle counts follow each room's share of nodes"""
        n = 20000
        rooms = len(office_graph.room_names)
        ps = ParticleFilter(office_graph).init(n=n, seed=seed)
        observed = np.bincount(office_graph.room_codes[ps.nodes], minlength=rooms)
        expected = n * np.bincount(office_graph.room_codes, minlength=rooms) / office_graph.num_nodes
        assert chisquare(observed, expected).pvalue > 1e-3


class TestSample:
    """Redistribution plus one-hop motion"""

    def test_no_redistribution_moves_one_hop(self, office_graph):
        """Without redistribution particles move at most one hop"""
        start = office_graph.nearest_node(9.0, 8.0)
        ps = particle_set(np.full(300, start), np.full(300, 1 / 300))
        moved = ParticleFilter(office_graph).sample(ps, n_prime=0)
        allowed = {start, *office_graph.neighbors(start)}
        assert set(moved.nodes.tolist()) <= allowed

    def test_redistributes_lowest_weight_share(self, office_graph):
        """The lowest-weight n' percent are scattered over the graph"""
        start = office_graph.nearest_node(9.0, 8.0)
        n = 2500
        ps = particle_set(np.full(n, start), np.full(n, 1 / n))
        moved = ParticleFilter(office_graph).sample(ps, n_prime=10)
        allowed = {start, *office_graph.neighbors(start)}
        assert set(moved.nodes[250:].tolist()) <= allowed
        assert sum(node not in allowed for node in moved.nodes[:250].tolist()) >= 240

    def test_full_redistribution_spreads(self, office_graph):
        """Full redistribution reaches every room"""
        start = office_graph.nearest_node(9.0, 8.0)
        ps = particle_set(np.full(1000, start), np.full(1000, 1 / 1000))
        moved = ParticleFilter(office_graph).sample(ps, n_prime=100)
        rooms = {office_graph.node_room(int(i)) for i in moved.nodes}
        assert len(rooms) == 9

    def test_lowest_weights_redistributed_first(self, line_graph):
        """Particles are ordered by ascending weight before redistribution"""
        ps = particle_set([0, 1, 2, 3], [0.4, 0.1, 0.3, 0.2])
        moved = ParticleFilter(line_graph).sample(ps, n_prime=0)
        assert moved.weights.tolist() == [0.1, 0.2, 0.3, 0.4]


class TestUpdateWeights:
    """Ranging and landmark likelihood"""

    def test_range_exponents(self):
        """Exponents are normalized inverse ranges"""
        assert np.allclose(range_exponents([1, 2, 4]), [4 / 7, 2 / 7, 1 / 7])

    def test_equal_ranges(self):
        """Equal ranges share the exponent evenly"""
        assert np.allclose(range_exponents([3, 3, 3]), [1 / 3] * 3)

    def test_zero_residual_is_maximal(self, single_room_env):
        """The node matching every range gets the largest weight"""
        graph = build_grid(single_room_env.plan)
        anchors = single_room_env.plan.anchor_positions()
        target = graph.nearest_node(2.0, 3.5)
        ranges = {a: float(np.hypot(graph.x[target] - x, graph.y[target] - y)) for a, (x, y) in anchors.items()}
        bundle = ObservationBundle(ranges=ranges, sigma={a: 1.0 for a in ranges},
                                   room_posterior=RoomPosterior.certain("room"))
        pf = ParticleFilter(graph, anchor_positions=anchors)
        n = graph.num_nodes
        ps = pf.update_weights(particle_set(np.arange(n), np.full(n, 1 / n)), bundle)
        assert int(np.argmax(ps.weights)) == target
        assert ps.weights.sum() == pytest.approx(1.0)

    def test_landmark_gates_rooms(self):
        """A certain posterior zeroes every other room"""
        env = mirrored_rooms_environment()
        graph = build_grid(env.plan)
        pf = ParticleFilter(graph)
        n = graph.num_nodes
        bundle = ObservationBundle(room_posterior=RoomPosterior.certain("right"))
        ps = pf.update_weights(particle_set(np.arange(n), np.full(n, 1 / n)), bundle)
        assert ps.weights[graph.room_mask("left")].sum() == 0.0
        assert ps.weights[graph.room_mask("right")].sum() == pytest.approx(1.0)

    def test_all_zero_resets_to_uniform(self):
        """All-zero weights reset to uniform and flag degeneracy"""
        env = mirrored_rooms_environment()
        graph = build_grid(env.plan)
        left = graph.nearest_node(1.0, 1.0)
        pf = ParticleFilter(graph)
        bundle = ObservationBundle(room_posterior=RoomPosterior.certain("right"))
        ps = pf.update_weights(particle_set(np.full(10, left), np.full(10, 0.1)), bundle)
        assert ps.degenerate
        assert np.allclose(ps.weights, 0.1)

    def test_anchor_without_position(self, line_graph):
        """Ranges to anchors without position are rejected"""
        bundle = ObservationBundle(ranges={"ghost": 2.0}, sigma={"ghost": 1.0})
        with pytest.raises(ValueError, match="ghost"):
            ParticleFilter(line_graph).update_weights(particle_set([0], [1.0]), bundle)


class TestResample:
    """Systematic resampling"""

    def test_equal_weights_reproduce_once(self, line_graph):
        """Equal weights keep each particle exactly once"""
        ps = ParticleFilter(line_graph).resample(particle_set([0, 1, 2, 3], [0.25] * 4, seed=5))
        assert sorted(ps.nodes.tolist()) == [0, 1, 2, 3]

    def test_single_heavy_particle(self, line_graph):
        """All offspring come from the only weighted particle"""
        ps = ParticleFilter(line_graph).resample(particle_set([0, 1, 2, 3], [0, 0, 1, 0]))
        assert ps.nodes.tolist() == [2, 2, 2, 2]

    @pytest.mark.parametrize("seed", range(10))
    def test_offspring_counts(self, line_graph, seed):
        """Offspring counts are floor or ceil of N * w"""
        ps = ParticleFilter(line_graph).resample(particle_set([0, 1, 2, 3], [0.5, 0.25, 0.25, 0.0], seed))
        assert np.bincount(ps.nodes, minlength=4).tolist() == [2, 1, 1, 0]

    @pytest.mark.parametrize("seed", range(20))
    def test_zero_weight_never_drawn(self, line_graph, seed):
        """Particles with zero weight have no offspring, wherever they sit"""
        weights = np.array([0.0, 0.1, 0.2, 0.7, 0.0])
        ps = ParticleFilter(line_graph).resample(particle_set([0, 1, 2, 3, 4], weights, seed))
        assert not np.isin(ps.nodes, [0, 4]).any()

    def test_weights_uniform_after(self, line_graph):
        """Weights are uniform after resampling"""
        ps = ParticleFilter(line_graph).resample(particle_set([0, 1, 2], [0.2, 0.5, 0.3]))
        assert np.allclose(ps.weights, 1 / 3)

    def test_unbiased(self, line_graph):
        """Mean offspring count matches N * w"""
        weights = np.array([0.05, 0.35, 0.1, 0.3, 0.2])
        pf = ParticleFilter(line_graph)
        counts = np.zeros(5)
        trials = 2000
        for seed in range(trials):
            ps = pf.resample(particle_set([0, 1, 2, 3, 4], weights, seed))
            counts += np.bincount(ps.nodes, minlength=5)
        assert np.allclose(counts / trials, 5 * weights, atol=0.05)


class TestEstimate:
    """Weighted centroid"""

    def test_midpoint(self, line_graph):
        """Equal weights give the midpoint"""
        assert ParticleFilter(line_graph).estimate(particle_set([0, 2], [0.5, 0.5])) == (1.0, 0.0)

    def test_single(self, line_graph):
        """One particle is its own estimate"""
        assert ParticleFilter(line_graph).estimate(particle_set([3], [1.0])) == (3.0, 0.0)

    def test_convex_combination(self, line_graph):
        """Estimate is the weight-averaged position"""
        assert ParticleFilter(line_graph).estimate(particle_set([0, 4], [0.75, 0.25])) == (1.0, 0.0)


class TestStep:
    """Full sample/update/resample/estimate cycle"""

    def run(self, env, truth, steps, seed=7, config=None):
        sim = EnvironmentSimulator(env)
        graph = sim.graph
        config = config or FilterConfig(particles=2000, sigma_base_m=0.5, sigma_per_m=0.1, seed=seed)
        trace = GroundTruthTrace(points=[TracePoint(t=i / 3, x=truth[0], y=truth[1], room="room")
                                         for i in range(steps)])
        frames = sim.gen_observations(trace, seed=1)
        anchors = env.plan.anchor_positions()
        pf = ParticleFilter(graph, config, anchors)
        ps = pf.init()
        records = []
        for frame in frames:
            bundle = build_bundle(frame, env.truth_ranging, anchors, config, RoomPosterior.certain("room"))
            ps, record = pf.step(ps, bundle)
            records.append(record)
        return records

    def test_converges_noiseless(self, single_room_env):
        """Noiseless ranges pull the estimate within 0.5 m"""
        truth = (2.75, 3.25)
        records = self.run(single_room_env, truth, steps=10)
        x, y = records[-1].estimate
        assert np.hypot(x - truth[0], y - truth[1]) <= 0.5
        assert not any(r.degenerate for r in records)

    def test_same_seed_same_trajectory(self, single_room_env):
        """Same seed gives the same estimates"""
        first = [r.estimate for r in self.run(single_room_env, (2.0, 2.0), steps=5, seed=3)]
        second = [r.estimate for r in self.run(single_room_env, (2.0, 2.0), steps=5, seed=3)]
        assert first == second

    def test_uninformative_stays_near_centroid(self, single_room_env):
        """Without evidence the estimate stays near the walkable centroid"""
        graph = build_grid(single_room_env.plan)
        pf = ParticleFilter(graph, FilterConfig(particles=2500, seed=11))
        ps = pf.init()
        bundle = ObservationBundle(room_posterior=RoomPosterior.uniform(["room"]))
        for _ in range(10):
            ps, record = pf.step(ps, bundle)
        cx, cy = walkable_centroid(graph)
        assert np.hypot(record.estimate[0] - cx, record.estimate[1] - cy) < 0.3


def office_frames(env, xy, steps, seed):
    sim = EnvironmentSimulator(env)
    return sim.gen_observations(stationary_trace(env.plan, [xy], steps=steps, rate=3.0), seed=seed)


class TestRoomGating:
    """A certain room posterior confines the cloud to that room"""

    @pytest.mark.parametrize("seed", range(5))
    def test_all_mass_in_room_every_step(self, office_env, office_graph, seed):
        """After every step all particles and all weight sit in the certain room"""
        anchors = office_env.plan.anchor_positions()
        config = FilterConfig(particles=2500, seed=seed)
        pf = ParticleFilter(office_graph, config, anchors)
        inside = office_graph.room_mask("R5")
        ps = pf.init()
        for frame in office_frames(office_env, (9.0, 8.0), steps=30, seed=seed):
            bundle = build_bundle(frame, office_env.truth_ranging, anchors, config, RoomPosterior.certain("R5"))
            ps, record = pf.step(ps, bundle)
            assert not record.degenerate
            assert inside[ps.nodes].all()
            assert ps.weights[inside[ps.nodes]].sum() == pytest.approx(1.0)


@pytest.mark.slow
class TestStepTiming:
    """Per-step cost on the office graph"""

    def test_median_step_time(self, office_env, office_graph):
        """2500 particles and 6 ranging anchors on 4745 nodes: median step under 455 ms"""
        assert office_graph.num_nodes == 4745
        anchors = office_env.plan.anchor_positions()
        assert len(anchors) == 6
        config = FilterConfig(particles=2500, seed=0)
        pf = ParticleFilter(office_graph, config, anchors)
        ps = pf.init()
        timing = []
        for frame in office_frames(office_env, (3.0, 3.0), steps=100, seed=0):
            bundle = build_bundle(frame, office_env.truth_ranging, anchors, config, RoomPosterior.certain("R1"))
            ps, record = pf.step(ps, bundle)
            timing.append(record.elapsed_ms)
        assert len(timing) == 100
        assert np.median(timing) <= 455.0
