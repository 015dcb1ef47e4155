"""Simulation Service"""

import json
import math
from functools import cached_property, partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import structlog

from src.models.floor_plan import XY, Anchor, FloorPlan, Region
from src.models.ranging import OFFICE_ANCHOR_PARAMS, AnchorRangingParams, RangingParams, ReferencePoint
from src.models.sensing import (
    RSSI_CEIL_DBM,
    RSSI_FLOOR_DBM,
    CoordFingerprintDatabase,
    FingerprintDatabase,
    ObservationFrame,
)
from src.models.simulation import (
    EnvironmentModel,
    GroundTruthTrace,
    MagneticRoomField,
    SurveySpec,
    TracePoint,
)
from src.services.sensing_service import frames_to_matrix
from src.services.state_space_service import WalkableArea, build_grid, floor_plan_from_dict, floor_plan_to_dict
from src.utils.config import settings

logger = structlog.get_logger()

MIN_RANGE_M = 0.1

PathLike = Union[str, Path]


class EnvironmentSimulator:
    """Forward sensor model over an EnvironmentModel"""

    def __init__(self, env: EnvironmentModel):
        self.env = env
        self.area = WalkableArea(env.plan)
        self.ap_list = env.plan.anchor_ids

    @cached_property
    def graph(self):
        return build_grid(self.env.plan)

    def _noiseless_rssi(self, an_id: str, position: XY) -> float:
        if an_id not in self.env.truth_ranging:
            raise ValueError(f"unknown anchor '{an_id}'")
        params = self.env.truth_ranging[an_id]
        ax, ay = self.env.anchor_position(an_id)
        r = max(math.hypot(position[0] - ax, position[1] - ay), MIN_RANGE_M)
        return params.p_r0 - 10.0 * params.gamma * math.log10(r)

    def forward_rssi(self, an_id: str, position: XY, rng: Optional[np.random.Generator] = None) -> float:
        """Log-distance power plus log-normal shadowing, clamped to [-120, 0] dBm"""
        width, height = self.env.plan.bounds
        if not (0 <= position[0] <= width and 0 <= position[1] <= height):
            raise ValueError(f"position {position} outside plan bounds")
        p = self._noiseless_rssi(an_id, position)
        if rng is not None and self.env.shadowing_sigma_db > 0:
            p += rng.normal(0.0, self.env.shadowing_sigma_db)
        return min(max(p, RSSI_FLOOR_DBM), RSSI_CEIL_DBM)

    def forward_mf(self, position: XY, rng: Optional[np.random.Generator] = None):
        """(mf_v, mf_h) of the room field at position, plus Gaussian noise"""
        room = self.area.region_of(*position)
        if room is None:
            raise ValueError(f"position {position} is in a restricted area")
        mf_v, mf_h = self.env.mf_rooms[room].value(*position)
        if rng is not None and self.env.mf_noise_sigma > 0:
            mf_v += rng.normal(0.0, self.env.mf_noise_sigma)
            mf_h = max(mf_h + rng.normal(0.0, self.env.mf_noise_sigma), 0.0)
        return mf_v, mf_h

    def gen_observations(self, trace: GroundTruthTrace, seed: int) -> List[ObservationFrame]:
        """
        One frame per trace point

        Anchors whose noiseless power is below the audibility threshold are
        left out. The magnetometer vector is rendered with gravity on +z and
        a random yaw about it.
        """
        rng = np.random.default_rng(seed)
        gravity = (0.0, 0.0, settings.GRAVITY_MPS2)
        frames = []
        for point in trace.points:
            position = (point.x, point.y)
            rssi = {}
            for an_id in self.ap_list:
                if an_id not in self.env.truth_ranging:
                    continue
                if self._noiseless_rssi(an_id, position) < self.env.audibility_dbm:
                    continue
                rssi[an_id] = self.forward_rssi(an_id, position, rng)
            mf_v, mf_h = self.forward_mf(position, rng)
            yaw = rng.uniform(0.0, 2 * math.pi)
            mf = (mf_h * math.cos(yaw), mf_h * math.sin(yaw), mf_v)
            frames.append(ObservationFrame(timestamp=point.t, rssi=rssi, mf=mf, gravity=gravity))
        return frames

    def random_walk(self, room_id: str, count: int, spec: SurveySpec, rng: np.random.Generator) -> GroundTruthTrace:
        """Walk between random lattice points of one room until `count` samples exist"""
        graph = self.graph
        nodes = np.flatnonzero(graph.room_mask(room_id))
        if nodes.size == 0:
            raise ValueError(f"room '{room_id}' has no walkable nodes")
        points: List[TracePoint] = []
        current = int(rng.choice(nodes))
        t0 = 0.0
        while len(points) < count:
            nxt = int(rng.choice(nodes))
            start = (float(graph.x[current]), float(graph.y[current]))
            end = (float(graph.x[nxt]), float(graph.y[nxt]))
            leg = gen_trace(self.env.plan, [start, end], spec.speed_mps, spec.rate_hz, area=self.area,
                            max_speed=self.env.max_speed_mps)
            for p in leg.points[:-1] if len(leg.points) > 1 else leg.points:
                points.append(p.model_copy(update={"t": t0 + p.t}))
            t0 = points[-1].t + 1.0 / spec.rate_hz
            current = nxt
        return GroundTruthTrace(points=points[:count])

    def build_survey_db(self, spec: SurveySpec, seed: int) -> FingerprintDatabase:
        """Random-walk every room and label each observation with its room"""
        rooms = self.env.plan.room_ids
        uncovered = [r for r in self.env.plan.rooms if spec.instances_for(r.id) is None]
        if uncovered:
            raise ValueError(f"survey does not cover rooms: {[r.id for r in uncovered]}")

        seeds = np.random.SeedSequence(seed).spawn(len(rooms))
        blocks, labels = [], []
        for room_id, child in zip(rooms, seeds):
            count = spec.instances_for(room_id)
            if not count:
                continue
            walk_rng, obs_seed = np.random.default_rng(child), int(child.generate_state(1)[0])
            trace = self.random_walk(room_id, count, spec, walk_rng)
            frames = self.gen_observations(trace, obs_seed)
            blocks.append(frames_to_matrix(frames, self.ap_list))
            labels += [room_id] * len(frames)

        features = np.vstack(blocks) if blocks else np.empty((0, len(self.ap_list) + 2))
        db = FingerprintDatabase(ap_list=list(self.ap_list), features=features, labels=tuple(labels),
                                 missing_fill=settings.MISSING_FILL_DBM)
        logger.info("survey_db_built", instances=len(db), rooms=len(db.classes))
        return db

    def build_coord_survey_db(self, spacing: float = 1.0, samples_per_point: int = 1,
                              seed: int = 0) -> CoordFingerprintDatabase:
        """Fingerprints on a regular survey grid for coordinate KNN"""
        grid = build_grid(self.env.plan, spacing)
        points = []
        for i in range(grid.num_nodes):
            node = grid.node(i)
            for _ in range(samples_per_point):
                points.append(TracePoint(t=float(len(points)), x=node.x, y=node.y, room=node.room_id))
        frames = self.gen_observations(GroundTruthTrace(points=points), seed)
        return CoordFingerprintDatabase(
            ap_list=list(self.ap_list),
            features=frames_to_matrix(frames, self.ap_list),
            coords=np.array([[p.x, p.y] for p in points]),
            missing_fill=settings.MISSING_FILL_DBM,
        )

    def gen_reference_points(self, count: int, seed: int) -> List[ReferencePoint]:
        """Stationary calibration measurements at random walkable nodes"""
        rng = np.random.default_rng(seed)
        graph = self.graph
        refs = []
        for node in rng.integers(0, graph.num_nodes, size=count):
            position = (float(graph.x[node]), float(graph.y[node]))
            for an_id, (ax, ay) in sorted(self.env.plan.anchor_positions().items()):
                if an_id not in self.env.truth_ranging:
                    continue
                if self._noiseless_rssi(an_id, position) < self.env.audibility_dbm:
                    continue
                r = max(math.hypot(position[0] - ax, position[1] - ay), MIN_RANGE_M)
                refs.append(ReferencePoint(an_id=an_id, true_distance_m=r,
                                           rssi_dbm=self.forward_rssi(an_id, position, rng)))
        return refs


def gen_trace(
    plan: FloorPlan,
    waypoints: Sequence[XY],
    speed: float,
    rate: float,
    duration_s: Optional[float] = None,
    area: Optional[WalkableArea] = None,
    max_speed: Optional[float] = None,
) -> GroundTruthTrace:
    """
    Piecewise-linear walk through waypoints sampled at `rate`

    Without duration_s sampling continues until the last waypoint is
    reached, so the final sample always sits on it (the walker waits there
    for the rest of that sampling interval).
    With duration_s it holds `round(duration_s * rate)` samples and stays on
    the last waypoint once reached; a single waypoint gives a stationary trace.
    """
    if speed <= 0 or rate <= 0:
        raise ValueError("speed and rate must be positive")
    limit = settings.MAX_WALK_SPEED_MPS if max_speed is None else max_speed
    if speed > limit:
        raise ValueError(f"speed {speed} m/s exceeds the walking limit of {limit} m/s")
    if not waypoints:
        raise ValueError("at least one waypoint required")
    area = area or WalkableArea(plan)
    for w in waypoints:
        if area.region_of(*w) is None:
            raise ValueError(f"waypoint {tuple(w)} is in a restricted area")

    pts = np.asarray(waypoints, dtype=float)
    legs = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
    arrival = np.concatenate([[0.0], np.cumsum(legs)])  # path length at each waypoint
    travel = arrival[-1] / speed

    if duration_s is None:
        count = int(math.ceil(travel * rate - 1e-9)) + 1
    else:
        count = int(round(duration_s * rate))

    points = []
    for k in range(count):
        t = k / rate
        s = min(t * speed, arrival[-1])
        leg = int(np.searchsorted(arrival, s, side="right")) - 1
        leg = min(max(leg, 0), max(len(pts) - 2, 0))
        if len(pts) == 1 or legs[leg] == 0:
            x, y = pts[leg]
        else:
            frac = (s - arrival[leg]) / legs[leg]
            x, y = pts[leg] + frac * (pts[leg + 1] - pts[leg])
        room = area.region_of(float(x), float(y))
        if room is None:
            raise ValueError(f"trace leaves the walkable area at ({x:.3f}, {y:.3f})")
        points.append(TracePoint(t=t, x=float(x), y=float(y), room=room))
    return GroundTruthTrace(points=points)


def stationary_trace(plan: FloorPlan, test_points: Sequence[XY], steps: int, rate: float) -> GroundTruthTrace:
    """`steps` samples at each test point, back to back"""
    area = WalkableArea(plan)
    points: List[TracePoint] = []
    for xy in test_points:
        leg = gen_trace(plan, [xy], speed=1.0, rate=rate, duration_s=steps / rate, area=area)
        offset = len(points) / rate
        points += [p.model_copy(update={"t": offset + p.t}) for p in leg.points]
    return GroundTruthTrace(points=points)


# --- scenarios --------------------------------------------------------------


def _rect(x0: float, y0: float, x1: float, y1: float) -> List[XY]:
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _room_fields(room_ids: Sequence[str], seed: int, amplitude: float = 2.0) -> Dict[str, MagneticRoomField]:
    """Distinct base values per room on a coarse (v, h) lattice"""
    rng = np.random.default_rng(seed)
    fields = {}
    for i, room_id in enumerate(room_ids):
        fields[room_id] = MagneticRoomField(
            base_v=20.0 + 12.0 * (i % 3) + rng.uniform(-1, 1),
            base_h=15.0 + 12.0 * (i // 3) + rng.uniform(-1, 1),
            amplitude=amplitude,
            wavelength_m=float(rng.uniform(3.0, 6.0)),
            phase=float(rng.uniform(0, 2 * math.pi)),
        )
    return fields


OFFICE_HIDDEN_ANCHORS: Dict[str, XY] = {"AN7": (4.0, 8.0), "AN8": (14.0, 3.0)}


def _office(ranging_positions: Dict[str, XY], shadowing_sigma_db: float, mf_noise_sigma: float,
            seed: int) -> EnvironmentModel:
    xs = [0.0, 6.0, 12.0, 18.0]
    ys = [0.0, 5.5, 10.5, 16.0]
    rooms = []
    for j in range(3):
        for i in range(3):
            rooms.append(Region(id=f"R{j * 3 + i + 1}", polygon=_rect(xs[i], ys[j], xs[i + 1], ys[j + 1])))

    hidden = OFFICE_HIDDEN_ANCHORS
    anchors = [Anchor(id=a, x=p[0], y=p[1]) for a, p in ranging_positions.items()]
    anchors += [Anchor(id=a) for a in hidden]
    plan = FloorPlan(bounds=(18.0, 16.0), rooms=rooms, anchors=anchors, grid_spacing_m=0.25)

    truth = [AnchorRangingParams.from_ldpl(p.an_id, p.gamma, p.p_r0)
             for p in OFFICE_ANCHOR_PARAMS if p.an_id in ranging_positions]
    truth += [AnchorRangingParams.from_ldpl(a, 2.7, -30.0) for a in hidden]
    return EnvironmentModel(
        plan=plan,
        truth_ranging=RangingParams.from_rows(truth),
        shadowing_sigma_db=shadowing_sigma_db,
        mf_rooms=_room_fields(plan.room_ids, seed),
        mf_noise_sigma=mf_noise_sigma,
        hidden_anchor_positions=hidden,
        audibility_dbm=settings.AUDIBILITY_DBM,
    )


def office_environment(shadowing_sigma_db: float = 3.0, mf_noise_sigma: float = 0.5,
                       seed: int = 42) -> EnvironmentModel:
    """
    18 m x 16 m office: 9 rooms, 6 ranging anchors with the calibrated
    office constants, 2 landmark-only anchors whose position the plan omits
    """
    return _office(
        {"AN1": (1.0, 1.0), "AN2": (17.0, 1.0), "AN3": (9.0, 8.0),
         "AN4": (1.0, 15.0), "AN5": (17.0, 15.0), "AN6": (9.0, 15.5)},
        shadowing_sigma_db, mf_noise_sigma, seed,
    )


OFFICE_FIVE_LAYOUTS: Dict[str, Dict[str, XY]] = {
    # AN3 off-centre in R5, AN4 beside AN5: the upper-left rooms are poorly covered
    "clustered": {"AN1": (1.0, 1.0), "AN2": (17.0, 1.0), "AN3": (6.5, 8.0),
                  "AN4": (12.5, 15.0), "AN5": (17.0, 15.0)},
    # AN3 in the lower-right corner of R8, AN4 moved to the far end of the top wall
    "spread": {"AN1": (1.0, 1.0), "AN2": (17.0, 1.0), "AN3": (11.5, 11.0),
               "AN4": (1.0, 15.0), "AN5": (17.0, 15.0)},
}


def office_five_anchor_environment(layout: str = "clustered", shadowing_sigma_db: float = 3.0,
                                   mf_noise_sigma: float = 0.5, seed: int = 42) -> EnvironmentModel:
    """Same office with 5 ranging anchors (AN1..AN5) in one of OFFICE_FIVE_LAYOUTS"""
    if layout not in OFFICE_FIVE_LAYOUTS:
        raise ValueError(f"unknown anchor layout '{layout}', expected one of {sorted(OFFICE_FIVE_LAYOUTS)}")
    return _office(OFFICE_FIVE_LAYOUTS[layout], shadowing_sigma_db, mf_noise_sigma, seed)


def single_room_environment(size_m: float = 6.0, shadowing_sigma_db: float = 0.0,
                            mf_noise_sigma: float = 0.0, seed: int = 42) -> EnvironmentModel:
    """One square room with a ranging anchor in each corner"""
    corners = {"A1": (0.0, 0.0), "A2": (size_m, 0.0), "A3": (size_m, size_m), "A4": (0.0, size_m)}
    plan = FloorPlan(
        bounds=(size_m, size_m),
        rooms=[Region(id="room", polygon=_rect(0, 0, size_m, size_m))],
        anchors=[Anchor(id=a, x=p[0], y=p[1]) for a, p in corners.items()],
        grid_spacing_m=0.25,
    )
    truth = [AnchorRangingParams.from_ldpl(a, 2.7, -30.0) for a in corners]
    return EnvironmentModel(
        plan=plan,
        truth_ranging=RangingParams.from_rows(truth),
        shadowing_sigma_db=shadowing_sigma_db,
        mf_rooms=_room_fields(plan.room_ids, seed),
        mf_noise_sigma=mf_noise_sigma,
        audibility_dbm=settings.AUDIBILITY_DBM,
    )


def mirrored_rooms_environment(mf_separation: float = 20.0, shadowing_sigma_db: float = 3.0,
                               mf_noise_sigma: float = 0.5) -> EnvironmentModel:
    """
    Two 4 m x 4 m rooms mirrored about x = 4 with both anchors on the
    mirror axis: Wi-Fi readings cannot tell the rooms apart, MF can
    """
    plan = FloorPlan(
        bounds=(8.0, 4.0),
        rooms=[Region(id="left", polygon=_rect(0, 0, 4, 4)), Region(id="right", polygon=_rect(4, 0, 8, 4))],
        anchors=[Anchor(id="S1", x=4.0, y=0.5), Anchor(id="S2", x=4.0, y=3.5)],
        grid_spacing_m=0.25,
    )
    truth = [AnchorRangingParams.from_ldpl(a, 2.7, -30.0) for a in ("S1", "S2")]
    return EnvironmentModel(
        plan=plan,
        truth_ranging=RangingParams.from_rows(truth),
        shadowing_sigma_db=shadowing_sigma_db,
        mf_rooms={
            "left": MagneticRoomField(base_v=30.0, base_h=20.0),
            "right": MagneticRoomField(base_v=30.0 + mf_separation, base_h=20.0),
        },
        mf_noise_sigma=mf_noise_sigma,
        audibility_dbm=settings.AUDIBILITY_DBM,
    )


SCENARIOS = {
    "office": office_environment,
    "office_five": office_five_anchor_environment,
    "office_five_spread": partial(office_five_anchor_environment, "spread"),
    "single_room": single_room_environment,
    "mirrored_rooms": mirrored_rooms_environment,
}


# --- persistence ------------------------------------------------------------


def save_environment(env: EnvironmentModel, path: PathLike):
    """Floor-plan JSON extended with truth_ranging, shadowing_sigma_db, mf_rooms"""
    data = floor_plan_to_dict(env.plan)
    data.update({
        "truth_ranging": [a.model_dump() for a in env.truth_ranging.anchors.values()],
        "los_threshold_m": env.truth_ranging.los_threshold_m,
        "shadowing_sigma_db": env.shadowing_sigma_db,
        "mf_rooms": {k: v.model_dump() for k, v in env.mf_rooms.items()},
        "mf_noise_sigma": env.mf_noise_sigma,
        "hidden_anchor_positions": {k: list(v) for k, v in env.hidden_anchor_positions.items()},
        "audibility_dbm": env.audibility_dbm,
        "max_speed_mps": env.max_speed_mps,
    })
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_environment(path: PathLike) -> EnvironmentModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("environment document must be a JSON object")
    truth_rows = [AnchorRangingParams.model_validate(row) for row in data.get("truth_ranging", [])]
    return EnvironmentModel(
        plan=floor_plan_from_dict(data),
        truth_ranging=RangingParams.from_rows(truth_rows, data.get("los_threshold_m", settings.LOS_THRESHOLD_M)),
        shadowing_sigma_db=data.get("shadowing_sigma_db", 0.0),
        mf_rooms=data.get("mf_rooms", {}),
        mf_noise_sigma=data.get("mf_noise_sigma", 0.0),
        hidden_anchor_positions={k: tuple(v) for k, v in data.get("hidden_anchor_positions", {}).items()},
        audibility_dbm=data.get("audibility_dbm", settings.AUDIBILITY_DBM),
        max_speed_mps=data.get("max_speed_mps", settings.MAX_WALK_SPEED_MPS),
    )


def save_trace(trace: GroundTruthTrace, path: PathLike):
    frame = pd.DataFrame([p.model_dump() for p in trace.points], columns=["t", "x", "y", "room"])
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def load_trace(path: PathLike) -> GroundTruthTrace:
    frame = pd.read_csv(path, dtype={"room": str}, float_precision="round_trip")
    if list(frame.columns) != ["t", "x", "y", "room"]:
        raise ValueError("trace header must be t,x,y,room")
    return GroundTruthTrace(points=[TracePoint(**r) for r in frame.to_dict(orient="records")])
