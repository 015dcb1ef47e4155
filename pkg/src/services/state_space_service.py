"""State Space Service"""

import json
import math
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import shapely
import structlog
from shapely.ops import unary_union

from src.models.floor_plan import FloorPlan, FloorPlanGraph

logger = structlog.get_logger()

# Boundary tolerance for point-in-polygon and segment containment
EPS = 1e-9

# 4-connectivity lattice offsets, in neighbor-table column order
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def load_floor_plan(path: Union[str, Path]) -> FloorPlan:
    """Read a floor-plan JSON document"""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return floor_plan_from_dict(data)


def floor_plan_from_dict(data: dict) -> FloorPlan:
    """Validate a plan document; keys beyond the plan fields are ignored"""
    return FloorPlan.model_validate(data)


def floor_plan_to_dict(plan: FloorPlan) -> dict:
    anchors = []
    for a in plan.anchors:
        anchors.append({"id": a.id} if a.position is None else {"id": a.id, "x": a.x, "y": a.y})
    return {
        "bounds": list(plan.bounds),
        "rooms": [{"id": r.id, "polygon": [list(p) for p in r.polygon]} for r in plan.rooms],
        "corridors": [{"id": r.id, "polygon": [list(p) for p in r.polygon]} for r in plan.corridors],
        "anchors": anchors,
        "grid_spacing_m": plan.grid_spacing_m,
    }


class WalkableArea:
    """Point and segment queries against the walkable union of a plan"""

    def __init__(self, plan: FloorPlan):
        self.plan = plan
        self.region_ids = plan.room_ids
        self.shapes = [r.shape() for r in plan.walkable_regions]
        self.union = unary_union(self.shapes)
        self._tolerant_union = self.union.buffer(EPS)
        shapely.prepare(self._tolerant_union)
        for s in self.shapes:
            shapely.prepare(s)

    def region_of(self, x: float, y: float) -> Optional[str]:
        """First region (plan order) containing the point, boundary included"""
        point = shapely.points(x, y)
        for region_id, shape in zip(self.region_ids, self.shapes):
            if shapely.dwithin(shape, point, EPS):
                return region_id
        return None

    def region_codes(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorized region_of; -1 where no region contains the point"""
        points = shapely.points(xs, ys)
        codes = np.full(xs.shape[0], -1, dtype=int)
        for code, shape in enumerate(self.shapes):
            hit = (codes < 0) & shapely.dwithin(shape, points, EPS)
            codes[hit] = code
        return codes

    def contains(self, x: float, y: float) -> bool:
        return self.region_of(x, y) is not None

    def segments_inside(self, x0: np.ndarray, y0: np.ndarray, x1: np.ndarray, y1: np.ndarray) -> np.ndarray:
        """True where the straight segment stays within the walkable union"""
        coords = np.stack([np.stack([x0, y0], axis=-1), np.stack([x1, y1], axis=-1)], axis=1)
        lines = shapely.linestrings(coords)
        return shapely.covers(self._tolerant_union, lines)


def build_grid(plan: FloorPlan, spacing: Optional[float] = None) -> FloorPlanGraph:
    """
    Discretize the plan into a 4-connected lattice graph

    Lattice points start at the origin with pitch `spacing` and cover the
    plan bounds; only points inside a walkable polygon become nodes. An edge
    joins lattice neighbors whose connecting segment stays walkable.
    """
    spacing = plan.grid_spacing_m if spacing is None else spacing
    if spacing <= 0:
        raise ValueError("grid spacing must be positive")

    width, height = plan.bounds
    cols = int(math.floor(width / spacing + EPS)) + 1
    rows = int(math.floor(height / spacing + EPS)) + 1

    area = WalkableArea(plan)
    ii, jj = np.meshgrid(np.arange(cols), np.arange(rows), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    xs = ii * spacing
    ys = jj * spacing
    codes = area.region_codes(xs, ys)

    keep = codes >= 0
    if not keep.any():
        raise ValueError("no nodes generated")

    lattice_to_node = np.full(rows * cols, -1, dtype=int)
    lattice_to_node[np.flatnonzero(keep)] = np.arange(int(keep.sum()))
    node_i, node_j = ii[keep], jj[keep]
    node_x, node_y = xs[keep].astype(float), ys[keep].astype(float)
    n = node_x.shape[0]

    table = np.full((n, len(_OFFSETS)), -1, dtype=int)
    for col, (di, dj) in enumerate(_OFFSETS):
        ni, nj = node_i + di, node_j + dj
        valid = (ni >= 0) & (ni < cols) & (nj >= 0) & (nj < rows)
        target = np.full(n, -1, dtype=int)
        target[valid] = lattice_to_node[nj[valid] * cols + ni[valid]]
        candidates = np.flatnonzero(target >= 0)
        if candidates.size:
            src, dst = candidates, target[candidates]
            ok = area.segments_inside(node_x[src], node_y[src], node_x[dst], node_y[dst])
            table[src[ok], col] = dst[ok]

    adjacency = tuple(tuple(sorted(int(v) for v in row if v >= 0)) for row in table)
    degree = (table >= 0).sum(axis=1)

    for arr in (node_x, node_y, table, degree):
        arr.setflags(write=False)
    room_codes = codes[keep]
    room_codes.setflags(write=False)

    graph = FloorPlanGraph(
        spacing=spacing,
        x=node_x,
        y=node_y,
        room_names=tuple(area.region_ids),
        room_codes=room_codes,
        adjacency=adjacency,
        neighbor_table=table,
        degree=degree,
    )

    logger.info("grid_built", nodes=graph.num_nodes, edges=graph.num_edges, spacing=spacing)
    return graph


def walkable_centroid(graph: FloorPlanGraph) -> List[float]:
    """Mean node position"""
    return [float(graph.x.mean()), float(graph.y.mean())]
