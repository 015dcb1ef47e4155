"""Floor Plan Models"""

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from shapely.geometry import Polygon

XY = Tuple[float, float]


class Region(BaseModel):
    """Named walkable polygon (room or corridor)"""
    id: str
    polygon: List[XY]

    @field_validator("polygon")
    @classmethod
    def _at_least_three_vertices(cls, v: List[XY]) -> List[XY]:
        if len(v) < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {len(v)}")
        return v

    def shape(self) -> Polygon:
        return Polygon(self.polygon)


class Anchor(BaseModel):
    """Anchor node (Wi-Fi AP); position may be unknown to the localizer"""
    id: str
    x: Optional[float] = None
    y: Optional[float] = None

    @model_validator(mode="after")
    def _both_or_neither(self) -> "Anchor":
        if (self.x is None) != (self.y is None):
            raise ValueError(f"anchor {self.id}: give both x and y or neither")
        return self

    @property
    def position(self) -> Optional[XY]:
        if self.x is None:
            return None
        return (self.x, self.y)


class FloorPlan(BaseModel):
    """Indoor environment: rooms, corridors, anchors"""
    bounds: XY
    rooms: List[Region]
    corridors: List[Region] = []
    anchors: List[Anchor] = []
    grid_spacing_m: float = Field(default=0.25, gt=0)

    @model_validator(mode="after")
    def _validate_geometry(self) -> "FloorPlan":
        regions = self.walkable_regions
        ids = [r.id for r in regions]
        if len(set(ids)) != len(ids):
            raise ValueError("region ids must be unique")

        shapes = []
        for region in regions:
            shape = region.shape()
            if not shape.is_valid or shape.area <= 0:
                raise ValueError(f"polygon '{region.id}' is degenerate or self-intersecting")
            shapes.append(shape)

        for i in range(len(self.rooms)):
            for j in range(i + 1, len(self.rooms)):
                if shapes[i].intersection(shapes[j]).area > 1e-12:
                    raise ValueError(
                        f"rooms '{self.rooms[i].id}' and '{self.rooms[j].id}' overlap"
                    )

        anchor_ids = [a.id for a in self.anchors]
        if len(set(anchor_ids)) != len(anchor_ids):
            raise ValueError("anchor ids must be unique")
        return self

    @property
    def walkable_regions(self) -> List[Region]:
        """Rooms first, then corridors; this order breaks boundary ties"""
        return list(self.rooms) + list(self.corridors)

    @property
    def room_ids(self) -> List[str]:
        return [r.id for r in self.walkable_regions]

    @property
    def anchor_ids(self) -> List[str]:
        return [a.id for a in self.anchors]

    def anchor_positions(self) -> Dict[str, XY]:
        """Known anchor positions only"""
        return {a.id: a.position for a in self.anchors if a.position is not None}


class GridNode(BaseModel):
    """Graph vertex: lattice point with the room it belongs to"""
    x: float
    y: float
    room_id: str


class FloorPlanGraph(BaseModel):
    """
    Discrete state space G=(nodes, features, edges)

    Node coordinates and room codes are numpy arrays (read-only) so the
    particle filter can index them in bulk.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spacing: float
    x: np.ndarray
    y: np.ndarray
    room_names: Tuple[str, ...]
    room_codes: np.ndarray
    adjacency: Tuple[Tuple[int, ...], ...]
    neighbor_table: np.ndarray  # (n, 4), padded with -1
    degree: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.x.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.degree.sum()) // 2

    def _check(self, node_index: int) -> int:
        if not 0 <= node_index < self.num_nodes:
            raise IndexError(f"node index {node_index} out of range [0, {self.num_nodes})")
        return node_index

    def neighbors(self, node_index: int) -> List[int]:
        """Adjacent node indices, ascending"""
        return list(self.adjacency[self._check(node_index)])

    def node_room(self, node_index: int) -> str:
        return self.room_names[self.room_codes[self._check(node_index)]]

    def node(self, node_index: int) -> GridNode:
        i = self._check(node_index)
        return GridNode(x=float(self.x[i]), y=float(self.y[i]), room_id=self.node_room(i))

    def room_mask(self, room_id: str) -> np.ndarray:
        """Boolean mask of nodes belonging to room_id"""
        if room_id not in self.room_names:
            return np.zeros(self.num_nodes, dtype=bool)
        return self.room_codes == self.room_names.index(room_id)

    def nearest_node(self, x: float, y: float) -> int:
        return int(np.argmin((self.x - x) ** 2 + (self.y - y) ** 2))
