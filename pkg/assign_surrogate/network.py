"""
Network - Road graph, hexagonal cell aggregation and cell adjacency.

Nodes carry planar coordinates in meters. Cells are pointy-top axial hexagons
over those coordinates, re-indexed densely so that every per-cell matrix is
free of holes.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from .errors import DatasetError, ValidationError

logger = logging.getLogger(__name__)

# jam spacing per stored vehicle [m]
JAM_SPACING = 7.5


def default_storage(length: float) -> int:
    """Vehicle storage of an edge of the given length."""
    return max(1, int(math.floor(length / JAM_SPACING)))


@dataclass(frozen=True)
class Node:
    node_id: int
    x: float
    y: float


@dataclass(frozen=True)
class Edge:
    edge_id: int
    from_node: int
    to_node: int
    length: float
    speed: float
    capacity: float
    storage: int

    @property
    def free_flow_time(self) -> float:
        """Traversal time at the edge's free-flow speed [s]."""
        return self.length / self.speed


class RoadNetwork:
    """Directed road graph. Immutable after construction."""

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge]):
        self.nodes: Tuple[Node, ...] = tuple(sorted(nodes, key=lambda n: n.node_id))
        self.edges: Tuple[Edge, ...] = tuple(sorted(edges, key=lambda e: e.edge_id))
        self._validate()

        self._node_index = {n.node_id: n for n in self.nodes}
        self._edge_index = {e.edge_id: e for e in self.edges}
        self._successors: Dict[int, List[Edge]] = {n.node_id: [] for n in self.nodes}
        self._between: Dict[Tuple[int, int], Edge] = {}
        for edge in self.edges:
            self._successors[edge.from_node].append(edge)
            key = (edge.from_node, edge.to_node)
            best = self._between.get(key)
            if best is None or edge.free_flow_time < best.free_flow_time:
                self._between[key] = edge

    def _validate(self):
        node_ids = [n.node_id for n in self.nodes]
        if len(set(node_ids)) != len(node_ids):
            raise ValidationError("duplicate node ids")
        edge_ids = [e.edge_id for e in self.edges]
        if len(set(edge_ids)) != len(edge_ids):
            raise ValidationError("duplicate edge ids")
        known = set(node_ids)
        for e in self.edges:
            if e.from_node not in known or e.to_node not in known:
                raise ValidationError(f"edge {e.edge_id} references an unknown node")
            if e.from_node == e.to_node:
                raise ValidationError(f"edge {e.edge_id} is a self-loop")
            if not (e.length > 0 and e.speed > 0 and e.capacity > 0):
                raise ValidationError(f"edge {e.edge_id} needs positive length, speed and capacity")
            if e.storage < 1:
                raise ValidationError(f"edge {e.edge_id} needs storage >= 1")

    def __repr__(self):
        return f"RoadNetwork(nodes={len(self.nodes)}, edges={len(self.edges)})"

    @property
    def node_ids(self) -> List[int]:
        """Node ids in ascending order."""
        return [n.node_id for n in self.nodes]

    def node(self, node_id: int) -> Node:
        """Look up a node by id.

        Args:
            node_id: Id of a node of this network

        Returns:
            Node: The node. Raises KeyError for an unknown id.
        """
        return self._node_index[node_id]

    def edge(self, edge_id: int) -> Edge:
        """Look up an edge by id.

        Args:
            edge_id: Id of an edge of this network

        Returns:
            Edge: The edge. Raises KeyError for an unknown id.
        """
        return self._edge_index[edge_id]

    def successors(self, node_id: int) -> List[Edge]:
        """Edges leaving ``node_id`` in edge id order; empty for a sink or unknown node."""
        return self._successors.get(node_id, [])

    def edge_between(self, u: int, v: int) -> Optional[Edge]:
        """Fastest edge from u to v (lowest edge id on ties), or None."""
        return self._between.get((u, v))

    def path_edges(self, path: Sequence[int]) -> List[Edge]:
        """Edges joining consecutive nodes of a node path."""
        edges = []
        for u, v in zip(path[:-1], path[1:]):
            edge = self.edge_between(u, v)
            if edge is None:
                raise ValidationError(f"no edge from node {u} to node {v}")
            edges.append(edge)
        return edges

    def path_time(self, path: Sequence[int]) -> float:
        """Free-flow traversal time of a node path [s]."""
        return math.fsum(e.free_flow_time for e in self.path_edges(path))

    def to_digraph(self) -> nx.DiGraph:
        """networkx view with one edge per node pair, weighted by free-flow time.

        Returns:
            nx.DiGraph: Edges carry ``weight`` [s] and the ``edge_id`` of the
            fastest parallel edge.
        """
        graph = nx.DiGraph()
        graph.add_nodes_from(self.node_ids)
        for (u, v), edge in self._between.items():
            graph.add_edge(u, v, weight=edge.free_flow_time, edge_id=edge.edge_id)
        return graph

    def save(self, directory):
        """Write ``nodes.csv`` and ``edges.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(
            [(n.node_id, n.x, n.y) for n in self.nodes], columns=["node_id", "x", "y"]
        ).to_csv(directory / "nodes.csv", index=False)
        pd.DataFrame(
            [(e.edge_id, e.from_node, e.to_node, e.length, e.speed, e.capacity, e.storage) for e in self.edges],
            columns=["edge_id", "from", "to", "length", "speed", "capacity", "storage"],
        ).to_csv(directory / "edges.csv", index=False)

    @classmethod
    def load(cls, directory) -> "RoadNetwork":
        """Read a network written by :meth:`save`.

        Args:
            directory: Folder holding ``nodes.csv`` and ``edges.csv``. The
                ``storage`` column is optional; missing values fall back to
                :func:`default_storage`.

        Returns:
            RoadNetwork: The validated network
        """
        directory = Path(directory)
        nodes_df = _read_csv(directory / "nodes.csv", ["node_id", "x", "y"])
        edges_df = _read_csv(directory / "edges.csv", ["edge_id", "from", "to", "length", "speed", "capacity"])
        nodes = [Node(int(r.node_id), float(r.x), float(r.y)) for r in nodes_df.itertuples(index=False)]
        has_storage = "storage" in edges_df.columns
        edges = []
        for row in edges_df.to_dict("records"):
            length = float(row["length"])
            storage = row.get("storage") if has_storage else None
            if storage is None or pd.isna(storage):
                storage = default_storage(length)
            edges.append(Edge(int(row["edge_id"]), int(row["from"]), int(row["to"]), length,
                              float(row["speed"]), float(row["capacity"]), int(storage)))
        return cls(nodes, edges)


def _read_csv(path: Path, required: Sequence[str]) -> pd.DataFrame:
    if not path.exists():
        raise DatasetError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError(f"{path}: {e}") from None
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DatasetError(f"{path}: missing columns {missing}")
    return frame


def synth_grid_network(rows: int, cols: int, edge_length: float, speed: float, capacity: float) -> RoadNetwork:
    """Lattice of rows x cols nodes with bidirectional edges between orthogonal neighbours.

    Node ``r * cols + c`` sits at ``(c * edge_length, r * edge_length)``. Horizontal
    links are numbered before vertical ones, each as a forward/backward pair.

    Args:
        rows: Node rows, at least 1
        cols: Node columns, at least 1
        edge_length: Spacing between neighbours [m]
        speed: Free-flow speed of every edge [m/s]
        capacity: Outflow capacity of every edge [veh/s]

    Returns:
        RoadNetwork: The grid, with storage from :func:`default_storage`
    """
    if rows < 1 or cols < 1:
        raise ValidationError("grid needs at least one row and one column")
    if not (edge_length > 0 and speed > 0 and capacity > 0):
        raise ValidationError("edge length, speed and capacity must be positive")

    nodes = [Node(r * cols + c, c * edge_length, r * edge_length) for r in range(rows) for c in range(cols)]
    links = [(r * cols + c, r * cols + c + 1) for r in range(rows) for c in range(cols - 1)]
    links += [(r * cols + c, (r + 1) * cols + c) for r in range(rows - 1) for c in range(cols)]

    storage = default_storage(edge_length)
    edges = []
    for u, v in links:
        for a, b in ((u, v), (v, u)):
            edges.append(Edge(len(edges), a, b, float(edge_length), float(speed), float(capacity), storage))
    logger.info("Generated %dx%d grid network: %d nodes, %d edges", rows, cols, len(nodes), len(edges))
    return RoadNetwork(nodes, edges)


# ---------------------------------------------------------------------------
# Hexagonal cells
# ---------------------------------------------------------------------------

def hex_of(x: float, y: float, size: float) -> Tuple[int, int]:
    """Axial (q, r) of the pointy-top hexagon of circumradius ``size`` containing (x, y).

    Args:
        x: Easting [m]
        y: Northing [m]
        size: Hexagon circumradius [m]

    Returns:
        Tuple[int, int]: Axial coordinates after cube rounding
    """
    q = (math.sqrt(3.0) / 3.0 * x - y / 3.0) / size
    r = (2.0 / 3.0 * y) / size
    # cube rounding
    cx, cz = q, r
    cy = -cx - cz
    rx, ry, rz = round(cx), round(cy), round(cz)
    dx, dy, dz = abs(rx - cx), abs(ry - cy), abs(rz - cz)
    if dx > dy and dx > dz:
        rx = -ry - rz
    elif dy <= dz:
        rz = -rx - ry
    return int(rx), int(rz)


def hex_distance(a: Tuple[int, int], b: Tuple[int, int]) -> int:
    """Number of hexagon steps between two axial coordinates.

    Args:
        a: Axial (q, r) of the first hexagon
        b: Axial (q, r) of the second hexagon

    Returns:
        int: Grid distance, 0 for the same hexagon and 1 for neighbours
    """
    dq, dr = a[0] - b[0], a[1] - b[1]
    return (abs(dq) + abs(dr) + abs(dq + dr)) // 2


@dataclass(frozen=True)
class CellMap:
    """Total mapping of node ids onto dense cell indices 0..S-1."""

    cell_count: int
    node_to_cell: Dict[int, int]

    def __post_init__(self):
        if self.cell_count < 1:
            raise ValidationError("a cell map needs at least one cell")
        used = set(self.node_to_cell.values())
        if used != set(range(self.cell_count)):
            raise ValidationError("every cell index in [0, S) must hold at least one node")

    def cell_of(self, node_id: int) -> int:
        """Cell index of a node."""
        return self.node_to_cell[node_id]

    def cells_on_path(self, path: Sequence[int]) -> List[int]:
        """Distinct cells visited by a node path, in first-visit order."""
        seen, cells = set(), []
        for node in path:
            cell = self.node_to_cell[node]
            if cell not in seen:
                seen.add(cell)
                cells.append(cell)
        return cells

    def covers(self, net: RoadNetwork) -> bool:
        """Check that every node of ``net`` has a cell.

        Args:
            net: Network whose nodes must all be mapped

        Returns:
            bool: True when no node is missing from the map
        """
        return all(n in self.node_to_cell for n in net.node_ids)

    def save(self, path):
        """Write ``node_id,cell`` rows sorted by node id."""
        pd.DataFrame(sorted(self.node_to_cell.items()), columns=["node_id", "cell"]).to_csv(path, index=False)

    @classmethod
    def load(cls, path) -> "CellMap":
        """Read a map written by :meth:`save`; the cell count is the largest index plus one."""
        frame = _read_csv(Path(path), ["node_id", "cell"])
        mapping = {int(n): int(c) for n, c in zip(frame["node_id"], frame["cell"])}
        return cls(max(mapping.values()) + 1 if mapping else 0, mapping)


def build_cell_map(net: RoadNetwork, hex_size: float) -> CellMap:
    """Bin nodes into hexagons and index the occupied ones in (q, r) order.

    Args:
        net: Network whose node coordinates are binned
        hex_size: Hexagon circumradius [m]

    Returns:
        CellMap: Dense map with one cell per occupied hexagon
    """
    if hex_size <= 0:
        raise ValidationError("hex_size must be positive")
    hexes = {n.node_id: hex_of(n.x, n.y, hex_size) for n in net.nodes}
    index = {h: i for i, h in enumerate(sorted(set(hexes.values())))}
    cmap = CellMap(len(index), {node: index[h] for node, h in hexes.items()})
    logger.info("Aggregated %d nodes into %d hexagonal cells (size %.1f m)", len(hexes), cmap.cell_count, hex_size)
    return cmap


@dataclass(frozen=True, eq=False)
class CellGraph:
    """Row-normalised cell adjacency with self-loops."""

    adjacency: np.ndarray

    @property
    def cell_count(self) -> int:
        """Number of cells S."""
        return self.adjacency.shape[0]


def build_cell_graph(net: RoadNetwork, cmap: CellMap) -> CellGraph:
    """Ã = D⁻¹ (I + A), with A[i][j] = 1 when an edge runs from cell j into cell i."""
    if not cmap.covers(net):
        raise ValidationError("cell map does not cover every network node")
    raw = np.eye(cmap.cell_count)
    for e in net.edges:
        raw[cmap.cell_of(e.to_node), cmap.cell_of(e.from_node)] = 1.0
    adjacency = raw / raw.sum(axis=1, keepdims=True)
    adjacency.setflags(write=False)
    return CellGraph(adjacency)
