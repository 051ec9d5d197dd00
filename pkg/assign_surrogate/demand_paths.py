"""
Demand and paths - Trips, k-shortest-path choice sets and assignment matrices.

Choice sets hold up to K loopless paths per agent ordered by free-flow time,
ties broken by the lexicographic node sequence so that datasets are
reproducible. An assignment picks one rank per agent; its matrix A counts, per
cell and departure interval, the vehicles whose selected path touches the cell.
"""

import heapq
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from tqdm import tqdm

from .errors import DatasetError, DisconnectedError, GenerationError, ValidationError
from .network import CellMap, RoadNetwork, _read_csv

logger = logging.getLogger(__name__)

Path_ = Tuple[int, ...]

# cost keys are rounded so that float noise cannot reorder tied paths
_COST_DECIMALS = 9


# ---------------------------------------------------------------------------
# Demand
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trip:
    agent_id: int
    origin: int
    destination: int
    departure_time: float


@dataclass(frozen=True)
class Demand:
    """Fixed ordered trip list; agent ids run 0..n-1 in order."""

    trips: Tuple[Trip, ...]

    def __post_init__(self):
        for i, trip in enumerate(self.trips):
            if trip.agent_id != i:
                raise ValidationError(f"agent ids must be contiguous from 0 (position {i} holds {trip.agent_id})")
            if trip.origin == trip.destination:
                raise ValidationError(f"agent {i}: origin equals destination")
            if trip.departure_time < 0:
                raise ValidationError(f"agent {i}: negative departure time")

    def __len__(self):
        return len(self.trips)

    def __iter__(self) -> Iterator[Trip]:
        return iter(self.trips)

    def __getitem__(self, index) -> Trip:
        return self.trips[index]

    @property
    def last_departure(self) -> float:
        return max((t.departure_time for t in self.trips), default=0.0)

    def save(self, path):
        pd.DataFrame(
            [(t.agent_id, t.origin, t.destination, t.departure_time) for t in self.trips],
            columns=["agent_id", "origin", "destination", "departure_s"],
        ).to_csv(path, index=False)

    @classmethod
    def load(cls, path) -> "Demand":
        frame = _read_csv(Path(path), ["agent_id", "origin", "destination", "departure_s"])
        return cls(tuple(
            Trip(int(r.agent_id), int(r.origin), int(r.destination), float(r.departure_s))
            for r in frame.itertuples(index=False)
        ))


def gen_demand(net: RoadNetwork, n_agents: int, window: float, seed: int, max_retries: int = 100) -> Demand:
    """Sample ``n_agents`` trips with reachable OD pairs and uniform departures in [0, window)."""
    if n_agents < 1:
        raise ValidationError("n_agents must be at least 1")
    if window <= 0:
        raise ValidationError("departure window must be positive")
    node_ids = net.node_ids
    if len(node_ids) < 2:
        raise ValidationError("demand needs a network with at least two nodes")

    graph = net.to_digraph()
    reachable: Dict[int, Set[int]] = {}
    rng = np.random.default_rng(seed)
    trips = []
    for agent in range(n_agents):
        for _ in range(max_retries):
            i, j = rng.choice(len(node_ids), size=2, replace=False)
            origin, destination = node_ids[i], node_ids[j]
            if origin not in reachable:
                reachable[origin] = nx.descendants(graph, origin)
            if destination in reachable[origin]:
                break
        else:
            raise GenerationError(
                f"agent {agent}: no reachable OD pair within {max_retries} draws "
                f"(last tried {origin} -> {destination})"
            )
        trips.append(Trip(agent, int(origin), int(destination), float(rng.uniform(0.0, window))))
    logger.info("Generated %d trips over a %.0f s window", n_agents, window)
    return Demand(tuple(trips))


# ---------------------------------------------------------------------------
# K shortest loopless paths
# ---------------------------------------------------------------------------

def path_cost(net: RoadNetwork, path: Sequence[int]) -> float:
    return round(net.path_time(path), _COST_DECIMALS)


def _shortest_path(net: RoadNetwork, source: int, target: int,
                   banned_edges: Set[Tuple[int, int]], banned_nodes: FrozenSet[int]) -> Optional[Path_]:
    """Dijkstra ordered by (cost, node sequence): the first settled path is the lexicographic minimum."""
    heap = [(0.0, (source,))]
    settled = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == target:
            return path
        for edge in net.successors(node):
            nxt = edge.to_node
            if nxt in settled or nxt in banned_nodes or (node, nxt) in banned_edges:
                continue
            heapq.heappush(heap, (round(cost + edge.free_flow_time, _COST_DECIMALS), path + (nxt,)))
    return None


def k_shortest_paths(net: RoadNetwork, origin: int, destination: int, k: int) -> List[Tuple[float, Path_]]:
    """Yen's algorithm: up to k loopless (cost, path) pairs in increasing (cost, path) order."""
    if k < 1:
        raise ValidationError("K must be at least 1")
    first = _shortest_path(net, origin, destination, set(), frozenset())
    if first is None:
        return []

    found = [(path_cost(net, first), first)]
    seen = {first}
    candidates: List[Tuple[float, Path_]] = []
    while len(found) < k:
        _, last = found[-1]
        for i in range(len(last) - 1):
            root = last[:i + 1]
            banned_edges = {(p[i], p[i + 1]) for _, p in found if len(p) > i + 1 and p[:i + 1] == root}
            spur = _shortest_path(net, last[i], destination, banned_edges, frozenset(root[:-1]))
            if spur is None:
                continue
            path = root[:-1] + spur
            if path not in seen:
                seen.add(path)
                heapq.heappush(candidates, (path_cost(net, path), path))
        if not candidates:
            break
        found.append(heapq.heappop(candidates))
    return found


@dataclass(frozen=True)
class ChoiceSet:
    """Candidate paths of one agent, best first."""

    agent_id: int
    paths: Tuple[Path_, ...]
    k: int

    @property
    def valid_mask(self) -> Tuple[bool, ...]:
        return tuple(rank < len(self.paths) for rank in range(self.k))

    def path(self, rank: int) -> Path_:
        if not 0 <= rank < len(self.paths):
            raise ValidationError(f"agent {self.agent_id}: path rank {rank} is not available")
        return self.paths[rank]


class ChoiceSets(Sequence[ChoiceSet]):
    """Choice sets of every agent, indexed by agent id."""

    def __init__(self, k: int, sets: Sequence[ChoiceSet]):
        self.k = k
        self._sets = tuple(sets)

    def __len__(self):
        return len(self._sets)

    def __getitem__(self, index):
        return self._sets[index]

    def __eq__(self, other):
        return isinstance(other, ChoiceSets) and self.k == other.k and self._sets == other._sets

    def masks(self) -> np.ndarray:
        """Boolean (agents, K) matrix of available ranks."""
        return np.array([cs.valid_mask for cs in self._sets], dtype=bool).reshape(len(self._sets), self.k)

    def save(self, path):
        lines = [f"{cs.agent_id};{rank};{','.join(str(n) for n in p)}"
                 for cs in self._sets for rank, p in enumerate(cs.paths)]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path, k: int) -> "ChoiceSets":
        path = Path(path)
        if not path.exists():
            raise DatasetError(f"file not found: {path}")
        per_agent: Dict[int, Dict[int, Path_]] = {}
        for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                agent, rank, nodes = line.split(";")
                per_agent.setdefault(int(agent), {})[int(rank)] = tuple(int(n) for n in nodes.split(","))
            except ValueError:
                raise DatasetError(f"{path}: malformed record on line {number}") from None
        sets = []
        for agent in range(len(per_agent)):
            if agent not in per_agent:
                raise DatasetError(f"{path}: no paths for agent {agent}")
            ranks = per_agent[agent]
            sets.append(ChoiceSet(agent, tuple(ranks[r] for r in sorted(ranks)), k))
        return cls(k, sets)


def build_choice_sets(net: RoadNetwork, demand: Demand, k: int, progress: bool = False) -> ChoiceSets:
    """Up to K shortest loopless paths per agent by free-flow time."""
    if k < 1:
        raise ValidationError("K must be at least 1")
    by_pair: Dict[Tuple[int, int], Tuple[Path_, ...]] = {}
    sets = []
    for trip in tqdm(demand.trips, desc="Building choice sets", disable=not progress):
        key = (trip.origin, trip.destination)
        if key not in by_pair:
            by_pair[key] = tuple(p for _, p in k_shortest_paths(net, trip.origin, trip.destination, k))
        if not by_pair[key]:
            raise DisconnectedError(
                f"agent {trip.agent_id}: no path from node {trip.origin} to node {trip.destination}"
            )
        sets.append(ChoiceSet(trip.agent_id, by_pair[key], k))
    logger.info("Built choice sets for %d agents over %d OD pairs (K=%d)", len(sets), len(by_pair), k)
    return ChoiceSets(k, sets)


# ---------------------------------------------------------------------------
# Assignments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Assignment:
    """Selected path rank per agent."""

    path_index: Tuple[int, ...]

    def validate(self, choice_sets: ChoiceSets):
        if len(self.path_index) != len(choice_sets):
            raise ValidationError(
                f"assignment covers {len(self.path_index)} agents, choice sets cover {len(choice_sets)}"
            )
        for cs, rank in zip(choice_sets, self.path_index):
            cs.path(rank)

    def paths(self, choice_sets: ChoiceSets) -> List[Path_]:
        self.validate(choice_sets)
        return [cs.paths[rank] for cs, rank in zip(choice_sets, self.path_index)]

    def save(self, path):
        pd.DataFrame(
            {"agent_id": range(len(self.path_index)), "path_index": list(self.path_index)}
        ).to_csv(path, index=False)

    @classmethod
    def load(cls, path) -> "Assignment":
        frame = _read_csv(Path(path), ["agent_id", "path_index"]).sort_values("agent_id")
        return cls(tuple(int(v) for v in frame["path_index"]))


@dataclass(frozen=True, eq=False)
class AssignmentMatrix:
    """Integer (S, T) matrix A over intervals of ``interval`` seconds."""

    matrix: np.ndarray
    interval: float

    @property
    def cells(self) -> int:
        return self.matrix.shape[0]

    @property
    def intervals(self) -> int:
        return self.matrix.shape[1]


MARKINGS = ("departure", "expected")


def assignment_matrix(demand: Demand, choice_sets: ChoiceSets, assignment: Assignment, cmap: CellMap,
                      intervals: int, interval: float, marking: str = "departure",
                      net: Optional[RoadNetwork] = None) -> AssignmentMatrix:
    """Sum of per-vehicle binary cell indicators, placed in each vehicle's departure interval.

    With ``marking="expected"`` each distinct cell is instead placed in the
    interval in which the vehicle would first reach it at free-flow speed.
    """
    if intervals < 1 or interval <= 0:
        raise ValidationError("assignment matrix needs T >= 1 and a positive interval")
    if marking not in MARKINGS:
        raise ValidationError(f"unknown marking {marking!r}, expected one of {MARKINGS}")
    if marking == "expected" and net is None:
        raise ValidationError("expected-load marking needs the road network")
    assignment.validate(choice_sets)

    matrix = np.zeros((cmap.cell_count, intervals), dtype=np.int64)
    for trip, cs, rank in zip(demand.trips, choice_sets, assignment.path_index):
        column = int(trip.departure_time // interval)
        if column >= intervals:
            raise ValidationError(
                f"agent {trip.agent_id} departs at {trip.departure_time:.1f} s, "
                f"beyond the {intervals * interval:.0f} s horizon"
            )
        path = cs.paths[rank]
        if marking == "departure":
            for cell in cmap.cells_on_path(path):
                matrix[cell, column] += 1
            continue
        clock = trip.departure_time
        first_seen: Dict[int, int] = {cmap.cell_of(path[0]): column}
        for edge in net.path_edges(path):
            clock += edge.free_flow_time
            cell = cmap.cell_of(edge.to_node)
            if cell not in first_seen:
                first_seen[cell] = min(int(clock // interval), intervals - 1)
        for cell, col in first_seen.items():
            matrix[cell, col] += 1
    return AssignmentMatrix(matrix, float(interval))
