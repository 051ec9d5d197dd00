"""
Simulator - Deterministic mesoscopic spatial-queue traffic model.

Each edge holds vehicles that are still traversing it and a FIFO queue of
vehicles ready to leave. Leaving is limited by an outflow credit that grows by
``capacity * sim_step`` per step, and by free storage on the next edge, which
lets queues spill back upstream. Vehicles that cannot enter their first edge
wait in an origin holding queue outside the network.

Timestamps stay continuous between steps: a vehicle whose traversal ends
inside a step leaves at that exact time when nothing holds it back, so
uncongested travel times match free-flow times.

A run stops early once every vehicle has arrived, or once the network is
gridlocked: nothing traverses an edge, every queued vehicle waits for storage
on a full edge and no departures remain, so no vehicle can ever move again.
Gridlocked vehicles are reported as unfinished.
"""

import heapq
import logging
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat
from pathlib import Path
from typing import Callable, Deque, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .demand_paths import Assignment, ChoiceSets, Demand
from .errors import ValidationError
from .network import CellMap, RoadNetwork

logger = logging.getLogger(__name__)

_EPS = 1e-9


def _is_multiple(value: float, unit: float) -> bool:
    ratio = value / unit
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


@dataclass(frozen=True)
class SimConfig:
    sim_step: float = 1.0
    interval: float = 10.0
    horizon: float = 1500.0

    def __post_init__(self):
        if not (self.sim_step > 0 and self.interval > 0 and self.horizon > 0):
            raise ValidationError("sim_step, interval and horizon must be positive")
        if not _is_multiple(self.interval, self.sim_step):
            raise ValidationError("interval must be an integer multiple of sim_step")
        if not _is_multiple(self.horizon, self.interval):
            raise ValidationError("horizon must be an integer multiple of interval")

    @property
    def steps_per_interval(self) -> int:
        return int(round(self.interval / self.sim_step))

    @property
    def intervals(self) -> int:
        return int(round(self.horizon / self.interval))

    @property
    def steps(self) -> int:
        return self.intervals * self.steps_per_interval


@dataclass(frozen=True)
class VehicleRecord:
    agent_id: int
    departure: float
    arrival: Optional[float]
    travel_time: float

    @property
    def finished(self) -> bool:
        return self.arrival is not None


@dataclass(frozen=True, eq=False)
class FlowMatrix:
    """Vehicles present per cell at the start of each interval, shape (S, T)."""

    matrix: np.ndarray
    interval: float


@dataclass(frozen=True, eq=False)
class SimResult:
    vehicles: Tuple[VehicleRecord, ...]
    flows: FlowMatrix
    total_travel_time: float
    horizon: float
    gridlocked_at: Optional[float] = None

    @property
    def unfinished(self) -> int:
        return sum(1 for v in self.vehicles if not v.finished)


StepObserver = Callable[[int, Dict[str, int]], None]


def aggregate_flows(snapshots: Sequence[Mapping[int, int]], cmap: CellMap, interval: float,
                    intervals: Optional[int] = None) -> FlowMatrix:
    """Turn per-boundary node occupancies into the cell flow matrix.

    ``snapshots[t]`` maps the from-node of each occupied edge to its vehicle
    count at time ``t * interval``. Columns past the last snapshot stay zero.
    """
    intervals = len(snapshots) if intervals is None else intervals
    if len(snapshots) > intervals:
        raise ValidationError(f"{len(snapshots)} snapshots do not fit in {intervals} intervals")
    matrix = np.zeros((cmap.cell_count, intervals), dtype=np.int64)
    for t, snapshot in enumerate(snapshots):
        for node, count in snapshot.items():
            matrix[cmap.cell_of(node), t] += count
    return FlowMatrix(matrix, float(interval))


def _snapshot(occupancy: Mapping[int, int], from_node: Mapping[int, int]) -> Dict[int, int]:
    snapshot: Dict[int, int] = {}
    for edge_id, count in occupancy.items():
        if count:
            node = from_node[edge_id]
            snapshot[node] = snapshot.get(node, 0) + count
    return snapshot


def total_travel_time(result: SimResult) -> float:
    """Sum of per-vehicle travel times [s]; unfinished vehicles count up to the horizon."""
    return math.fsum(v.travel_time for v in result.vehicles)


def simulate(net: RoadNetwork, demand: Demand, choice_sets: ChoiceSets, assignment: Assignment,
             cmap: CellMap, cfg: SimConfig, on_step: Optional[StepObserver] = None) -> SimResult:
    """Run one assignment through the spatial-queue model.

    Args:
        on_step: Optional observer called after every step with the counts of
            vehicles ``pending`` departure, ``holding`` at their origin,
            ``on_edges`` and ``arrived``.

    Returns:
        SimResult with per-vehicle records, the flow matrix and total travel time,
        and the time a gridlock stopped the run if one did
    """
    routes = [net.path_edges(path) for path in assignment.paths(choice_sets)]
    for trip in demand:
        if trip.departure_time >= cfg.horizon:
            raise ValidationError(
                f"agent {trip.agent_id} departs at {trip.departure_time:.1f} s, "
                f"not before the {cfg.horizon:.0f} s horizon"
            )

    n = len(demand)
    dt = cfg.sim_step
    spi = cfg.steps_per_interval
    rate = {e.edge_id: e.capacity * dt for e in net.edges}
    bound = {e.edge_id: max(1.0, e.capacity * dt) for e in net.edges}
    credit = {e.edge_id: 0.0 for e in net.edges}
    last_update = {e.edge_id: -1 for e in net.edges}
    occupancy = {e.edge_id: 0 for e in net.edges}
    from_node = {e.edge_id: e.from_node for e in net.edges}

    traversing: List[Tuple[float, int]] = []
    exit_queues: Dict[int, Deque[Tuple[float, int]]] = {}
    holding: Dict[int, Deque[int]] = {}
    position = [0] * n
    arrival: List[Optional[float]] = [None] * n
    departures = sorted(range(n), key=lambda a: (demand[a].departure_time, a))
    next_departure = 0
    arrived = 0
    gridlocked_at: Optional[float] = None
    snapshots: List[Dict[int, int]] = []

    for step in range(cfg.steps):
        if arrived == n:
            break
        now = step * dt
        floor = now - dt

        if step % spi == 0:
            snapshots.append(_snapshot(occupancy, from_node))

        moved = waiting_for_credit = False
        while traversing and traversing[0][0] <= now + _EPS:
            ready, agent = heapq.heappop(traversing)
            edge_id = routes[agent][position[agent]].edge_id
            exit_queues.setdefault(edge_id, deque()).append((ready, agent))

        for edge_id in sorted(exit_queues):
            queue = exit_queues[edge_id]
            c = min(bound[edge_id], credit[edge_id] + rate[edge_id] * (step - last_update[edge_id]))
            last_update[edge_id] = step
            while queue and c >= 1.0 - _EPS:
                ready, agent = queue[0]
                leave = ready if ready > floor else now
                route = routes[agent]
                if position[agent] + 1 == len(route):
                    arrival[agent] = leave
                    arrived += 1
                else:
                    nxt = route[position[agent] + 1]
                    if occupancy[nxt.edge_id] >= nxt.storage:
                        break
                    occupancy[nxt.edge_id] += 1
                    position[agent] += 1
                    heapq.heappush(traversing, (leave + nxt.free_flow_time, agent))
                queue.popleft()
                occupancy[edge_id] -= 1
                c -= 1.0
                moved = True
            credit[edge_id] = c
            if queue and c < 1.0 - _EPS:
                waiting_for_credit = True
            if not queue:
                del exit_queues[edge_id]

        while next_departure < n and demand[departures[next_departure]].departure_time <= now + _EPS:
            agent = departures[next_departure]
            next_departure += 1
            holding.setdefault(routes[agent][0].edge_id, deque()).append(agent)

        for edge_id in sorted(holding):
            queue = holding[edge_id]
            edge = net.edge(edge_id)
            while queue and occupancy[edge_id] < edge.storage:
                agent = queue.popleft()
                departure = demand[agent].departure_time
                enter = departure if departure > floor else now
                occupancy[edge_id] += 1
                heapq.heappush(traversing, (enter + edge.free_flow_time, agent))
                moved = True
            if not queue:
                del holding[edge_id]

        if on_step is not None:
            on_step(step, {
                "pending": n - next_departure,
                "holding": sum(len(q) for q in holding.values()),
                "on_edges": sum(occupancy.values()),
                "arrived": arrived,
            })

        if not (moved or traversing or waiting_for_credit) and next_departure == n and (exit_queues or holding):
            gridlocked_at = now
            logger.warning("Gridlock at %.0f s: %d vehicles stuck on edges, %d held at their origin",
                           now, sum(occupancy.values()), sum(len(q) for q in holding.values()))
            frozen = _snapshot(occupancy, from_node)
            snapshots.extend(dict(frozen) for _ in range(cfg.intervals - len(snapshots)))
            break

    vehicles = []
    for trip in demand:
        end = arrival[trip.agent_id]
        travel = (end if end is not None else cfg.horizon) - trip.departure_time
        vehicles.append(VehicleRecord(trip.agent_id, trip.departure_time, end, travel))
    flows = aggregate_flows(snapshots, cmap, cfg.interval, cfg.intervals)
    result = SimResult(tuple(vehicles), flows, math.fsum(v.travel_time for v in vehicles), cfg.horizon, gridlocked_at)
    if result.unfinished and gridlocked_at is None:
        logger.warning("%d of %d vehicles unfinished at the %.0f s horizon", result.unfinished, n, cfg.horizon)
    return result


@dataclass(frozen=True)
class Scenario:
    """Immutable inputs shared by every simulation of one demand."""

    net: RoadNetwork
    cmap: CellMap
    demand: Demand
    choice_sets: ChoiceSets

    def simulate(self, assignment: Assignment, cfg: SimConfig, on_step: Optional[StepObserver] = None) -> SimResult:
        return simulate(self.net, self.demand, self.choice_sets, assignment, self.cmap, cfg, on_step)


def _simulate_one(scenario: Scenario, assignment: Assignment, cfg: SimConfig) -> SimResult:
    return scenario.simulate(assignment, cfg)


def simulate_batch(scenario: Scenario, assignments: Sequence[Assignment], cfg: SimConfig,
                   workers: int = 1, progress: bool = False) -> List[SimResult]:
    """Simulate many assignments; results come back in input order."""
    if workers <= 1:
        return [scenario.simulate(a, cfg) for a in tqdm(assignments, desc="Simulating", disable=not progress)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        jobs = pool.map(_simulate_one, repeat(scenario), assignments, repeat(cfg))
        return list(tqdm(jobs, total=len(assignments), desc="Simulating", disable=not progress))


def save_result(directory, result: SimResult, sample_id: int):
    """Write ``Q.csv``, ``vehicles.csv`` and ``summary.csv`` for one run."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "Q.csv", result.flows.matrix, fmt="%d", delimiter=",")
    pd.DataFrame(
        [(v.agent_id, v.departure, v.arrival if v.finished else np.nan, v.travel_time, int(v.finished))
         for v in result.vehicles],
        columns=["agent_id", "departure_s", "arrival_s", "travel_time_s", "finished"],
    ).to_csv(directory / "vehicles.csv", index=False)
    pd.DataFrame(
        [(sample_id, result.total_travel_time, result.total_travel_time / 60.0)],
        columns=["sample_id", "TT_s", "TT_min"],
    ).to_csv(directory / "summary.csv", index=False)
