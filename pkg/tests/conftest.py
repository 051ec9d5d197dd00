"""Shared networks and scenarios for the test suite."""

import numpy as np
import pytest

from assign_surrogate.dataset import Dataset, DatasetSpec, SimulationRun, Split
from assign_surrogate.demand_paths import Demand, Trip, build_choice_sets
from assign_surrogate.network import CellMap, Edge, Node, RoadNetwork, build_cell_map, synth_grid_network
from assign_surrogate.simulator import Scenario


def make_demand(pairs, departures):
    """Demand from (origin, destination) pairs and departure times."""
    return Demand(tuple(Trip(i, o, d, float(t)) for i, ((o, d), t) in enumerate(zip(pairs, departures))))


def make_run(sim_id, cells, intervals, rng, high=4):
    assignments = rng.integers(0, high, size=(cells, intervals))
    flows = rng.integers(0, high, size=(cells, intervals))
    flows[:, 0] = 0
    return SimulationRun(sim_id, assignments, flows, float(flows.sum() * 10.0))


def two_route_network(capacity=0.2):
    """Routes 0-1-3 and 0-2-3, four 100 m edges at 10 m/s."""
    nodes = [Node(0, 0.0, 0.0), Node(1, 100.0, 100.0), Node(2, 100.0, -100.0), Node(3, 200.0, 0.0)]
    links = [(0, 1), (1, 3), (0, 2), (2, 3)]
    edges = [Edge(i, u, v, 100.0, 10.0, capacity, 13) for i, (u, v) in enumerate(links)]
    return RoadNetwork(nodes, edges)


@pytest.fixture
def grid3():
    return synth_grid_network(3, 3, 100.0, 10.0, 0.2)


@pytest.fixture
def grid3_cells(grid3):
    return build_cell_map(grid3, 80.0)


@pytest.fixture
def triangle():
    """o=0, m=1, d=2: direct o->d takes 5 s, o->m->d takes 2 + 2 s."""
    nodes = [Node(0, 0.0, 0.0), Node(1, 50.0, 50.0), Node(2, 100.0, 0.0)]
    edges = [Edge(0, 0, 2, 5.0, 1.0, 1.0, 1), Edge(1, 0, 1, 2.0, 1.0, 1.0, 1), Edge(2, 1, 2, 2.0, 1.0, 1.0, 1)]
    return RoadNetwork(nodes, edges)


@pytest.fixture
def bottleneck():
    """Two equal routes; 12 agents leaving node 0 one second apart."""
    net = two_route_network()
    cmap = CellMap(4, {0: 0, 1: 1, 2: 2, 3: 3})
    demand = make_demand([(0, 3)] * 12, range(12))
    return Scenario(net, cmap, demand, build_choice_sets(net, demand, 2))


@pytest.fixture
def small_dataset():
    """Twelve synthetic runs over 4 cells with a 70/10/20 style split."""
    rng = np.random.default_rng(3)
    runs = tuple(make_run(i, 4, 16, rng) for i in range(12))
    partition = Split(train=tuple(range(8)), val=(8, 9), test=(10, 11))
    return Dataset(DatasetSpec(cells=4, interval=10.0, flow_window=4, assign_window=4), runs, partition)


@pytest.fixture
def ring_adjacency():
    """Row-normalised adjacency of a directed 4-cell ring with self-loops."""
    raw = np.eye(4)
    for i in range(4):
        raw[(i + 1) % 4, i] = 1.0
    return raw / raw.sum(axis=1, keepdims=True)
