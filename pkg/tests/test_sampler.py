"""Tests for simplex grids and assignment sampling."""

from fractions import Fraction
from math import comb

import numpy as np
import pytest

from assign_surrogate.demand_paths import ChoiceSet, ChoiceSets
from assign_surrogate.errors import SamplingError, ValidationError
from assign_surrogate.sampler import (SimplexPoint, derive_seed, grid_points, load_sampling_plan, random_assignment,
                                      sample_assignment, sampling_plan, save_sampling_plan)


def uniform_sets(n_agents, n_paths, k):
    paths = tuple((0, i + 1, 99) for i in range(n_paths))
    return ChoiceSets(k, [ChoiceSet(a, paths, k) for a in range(n_agents)])


def test_grid_k2_resolution2():
    fractions = [p.fractions for p in grid_points(2, 2)]
    assert fractions == [(Fraction(1), Fraction(0)), (Fraction(1, 2), Fraction(1, 2)), (Fraction(0), Fraction(1))]


def test_grid_k3_resolution1_is_the_vertices():
    assert [p.numerators for p in grid_points(3, 1)] == [(1, 0, 0), (0, 1, 0), (0, 0, 1)]


@pytest.mark.parametrize("k, resolution", [(1, 3), (2, 5), (3, 4), (4, 6), (5, 2)])
def test_grid_size_and_uniqueness(k, resolution):
    points = grid_points(k, resolution)
    assert len(points) == comb(resolution + k - 1, k - 1)
    assert len({p.numerators for p in points}) == len(points)
    assert all(sum(p.fractions) == 1 for p in points)


def test_grid_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        grid_points(0, 2)
    with pytest.raises(ValidationError):
        grid_points(2, 0)


def test_simplex_point_must_sum_to_resolution():
    with pytest.raises(ValidationError):
        SimplexPoint((1, 2), 4)


def test_vertex_assigns_every_agent_that_rank():
    choice_sets = uniform_sets(50, 3, 3)
    assignment = sample_assignment(choice_sets, SimplexPoint.vertex(3, 2), seed=1)
    assert set(assignment.path_index) == {2}


def test_unavailable_rank_mass_is_renormalised():
    # rank 3 carries no mass, rank 0 has none either; agents have two paths
    choice_sets = uniform_sets(40, 2, 4)
    assignment = sample_assignment(choice_sets, SimplexPoint((0, 1, 1, 0), 2), seed=5)
    assert set(assignment.path_index) == {1}


def test_no_mass_on_available_paths_fails():
    choice_sets = uniform_sets(3, 2, 3)
    with pytest.raises(SamplingError, match="agent 0"):
        sample_assignment(choice_sets, SimplexPoint.vertex(3, 2), seed=0)


def test_sampling_matches_proportions():
    choice_sets = uniform_sets(10000, 3, 3)
    assignment = sample_assignment(choice_sets, SimplexPoint((2, 1, 1), 4), seed=42)
    shares = np.bincount(assignment.path_index, minlength=3) / 10000
    np.testing.assert_allclose(shares, [0.5, 0.25, 0.25], atol=0.02)


def test_sampling_is_deterministic():
    choice_sets = uniform_sets(100, 3, 3)
    point = SimplexPoint((1, 1, 1), 3)
    assert sample_assignment(choice_sets, point, 9) == sample_assignment(choice_sets, point, 9)
    assert sample_assignment(choice_sets, point, 9) != sample_assignment(choice_sets, point, 10)


def test_point_dimension_must_match_k():
    with pytest.raises(ValidationError):
        sample_assignment(uniform_sets(2, 2, 3), SimplexPoint((1, 1), 2), seed=0)


def test_random_assignment_stays_within_available_paths():
    sets = [ChoiceSet(0, ((0, 1),), 3), ChoiceSet(1, ((0, 1), (0, 2, 1)), 3), ChoiceSet(2, ((0, 1),) * 3, 3)]
    choice_sets = ChoiceSets(3, sets)
    for seed in range(30):
        ranks = random_assignment(choice_sets, seed).path_index
        assert ranks[0] == 0 and ranks[1] in (0, 1) and ranks[2] in (0, 1, 2)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, "grid", 1, 0) == derive_seed(0, "grid", 1, 0)
    assert derive_seed(0, "grid", 1, 0) != derive_seed(0, "grid", 1, 1)
    assert derive_seed(1, "grid", 1, 0) != derive_seed(0, "grid", 1, 0)
    assert 0 <= derive_seed(123, "x") < 2 ** 63


def test_sampling_plan_cycles_grid_points():
    plan = sampling_plan(2, 2, 7, base_seed=0, random_samples=2)
    assert [s.grid_index for s in plan] == [0, 1, 2, 0, 1, 2, 0, -1, -1]
    assert [s.sample_id for s in plan] == list(range(9))
    assert plan[0].seed != plan[3].seed
    assert plan[-1].point is None


def test_sampling_plan_round_trip(tmp_path):
    plan = sampling_plan(3, 2, 8, base_seed=4, random_samples=1)
    save_sampling_plan(tmp_path / "sampling.csv", plan, 3)
    assert load_sampling_plan(tmp_path / "sampling.csv", 3, 2) == plan
