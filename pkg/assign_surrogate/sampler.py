"""
Sampler - Route assignments spread over the simplex of path-rank proportions.

A grid point fixes the share of agents routed on their rank-0, rank-1, ...
paths; each agent then draws its rank from that distribution restricted to the
paths it actually has. Uniform random assignments complete the sample set.
"""

import hashlib
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from .demand_paths import Assignment, ChoiceSets
from .errors import SamplingError, ValidationError
from .network import _read_csv

logger = logging.getLogger(__name__)


def derive_seed(base_seed: int, *keys) -> int:
    """Deterministic 63-bit seed from a root seed and any sequence of keys.

    Args:
        base_seed: Root seed of the experiment
        *keys: Stage name and indices; each is joined by its ``str`` form

    Returns:
        int: Nonnegative seed, stable across processes and platforms
    """
    material = "/".join([str(int(base_seed))] + [str(k) for k in keys]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class SimplexPoint:
    """Probability vector with integer numerators over a common resolution."""

    numerators: Tuple[int, ...]
    resolution: int

    def __post_init__(self):
        if self.resolution < 1:
            raise ValidationError("simplex resolution must be at least 1")
        if any(n < 0 for n in self.numerators):
            raise ValidationError("simplex numerators must be nonnegative")
        if sum(self.numerators) != self.resolution:
            raise ValidationError(f"numerators {self.numerators} do not sum to {self.resolution}")

    @property
    def k(self) -> int:
        """Number of path ranks."""
        return len(self.numerators)

    @property
    def fractions(self) -> Tuple[Fraction, ...]:
        """Exact shares per rank."""
        return tuple(Fraction(n, self.resolution) for n in self.numerators)

    @property
    def probabilities(self) -> np.ndarray:
        """Shares per rank as floats summing to 1."""
        return np.array(self.numerators, dtype=np.float64) / self.resolution

    @classmethod
    def vertex(cls, k: int, rank: int, resolution: int = 1) -> "SimplexPoint":
        """Point that puts every agent on ``rank``.

        Args:
            k: Number of path ranks
            rank: Rank receiving the whole share
            resolution: Common denominator of the numerators

        Returns:
            SimplexPoint: The vertex
        """
        numerators = [0] * k
        numerators[rank] = resolution
        return cls(tuple(numerators), resolution)


def _compositions(total: int, parts: int) -> Iterator[Tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def grid_points(k: int, resolution: int) -> List[SimplexPoint]:
    """All compositions of ``resolution`` into ``k`` parts, first component descending.

    Args:
        k: Number of path ranks
        resolution: Grid resolution g; shares are multiples of 1/g

    Returns:
        List[SimplexPoint]: C(g + K - 1, K - 1) points, the rank-0 vertex first
    """
    if k < 1 or resolution < 1:
        raise ValidationError("grid needs K >= 1 and resolution >= 1")
    return [SimplexPoint(c, resolution) for c in _compositions(resolution, k)]


def sample_assignment(choice_sets: ChoiceSets, point: SimplexPoint, seed: int) -> Assignment:
    """Draw each agent's rank from ``point`` restricted to its available paths.

    Args:
        choice_sets: Paths per agent; agents with fewer than K paths have
            their shares renormalised over the ranks they have
        point: Shares per rank
        seed: Seed of the per-agent uniform draws

    Returns:
        Assignment: One rank per agent. Raises SamplingError when an agent
        has no share on any of its paths.
    """
    if point.k != choice_sets.k:
        raise ValidationError(f"simplex point has {point.k} components, choice sets have K={choice_sets.k}")
    masks = choice_sets.masks()
    weights = masks * point.probabilities[None, :]
    totals = weights.sum(axis=1)
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        raise SamplingError(f"agent {int(empty[0])}: no probability mass on its available paths")
    if not len(choice_sets):
        return Assignment(())

    cdf = np.cumsum(weights, axis=1) / totals[:, None]
    # the last positive rank closes the distribution exactly
    last = choice_sets.k - 1 - np.argmax(weights[:, ::-1] > 0, axis=1)
    cdf[np.arange(choice_sets.k)[None, :] >= last[:, None]] = 1.0
    u = np.random.default_rng(seed).random(len(choice_sets))
    ranks = np.argmax(u[:, None] < cdf, axis=1)
    return Assignment(tuple(int(r) for r in ranks))


def random_assignment(choice_sets: ChoiceSets, seed: int) -> Assignment:
    """Uniform draw over each agent's available ranks.

    Args:
        choice_sets: Paths per agent
        seed: Seed of the draws

    Returns:
        Assignment: One rank per agent
    """
    if not len(choice_sets):
        return Assignment(())
    counts = choice_sets.masks().sum(axis=1)
    if np.any(counts == 0):
        raise SamplingError(f"agent {int(np.argmin(counts))}: empty choice set")
    ranks = np.random.default_rng(seed).integers(0, counts)
    return Assignment(tuple(int(r) for r in ranks))


@dataclass(frozen=True)
class SampleSpec:
    """One planned assignment: a grid point draw, or a uniform draw when ``point`` is None."""

    sample_id: int
    grid_index: int
    point: Optional[SimplexPoint]
    seed: int

    def draw(self, choice_sets: ChoiceSets) -> Assignment:
        """The planned assignment for these choice sets."""
        if self.point is None:
            return random_assignment(choice_sets, self.seed)
        return sample_assignment(choice_sets, self.point, self.seed)


def sampling_plan(k: int, resolution: int, n_samples: int, base_seed: int,
                  random_samples: int = 0) -> List[SampleSpec]:
    """Grid points in order, cycled when more samples than points are requested,
    followed by ``random_samples`` uniform assignments."""
    if n_samples < 0 or random_samples < 0:
        raise ValidationError("sample counts must be nonnegative")
    points = grid_points(k, resolution)
    plan = []
    for i in range(n_samples):
        grid_index, replicate = i % len(points), i // len(points)
        plan.append(SampleSpec(i, grid_index, points[grid_index], derive_seed(base_seed, "grid", grid_index, replicate)))
    for j in range(random_samples):
        plan.append(SampleSpec(n_samples + j, -1, None, derive_seed(base_seed, "random", j)))
    logger.info("Planned %d grid and %d random assignments (%d grid points)",
                n_samples, random_samples, len(points))
    return plan


def save_sampling_plan(path, plan: List[SampleSpec], k: int):
    """Write the sampling manifest ``sample_id,grid_index,p_0..p_{K-1},seed``."""
    columns = ["sample_id", "grid_index"] + [f"p_{i}" for i in range(k)] + ["seed"]
    rows = []
    for spec in plan:
        probs = list(spec.point.probabilities) if spec.point is not None else [np.nan] * k
        rows.append([spec.sample_id, spec.grid_index] + probs + [spec.seed])
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)


def load_sampling_plan(path, k: int, resolution: int) -> List[SampleSpec]:
    """Read a manifest written by :func:`save_sampling_plan`.

    Args:
        path: The manifest CSV
        k: Number of path ranks, which names the ``p_*`` columns
        resolution: Grid resolution used to recover integer numerators

    Returns:
        List[SampleSpec]: Plan in file order; rows with grid index -1 are uniform draws
    """
    columns = [f"p_{i}" for i in range(k)]
    frame = _read_csv(Path(path), ["sample_id", "grid_index", "seed"] + columns)
    plan = []
    for row in frame.to_dict("records"):
        point = None
        if int(row["grid_index"]) >= 0:
            point = SimplexPoint(tuple(int(round(row[c] * resolution)) for c in columns), resolution)
        plan.append(SampleSpec(int(row["sample_id"]), int(row["grid_index"]), point, int(row["seed"])))
    return plan
