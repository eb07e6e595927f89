"""Deterministic J-fold partitioning of trajectories and out-of-fold
prediction orchestration.

One fold plan is shared by every nuisance in an estimation run, always over
original trajectory indices (never over augmented rows).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, EstimationError

__all__ = ["FoldPlan", "make_folds", "no_crossfit_plan", "crossfit_predict"]


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each trajectory index to one of J validation folds."""

    n: int
    J: int
    assignment: np.ndarray  # (n,) int in [0, J)
    seed: int

    def __post_init__(self):
        self.assignment.setflags(write=False)

    def val_indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def train_indices(self, j: int) -> np.ndarray:
        if self.J == 1:
            return np.arange(self.n)
        return np.flatnonzero(self.assignment != j)


def make_folds(n: int, J: int, seed: int) -> FoldPlan:
    """Shuffle indices with a seeded generator and deal them round-robin.

    Fold sizes differ by at most one; the same (n, J, seed) always yields the
    same plan.
    """
    if J < 2 or J > n:
        raise ConfigError(f"fold count must satisfy 2 <= J <= n, got J={J}, n={n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.arange(n) % J
    return FoldPlan(n=n, J=J, assignment=assignment, seed=seed)


def no_crossfit_plan(n: int, seed: int = 0) -> FoldPlan:
    """Single 'fold' that trains and predicts on all data (--no-crossfit)."""
    return FoldPlan(n=n, J=1, assignment=np.zeros(n, dtype=np.int64), seed=seed)


def crossfit_predict(
    fitter: Callable[[np.ndarray], object],
    folds: FoldPlan,
    designs: Sequence[np.ndarray],
    rows: Optional[np.ndarray] = None,
) -> list[np.ndarray]:
    """Out-of-fold predictions at one or more evaluation designs.

    ``fitter(train_idx)`` trains on the given indices and returns an object
    with ``predict``; each row's predictions come from the model whose
    training set excludes that row's fold. ``rows`` masks which rows receive
    predictions (all by default); other entries are NaN. With a J=1 plan the
    single model trains and predicts on everything.
    """
    n = folds.n
    rows = np.ones(n, dtype=bool) if rows is None else np.asarray(rows, dtype=bool)
    outputs = [np.full(n, np.nan) for _ in designs]
    for j in range(folds.J):
        val = folds.val_indices(j) if folds.J > 1 else np.arange(n)
        val = val[rows[val]]
        if val.size == 0:
            continue
        try:
            model = fitter(folds.train_indices(j))
        except EstimationError:
            raise
        except Exception as e:  # noqa: BLE001 - tagged and re-raised
            raise EstimationError(f"fitter failed on fold {j}: {e}") from e
        for d_idx, design in enumerate(designs):
            outputs[d_idx][val] = model.predict(design[val])
    return outputs
