"""Density-ratio estimation by probabilistic classification.

For each time point the dataset is duplicated: one copy keeps the observed
exposure (label 0), the other gets the policy-shifted exposure with any
censoring indicator forced to 1 (label 1). A classifier's predicted odds of
label 1 at the observed features estimate the ratio of post-intervention to
observed exposure density. Cross-fitting runs over original trajectory
indices; the two rows of a pair always share a fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .crossfit import FoldPlan, crossfit_predict, make_folds
from .data import Design, LongitudinalData, design_matrix
from .errors import EstimationError
from .learners import LearnerSpec, cv_stack, fit_classifier
from .policy import Policy, shifted_exposures

__all__ = ["AugmentedDataset", "RatioEstimates", "build_augmented", "estimate_density_ratios"]


@dataclass(frozen=True)
class AugmentedDataset:
    """2m rows for one time point: label 0 carries the observed exposure,
    label 1 the intervened one; histories are identical within a pair."""

    t: int
    X: np.ndarray
    labels: np.ndarray
    origin: np.ndarray  # trajectory index of each row
    columns: tuple[str, ...]


def build_augmented(
    data: LongitudinalData,
    policy: Policy,
    t: int,
    shifted: Optional[Sequence[np.ndarray]] = None,
) -> AugmentedDataset:
    """Duplicated dataset at time t, restricted to trajectories whose
    (A_t, H_t) is observed."""
    if shifted is None:
        shifted = shifted_exposures(data, policy)
    avail = data.avail_mask(t)
    idx = np.flatnonzero(avail)
    with_cens = data.censoring is not None
    obs = design_matrix(data, t, include_censoring=with_cens)
    alt = design_matrix(data, t, exposures=shifted[t - 1], include_censoring=with_cens,
                        censoring_value=1.0)
    x = np.vstack([obs.X[idx], alt.X[idx]])
    labels = np.concatenate([np.zeros(idx.size), np.ones(idx.size)])
    origin = np.concatenate([idx, idx])
    return AugmentedDataset(t=t, X=x, labels=labels, origin=origin, columns=obs.columns)


@dataclass
class RatioEstimates:
    """Cross-fitted density-ratio evaluations r_t(A_t, H_t) per trajectory.

    ``values[i, t-1]`` is 0 for every time at or beyond trajectory i's
    censoring point; with a truncation cap every entry is <= cap.
    """

    values: np.ndarray  # (n, tau)
    cap: Optional[float] = None
    truncated: bool = False
    diagnostics: dict = field(default_factory=dict)

    def cumulative(self) -> np.ndarray:
        """Cumulative products over time: column t-1 holds prod_{k<=t} r_k."""
        return np.cumprod(self.values, axis=1)


def _norm_specs(specs, tau: int) -> list[list[LearnerSpec]]:
    """Normalize learner configuration to one stack menu per time point.

    A single spec or a flat list of specs is the same (stacked) menu at every
    time point; a nested list assigns a menu to each time point.
    """
    if isinstance(specs, LearnerSpec):
        return [[specs]] * tau
    specs = list(specs)
    if all(isinstance(s, LearnerSpec) for s in specs):
        return [list(specs)] * tau
    out = []
    for entry in specs:
        out.append([entry] if isinstance(entry, LearnerSpec) else list(entry))
    if len(out) != tau:
        raise EstimationError(f"need learner specs for all {tau} time points")
    return out


def estimate_density_ratios(
    data: LongitudinalData,
    policy: Policy,
    folds: FoldPlan,
    specs: Union[LearnerSpec, Sequence],
    truncation: Optional[float] = None,
) -> RatioEstimates:
    """Cross-fitted density ratios at the observed exposures for all times.

    Per time point: fit the label classifier on augmented rows whose origin
    lies in the training folds, evaluate its probability at the observed
    (A_t, H_t), and take odds. Probabilities are already floored by the
    classifier, so the odds stay finite. Observed censoring indicators of 0
    force the ratio to exactly 0 (interventions keep everyone uncensored, so
    the true ratio vanishes there), and times after the censoring point get 0
    as well.
    """
    n, tau = data.n, data.tau
    per_time = _norm_specs(specs, tau)
    shifted = shifted_exposures(data, policy)
    values = np.zeros((n, tau))
    for t in range(1, tau + 1):
        aug = build_augmented(data, policy, t, shifted=shifted)
        avail = data.avail_mask(t)
        with_cens = data.censoring is not None
        obs = design_matrix(data, t, include_censoring=with_cens)
        spec_list = per_time[t - 1]

        def fitter(train_idx, _aug=aug, _specs=spec_list, _t=t):
            pick = np.isin(_aug.origin, train_idx)
            x, lab = _aug.X[pick], _aug.labels[pick]
            if len(_specs) == 1:
                return fit_classifier(_specs[0], x, lab, columns=_aug.columns)
            # stack CV folds are drawn over trajectories so duplicate rows
            # of one pair never straddle a fold boundary
            inner_seed = folds.seed + 7919 * _t
            kept = np.asarray(train_idx)
            inner_j = min(5, max(2, kept.size // 2))
            traj_plan = make_folds(kept.size, inner_j, inner_seed)
            pos = np.zeros(int(kept.max()) + 1, dtype=np.int64)
            pos[kept] = np.arange(kept.size)
            row_assign = traj_plan.assignment[pos[_aug.origin[pick]]]
            inner = FoldPlan(n=int(pick.sum()), J=inner_j, assignment=row_assign,
                             seed=inner_seed)
            _, model = cv_stack(_specs, x, lab, inner, loss="log",
                                columns=_aug.columns, is_classifier=True)
            return model

        try:
            (u_hat,) = crossfit_predict(fitter, folds, [obs.X], rows=avail)
        except EstimationError as e:
            raise EstimationError(f"density-ratio classifier failed at t={t}: {e}") from e
        r = u_hat / (1.0 - u_hat)
        r = np.where(avail, r, 0.0)
        if with_cens:
            c_obs = data.censoring[t - 1]
            r = np.where(avail & (c_obs == 0.0), 0.0, r)
        values[:, t - 1] = np.nan_to_num(r, nan=0.0)

    truncated = False
    if truncation is not None:
        truncated = bool((values > truncation).any())
        values = np.minimum(values, truncation)

    prod = np.cumprod(values, axis=1)[:, -1]
    mean = float(prod.mean())
    sd = float(prod.std(ddof=1)) if n > 1 else 0.0
    diagnostics = {
        "weight_deciles": [float(q) for q in np.percentile(prod, np.arange(0, 101, 10))],
        "weight_cv": float(sd / mean) if mean > 0 else float("nan"),
        "weight_max": float(prod.max()),
        "weight_mean": mean,
    }
    return RatioEstimates(values=values, cap=truncation, truncated=truncated,
                          diagnostics=diagnostics)
