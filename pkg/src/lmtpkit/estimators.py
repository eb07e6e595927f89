"""The four policy-effect estimators and influence-function inference.

All regression nuisances run on the outcome mapped into (0, 1); point
estimates, influence values, and intervals are reported back on the original
outcome scale. Censored trajectories carry exact zeros in the density-ratio
matrix from their censoring time onward, which truncates every sum below at
the right place without special-casing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from . import _kernels
from .crossfit import FoldPlan, crossfit_predict, make_folds
from .data import LongitudinalData, design_matrix
from .density_ratio import RatioEstimates, _norm_specs
from .errors import ConfigError, EstimationError
from .learners import LearnerSpec, cv_stack, fit_regressor
from .policy import Policy, shifted_exposures

__all__ = [
    "NuisanceSet",
    "EstimateResult",
    "gcomp_sequential",
    "ipw_estimate",
    "eif_values",
    "tilt_step",
    "tmle_estimate",
    "sdr_estimate",
    "wald_interval",
]


@dataclass
class NuisanceSet:
    """Cross-fitted nuisance evaluations aligned by trajectory.

    ``m_obs[:, t-1]`` holds m_t(A_t, H_t) and ``m_shift[:, t-1]`` holds
    m_t(A_t^d, H_t) on the scaled outcome space, zero-filled where a
    trajectory is censored before t. ``ratios`` may be attached later.
    """

    m_obs: np.ndarray
    m_shift: np.ndarray
    ratios: Optional[RatioEstimates] = None
    provenance: dict = field(default_factory=dict)


@dataclass
class EstimateResult:
    """A point estimate with (for tmle/sdr) EIF-based uncertainty."""

    estimator: str
    theta: float
    se: Optional[float]
    ci: Optional[tuple[float, float]]
    level: float
    eif: Optional[np.ndarray]
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self, n: int, tau: int) -> dict:
        return {
            "estimator": self.estimator,
            "theta": self.theta,
            "se": self.se,
            "ci": list(self.ci) if self.ci is not None else None,
            "level": self.level,
            "n": n,
            "tau": tau,
            "diagnostics": self.diagnostics,
        }


def _phi1(ratio_values: np.ndarray, m_obs: np.ndarray, m_shift: np.ndarray,
          y: np.ndarray) -> np.ndarray:
    """Influence-function values before centering, on the scaled space.

    phi_1 = sum_s prod_{k<=s} r_k * (m_{s+1}(A^d,H) - m_s(A,H)) + m_1(A^d,L)
    with m_{tau+1} set to the outcome. Inputs must be zero-filled (not NaN)
    at unavailable cells; the zero ratios kill those terms.
    """
    cum = np.cumprod(ratio_values, axis=1)
    m_next = np.concatenate([m_shift[:, 1:], y[:, None]], axis=1)
    return np.sum(cum * (m_next - m_obs), axis=1) + m_shift[:, 0]


def _stack_seed(base: int, t: int, j: int) -> int:
    return base + 7919 * t + 104729 * (j + 1)


def _fit_m(spec_list, x, target, columns, seed):
    if len(spec_list) == 1:
        return fit_regressor(spec_list[0], x, target, columns=columns)
    inner = make_folds(len(target), min(5, max(2, len(target) // 2)), seed)
    _, model = cv_stack(spec_list, x, target, inner, loss="squared", columns=columns)
    return model


def _sequential_chain(
    data: LongitudinalData,
    policy: Policy,
    specs,
    folds: FoldPlan,
    targets_from: str,
    ratio_values: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Shared backward recursion for the g-computation and SDR chains.

    ``targets_from`` selects the pseudo-outcome at each step: "regression"
    regresses the out-of-fold m_{t+1}(A^d, H) evaluations (g-computation);
    "phi" regresses the influence-function transformation (SDR), which needs
    the density-ratio matrix.
    """
    n, tau = data.n, data.tau
    per_time = _norm_specs(specs, tau)
    shifted = shifted_exposures(data, policy)
    y = data.scaled_outcome()
    m_obs = np.zeros((n, tau))
    m_shift = np.zeros((n, tau))
    target = y
    for t in range(tau, 0, -1):
        fit_rows = data.observed_through >= t  # pseudo-outcome available
        eval_rows = data.avail_mask(t)
        obs = design_matrix(data, t)
        alt = design_matrix(data, t, exposures=shifted[t - 1])
        spec_list = per_time[t - 1]
        clip01 = all(s.kind == "logistic" for s in spec_list)
        if clip01:
            target = np.clip(target, 0.0, 1.0)

        def fitter(train_idx, _x=obs.X, _y=target, _rows=fit_rows, _cols=obs.columns,
                   _specs=spec_list, _t=t):
            rows = train_idx[_rows[train_idx]]
            if rows.size == 0:
                raise EstimationError(f"no uncensored training rows at t={_t}")
            return _fit_m(_specs, _x[rows], _y[rows], _cols,
                          _stack_seed(folds.seed, _t, 0))

        try:
            pred_obs, pred_shift = crossfit_predict(fitter, folds, [obs.X, alt.X],
                                                    rows=eval_rows)
        except EstimationError as e:
            raise EstimationError(f"outcome regression failed at t={t}: {e}") from e
        m_obs[:, t - 1] = np.where(eval_rows, np.nan_to_num(pred_obs, nan=0.0), 0.0)
        m_shift[:, t - 1] = np.where(eval_rows, np.nan_to_num(pred_shift, nan=0.0), 0.0)
        if targets_from == "phi":
            target = (ratio_values[:, t - 1] * (target - m_obs[:, t - 1])
                      + m_shift[:, t - 1])
        else:
            target = m_shift[:, t - 1]
    return m_obs, m_shift


def gcomp_sequential(
    data: LongitudinalData,
    policy: Policy,
    learners,
    folds: FoldPlan,
) -> tuple[NuisanceSet, float]:
    """Sequential-regression (g-computation) chain and substitution estimate.

    Fits m_tau by regressing the scaled outcome on (A_tau, H_tau), then for
    each earlier t regresses the out-of-fold m_{t+1}(A_{t+1}^d, H_{t+1})
    evaluations on (A_t, H_t). Censored-by-t rows drop out of each fit. The
    substitution estimate is the mean of m_1(A_1^d, L_1), unscaled.
    """
    m_obs, m_shift = _sequential_chain(data, policy, learners, folds, "regression")
    theta = float(data.scaler.unscale(m_shift[:, 0].mean()))
    nuis = NuisanceSet(m_obs=m_obs, m_shift=m_shift,
                       provenance={"fold_seed": folds.seed, "chain": "gcomp"})
    return nuis, theta


def ipw_estimate(data: LongitudinalData, ratios: RatioEstimates) -> float:
    """Inverse-probability-weighted estimate mean((prod_t r_t) * Y).

    Computed on the original outcome scale. Censored trajectories contribute
    an exact zero because their ratio product is zero.
    """
    w = ratios.cumulative()[:, -1]
    y = np.where(np.isnan(data.outcome), 0.0, data.outcome)
    return float(np.mean(w * y))


def tilt_step(pseudo_y, offset, weights, tol: float = 1e-11, max_iter: int = 100) -> float:
    """Intercept of the weighted logistic tilting model with a fixed offset.

    Solves sum_i w_i (y~_i - expit(eps + o_i)) = 0 by Newton with a bisection
    fallback on [-10, 10]; at the solution the mean absolute score is below
    tol. Divergence (|eps| escaping 10) raises with advice to truncate the
    weights.
    """
    pseudo_y = np.asarray(pseudo_y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if (weights < 0).any() or weights.sum() <= 0:
        raise EstimationError("tilting weights must be nonnegative and not all zero")
    if not np.isfinite(offset).all():
        raise EstimationError("tilting offsets must be finite")
    eps, resid, status = _kernels.newton_tilt(pseudo_y, offset, weights, tol, max_iter)
    if status != 0 or abs(eps) >= 10.0:
        raise EstimationError(
            f"tilting model diverged (eps={eps:.3f}, |score|/n={resid:.2e}); "
            "consider truncating the density-ratio weights"
        )
    return float(eps)


def eif_values(data: LongitudinalData, nuisances: NuisanceSet, theta: float) -> np.ndarray:
    """Per-observation phi_1 - theta on the original outcome scale."""
    if nuisances.ratios is None:
        raise EstimationError("NuisanceSet has no density ratios attached")
    phi = _phi1(nuisances.ratios.values, nuisances.m_obs, nuisances.m_shift,
                data.scaled_outcome())
    return data.scaler.unscale(phi) - theta


def wald_interval(theta: float, eif: np.ndarray, level: float) -> tuple[float, float, float]:
    """Standard error sd(phi_1)/sqrt(n) (divisor n-1) and the Wald interval."""
    eif = np.asarray(eif, dtype=float)
    n = eif.size
    if n < 2:
        raise EstimationError("need at least two observations for a Wald interval")
    if not 0.0 < level < 1.0:
        raise ConfigError(f"confidence level must be in (0, 1), got {level}")
    se = float(np.std(eif, ddof=1) / np.sqrt(n))
    z = float(ndtri(0.5 * (1.0 + level)))
    return se, theta - z * se, theta + z * se


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))


def _expit(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))


def tmle_estimate(
    data: LongitudinalData,
    policy: Policy,
    regressions: NuisanceSet,
    ratios: RatioEstimates,
    folds: FoldPlan,
    level: float = 0.95,
) -> EstimateResult:
    """Targeted minimum loss-based estimate with Wald inference.

    One backward pass over t = tau..1: each step fits the logistic tilting
    intercept with pseudo-outcome m~_{t+1}(A^d, H) (the outcome at t = tau),
    offset logit m~_t(A, H), and cumulative-ratio weights fixed at their
    initial values, then shifts both evaluations of m~_t by the fitted
    intercept on the logit scale. The pass solves the cross-validated EIF
    estimating equation, which the diagnostics report as ``score_residual``.
    """
    n, tau = data.n, data.tau
    y = data.scaled_outcome()
    m_obs = regressions.m_obs.copy()
    m_shift = regressions.m_shift.copy()
    omega = ratios.cumulative()
    pseudo = y
    for t in range(tau, 0, -1):
        w = omega[:, t - 1]
        active = w > 0
        if active.any():
            eps = tilt_step(pseudo[active], _logit(m_obs[active, t - 1]), w[active])
        else:
            eps = 0.0  # nothing to tilt: all weight is censored away
        avail = data.avail_mask(t)
        m_obs[avail, t - 1] = _expit(_logit(m_obs[avail, t - 1]) + eps)
        m_shift[avail, t - 1] = _expit(_logit(m_shift[avail, t - 1]) + eps)
        pseudo = m_shift[:, t - 1]

    theta_scaled = float(m_shift[:, 0].mean())
    phi = _phi1(ratios.values, m_obs, m_shift, y)
    score_residual = abs(float(phi.mean()) - theta_scaled)
    theta = float(data.scaler.unscale(theta_scaled))
    eif = data.scaler.unscale(phi) - theta
    se, lo, hi = wald_interval(theta, eif, level)
    diagnostics = {
        "score_residual": score_residual,
        "weight_cv": ratios.diagnostics.get("weight_cv"),
        "weight_max": ratios.diagnostics.get("weight_max"),
        "fold_seed": folds.seed,
    }
    return EstimateResult(estimator="tmle", theta=theta, se=se, ci=(lo, hi),
                          level=level, eif=eif, diagnostics=diagnostics)


def sdr_estimate(
    data: LongitudinalData,
    policy: Policy,
    ratios: RatioEstimates,
    learners,
    folds: FoldPlan,
    level: float = 0.95,
) -> EstimateResult:
    """Sequentially doubly robust estimate with Wald inference.

    Backward over t = tau..1: the running pseudo-outcome is the
    influence-function transformation phi_{t+1}; each step regresses it on
    (A_t, H_t) per training fold and updates
    phi_t = r_t (phi_{t+1} - m_t(A,H)) + m_t(A^d,H). Pseudo-outcomes may
    leave [0, 1]; the linear and saturated learners accept that, while a
    pure-logistic menu clips its regression targets into [0, 1].
    """
    m_obs, m_shift = _sequential_chain(data, policy, learners, folds, "phi",
                                       ratio_values=ratios.values)
    y = data.scaled_outcome()
    phi = _phi1(ratios.values, m_obs, m_shift, y)
    theta_scaled = float(phi.mean())
    theta = float(data.scaler.unscale(theta_scaled))
    eif = data.scaler.unscale(phi) - theta
    se, lo, hi = wald_interval(theta, eif, level)
    out_lo, out_hi = data.schema.outcome_bounds
    clamped = not (out_lo <= theta <= out_hi)
    diagnostics = {
        "score_residual": 0.0,  # theta is the mean of phi_1 by construction
        "weight_cv": ratios.diagnostics.get("weight_cv"),
        "weight_max": ratios.diagnostics.get("weight_max"),
        "fold_seed": folds.seed,
        "theta_outside_bounds": bool(clamped),
    }
    theta_rep = theta
    if clamped:
        theta_rep = float(np.clip(theta, out_lo, out_hi))
        lo, hi = min(lo, theta_rep), max(hi, theta_rep)
    return EstimateResult(estimator="sdr", theta=theta_rep, se=se, ci=(lo, hi),
                          level=level, eif=eif, diagnostics=diagnostics)
