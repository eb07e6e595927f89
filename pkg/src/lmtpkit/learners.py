"""Regression/classification primitives for nuisance estimation, plus a
cross-validated convex stacking ensemble.

The menu is deliberately small: weighted quasi-binomial logistic (IRLS,
valid for fractional targets), weighted ridge least squares, a saturated
cell-mean/cell-frequency learner over exact feature tuples, and an
intercept-only learner. All fits are deterministic given data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .crossfit import FoldPlan, make_folds
from .errors import ConfigError, EstimationError

__all__ = [
    "LearnerSpec",
    "FittedModel",
    "StackWeights",
    "fit_regressor",
    "fit_classifier",
    "cv_stack",
]

_LEARNER_KINDS = ("logistic", "linear", "saturated", "intercept_only")


@dataclass(frozen=True)
class LearnerSpec:
    """Hyperparameters for one learner.

    ``key_columns`` restricts the saturated learner to a named subset of the
    design columns (all columns when None). ``p_floor`` bounds classifier
    probabilities away from 0/1 so density-ratio odds stay finite.
    """

    kind: str
    ridge: float = 1e-6
    max_iter: int = 100
    tol: float = 1e-9
    key_columns: Optional[tuple[str, ...]] = None
    p_floor: float = 1e-3

    def __post_init__(self):
        if self.kind not in _LEARNER_KINDS:
            raise ConfigError(f"unknown learner kind '{self.kind}'")

    @classmethod
    def from_config(cls, spec) -> "LearnerSpec":
        if isinstance(spec, str):
            return cls(kind=spec)
        if isinstance(spec, dict):
            d = dict(spec)
            kind = d.pop("kind", None)
            if kind is None:
                raise ConfigError("learner spec object requires a 'kind' key")
            keys = d.pop("key_columns", None)
            allowed = {"ridge", "max_iter", "tol", "p_floor"}
            unknown = set(d) - allowed
            if unknown:
                raise ConfigError(f"unknown learner keys: {sorted(unknown)}")
            return cls(kind=kind, key_columns=tuple(keys) if keys else None, **d)
        raise ConfigError(f"cannot parse learner spec {spec!r}")


@dataclass
class FittedModel:
    """An immutable fitted learner; ``predict`` is pure."""

    kind: str
    is_classifier: bool
    clamp: tuple[float, float]
    coef: Optional[np.ndarray] = None
    x_mean: Optional[np.ndarray] = None
    x_sd: Optional[np.ndarray] = None
    constant: Optional[float] = None
    key_idx: Optional[np.ndarray] = None
    cells: Optional[np.ndarray] = None
    cell_values: Optional[np.ndarray] = None
    members: Optional[list["FittedModel"]] = None
    weights: Optional[np.ndarray] = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "ensemble":
            out = np.zeros(X.shape[0])
            for w, m in zip(self.weights, self.members):  # type: ignore[arg-type]
                out += w * m.predict(X)
        elif self.kind == "intercept_only":
            out = np.full(X.shape[0], self.constant)
        elif self.kind == "saturated":
            out = self._predict_cells(X)
        else:  # linear / logistic
            z = (X - self.x_mean) / self.x_sd
            eta = self.coef[0] + z @ self.coef[1:]
            out = _expit(eta) if self.kind == "logistic" else eta
        lo, hi = self.clamp
        return np.clip(out, lo, hi)

    def _predict_cells(self, X: np.ndarray) -> np.ndarray:
        keyed = X[:, self.key_idx]
        if not np.isfinite(keyed).all():
            raise EstimationError("saturated learner received non-finite features")
        stacked = np.vstack([self.cells, keyed])
        _, inv = np.unique(stacked, axis=0, return_inverse=True)
        n_cells = len(self.cells)
        lookup = np.full(inv.max() + 1, -1)
        lookup[inv[:n_cells]] = np.arange(n_cells)
        idx = lookup[inv[n_cells:]]
        return np.where(idx >= 0, self.cell_values[np.clip(idx, 0, None)], self.constant)


def _expit(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))


def _prep(X, y, w, columns):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ConfigError("X must be 2-d")
    y = np.asarray(y, dtype=float)
    if len(y) != X.shape[0]:
        raise ConfigError("X and y lengths differ")
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if len(w) != len(y):
        raise ConfigError("weight vector length differs from y")
    if (w < 0).any():
        raise ConfigError("weights must be nonnegative")
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    if w.sum() <= 0:
        raise ConfigError("total weight is zero")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise EstimationError("non-finite values in training data")
    return X, y, w


def _resolve_keys(spec: LearnerSpec, n_cols: int, columns) -> np.ndarray:
    if spec.key_columns is None:
        return np.arange(n_cols)
    if columns is None:
        raise ConfigError("key_columns given but design has no column names")
    name_to_idx = {c: i for i, c in enumerate(columns)}
    missing = [c for c in spec.key_columns if c not in name_to_idx]
    if missing:
        raise ConfigError(f"key columns not in design: {missing}")
    return np.array([name_to_idx[c] for c in spec.key_columns])


def _fit_one(spec: LearnerSpec, X, y, w, columns, is_classifier: bool) -> FittedModel:
    X, y, w = _prep(X, y, w, columns)
    if is_classifier:
        clamp = (spec.p_floor, 1.0 - spec.p_floor)
    else:
        clamp = (float(y.min()), float(y.max()))
    wmean = float(np.sum(w * y) / np.sum(w))

    if spec.kind == "intercept_only":
        const = min(max(wmean, clamp[0]), clamp[1])
        return FittedModel(kind="intercept_only", is_classifier=is_classifier,
                           clamp=clamp, constant=const)

    if spec.kind == "saturated":
        key_idx = _resolve_keys(spec, X.shape[1], columns)
        keyed = X[:, key_idx]
        cells, codes = np.unique(keyed, axis=0, return_inverse=True)
        wy, ww = _kernels.group_weighted_sums(codes.astype(np.int64), y, w, len(cells))
        values = np.where(ww > 0, wy / np.where(ww > 0, ww, 1.0), wmean)
        return FittedModel(kind="saturated", is_classifier=is_classifier, clamp=clamp,
                           key_idx=key_idx, cells=cells, cell_values=values, constant=wmean)

    # linear / logistic share standardization
    x_mean = X.mean(axis=0)
    x_sd = X.std(axis=0)
    x_sd = np.where(x_sd < 1e-12, 1.0, x_sd)
    z = (X - x_mean) / x_sd
    z1 = np.column_stack([np.ones(len(y)), z])

    if spec.kind == "linear":
        sw = np.sqrt(w)
        a = z1 * sw[:, None]
        h = a.T @ a
        pen = np.full(z1.shape[1], spec.ridge)
        pen[0] = 0.0  # intercept unpenalized
        h[np.diag_indices_from(h)] += pen
        beta = np.linalg.solve(h, a.T @ (y * sw))
        return FittedModel(kind="linear", is_classifier=is_classifier, clamp=clamp,
                           coef=beta, x_mean=x_mean, x_sd=x_sd)

    if spec.kind == "logistic":
        if y.min() < 0 or y.max() > 1:
            raise ConfigError("logistic learner requires targets in [0, 1]")
        beta, dev, _ = _kernels.logistic_irls(z1, y, w, spec.max_iter, spec.tol)
        if not np.isfinite(dev) or not np.isfinite(beta).all():
            raise EstimationError(f"IRLS failed, last deviance {dev}")
        return FittedModel(kind="logistic", is_classifier=is_classifier, clamp=clamp,
                           coef=beta, x_mean=x_mean, x_sd=x_sd)

    raise ConfigError(f"unknown learner kind '{spec.kind}'")


def fit_regressor(spec: LearnerSpec, X, y, w=None, columns=None) -> FittedModel:
    """Weighted regression fit; targets may be fractional (or unbounded for
    the linear/saturated learners). Predictions are clamped to the training
    target range."""
    return _fit_one(spec, X, y, w, columns, is_classifier=False)


def fit_classifier(spec: LearnerSpec, X, labels, w=None, columns=None) -> FittedModel:
    """Weighted probabilistic classifier; outputs lie in [p_floor, 1 - p_floor]."""
    labels = np.asarray(labels, dtype=float)
    if not np.isin(labels[~np.isnan(labels)], (0.0, 1.0)).all():
        raise ConfigError("classifier labels must be binary")
    return _fit_one(spec, X, labels, w, columns, is_classifier=True)


@dataclass(frozen=True)
class StackWeights:
    """Convex stacking weights with the per-learner CV risks."""

    specs: tuple[LearnerSpec, ...]
    weights: np.ndarray
    risks: np.ndarray
    stack_risk: float


def _cv_loss(pred: np.ndarray, y: np.ndarray, loss: str) -> float:
    if loss == "squared":
        return float(np.mean((pred - y) ** 2))
    p = np.clip(pred, 1e-10, 1 - 1e-10)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def cv_stack(
    specs: Sequence[LearnerSpec],
    X,
    y,
    folds: Union[FoldPlan, int],
    loss: str = "squared",
    w=None,
    columns=None,
    is_classifier: bool = False,
    seed: int = 0,
) -> tuple[StackWeights, FittedModel]:
    """Convex combination of learners minimizing cross-validated loss.

    Weights come from exponentiated-gradient descent on the simplex (500
    iterations, step 0.1) over out-of-fold predictions; the returned ensemble
    re-fits every member on all rows. A constant target returns an
    intercept-only model with weight one.
    """
    if loss not in ("squared", "log"):
        raise ConfigError(f"unknown stacking loss '{loss}'")
    if len(specs) == 0:
        raise ConfigError("cv_stack requires at least one learner spec")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    fit = fit_classifier if is_classifier else fit_regressor

    if np.ptp(y[w > 0]) == 0.0:
        spec0 = LearnerSpec(kind="intercept_only")
        model = fit(spec0, X, y, w, columns)
        sw = StackWeights(specs=(spec0,), weights=np.array([1.0]),
                          risks=np.array([0.0]), stack_risk=0.0)
        return sw, model

    if len(specs) == 1:
        model = fit(specs[0], X, y, w, columns)
        pred = model.predict(X)
        sw = StackWeights(specs=tuple(specs), weights=np.array([1.0]),
                          risks=np.array([_cv_loss(pred, y, loss)]),
                          stack_risk=_cv_loss(pred, y, loss))
        return sw, model

    plan = folds if isinstance(folds, FoldPlan) else make_folds(len(y), folds, seed)
    oof = np.zeros((len(y), len(specs)))
    for j in range(plan.J):
        tr = plan.train_indices(j)
        va = plan.val_indices(j)
        for k, spec in enumerate(specs):
            try:
                model = fit(spec, X[tr], y[tr], w[tr], columns)
            except Exception as e:  # noqa: BLE001 - tagged and re-raised
                raise EstimationError(f"stack member '{spec.kind}' failed on fold {j}: {e}") from e
            oof[va, k] = model.predict(X[va])

    loss_code = 0 if loss == "squared" else 1
    weights = _kernels.eg_simplex(oof, y, loss_code, 500, 0.1)
    risks = np.array([_cv_loss(oof[:, k], y, loss) for k in range(len(specs))])
    stack_risk = _cv_loss(oof @ weights, y, loss)
    best = int(np.argmin(risks))
    if stack_risk > risks[best] + 1e-12:
        # EG stalled; the best single learner is a valid simplex point
        weights = np.zeros(len(specs))
        weights[best] = 1.0
        stack_risk = risks[best]

    members = [fit(spec, X, y, w, columns) for spec in specs]
    lo = min(m.clamp[0] for m in members)
    hi = max(m.clamp[1] for m in members)
    ensemble = FittedModel(kind="ensemble", is_classifier=is_classifier, clamp=(lo, hi),
                           members=members, weights=weights)
    sw = StackWeights(specs=tuple(specs), weights=weights, risks=risks, stack_risk=stack_risk)
    return sw, ensemble
