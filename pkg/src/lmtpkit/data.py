"""Longitudinal data containers, CSV ingestion, and outcome scaling.

Data live in wide format: one row per trajectory with columns
``id, L1_<name>..., A1, C1, ..., L{tau}_<name>..., A{tau}, C{tau}, Y``.
The optional censoring indicator ``C_t = 1`` means the trajectory remains
uncensored at time t+1, so ``(L_{t+1}, A_{t+1})`` (or Y when t = tau) is
observed. Censoring must be monotone; all cells after the first 0 are
unavailable and are held as NaN internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

__all__ = [
    "DataSchema",
    "OutcomeScaler",
    "LongitudinalData",
    "HistoryView",
    "Design",
    "load_longitudinal_csv",
    "write_longitudinal_csv",
    "from_table",
    "history_view",
    "history_matrix",
    "design_matrix",
    "scale_outcome",
    "unscale_estimate",
]

_SCHEMA_KEYS = {
    "id",
    "tau",
    "covariates",
    "categorical",
    "exposures",
    "censoring",
    "outcome",
    "outcome_bounds",
}


@dataclass(frozen=True)
class DataSchema:
    """Column-role declaration for a wide longitudinal CSV."""

    id_col: str
    tau: int
    covariates: tuple[tuple[str, ...], ...]  # per time point
    exposures: tuple[str, ...]
    outcome: str
    outcome_bounds: tuple[float, float]
    censoring: Optional[tuple[str, ...]] = None
    categorical: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if len(self.covariates) != self.tau:
            raise ConfigError("covariates must list columns for each of the tau time points")
        if len(self.exposures) != self.tau:
            raise ConfigError("exposures must name one column per time point")
        if self.censoring is not None and len(self.censoring) != self.tau:
            raise ConfigError("censoring must name one column per time point when present")
        lo, hi = self.outcome_bounds
        if not hi > lo:
            raise ConfigError(f"outcome bounds must satisfy max > min, got [{lo}, {hi}]")

    @classmethod
    def from_dict(cls, d: dict) -> "DataSchema":
        unknown = set(d) - _SCHEMA_KEYS
        if unknown:
            raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
        for key in ("id", "tau", "covariates", "exposures", "outcome", "outcome_bounds"):
            if key not in d:
                raise ConfigError(f"schema is missing required key '{key}'")
        return cls(
            id_col=d["id"],
            tau=int(d["tau"]),
            covariates=tuple(tuple(c) for c in d["covariates"]),
            exposures=tuple(d["exposures"]),
            outcome=d["outcome"],
            outcome_bounds=(float(d["outcome_bounds"][0]), float(d["outcome_bounds"][1])),
            censoring=tuple(d["censoring"]) if d.get("censoring") else None,
            categorical=frozenset(d.get("categorical", ())),
        )


@dataclass(frozen=True)
class OutcomeScaler:
    """Affine map from declared outcome bounds onto [eps, 1 - eps]."""

    a_min: float
    b_max: float
    eps: float = 1e-4

    def __post_init__(self):
        if not self.b_max > self.a_min:
            raise ConfigError("outcome bounds must satisfy b_max > a_min")

    @property
    def slope(self) -> float:
        return (1.0 - 2.0 * self.eps) / (self.b_max - self.a_min)

    def scale(self, y):
        return (np.asarray(y, dtype=float) - self.a_min) * self.slope + self.eps

    def unscale(self, v):
        return (np.asarray(v, dtype=float) - self.eps) / self.slope + self.a_min


def scale_outcome(y, scaler: OutcomeScaler):
    """Map outcome values into the open unit interval used by logistic fits."""
    return scaler.scale(y)


def unscale_estimate(v, scaler: OutcomeScaler):
    """Invert scale_outcome (affine, exact to floating point)."""
    return scaler.unscale(v)


@dataclass(frozen=True)
class HistoryView:
    """Flattened history (A_1..A_{t-1}, L_1..L_t) for one trajectory at time t."""

    i: int
    t: int
    values: np.ndarray
    columns: tuple[str, ...]


@dataclass(frozen=True)
class Design:
    """A feature matrix plus its column names, shared between fit and predict."""

    X: np.ndarray
    columns: tuple[str, ...]


@dataclass
class LongitudinalData:
    """Validated trajectories: covariates L_t, exposures A_t, optional
    monotone censoring, and a bounded terminal outcome.

    Arrays are immutable after load; unavailable cells (after censoring) hold
    NaN. ``observed_through[i]`` is the largest t with C_1..C_t all 1 (tau when
    no censoring), so (L_t, A_t) is available iff t <= observed_through[i] + 1
    and Y is available iff observed_through[i] == tau.
    """

    schema: DataSchema
    ids: np.ndarray
    covariates: list[np.ndarray]  # per time, (n, p_t) after one-hot expansion
    cov_columns: list[tuple[str, ...]]
    exposures: list[np.ndarray]  # per time, (n,)
    censoring: Optional[list[np.ndarray]]  # per time, (n,) float with NaN holes
    outcome: np.ndarray  # (n,), NaN when unavailable
    observed_through: np.ndarray  # (n,) int
    raw_frame: pd.DataFrame = field(repr=False)
    scaler: OutcomeScaler = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.scaler is None:
            lo, hi = self.schema.outcome_bounds
            self.scaler = OutcomeScaler(lo, hi)
        for arr in self.covariates + self.exposures + ([self.outcome]):
            arr.setflags(write=False)
        if self.censoring is not None:
            for arr in self.censoring:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def tau(self) -> int:
        return self.schema.tau

    def avail_mask(self, t: int) -> np.ndarray:
        """Rows with (L_t, A_t) observed; t is 1-based."""
        return self.observed_through >= t - 1

    def outcome_mask(self) -> np.ndarray:
        return self.observed_through >= self.tau

    def scaled_outcome(self) -> np.ndarray:
        """Outcome on the [eps, 1-eps] scale, 0.0 where unavailable."""
        y = self.scaler.scale(self.outcome)
        return np.where(self.outcome_mask(), y, 0.0)


def _expand_covariates(frame: pd.DataFrame, schema: DataSchema, avail: np.ndarray):
    """One-hot expand categorical columns; returns per-time arrays and names.

    Levels are the lexicographically sorted distinct string renderings over
    available cells, all levels kept.
    """
    levels: dict[str, list[str]] = {}
    for cols in schema.covariates:
        for c in cols:
            if c in schema.categorical and c not in levels:
                seen: set[str] = set()
                for t_idx, cols_t in enumerate(schema.covariates):
                    if c in cols_t:
                        vals = frame[c].to_numpy()[avail[:, t_idx]]
                        seen.update(_level_name(v) for v in vals if not _is_missing(v))
                levels[c] = sorted(seen)

    mats: list[np.ndarray] = []
    names: list[tuple[str, ...]] = []
    for t_idx, cols in enumerate(schema.covariates):
        blocks = []
        block_names: list[str] = []
        for c in cols:
            col = frame[c].to_numpy()
            if c in schema.categorical:
                rendered = np.array([_level_name(v) if not _is_missing(v) else "" for v in col])
                bad = avail[:, t_idx] & (rendered == "")
                if bad.any():
                    i = int(np.argmax(bad))
                    raise DataError(
                        f"missing value in categorical column '{c}' for trajectory "
                        f"id={frame.iloc[i, frame.columns.get_loc(schema.id_col)]}"
                    )
                for lev in levels[c]:
                    block = np.where(rendered == lev, 1.0, 0.0)
                    block[~avail[:, t_idx]] = np.nan
                    blocks.append(block)
                    block_names.append(f"{c}={lev}")
            else:
                block = pd.to_numeric(pd.Series(col), errors="coerce").to_numpy(dtype=float)
                bad = avail[:, t_idx] & ~np.isfinite(block)
                if bad.any():
                    i = int(np.argmax(bad))
                    raise DataError(
                        f"missing or non-numeric value in column '{c}' for trajectory "
                        f"id={frame.iloc[i, frame.columns.get_loc(schema.id_col)]}"
                    )
                block = block.copy()
                block[~avail[:, t_idx]] = np.nan
                blocks.append(block)
                block_names.append(c)
        mat = np.column_stack(blocks) if blocks else np.empty((len(frame), 0))
        mats.append(mat)
        names.append(tuple(block_names))
    return mats, names


def _is_missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, float) and np.isnan(v):
        return True
    if isinstance(v, str) and v.strip() == "":
        return True
    return False


def _level_name(v) -> str:
    if isinstance(v, float) and v == int(v):
        return str(int(v))
    return str(v)


def from_table(frame: pd.DataFrame, schema: DataSchema) -> LongitudinalData:
    """Build a validated LongitudinalData from a wide table."""
    needed = [schema.id_col, schema.outcome] + list(schema.exposures)
    for cols in schema.covariates:
        needed.extend(cols)
    if schema.censoring:
        needed.extend(schema.censoring)
    for c in needed:
        if c not in frame.columns:
            raise DataError(f"schema names column '{c}' but it is not in the data")

    frame = frame.sort_values(schema.id_col, kind="stable").reset_index(drop=True)
    n = len(frame)
    tau = schema.tau
    ids = frame[schema.id_col].to_numpy()

    # censoring indicators and monotonicity
    if schema.censoring:
        cens_cols = []
        for t_idx, c in enumerate(schema.censoring):
            col = pd.to_numeric(frame[c], errors="coerce").to_numpy(dtype=float)
            cens_cols.append(col)
        cens = np.column_stack(cens_cols)
        observed_through = np.zeros(n, dtype=int)
        for i in range(n):
            level = 0
            for t_idx in range(tau):
                v = cens[i, t_idx]
                if level == t_idx:  # indicator must be present while uncensored
                    if not (v == 0.0 or v == 1.0):
                        raise DataError(
                            f"censoring column '{schema.censoring[t_idx]}' must be 0/1, "
                            f"trajectory id={ids[i]}"
                        )
                    if v == 1.0:
                        level += 1
                else:
                    if v == 1.0:
                        raise DataError(
                            f"non-monotone censoring for trajectory id={ids[i]}: "
                            f"'{schema.censoring[t_idx]}'=1 after an earlier 0"
                        )
            observed_through[i] = level
    else:
        cens = None
        observed_through = np.full(n, tau, dtype=int)

    avail = np.zeros((n, tau), dtype=bool)
    for t_idx in range(tau):
        avail[:, t_idx] = observed_through >= t_idx  # (L_t, A_t) with t = t_idx + 1

    exposures = []
    for t_idx, c in enumerate(schema.exposures):
        col = pd.to_numeric(frame[c], errors="coerce").to_numpy(dtype=float)
        bad = avail[:, t_idx] & ~np.isfinite(col)
        if bad.any():
            i = int(np.argmax(bad))
            raise DataError(f"missing exposure '{c}' for trajectory id={ids[i]}")
        extra = ~avail[:, t_idx] & np.isfinite(col)
        if extra.any():
            i = int(np.argmax(extra))
            raise DataError(
                f"exposure '{c}' present after censoring for trajectory id={ids[i]}"
            )
        col = col.copy()
        col[~avail[:, t_idx]] = np.nan
        exposures.append(col)

    covariates, cov_columns = _expand_covariates(frame, schema, avail)
    for t_idx, cols in enumerate(schema.covariates):
        for c in cols:
            present = np.array([not _is_missing(v) for v in frame[c].to_numpy()])
            extra = ~avail[:, t_idx] & present
            if extra.any():
                i = int(np.argmax(extra))
                raise DataError(
                    f"covariate '{c}' present after censoring for trajectory id={ids[i]}"
                )

    y = pd.to_numeric(frame[schema.outcome], errors="coerce").to_numpy(dtype=float)
    y_mask = observed_through >= tau
    bad = y_mask & ~np.isfinite(y)
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(f"missing outcome for uncensored trajectory id={ids[i]}")
    extra = ~y_mask & np.isfinite(y)
    if extra.any():
        i = int(np.argmax(extra))
        raise DataError(f"outcome present for censored trajectory id={ids[i]}")
    lo, hi = schema.outcome_bounds
    out_of_range = y_mask & ((y < lo) | (y > hi))
    if out_of_range.any():
        i = int(np.argmax(out_of_range))
        raise DataError(
            f"outcome {y[i]} outside declared bounds [{lo}, {hi}] for trajectory id={ids[i]}"
        )
    y = y.copy()
    y[~y_mask] = np.nan

    cens_list = [cens[:, t_idx].copy() for t_idx in range(tau)] if cens is not None else None
    if cens_list is not None:
        for t_idx in range(tau):
            cens_list[t_idx][~avail[:, t_idx]] = np.nan

    return LongitudinalData(
        schema=schema,
        ids=ids,
        covariates=covariates,
        cov_columns=cov_columns,
        exposures=exposures,
        censoring=cens_list,
        outcome=y,
        observed_through=observed_through,
        raw_frame=frame,
    )


def load_longitudinal_csv(path, schema: DataSchema) -> LongitudinalData:
    """Load and validate a wide-format CSV (UTF-8, '.' decimal separator)."""
    frame = pd.read_csv(path)
    return from_table(frame, schema)


def write_longitudinal_csv(data: LongitudinalData, path) -> None:
    """Write the data back in the same wide format it was loaded from."""
    data.raw_frame.to_csv(path, index=False)


def history_columns(data: LongitudinalData, t: int) -> tuple[str, ...]:
    cols: list[str] = [data.schema.exposures[s] for s in range(t - 1)]
    for s in range(t):
        cols.extend(data.cov_columns[s])
    return tuple(cols)


def history_matrix(data: LongitudinalData, t: int) -> Design:
    """History H_t = (A_1..A_{t-1}, L_1..L_t) for all trajectories, NaN rows
    where unavailable; t is 1-based."""
    if not 1 <= t <= data.tau:
        raise ValueError(f"t must be in [1, {data.tau}], got {t}")
    blocks = [data.exposures[s] for s in range(t - 1)]
    blocks.extend(data.covariates[s] for s in range(t))
    x = np.column_stack(blocks) if blocks else np.empty((data.n, 0))
    return Design(X=x, columns=history_columns(data, t))


def history_view(data: LongitudinalData, i: int, t: int) -> HistoryView:
    """History vector for trajectory i at time t (1-based)."""
    if not 1 <= t <= data.tau:
        raise ValueError(f"t must be in [1, {data.tau}], got {t}")
    if data.observed_through[i] < t - 1:
        raise DataError(f"trajectory id={data.ids[i]} is censored before time {t}")
    design = history_matrix(data, t)
    return HistoryView(i=i, t=t, values=design.X[i].copy(), columns=design.columns)


def design_matrix(
    data: LongitudinalData,
    t: int,
    exposures: Optional[np.ndarray] = None,
    include_censoring: bool = False,
    censoring_value: Optional[float] = None,
) -> Design:
    """Feature matrix (A_t, [C_t,] H_t) at time t, in fixed column order.

    ``exposures`` substitutes policy-shifted values for the observed A_t.
    When censoring columns exist and ``include_censoring`` is set, the C_t
    column is included; ``censoring_value`` (used for intervened rows) forces
    it to a constant.
    """
    hist = history_matrix(data, t)
    a = data.exposures[t - 1] if exposures is None else np.asarray(exposures, dtype=float)
    blocks = [a]
    cols = [data.schema.exposures[t - 1]]
    if include_censoring and data.censoring is not None:
        if censoring_value is None:
            blocks.append(data.censoring[t - 1])
        else:
            blocks.append(np.full(data.n, float(censoring_value)))
        cols.append(data.schema.censoring[t - 1])  # type: ignore[index]
    x = np.column_stack(blocks + [hist.X])
    return Design(X=x, columns=tuple(cols) + hist.columns)


def simulated_frame_roundtrip_equal(a: LongitudinalData, b: LongitudinalData) -> bool:
    """Field-by-field equality of the numeric containers (NaNs compare equal)."""
    if a.n != b.n or a.tau != b.tau:
        return False
    for xa, xb in zip(a.covariates, b.covariates):
        if not np.array_equal(xa, xb, equal_nan=True):
            return False
    for xa, xb in zip(a.exposures, b.exposures):
        if not np.array_equal(xa, xb, equal_nan=True):
            return False
    if not np.array_equal(a.outcome, b.outcome, equal_nan=True):
        return False
    return bool(np.array_equal(a.observed_through, b.observed_through))
