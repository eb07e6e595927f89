"""Deterministic treatment policies d(a_t, h_t) and their exposure-density
pushforwards.

A policy maps the natural exposure value (and optionally the history) to an
intervened value. For discrete exposures the post-intervention probability
table is the pushforward of the observed table under d; for the additive
shift on a continuous exposure the shifted density has the two-piece form
g(a - delta | h) 1{a < u(h)} + g(a | h) 1{a + delta >= u(h)}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .data import LongitudinalData
from .errors import ConfigError, PolicyDomainError, PositivityWarning

__all__ = [
    "Policy",
    "ShiftedDensity",
    "apply_policy",
    "shifted_exposures",
    "analytic_shifted_density",
    "shifted_density_ratios",
    "check_support",
]

_KINDS = ("identity", "additive_shift", "clamped_decrement", "multiplicative_shift", "discrete_map", "per_time")


@dataclass(frozen=True)
class Policy:
    """A deterministic map from (exposure, history) to an intervened exposure.

    One policy applies at every time point unless built with ``per_time``,
    in which case each time point gets its own component policy. Censoring
    indicators are always set to 1 under intervention; that happens where
    shifted designs are built, not here.
    """

    kind: str
    delta: Optional[float] = None
    upper_bound: Optional[float] = None
    threshold: Optional[float] = None
    factor: Optional[float] = None
    mapping: Optional[tuple[tuple[float, float], ...]] = None
    components: Optional[tuple["Policy", ...]] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown policy kind '{self.kind}'")

    # -- constructors ------------------------------------------------------
    @classmethod
    def identity(cls) -> "Policy":
        return cls(kind="identity")

    @classmethod
    def additive_shift(cls, delta: float, upper_bound: Optional[float] = None) -> "Policy":
        return cls(kind="additive_shift", delta=float(delta),
                   upper_bound=None if upper_bound is None else float(upper_bound))

    @classmethod
    def clamped_decrement(cls, threshold: float = 1.0) -> "Policy":
        return cls(kind="clamped_decrement", threshold=float(threshold))

    @classmethod
    def multiplicative_shift(cls, factor: float) -> "Policy":
        return cls(kind="multiplicative_shift", factor=float(factor))

    @classmethod
    def discrete_map(cls, mapping: Mapping[float, float]) -> "Policy":
        items = tuple(sorted((float(k), float(v)) for k, v in mapping.items()))
        return cls(kind="discrete_map", mapping=items)

    @classmethod
    def per_time(cls, components: Sequence["Policy"]) -> "Policy":
        return cls(kind="per_time", components=tuple(components))

    @classmethod
    def from_config(cls, spec: dict) -> "Policy":
        """Build from the JSON grammar, e.g. {"type": "clamped_decrement", "threshold": 1}."""
        if not isinstance(spec, dict) or "type" not in spec:
            raise ConfigError("policy spec must be an object with a 'type' key")
        kind = spec["type"]
        extra = set(spec) - {"type", "delta", "upper_bound", "threshold", "factor", "map", "policies"}
        if extra:
            raise ConfigError(f"unknown policy keys: {sorted(extra)}")
        if kind == "identity":
            return cls.identity()
        if kind == "additive_shift":
            if "delta" not in spec:
                raise ConfigError("additive_shift requires 'delta'")
            return cls.additive_shift(spec["delta"], spec.get("upper_bound"))
        if kind == "clamped_decrement":
            return cls.clamped_decrement(spec.get("threshold", 1.0))
        if kind == "multiplicative_shift":
            if "factor" not in spec:
                raise ConfigError("multiplicative_shift requires 'factor'")
            return cls.multiplicative_shift(spec["factor"])
        if kind == "discrete_map":
            if "map" not in spec:
                raise ConfigError("discrete_map requires 'map'")
            return cls.discrete_map({float(k): v for k, v in spec["map"].items()})
        if kind == "per_time":
            return cls.per_time([cls.from_config(p) for p in spec.get("policies", [])])
        raise ConfigError(f"unknown policy type '{kind}'")

    def at_time(self, t: int) -> "Policy":
        """Component policy for 1-based time t."""
        if self.kind != "per_time":
            return self
        if not 1 <= t <= len(self.components):  # type: ignore[arg-type]
            raise ConfigError(f"per_time policy has no component for t={t}")
        return self.components[t - 1]  # type: ignore[index]


def _apply_array(policy: Policy, a: np.ndarray, upper: Optional[np.ndarray] = None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if policy.kind == "identity":
        return a.copy()
    if policy.kind == "additive_shift":
        shifted = a + policy.delta
        if policy.upper_bound is None and upper is None:
            return shifted
        u = np.asarray(policy.upper_bound if upper is None else upper, dtype=float)
        return np.where(a <= u - policy.delta, shifted, a)
    if policy.kind == "clamped_decrement":
        return np.where(a >= policy.threshold, a - 1.0, a)
    if policy.kind == "multiplicative_shift":
        return a * policy.factor
    if policy.kind == "discrete_map":
        keys = np.array([k for k, _ in policy.mapping])  # type: ignore[union-attr]
        vals = np.array([v for _, v in policy.mapping])  # type: ignore[union-attr]
        idx = np.searchsorted(keys, a)
        idx_c = np.clip(idx, 0, len(keys) - 1)
        ok = np.isclose(keys[idx_c], a) | np.isnan(a)
        if not ok.all():
            bad = float(np.asarray(a)[~ok].flat[0])
            raise PolicyDomainError(f"exposure value {bad} outside the discrete_map support")
        out = vals[idx_c]
        return np.where(np.isnan(a), np.nan, out)
    raise ConfigError(f"cannot apply policy of kind '{policy.kind}' directly")


def apply_policy(policy: Policy, a, h=None, t: int = 1):
    """Apply d to one exposure value (or an array of them), pure and total on
    the declared support.

    ``h`` is the history; only the additive shift's clamp consults it, and
    only when the policy was built with a callable upper bound through the
    Python API. ``t`` selects the component of a per-time policy.
    """
    pol = policy.at_time(t)
    arr = np.asarray(a, dtype=float)
    out = _apply_array(pol, np.atleast_1d(arr))
    return float(out[0]) if np.isscalar(a) or arr.ndim == 0 else out.reshape(arr.shape)


def shifted_exposures(data: LongitudinalData, policy: Policy) -> list[np.ndarray]:
    """Per-time intervened exposures A_t^d evaluated at the observed history.

    Unavailable (censored) cells stay NaN. Censoring components under
    intervention are always 1 and are materialized by the design builders.
    """
    out = []
    for t in range(1, data.tau + 1):
        pol = policy.at_time(t)
        a = data.exposures[t - 1]
        try:
            shifted = _apply_array(pol, a)
        except PolicyDomainError as e:
            bad = ~np.isnan(a) & ~_in_support(pol, a)
            i = int(np.argmax(bad)) if bad.any() else -1
            raise PolicyDomainError(f"{e} (trajectory index {i}, time {t})") from e
        out.append(shifted)
    return out


def _in_support(policy: Policy, a: np.ndarray) -> np.ndarray:
    if policy.kind != "discrete_map":
        return np.ones_like(a, dtype=bool)
    keys = np.array([k for k, _ in policy.mapping])  # type: ignore[union-attr]
    idx = np.clip(np.searchsorted(keys, a), 0, len(keys) - 1)
    return np.isclose(keys[idx], a)


@dataclass(frozen=True)
class ShiftedDensity:
    """Post-intervention exposure distribution given one history cell.

    Discrete: a probability table over ``support``. Continuous additive
    shift: an evaluable density function.
    """

    support: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    pdf: Optional[Callable[[np.ndarray], np.ndarray]] = None


def analytic_shifted_density(policy: Policy, support, base_pmf, h=None, t: int = 1) -> ShiftedDensity:
    """Exact pushforward of a discrete exposure pmf under d.

    g^d(a | h) = sum_s 1{d(s, h) = a} g(s | h). The input pmf must be
    normalized; the output sums to 1 by construction.
    """
    pol = policy.at_time(t)
    support = np.asarray(support, dtype=float)
    base = np.asarray(base_pmf, dtype=float)
    if support.shape != base.shape:
        raise ConfigError("support and base_pmf must align")
    if (base < 0).any() or abs(base.sum() - 1.0) > 1e-9:
        raise ConfigError("base_pmf must be a normalized probability table")
    mapped = _apply_array(pol, support)
    probs = np.zeros_like(base)
    for j, target in enumerate(support):
        probs[j] = base[np.isclose(mapped, target)].sum()
    return ShiftedDensity(support=support.copy(), probs=probs)


def continuous_shifted_pdf(policy: Policy, base_pdf: Callable[[np.ndarray], np.ndarray],
                           upper: float) -> Callable[[np.ndarray], np.ndarray]:
    """Shifted density for the continuous additive shift with clamp u(h).

    Used by oracle tests only; estimation never needs an explicit density.
    """
    if policy.kind != "additive_shift":
        raise ConfigError("continuous shifted densities exist only for additive_shift")
    delta = policy.delta

    def pdf(a):
        a = np.asarray(a, dtype=float)
        return base_pdf(a - delta) * (a < upper) + base_pdf(a) * (a + delta >= upper)

    return pdf


def shifted_density_ratios(policy: Policy, support, base_pmf, t: int = 1) -> np.ndarray:
    """Analytic ratio r(a) = g^d(a)/g(a) over a discrete support (0/0 -> 0)."""
    dens = analytic_shifted_density(policy, support, base_pmf, t=t)
    base = np.asarray(base_pmf, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(base > 0, dens.probs / np.where(base > 0, base, 1.0), 0.0)
    return r


def check_support(data: LongitudinalData, policy: Policy, atol: float = 1e-9) -> list[tuple[int, float]]:
    """Positivity diagnostic: warn when an intervened value d(a_t, h_t) falls
    outside the empirical support of A_t. Returns the violation list.

    Exposures with at most 25 distinct observed values are treated as
    discrete (exact membership); otherwise the observed range stands in for
    the support.
    """
    shifted = shifted_exposures(data, policy)
    violations: list[tuple[int, float]] = []
    for t in range(1, data.tau + 1):
        observed = data.exposures[t - 1]
        obs_vals = observed[~np.isnan(observed)]
        if obs_vals.size == 0:
            continue
        uniq = np.unique(obs_vals)
        vals = shifted[t - 1]
        for v in np.unique(vals[~np.isnan(vals)]):
            if uniq.size <= 25:
                outside = np.min(np.abs(uniq - v)) > atol
            else:
                outside = v < uniq[0] - atol or v > uniq[-1] + atol
            if outside:
                violations.append((t, float(v)))
    if violations:
        listed = ", ".join(f"(t={t}, a={v:g})" for t, v in violations[:10])
        warnings.warn(
            f"intervened exposure values outside the empirical support: {listed}"
            + (" ..." if len(violations) > 10 else ""),
            PositivityWarning,
            stacklevel=2,
        )
    return violations
