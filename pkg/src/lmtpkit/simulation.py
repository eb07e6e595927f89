"""Simulation study: data generating process, brute-force oracles, the
enumerable two-period toy model, scenario definitions, and metrics.

The process has four time points. All variables are discrete and the
transition laws are Markov in (L_t, A_t), which makes three independent
oracles possible: forward Monte Carlo under intervention, exact dynamic
programming over the Markov state, and (for the toy) full enumeration.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import binom

from .crossfit import make_folds
from .data import DataSchema, LongitudinalData, from_table
from .density_ratio import estimate_density_ratios
from .errors import ConfigError, EstimationError
from .estimators import (
    gcomp_sequential,
    ipw_estimate,
    sdr_estimate,
    tilt_step,
    tmle_estimate,
)
from .learners import LearnerSpec
from .policy import Policy, apply_policy

__all__ = [
    "DgpSpec",
    "sim_schema",
    "generate_dataset",
    "generate_table",
    "OracleTheta",
    "oracle_theta_mc",
    "exact_theta",
    "efficiency_bound",
    "exact_sigma2",
    "ToyModel",
    "exhaustive_theta",
    "exhaustive_m",
    "exhaustive_remainder",
    "toy_phi_conditional",
    "population_estimates",
    "ScenarioSpec",
    "MetricsRow",
    "ScenarioResult",
    "run_scenario",
]

_SUPPORT = np.arange(6.0)  # exposures are Binomial(5, .)


# --------------------------------------------------------------------------
# data generating process
# --------------------------------------------------------------------------

def _p_a1(l1):
    return 0.5 * (l1 > 1) + 0.1 * (l1 > 2)


def _p_l(l_prev, a_prev):
    return expit(-0.3 * l_prev + 0.5 * a_prev)


def _p_a23(l_t, a_prev):
    return expit(-2.0 + 1.0 / (1.0 + 2.0 * l_t + a_prev))


def _p_a4(l4, a3):
    return expit(1.0 + l4 - 3.0 * a3)


def _p_y(a4, l4):
    return expit(-2.0 + 1.0 / (1.0 - 1.2 * a4 - 0.3 * l4))


@dataclass(frozen=True)
class DgpSpec:
    """Sample size and seed for one synthetic dataset (four time points)."""

    n: int
    seed: int
    tau: int = 4

    def __post_init__(self):
        if self.tau != 4:
            raise ConfigError("the simulation process is defined for tau = 4")
        if self.n < 1:
            raise ConfigError("n must be positive")


def sim_schema() -> DataSchema:
    return DataSchema(
        id_col="id",
        tau=4,
        covariates=(("L1",), ("L2",), ("L3",), ("L4",)),
        exposures=("A1", "A2", "A3", "A4"),
        outcome="Y",
        outcome_bounds=(0.0, 1.0),
        censoring=None,
        categorical=frozenset({"L1"}),
    )


def generate_table(spec: DgpSpec) -> pd.DataFrame:
    """Sample the mechanism into a wide table; bit-identical per (n, seed)."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.n
    l1 = rng.choice(np.array([1, 2, 3]), size=n, p=np.array([0.5, 0.25, 0.25]))
    a1 = rng.binomial(5, _p_a1(l1))
    l2 = rng.binomial(1, _p_l(l1, a1))
    a2 = rng.binomial(5, _p_a23(l2, a1))
    l3 = rng.binomial(1, _p_l(l2, a2))
    a3 = rng.binomial(5, _p_a23(l3, a2))
    l4 = rng.binomial(1, _p_l(l3, a3))
    a4 = rng.binomial(5, _p_a4(l4, a3))
    y = rng.binomial(1, _p_y(a4, l4))
    return pd.DataFrame(
        {
            "id": np.arange(n),
            "L1": l1, "A1": a1,
            "L2": l2, "A2": a2,
            "L3": l3, "A3": a3,
            "L4": l4, "A4": a4,
            "Y": y,
        }
    )


def generate_dataset(spec: DgpSpec) -> LongitudinalData:
    """Sampled dataset routed through the standard table loader/validator."""
    return from_table(generate_table(spec), sim_schema())


# --------------------------------------------------------------------------
# oracles for the simulation process
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleTheta:
    theta: float
    mc_se: float
    draws: int
    seed: int


def _policy_index(policy: Policy, t: int) -> np.ndarray:
    """Map each support index to the support index of its intervened value."""
    mapped = apply_policy(policy, _SUPPORT, t=t)
    idx = np.searchsorted(_SUPPORT, mapped)
    idx = np.clip(idx, 0, len(_SUPPORT) - 1)
    if not np.allclose(_SUPPORT[idx], mapped):
        raise ConfigError("policy leaves the Binomial(5, .) exposure support")
    return idx


def oracle_theta_mc(policy: Policy, draws: int, seed: int, model=None,
                    batch: int = 1_000_000) -> OracleTheta:
    """Ground-truth effect by forward simulation of the structural equations.

    At each time the natural exposure is drawn from its law given the
    intervened history and then replaced by the policy value. Returns the
    mean counterfactual outcome with its Monte Carlo standard error.
    """
    if model is not None:
        return model.oracle_theta_mc(policy, draws, seed, batch=batch)
    rng = np.random.Generator(np.random.PCG64(seed))
    total = 0
    done = 0
    while done < draws:
        m = min(batch, draws - done)
        l1 = rng.choice(np.array([1, 2, 3]), size=m, p=np.array([0.5, 0.25, 0.25]))
        a1 = apply_policy(policy, rng.binomial(5, _p_a1(l1)).astype(float), t=1)
        l2 = rng.binomial(1, _p_l(l1, a1))
        a2 = apply_policy(policy, rng.binomial(5, _p_a23(l2, a1)).astype(float), t=2)
        l3 = rng.binomial(1, _p_l(l2, a2))
        a3 = apply_policy(policy, rng.binomial(5, _p_a23(l3, a2)).astype(float), t=3)
        l4 = rng.binomial(1, _p_l(l3, a3))
        a4 = apply_policy(policy, rng.binomial(5, _p_a4(l4, a3)).astype(float), t=4)
        y = rng.binomial(1, _p_y(a4, l4))
        total += int(y.sum())
        done += m
    theta = total / draws
    var = max(theta * (1.0 - theta), 0.0)
    return OracleTheta(theta=theta, mc_se=float(np.sqrt(var / draws)),
                       draws=draws, seed=seed)


def _exact_m_tables(policy: Policy) -> list[np.ndarray]:
    """Dynamic-programming outcome regressions on the Markov state.

    Returns [m1, m2, m3, m4]; m_t is indexed [a_t, l_t] with l_1 in {1,2,3}
    mapped to columns 0..2 and l_t in {0,1} for t > 1.
    """
    a = _SUPPORT
    d4 = _policy_index(policy, 4)
    d3 = _policy_index(policy, 3)
    d2 = _policy_index(policy, 2)

    m4 = np.empty((6, 2))
    for l4 in (0, 1):
        m4[:, l4] = _p_y(a, l4)

    m3 = np.empty((6, 2))
    for l3 in (0, 1):
        for i, a3 in enumerate(a):
            acc = 0.0
            for l4 in (0, 1):
                pl = _p_l(l3, a3)
                pl = pl if l4 == 1 else 1.0 - pl
                g4 = binom.pmf(a, 5, _p_a4(l4, a3))
                acc += pl * float(np.sum(g4 * m4[d4, l4]))
            m3[i, l3] = acc

    m2 = np.empty((6, 2))
    for l2 in (0, 1):
        for i, a2 in enumerate(a):
            acc = 0.0
            for l3 in (0, 1):
                pl = _p_l(l2, a2)
                pl = pl if l3 == 1 else 1.0 - pl
                g3 = binom.pmf(a, 5, _p_a23(l3, a2))
                acc += pl * float(np.sum(g3 * m3[d3, l3]))
            m2[i, l2] = acc

    m1 = np.empty((6, 3))
    for j, l1 in enumerate((1, 2, 3)):
        for i, a1 in enumerate(a):
            acc = 0.0
            for l2 in (0, 1):
                pl = _p_l(l1, a1)
                pl = pl if l2 == 1 else 1.0 - pl
                g2 = binom.pmf(a, 5, _p_a23(l2, a1))
                acc += pl * float(np.sum(g2 * m2[d2, l2]))
            m1[i, j] = acc
    return [m1, m2, m3, m4]


def exact_theta(policy: Policy) -> float:
    """Effect of the policy by exact dynamic programming (no sampling)."""
    m1 = _exact_m_tables(policy)[0]
    d1 = _policy_index(policy, 1)
    p_l1 = np.array([0.5, 0.25, 0.25])
    theta = 0.0
    for j, l1 in enumerate((1, 2, 3)):
        g1 = binom.pmf(_SUPPORT, 5, _p_a1(l1))
        theta += p_l1[j] * float(np.sum(g1 * m1[d1, j]))
    return theta


def _pushforward_ratio(g: np.ndarray, d_idx: np.ndarray) -> np.ndarray:
    """r(a) = g^d(a)/g(a) on the Binomial support (0 where g^d has no mass)."""
    gd = np.zeros_like(g)
    np.add.at(gd, d_idx, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(g > 0, gd / np.where(g > 0, g, 1.0), 0.0)


def _exact_ratio_tables(policy: Policy) -> list[np.ndarray]:
    """Exact density ratios: r1[a1, l1idx]; rt[a_t, l_t, a_prev] for t > 1."""
    tables = []
    d1 = _policy_index(policy, 1)
    r1 = np.zeros((6, 3))
    for j, l1 in enumerate((1, 2, 3)):
        g = binom.pmf(_SUPPORT, 5, _p_a1(l1))
        r1[:, j] = _pushforward_ratio(g, d1)
    tables.append(r1)
    for t in (2, 3, 4):
        dt = _policy_index(policy, t)
        rt = np.zeros((6, 2, 6))
        for lt in (0, 1):
            for k, a_prev in enumerate(_SUPPORT):
                p = _p_a23(lt, a_prev) if t < 4 else _p_a4(lt, a_prev)
                g = binom.pmf(_SUPPORT, 5, p)
                rt[:, lt, k] = _pushforward_ratio(g, dt)
        tables.append(rt)
    return tables


def _exact_phi1(policy: Policy, l1, a1, l2, a2, l3, a3, l4, a4, y):
    """phi_1 under the exact nuisances, vectorized over trajectories."""
    m1, m2, m3, m4 = _exact_m_tables(policy)
    r1, r2, r3, r4 = _exact_ratio_tables(policy)
    d = [_policy_index(policy, t) for t in (1, 2, 3, 4)]
    j1 = l1.astype(int) - 1
    ia = [x.astype(int) for x in (a1, a2, a3, a4)]
    il = [l2.astype(int), l3.astype(int), l4.astype(int)]

    rv = np.column_stack([
        r1[ia[0], j1],
        r2[ia[1], il[0], ia[0]],
        r3[ia[2], il[1], ia[1]],
        r4[ia[3], il[2], ia[2]],
    ])
    m_obs = np.column_stack([
        m1[ia[0], j1], m2[ia[1], il[0]], m3[ia[2], il[1]], m4[ia[3], il[2]],
    ])
    m_shift = np.column_stack([
        m1[d[0][ia[0]], j1], m2[d[1][ia[1]], il[0]],
        m3[d[2][ia[2]], il[1]], m4[d[3][ia[3]], il[2]],
    ])
    cum = np.cumprod(rv, axis=1)
    m_next = np.concatenate([m_shift[:, 1:], y[:, None]], axis=1)
    return np.sum(cum * (m_next - m_obs), axis=1) + m_shift[:, 0]


@dataclass(frozen=True)
class EfficiencyBound:
    sigma2: float
    theta: float
    draws: int
    seed: int


def efficiency_bound(policy: Policy, draws: int = 1_000_000, seed: int = 90210,
                     batch: int = 500_000) -> EfficiencyBound:
    """Nonparametric efficiency bound Var(phi_1) by Monte Carlo with the
    exact dynamic-programming nuisances plugged in."""
    rng = np.random.Generator(np.random.PCG64(seed))
    s = 0.0
    s2 = 0.0
    done = 0
    while done < draws:
        m = min(batch, draws - done)
        l1 = rng.choice(np.array([1, 2, 3]), size=m, p=np.array([0.5, 0.25, 0.25]))
        a1 = rng.binomial(5, _p_a1(l1)).astype(float)
        l2 = rng.binomial(1, _p_l(l1, a1))
        a2 = rng.binomial(5, _p_a23(l2, a1)).astype(float)
        l3 = rng.binomial(1, _p_l(l2, a2))
        a3 = rng.binomial(5, _p_a23(l3, a2)).astype(float)
        l4 = rng.binomial(1, _p_l(l3, a3))
        a4 = rng.binomial(5, _p_a4(l4, a3)).astype(float)
        y = rng.binomial(1, _p_y(a4, l4)).astype(float)
        phi = _exact_phi1(policy, l1, a1, l2, a2, l3, a3, l4, a4, y)
        s += float(phi.sum())
        s2 += float((phi * phi).sum())
        done += m
    mean = s / draws
    sigma2 = s2 / draws - mean * mean
    return EfficiencyBound(sigma2=float(sigma2), theta=float(mean), draws=draws, seed=seed)


def exact_sigma2(policy: Policy) -> float:
    """Efficiency bound by exact enumeration of all 31104 trajectory paths
    (the outcome is integrated analytically)."""
    grids = np.meshgrid(
        np.array([1, 2, 3]), _SUPPORT, np.array([0, 1]), _SUPPORT,
        np.array([0, 1]), _SUPPORT, np.array([0, 1]), _SUPPORT,
        indexing="ij",
    )
    l1, a1, l2, a2, l3, a3, l4, a4 = [g.ravel().astype(float) for g in grids]
    prob = (
        np.where(l1 == 1, 0.5, 0.25)
        * binom.pmf(a1, 5, _p_a1(l1))
        * np.where(l2 == 1, _p_l(l1, a1), 1 - _p_l(l1, a1))
        * binom.pmf(a2, 5, _p_a23(l2, a1))
        * np.where(l3 == 1, _p_l(l2, a2), 1 - _p_l(l2, a2))
        * binom.pmf(a3, 5, _p_a23(l3, a2))
        * np.where(l4 == 1, _p_l(l3, a3), 1 - _p_l(l3, a3))
        * binom.pmf(a4, 5, _p_a4(l4, a3))
    )
    mu = _p_y(a4, l4)
    phi0 = _exact_phi1(policy, l1, a1, l2, a2, l3, a3, l4, a4, np.zeros_like(mu))
    phi1 = _exact_phi1(policy, l1, a1, l2, a2, l3, a3, l4, a4, np.ones_like(mu))
    w = phi1 - phi0  # phi is affine in y
    e_phi = phi0 + w * mu
    e_phi2 = phi0 ** 2 + 2.0 * phi0 * w * mu + w ** 2 * mu  # y^2 = y
    theta = float(np.sum(prob * e_phi))
    return float(np.sum(prob * e_phi2) - theta ** 2)


# --------------------------------------------------------------------------
# enumerable two-period toy model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyModel:
    """Fully enumerated two-period model with L_t in {0,1}, A_t in {0,1,2}.

    Tables: p_l1[l1]; p_a1[l1, a1]; p_l2[l1, a1] = P(L2=1 | .);
    p_a2[l1, a1, l2, a2]; q_y[l1, a1, l2, a2] = E[Y | .] with Y Bernoulli.
    """

    p_l1: np.ndarray
    p_a1: np.ndarray
    p_l2: np.ndarray
    p_a2: np.ndarray
    q_y: np.ndarray

    def __post_init__(self):
        if abs(self.p_l1.sum() - 1.0) > 1e-14:
            raise ConfigError("p_l1 must sum to 1")
        if np.abs(self.p_a1.sum(axis=-1) - 1.0).max() > 1e-14:
            raise ConfigError("p_a1 rows must sum to 1")
        if np.abs(self.p_a2.sum(axis=-1) - 1.0).max() > 1e-14:
            raise ConfigError("p_a2 cells must sum to 1")
        if ((self.q_y < 0) | (self.q_y > 1)).any():
            raise ConfigError("q_y must lie in [0, 1]")

    @classmethod
    def default(cls) -> "ToyModel":
        l1 = np.arange(2.0)
        a1 = np.arange(3.0)
        p_a1 = np.empty((2, 3))
        p_a1[0] = np.array([0.5, 0.3, 0.2])
        p_a1[1] = np.array([0.2, 0.5, 0.3])
        p_l2 = 0.25 + 0.15 * l1[:, None] + 0.1 * a1[None, :]
        raw = (1.0 + np.arange(3.0)[None, None, None, :]
               + 0.8 * a1[None, :, None, None]
               + 0.6 * l1[:, None, None, None]
               + 0.9 * np.arange(2.0)[None, None, :, None])
        p_a2 = raw / raw.sum(axis=-1, keepdims=True)
        q_y = expit(-1.0 + 0.9 * np.arange(3.0)[None, None, None, :]
                    + 0.7 * np.arange(2.0)[None, None, :, None]
                    + 0.5 * a1[None, :, None, None]
                    - 0.4 * l1[:, None, None, None])
        return cls(p_l1=np.array([0.4, 0.6]), p_a1=p_a1, p_l2=p_l2, p_a2=p_a2, q_y=q_y)

    def atom_probs(self) -> np.ndarray:
        """Joint pmf over (l1, a1, l2, a2); Y stays analytic via q_y."""
        pl2 = np.stack([1.0 - self.p_l2, self.p_l2], axis=-1)  # [l1, a1, l2]
        return (self.p_l1[:, None, None, None]
                * self.p_a1[:, :, None, None]
                * pl2[:, :, :, None]
                * self.p_a2)

    def policy_index(self, policy: Policy, t: int) -> np.ndarray:
        support = np.arange(3.0)
        mapped = apply_policy(policy, support, t=t)
        idx = np.searchsorted(support, mapped)
        idx = np.clip(idx, 0, 2)
        if not np.allclose(support[idx], mapped):
            raise ConfigError("policy leaves the toy exposure support {0,1,2}")
        return idx

    def exact_eta(self, policy: Policy) -> dict:
        """Exact nuisance tables (r1, m1, r2, m2) for the given policy."""
        d1 = self.policy_index(policy, 1)
        d2 = self.policy_index(policy, 2)
        m2 = self.q_y.copy()
        g2 = self.p_a2
        g2d = np.zeros_like(g2)
        for s in range(3):
            g2d[..., d2[s]] += g2[..., s]
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = np.where(g2 > 0, g2d / np.where(g2 > 0, g2, 1.0), 0.0)
        pl2 = np.stack([1.0 - self.p_l2, self.p_l2], axis=-1)
        m2_shift = np.take(m2, d2, axis=-1)
        m1 = np.einsum("xyz,xyzw->xy", pl2, self.p_a2 * m2_shift)
        g1 = self.p_a1
        g1d = np.zeros_like(g1)
        for s in range(3):
            g1d[:, d1[s]] += g1[:, s]
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = np.where(g1 > 0, g1d / np.where(g1 > 0, g1, 1.0), 0.0)
        return {"r1": r1, "m1": m1, "r2": r2, "m2": m2, "d1": d1, "d2": d2}

    def oracle_theta_mc(self, policy: Policy, draws: int, seed: int,
                        batch: int = 1_000_000) -> OracleTheta:
        """Forward-simulation oracle on the toy (same protocol as the DGP)."""
        rng = np.random.Generator(np.random.PCG64(seed))
        d1 = self.policy_index(policy, 1)
        d2 = self.policy_index(policy, 2)
        total = 0
        done = 0
        while done < draws:
            m = min(batch, draws - done)
            l1 = rng.choice(2, size=m, p=self.p_l1)
            u = rng.random(m)
            a1_nat = (u[:, None] > np.cumsum(self.p_a1, axis=1)[l1]).sum(axis=1)
            a1 = d1[a1_nat]
            l2 = rng.binomial(1, self.p_l2[l1, a1])
            u = rng.random(m)
            a2_nat = (u[:, None] > np.cumsum(self.p_a2, axis=-1)[l1, a1, l2]).sum(axis=1)
            a2 = d2[a2_nat]
            y = rng.binomial(1, self.q_y[l1, a1, l2, a2])
            total += int(y.sum())
            done += m
        theta = total / draws
        var = max(theta * (1.0 - theta), 0.0)
        return OracleTheta(theta=theta, mc_se=float(np.sqrt(var / draws)),
                           draws=draws, seed=seed)


def exhaustive_theta(toy: ToyModel, policy: Policy) -> float:
    """theta = E[m_1(A_1^d, L_1)] by exact summation."""
    eta = toy.exact_eta(policy)
    m1_shift = np.take(eta["m1"], eta["d1"], axis=-1)
    return float(np.sum(toy.p_l1[:, None] * toy.p_a1 * m1_shift))


def exhaustive_m(toy: ToyModel, policy: Policy, t: int) -> np.ndarray:
    """Exact m_t table: t=1 indexed [l1, a1]; t=2 indexed [l1, a1, l2, a2]."""
    eta = toy.exact_eta(policy)
    if t == 1:
        return eta["m1"]
    if t == 2:
        return eta["m2"]
    raise ConfigError("the toy model has two time points")


def _toy_phi_tables(toy: ToyModel, policy: Policy, eta_p: dict):
    """E[phi_2 | a1, l1] and E[phi_1] for arbitrary nuisance tables eta_p.

    eta_p holds r1, m1 ([l1, a1]) and r2, m2 ([l1, a1, l2, a2]); phi uses the
    true law of the toy for all expectations.
    """
    d1 = toy.policy_index(policy, 1)
    d2 = toy.policy_index(policy, 2)
    pl2 = np.stack([1.0 - toy.p_l2, toy.p_l2], axis=-1)
    m2p_shift = np.take(eta_p["m2"], d2, axis=-1)
    # E_y[phi_2 | l1, a1, l2, a2]
    phi2 = eta_p["r2"] * (toy.q_y - eta_p["m2"]) + m2p_shift
    # E[phi_2 | a1, l1]: integrate (l2, a2) given (l1, a1)
    e_phi2 = np.einsum("xyz,xyzw->xy", pl2, toy.p_a2 * phi2)
    m1p_shift = np.take(eta_p["m1"], d1, axis=-1)
    phi1 = eta_p["r1"] * (e_phi2 - eta_p["m1"]) + m1p_shift
    e_phi1 = float(np.sum(toy.p_l1[:, None] * toy.p_a1 * phi1))
    return e_phi2, e_phi1


def toy_phi_conditional(toy: ToyModel, policy: Policy, eta_p: dict, t: int):
    """E[phi_{t+1}(Z; eta') | A_t, H_t] (t=1) or E[phi_1(Z; eta')] (t=0)."""
    e_phi2, e_phi1 = _toy_phi_tables(toy, policy, eta_p)
    if t == 1:
        return e_phi2
    if t == 0:
        return e_phi1
    raise ConfigError("t must be 0 or 1 for the toy model")


def exhaustive_remainder(toy: ToyModel, policy: Policy, eta_p: dict, t: int):
    """Second-order error term Rem_t at eta': exact enumeration.

    Rem_1 is a table over (l1, a1); Rem_0 is a scalar; Rem_2 is zero.
    """
    eta = toy.exact_eta(policy)
    pl2 = np.stack([1.0 - toy.p_l2, toy.p_l2], axis=-1)
    prod2 = (eta_p["r2"] - eta["r2"]) * (eta_p["m2"] - eta["m2"])
    rem1 = np.einsum("xyz,xyzw->xy", pl2, toy.p_a2 * prod2)
    if t == 2:
        return 0.0
    if t == 1:
        return rem1
    if t == 0:
        term1 = float(np.sum(
            toy.p_l1[:, None] * toy.p_a1
            * (eta_p["r1"] - eta["r1"]) * (eta_p["m1"] - eta["m1"])
        ))
        term2 = float(np.sum(
            toy.p_l1[:, None] * toy.p_a1 * eta_p["r1"] * rem1
        ))
        return term1 + term2
    raise ConfigError("t must be 0, 1, or 2 for the toy model")


def population_estimates(toy: ToyModel, policy: Policy) -> dict:
    """All four estimators evaluated at exact nuisances with population
    means replacing sample means. Each equals the exhaustive theta."""
    eta = toy.exact_eta(policy)
    atoms = toy.atom_probs()
    theta_sub = exhaustive_theta(toy, policy)

    w_full = eta["r1"][:, :, None, None] * eta["r2"]
    theta_ipw = float(np.sum(atoms * w_full * toy.q_y))

    # population TMLE: tilt m2 then m1 with population score equations
    m2 = eta["m2"].copy()
    d2 = eta["d2"]
    d1 = eta["d1"]
    w2 = (atoms * w_full).ravel()
    eps2 = tilt_step(toy.q_y.ravel(), _logit_np(m2.ravel()), w2)
    m2 = _expit_np(_logit_np(m2) + eps2)
    m2_shift = np.take(m2, d2, axis=-1)
    pl2 = np.stack([1.0 - toy.p_l2, toy.p_l2], axis=-1)
    pseudo1 = np.einsum("xyz,xyzw->xy", pl2, toy.p_a2 * m2_shift)
    m1 = eta["m1"].copy()
    w1 = (toy.p_l1[:, None] * toy.p_a1 * eta["r1"]).ravel()
    eps1 = tilt_step(pseudo1.ravel(), _logit_np(m1.ravel()), w1)
    m1 = _expit_np(_logit_np(m1) + eps1)
    theta_tmle = float(np.sum(toy.p_l1[:, None] * toy.p_a1 * np.take(m1, d1, axis=-1)))

    # population SDR: each regression of phi_{t+1} is an exact conditional mean
    e_phi2, _ = _toy_phi_tables(toy, policy, eta)
    m1_check = e_phi2  # equals m1 exactly at exact downstream nuisances
    phi1 = eta["r1"] * (e_phi2 - m1_check) + np.take(m1_check, d1, axis=-1)
    theta_sdr = float(np.sum(toy.p_l1[:, None] * toy.p_a1 * phi1))
    return {"sub": theta_sub, "ipw": theta_ipw, "tmle": theta_tmle, "sdr": theta_sdr}


def _logit_np(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p / (1 - p))


def _expit_np(x):
    return 1.0 / (1.0 + np.exp(-x))


# --------------------------------------------------------------------------
# scenarios and metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    """Which nuisances are estimated consistently per time point.

    1: everything; 2: outcome regressions for t > 2 and ratios for t <= 2;
    3: outcome regressions for t < 4 and ratios for t = 4; 4: nothing.
    """

    scenario: int

    def __post_init__(self):
        if self.scenario not in (1, 2, 3, 4):
            raise ConfigError("scenario must be 1, 2, 3, or 4")

    def m_consistent(self, t: int) -> bool:
        return {1: True, 2: t > 2, 3: t < 4, 4: False}[self.scenario]

    def r_consistent(self, t: int) -> bool:
        return {1: True, 2: t <= 2, 3: t == 4, 4: False}[self.scenario]


def _sim_cov_names(t: int) -> tuple[str, ...]:
    return ("L1=1", "L1=2", "L1=3") if t == 1 else (f"L{t}",)


def scenario_learners(scenario: ScenarioSpec) -> tuple[list, list]:
    """Per-time learner menus (m_specs, r_specs) for the simulation data.

    Consistent fits are saturated learners keyed on the Markov-sufficient
    columns ((A_t, L_t) for regressions, plus A_{t-1} for the ratio
    classifier); inconsistent fits ignore all covariates.
    """
    m_specs = []
    r_specs = []
    for t in range(1, 5):
        m_keys = (f"A{t}",) + _sim_cov_names(t)
        r_keys = m_keys + ((f"A{t-1}",) if t > 1 else ())
        m_specs.append([
            LearnerSpec(kind="saturated", key_columns=m_keys)
            if scenario.m_consistent(t) else LearnerSpec(kind="intercept_only")
        ])
        r_specs.append([
            LearnerSpec(kind="saturated", key_columns=r_keys)
            if scenario.r_consistent(t) else LearnerSpec(kind="intercept_only")
        ])
    return m_specs, r_specs


@dataclass(frozen=True)
class MetricsRow:
    scenario: int
    estimator: str
    n: int
    reps: int
    bias: float
    sqrt_n_bias: float
    n_mse_over_bound: float
    coverage: Optional[float]
    rel_se: Optional[float]
    failures: int


@dataclass
class ScenarioResult:
    """Aggregated metrics plus the raw per-replication draws behind them."""

    rows: list[MetricsRow]
    estimates: dict = field(default_factory=dict)   # estimator -> (reps,) array
    ses: dict = field(default_factory=dict)         # tmle/sdr -> (reps,) array
    covered: dict = field(default_factory=dict)     # tmle/sdr -> (reps,) bool
    theta_true: float = float("nan")
    sigma2: float = float("nan")


_ESTIMATORS = ("sub", "ipw", "tmle", "sdr")


def _run_replication(scenario: ScenarioSpec, n: int, J: int, master_seed: int,
                     r: int, policy: Policy, level: float) -> dict:
    data = generate_dataset(DgpSpec(n=n, seed=master_seed + r))
    folds = make_folds(n, J, master_seed + 10 ** 6 + r)
    m_specs, r_specs = scenario_learners(scenario)
    out: dict = {}
    try:
        ratios = estimate_density_ratios(data, policy, folds, r_specs)
    except EstimationError as e:
        return {name: ("fail", str(e)) for name in _ESTIMATORS}
    try:
        regs, theta_sub = gcomp_sequential(data, policy, m_specs, folds)
        out["sub"] = ("ok", theta_sub, None, None)
    except EstimationError as e:
        regs = None
        out["sub"] = ("fail", str(e))
    try:
        out["ipw"] = ("ok", ipw_estimate(data, ratios), None, None)
    except EstimationError as e:
        out["ipw"] = ("fail", str(e))
    if regs is not None:
        try:
            res = tmle_estimate(data, policy, regs, ratios, folds, level)
            out["tmle"] = ("ok", res.theta, res.se, res.ci)
        except EstimationError as e:
            out["tmle"] = ("fail", str(e))
    else:
        out["tmle"] = ("fail", "no initial regressions")
    try:
        res = sdr_estimate(data, policy, ratios, m_specs, folds, level)
        out["sdr"] = ("ok", res.theta, res.se, res.ci)
    except EstimationError as e:
        out["sdr"] = ("fail", str(e))
    return out


def run_scenario(
    scenario: ScenarioSpec,
    n: int,
    reps: int,
    J: int,
    master_seed: int,
    theta_true: float,
    sigma2: float,
    level: float = 0.95,
    threads: int = 1,
    policy: Optional[Policy] = None,
) -> ScenarioResult:
    """Replicate the four estimators and aggregate performance metrics.

    Replication r draws its dataset with seed master_seed + r and its folds
    with master_seed + 10^6 + r, so results are independent of thread count.
    Aborts if more than 5% of replications fail for any estimator.
    """
    policy = policy or Policy.clamped_decrement(1.0)
    results: list[Optional[dict]] = [None] * reps

    def work(r: int):
        results[r] = _run_replication(scenario, n, J, master_seed, r, policy, level)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(reps)))
    else:
        for r in range(reps):
            work(r)

    rows = []
    res = ScenarioResult(rows=rows, theta_true=theta_true, sigma2=sigma2)
    sigma = float(np.sqrt(sigma2))
    for name in _ESTIMATORS:
        thetas, ses, covered = [], [], []
        failures = 0
        for r in range(reps):
            rec = results[r][name]
            if rec[0] != "ok":
                failures += 1
                continue
            thetas.append(rec[1])
            if name in ("tmle", "sdr"):
                ses.append(rec[2])
                lo, hi = rec[3]
                covered.append(lo <= theta_true <= hi)
        if failures > 0.05 * reps:
            raise EstimationError(
                f"{name} failed {failures}/{reps} replications in scenario "
                f"{scenario.scenario}"
            )
        th = np.array(thetas)
        bias = float(th.mean() - theta_true)
        mse = float(np.mean((th - theta_true) ** 2))
        has_se = name in ("tmle", "sdr")
        rows.append(MetricsRow(
            scenario=scenario.scenario,
            estimator=name,
            n=n,
            reps=reps,
            bias=bias,
            sqrt_n_bias=float(np.sqrt(n) * bias),
            n_mse_over_bound=float(n * mse / sigma2),
            coverage=float(np.mean(covered)) if has_se else None,
            rel_se=float(np.mean(np.array(ses) * np.sqrt(n)) / sigma) if has_se else None,
            failures=failures,
        ))
        res.estimates[name] = th
        if has_se:
            res.ses[name] = np.array(ses)
            res.covered[name] = np.array(covered)
    return res
