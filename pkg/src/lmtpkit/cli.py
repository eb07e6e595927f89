"""Command-line entry points: ``estimate`` on user CSVs and ``simulate`` for
the scenario study.

Both commands are deterministic: the same config and seed produce
byte-identical output files regardless of ``--threads``. Logging verbosity
comes from the ``LMTP_LOG`` env var (error, info, or debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

from .crossfit import make_folds, no_crossfit_plan
from .data import DataSchema, load_longitudinal_csv
from .density_ratio import estimate_density_ratios
from .errors import ConfigError, DataError, EstimationError
from .estimators import (
    EstimateResult,
    gcomp_sequential,
    ipw_estimate,
    sdr_estimate,
    tmle_estimate,
    wald_interval,
)
from .learners import LearnerSpec
from .policy import Policy, check_support
from .simulation import (
    ScenarioSpec,
    efficiency_bound,
    oracle_theta_mc,
    run_scenario,
)

log = logging.getLogger("lmtpkit")

_CONFIG_KEYS = {
    "data", "schema", "policy", "policy_b", "estimators", "outcome_learners",
    "ratio_learners", "folds", "seed", "truncation", "level", "output",
}
_VALID_ESTIMATORS = ("sub", "ipw", "tmle", "sdr")


@dataclass
class RunConfig:
    """Parsed estimation config; flags override file values."""

    data: str
    schema: DataSchema
    policy: Policy
    policy_b: Optional[Policy]
    estimators: tuple[str, ...]
    outcome_learners: list[LearnerSpec]
    ratio_learners: list[LearnerSpec]
    folds: int
    seed: int
    truncation: Optional[float]
    level: float
    output: Optional[str]
    no_crossfit: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("data", "schema", "policy"):
            if key not in d:
                raise ConfigError(f"config is missing required key '{key}'")
        estimators = tuple(d.get("estimators", _VALID_ESTIMATORS))
        bad = [e for e in estimators if e not in _VALID_ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; valid: {_VALID_ESTIMATORS}")
        level = float(d.get("level", 0.95))
        if not 0.0 < level < 1.0:
            raise ConfigError("level must be in (0, 1)")
        return cls(
            data=d["data"],
            schema=DataSchema.from_dict(d["schema"]),
            policy=Policy.from_config(d["policy"]),
            policy_b=Policy.from_config(d["policy_b"]) if d.get("policy_b") else None,
            estimators=estimators,
            outcome_learners=[LearnerSpec.from_config(s)
                              for s in d.get("outcome_learners", ["saturated"])],
            ratio_learners=[LearnerSpec.from_config(s)
                            for s in d.get("ratio_learners", ["saturated"])],
            folds=int(d.get("folds", 10)),
            seed=int(d.get("seed", 1)),
            truncation=float(d["truncation"]) if d.get("truncation") is not None else None,
            level=level,
            output=d.get("output"),
        )


def _setup_logging() -> None:
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("LMTP_LOG", "error").lower()
    logging.basicConfig(stream=sys.stderr, level=levels.get(name, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _run_one_policy(data, policy, cfg: RunConfig, folds) -> dict[str, EstimateResult]:
    """One shared fold plan and ratio set feed every requested estimator."""
    check_support(data, policy)
    need_ratios = any(e in cfg.estimators for e in ("ipw", "tmle", "sdr"))
    need_regs = any(e in cfg.estimators for e in ("sub", "tmle"))
    ratios = None
    if need_ratios:
        ratios = estimate_density_ratios(data, policy, folds, cfg.ratio_learners,
                                         truncation=cfg.truncation)
    results: dict[str, EstimateResult] = {}
    regs = None
    if need_regs:
        regs, theta_sub = gcomp_sequential(data, policy, cfg.outcome_learners, folds)
        if "sub" in cfg.estimators:
            results["sub"] = EstimateResult(
                estimator="sub", theta=theta_sub, se=None, ci=None,
                level=cfg.level, eif=None, diagnostics={"fold_seed": folds.seed})
    if "ipw" in cfg.estimators:
        results["ipw"] = EstimateResult(
            estimator="ipw", theta=ipw_estimate(data, ratios), se=None, ci=None,
            level=cfg.level, eif=None,
            diagnostics={
                "weight_cv": ratios.diagnostics.get("weight_cv"),
                "weight_max": ratios.diagnostics.get("weight_max"),
                "fold_seed": folds.seed,
            })
    if "tmle" in cfg.estimators:
        results["tmle"] = tmle_estimate(data, policy, regs, ratios, folds, cfg.level)
    if "sdr" in cfg.estimators:
        results["sdr"] = sdr_estimate(data, policy, ratios, cfg.outcome_learners,
                                      folds, cfg.level)
    return results


def cmd_estimate(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        cfg = RunConfig.from_dict(raw)
        if args.out is not None:
            cfg.output = args.out
        if args.folds is not None:
            cfg.folds = args.folds
        if args.seed is not None:
            cfg.seed = args.seed
        if args.truncate is not None:
            cfg.truncation = args.truncate
        if args.estimators is not None:
            ests = tuple(e.strip() for e in args.estimators.split(","))
            bad = [e for e in ests if e not in _VALID_ESTIMATORS]
            if bad:
                raise ConfigError(f"unknown estimators {bad}")
            cfg.estimators = ests
        cfg.no_crossfit = bool(args.no_crossfit)
    except (ConfigError, json.JSONDecodeError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    try:
        data = load_longitudinal_csv(cfg.data, cfg.schema)
    except DataError as e:
        print(f"data validation error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3

    try:
        folds = (no_crossfit_plan(data.n, cfg.seed) if cfg.no_crossfit
                 else make_folds(data.n, cfg.folds, cfg.seed))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    try:
        results = _run_one_policy(data, cfg.policy, cfg, folds)
        payload = {
            "n": data.n,
            "tau": data.tau,
            "policy": raw["policy"],
            "results": [results[name].to_json_dict(data.n, data.tau)
                        for name in cfg.estimators],
        }
        if cfg.policy_b is not None:
            results_b = _run_one_policy(data, cfg.policy_b, cfg, folds)
            contrast = []
            for name in cfg.estimators:
                a, b = results[name], results_b[name]
                diff = a.theta - b.theta
                if a.eif is not None and b.eif is not None:
                    se, lo, hi = wald_interval(diff, a.eif - b.eif, cfg.level)
                    contrast.append({"estimator": name, "theta_diff": diff,
                                     "se": se, "ci": [lo, hi]})
                else:
                    contrast.append({"estimator": name, "theta_diff": diff,
                                     "se": None, "ci": None})
            payload["policy_b"] = raw["policy_b"]
            payload["contrast"] = contrast
        text = json.dumps(payload, indent=2, sort_keys=True)
        if cfg.output:
            with open(cfg.output, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        log.info("estimate finished: %d estimator(s)", len(cfg.estimators))
        return 0
    except EstimationError as e:
        print(f"estimation failure: {e}", file=sys.stderr)
        return 4


_METRIC_FIELDS = ("scenario", "estimator", "n", "reps", "bias", "sqrt_n_bias",
                  "n_mse_over_bound", "coverage", "rel_se", "failures")


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def cmd_simulate(args) -> int:
    try:
        scenarios = [int(s) for s in args.scenario.split(",")]
        if any(s not in (1, 2, 3, 4) for s in scenarios):
            raise ConfigError("scenarios must be from {1,2,3,4}")
        sizes = [int(v) for v in args.n.split(",")]
        if args.reps < 1:
            raise ConfigError("reps must be positive")
    except (ValueError, ConfigError) as e:
        print(f"argument error: {e}", file=sys.stderr)
        return 2

    oracle = oracle_theta_mc(_sim_policy(), args.oracle_draws,
                             args.seed + 555_000_000)
    bound = efficiency_bound(_sim_policy(), draws=args.bound_draws,
                             seed=args.seed + 777_000_000)
    log.info("oracle theta=%.6f (mc se %.2e), sigma2=%.5f",
             oracle.theta, oracle.mc_se, bound.sigma2)

    rows = []
    try:
        for s in scenarios:
            for n in sizes:
                result = run_scenario(
                    ScenarioSpec(s), n=n, reps=args.reps, J=args.folds,
                    master_seed=args.seed, theta_true=oracle.theta,
                    sigma2=bound.sigma2, threads=args.threads,
                )
                rows.extend(result.rows)
    except EstimationError as e:
        print(f"estimation failure: {e}", file=sys.stderr)
        return 4

    lines = [",".join(_METRIC_FIELDS)]
    for row in rows:
        lines.append(",".join(_fmt(getattr(row, f)) for f in _METRIC_FIELDS))
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        meta = {
            "theta_true": oracle.theta,
            "theta_mc_se": oracle.mc_se,
            "oracle_draws": oracle.draws,
            "oracle_seed": oracle.seed,
            "sigma2": bound.sigma2,
            "sigma2_draws": bound.draws,
            "sigma2_seed": bound.seed,
            "master_seed": args.seed,
        }
        with open(args.out + ".meta.json", "w", encoding="utf-8") as fh:
            fh.write(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    # summary table on stdout
    print(f"theta_true={oracle.theta:.6f} (mc se {oracle.mc_se:.2e})  "
          f"sigma2={bound.sigma2:.5f}")
    print(f"{'scn':>3} {'estimator':>9} {'n':>6} {'bias':>10} {'rt_n_bias':>10} "
          f"{'n_mse/bd':>9} {'cover':>6} {'rel_se':>7}")
    for row in rows:
        cov = f"{row.coverage:.3f}" if row.coverage is not None else "-"
        rse = f"{row.rel_se:.3f}" if row.rel_se is not None else "-"
        print(f"{row.scenario:>3} {row.estimator:>9} {row.n:>6} {row.bias:>10.5f} "
              f"{row.sqrt_n_bias:>10.4f} {row.n_mse_over_bound:>9.3f} {cov:>6} {rse:>7}")
    return 0


def _sim_policy() -> Policy:
    return Policy.clamped_decrement(1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmtpkit",
                                     description="Modified treatment policy estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="run estimators on a CSV per a JSON config")
    est.add_argument("--config", required=True, help="JSON run configuration")
    est.add_argument("--out", default=None, help="output JSON path (default stdout)")
    est.add_argument("--folds", type=int, default=None)
    est.add_argument("--seed", type=int, default=None)
    est.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    est.add_argument("--no-crossfit", action="store_true",
                     help="train and predict on all data (J=1)")
    est.add_argument("--truncate", type=float, default=None,
                     help="density-ratio truncation cap")
    est.add_argument("--estimators", default=None,
                     help="comma list from sub,ipw,tmle,sdr")

    sim = sub.add_parser("simulate", help="run the scenario study")
    sim.add_argument("--scenario", default="1,2,3,4", help="comma list from 1..4")
    sim.add_argument("--n", default="200,800,1800", help="comma list of sample sizes")
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--folds", type=int, default=10)
    sim.add_argument("--seed", type=int, default=1)
    sim.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sim.add_argument("--out", default=None, help="metrics CSV path")
    sim.add_argument("--oracle-draws", type=int, default=10_000_000)
    sim.add_argument("--bound-draws", type=int, default=1_000_000)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "estimate":
        return cmd_estimate(args)
    if args.command == "simulate":
        return cmd_simulate(args)
    return 2  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
