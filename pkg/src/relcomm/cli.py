"""Command-line front end: solve, sweep, worst, verify, transparency.

Exit codes: 0 success, 1 configuration error, 2 non-convergence,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import checker, oracle
from .core import DomainError, NonConvergenceError, Prior, QuadraticModel
from .equilibrium import (
    FIXED_POINT_TOL,
    MAX_ITER,
    delta_for_leeway,
    evaluate_leeway,
    persuasion_problem,
    preset,
    rho_star,
    solve_fixed_point,
)
from .transparency import SignalPartition, compare_transparency

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_VERIFY = 0, 1, 2, 3
SWEEP_COLUMNS = ("delta", "ell", "regime", "theta_L_star", "theta_H_star", "theta_M_star", "v_bar", "v_s_min", "v_r_min")
# instance used by `verify` when no model flags are given (lobbying preset λ_S=0.75, α=0.8, d0=1)
VERIFY_DEFAULT = {"a": 2.5, "b": -1.5, "c": 0.25, "delta": 0.05}

log = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


class VerificationFailure(Exception):
    def __init__(self, message: str, payload: dict):
        super().__init__(message)
        self.payload = payload


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    model: QuadraticModel
    leeway: float | None
    grid_n: int
    tol: float
    max_iter: int

    @property
    def uses_leeway(self) -> bool:
        return self.leeway is not None


def _model_params(args, allow_default: bool = False) -> dict:
    if args.preset:
        if args.preset == "agency":
            if args.a is None:
                raise ConfigError("agency preset needs --a")
            params = preset("agency", a=args.a)
        else:
            missing = [f for f in ("lambda_s", "alpha", "d0") if getattr(args, f) is None]
            if missing:
                raise ConfigError("lobbying preset needs --lambda-s, --alpha and --d0")
            params = preset("lobbying", lambda_s=args.lambda_s, alpha=args.alpha, d0=args.d0)
        return params
    if args.a is None and args.b is None and allow_default:
        return {k: VERIFY_DEFAULT[k] for k in ("a", "b", "c")}
    if args.a is None or args.b is None:
        raise ConfigError("give --a and --b, or a --preset")
    return {"a": args.a, "b": args.b, "c": 1.0 if args.c is None else args.c}


def build_config(args, need_delta_or_leeway: bool = True, allow_default: bool = False) -> RunConfig:
    params = _model_params(args, allow_default)
    if args.c is not None and args.preset:
        params["c"] = args.c
    prior = Prior.from_csv(args.prior_file) if args.prior_file else Prior.uniform()
    delta, leeway = args.delta, getattr(args, "leeway", None)
    if need_delta_or_leeway:
        if allow_default and delta is None and leeway is None and args.a is None and not args.preset:
            delta = VERIFY_DEFAULT["delta"]
        if (delta is None) == (leeway is None):
            raise ConfigError("give exactly one of --delta and --leeway")
    if leeway is not None and (not math.isfinite(leeway) or leeway < 0):
        raise ConfigError("--leeway must be a nonnegative number")
    if args.grid_n < 100:
        raise ConfigError("--grid-n must be at least 100")
    if not args.tol > 0:
        raise ConfigError("--tol must be positive")
    model = QuadraticModel(params["a"], params["b"], params["c"], 0.0 if delta is None else delta, prior)
    return RunConfig(model, leeway, args.grid_n, args.tol, args.max_iter)


def _num(x):
    """JSON-safe float; repr of Python floats round-trips at 17 digits."""
    if x is None:
        return None
    x = float(x)
    return None if not math.isfinite(x) else x


def _model_json(model: QuadraticModel) -> dict:
    return {"a": model.a, "b": model.b, "c": model.c, "delta": model.delta, "prior": model.prior.kind}


def _solve_state(cfg: RunConfig):
    """(ell, delta, solution, penal, simplex, fixed-point info) for the configured model."""
    model = cfg.model
    if cfg.uses_leeway:
        ev = evaluate_leeway(model, cfg.leeway)
        return cfg.leeway, delta_for_leeway(model, cfg.leeway), ev.solution, ev.penal, ev.simplex, None
    fp = solve_fixed_point(model, cfg.tol, cfg.max_iter)
    info = {"residual": fp.residual, "iterations": fp.iterations}
    return fp.ell, model.delta, fp.solution, fp.penal, fp.simplex, info


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def run_solve(cfg: RunConfig) -> dict:
    ell, delta, sol, penal, simplex, info = _solve_state(cfg)
    model = cfg.model
    means = sol.pooling.means(model.prior)
    decisions = [
        {"interval": [lo, hi], "message": m, "decision": float(rho_star(model, ell, m))}
        for (lo, hi), m in zip(sol.pooling, means)
    ]
    out = {
        "model": _model_json(model),
        "delta": delta,
        "ell": ell,
        "regime": sol.regime,
        "boundary": sol.boundary,
        "pooling": sol.pooling.to_list(),
        "thresholds": {
            "theta_L_star": _num(sol.theta_L_star),
            "theta_H_star": _num(sol.theta_H_star),
            "theta_M_star": _num(sol.theta_M_star),
        },
        "messages": {"m_L_star": _num(sol.m_L_star), "m_H_star": _num(sol.m_H_star)},
        "simplex": simplex.as_dict(),
        "value": sol.value,
        "decisions": decisions,
        "separated_decision": "clamp(m, a*m + b - ell, a*m + b + ell)",
        "worst_sender": {"family": penal.decision_shift, "threshold": penal.threshold},
    }
    if info is not None:
        out["fixed_point"] = info
    return out


def _sweep_row(job) -> dict:
    model, over, value, tol, max_iter = job
    if over == "delta":
        fp = solve_fixed_point(model.with_delta(value), tol, max_iter)
        ell, delta, sol, simplex = fp.ell, value, fp.solution, fp.simplex
    else:
        ev = evaluate_leeway(model, value)
        ell, delta, sol, simplex = value, delta_for_leeway(model, value), ev.solution, ev.simplex
    return {
        "delta": delta, "ell": ell, "regime": sol.regime,
        "theta_L_star": sol.theta_L_star, "theta_H_star": sol.theta_H_star, "theta_M_star": sol.theta_M_star,
        "v_bar": simplex.v_bar, "v_s_min": simplex.v_s_min, "v_r_min": simplex.v_r_min,
    }


def sweep_values(lo: float, hi: float, steps: int) -> np.ndarray:
    if steps < 1 or not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo or (steps > 1 and hi == lo):
        raise ConfigError("sweep range is empty")
    return np.array([lo]) if steps == 1 else np.linspace(lo, hi, steps)


def run_sweep(cfg: RunConfig, over: str, lo: float, hi: float, steps: int, workers: int = 1) -> list[dict]:
    values = sweep_values(lo, hi, steps)
    if over == "delta" and (values[0] < 0 or values[-1] >= 1):
        raise ConfigError("delta sweep must stay inside [0, 1)")
    if over == "leeway" and values[0] < 0:
        raise ConfigError("leeway sweep must be nonnegative")
    jobs = [(cfg.model, over, float(v), cfg.tol, cfg.max_iter) for v in values]
    if workers > 1:
        # map keeps submission order, so rows come back sorted by parameter
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_sweep_row, jobs))
    return [_sweep_row(j) for j in jobs]


def run_worst(cfg: RunConfig) -> dict:
    ell, delta, _sol, penal, simplex, _ = _solve_state(cfg)
    return {
        "model": _model_json(cfg.model),
        "delta": delta,
        "ell": ell,
        "family": penal.decision_shift,
        "threshold": penal.threshold,
        "pooling": penal.pooling.to_list(),
        "v_s_min": penal.value,
        "closed_form_threshold": _num(penal.closed_form_threshold),
        "closed_form_value": _num(penal.closed_form_value),
        "note": penal.note,
        "v_r_min": simplex.v_r_min,
    }


def oracle_checks(model: QuadraticModel, ell: float, solution, penal, n: int, exhaustive: bool) -> list[dict]:
    ustar = persuasion_problem(model, ell).ustar
    problem = oracle.DiscretizedProblem.from_prior(model.prior, ustar, n)
    dp = oracle.dp_optimal_partition(problem)
    # the discretization error of the separated part shrinks like 1/n²
    value_tol = max(1e-5, 1.0 / n**2)
    lines = [{
        "check": "persuasion value vs DP",
        "solver": solution.value, "oracle": dp.value, "tolerance": value_tol,
        "pass": abs(solution.value - dp.value) <= value_tol,
    }]
    ref = oracle.oracle_worst_sender(problem, model, ell)
    lines.append({
        "check": "worst sender vs edge-grid oracle",
        "solver": penal.value, "oracle": ref.value, "tolerance": 1e-6,
        "pass": penal.value <= ref.value + 1e-6,
    })
    if exhaustive:
        if n > oracle.ENUMERATION_LIMIT:
            raise ConfigError(f"--exhaustive needs --oracle-n ≤ {oracle.ENUMERATION_LIMIT}")
        enum = oracle.enumerate_partitions(problem)
        lines.append({
            "check": "DP vs exhaustive enumeration",
            "solver": dp.value, "oracle": enum.value, "tolerance": 0.0,
            "pass": dp.value == enum.value and dp.pooling == enum.pooling,
        })
    return lines


def run_verify(cfg: RunConfig, perturb: str | None, oracle_n: int, exhaustive: bool) -> dict:
    ell, delta, sol, penal, simplex, _ = _solve_state(cfg)
    model = cfg.model.with_delta(delta)
    profile = checker.build_profile(model, sol, simplex, ell=ell if cfg.uses_leeway else None)
    if perturb:
        profile = checker.perturb(profile, perturb)
    report = checker.check_conditions(profile, n=cfg.grid_n)
    oracles = oracle_checks(model, ell, sol, penal, oracle_n, exhaustive)
    ok = report.passed and all(line["pass"] for line in oracles)
    out = {
        "model": _model_json(model),
        "ell": ell,
        "regime": sol.regime,
        "perturbation": perturb,
        "conditions": report.to_dict(),
        "worst_condition": report.worst,
        "oracles": oracles,
        "pass": ok,
    }
    if not ok:
        if not report.passed:
            worst = report.worst
            msg = f"verification failed: {worst} residual {report.results[worst].residual!r}"
        else:
            msg = "verification failed: " + ", ".join(x["check"] for x in oracles if not x["pass"])
        raise VerificationFailure(msg, out)
    return out


def run_transparency(cfg: RunConfig, signal: str, signal_hat: str) -> dict:
    psi, psi_hat = SignalPartition.parse(signal), SignalPartition.parse(signal_hat)
    res = compare_transparency(cfg.model, psi, psi_hat)

    def side(eq):
        return {
            "cutpoints": list(eq.psi.cutpoints),
            "ell": eq.ell,
            "simplex": eq.simplex.as_dict(),
            "cells": [
                {"cell": [c.lo, c.hi], "regime": c.solution.regime, "pooling": c.pooling_intervals(),
                 "penal_family": c.penal.decision_shift}
                for c in eq.cells
            ],
        }

    out = {"model": _model_json(cfg.model), "verdict": res.verdict, "margins": res.margins,
           "fine": side(res.fine), "coarse": side(res.coarse)}
    if res.offending is not None:
        left, right, top, bottom = res.offending
        out["offending"] = {"cells": [list(left), list(right)], "decision_left": top, "decision_right": bottom}
    return out


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def _csv_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(x) else repr(float(x))
    return str(x)


def format_rows(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False, default=_num) + "\n"


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--a", type=float)
    g.add_argument("--b", type=float)
    g.add_argument("--c", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--leeway", type=float)
    g.add_argument("--preset", choices=("agency", "lobbying"))
    g.add_argument("--lambda-s", dest="lambda_s", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--d0", type=float)
    g.add_argument("--prior-file", help="CSV with header cell_index,density")
    s = common.add_argument_group("solver")
    s.add_argument("--grid-n", type=int, default=checker.DEFAULT_GRID)
    s.add_argument("--tol", type=float, default=FIXED_POINT_TOL)
    s.add_argument("--max-iter", type=int, default=MAX_ITER)
    o = common.add_argument_group("output")
    o.add_argument("--format", choices=("json", "csv"), default="json")
    o.add_argument("--out")
    o.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="relcomm", description="Relational communication solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="optimal pooling, leeway and payoff simplex")
    sw = sub.add_parser("sweep", parents=[common], help="regime table over a delta or leeway grid")
    sw.add_argument("--sweep-over", choices=("delta", "leeway"), default="delta")
    sw.add_argument("--sweep-min", type=float, required=True)
    sw.add_argument("--sweep-max", type=float, required=True)
    sw.add_argument("--sweep-steps", type=int, required=True)
    sw.add_argument("--workers", type=int, default=1)
    sub.add_parser("worst", parents=[common], help="sender's worst equilibrium payoff")
    ve = sub.add_parser("verify", parents=[common], help="check equilibrium conditions and oracles")
    ve.add_argument("--perturb", choices=checker.PERTURBATIONS)
    ve.add_argument("--oracle-n", type=int, default=oracle.DEFAULT_ORACLE_N)
    ve.add_argument("--exhaustive", action="store_true")
    tr = sub.add_parser("transparency", parents=[common], help="compare payoff sets under two public signals")
    tr.add_argument("--signal", default="")
    tr.add_argument("--signal-hat", default="")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"relcomm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "solve":
            result = run_solve(build_config(args))
            text = format_rows([_flat_solve(result)], SWEEP_COLUMNS) if args.format == "csv" else _dump(result)
        elif args.command == "sweep":
            if args.delta is not None or args.leeway is not None:
                raise ConfigError("sweep takes its delta or leeway values from the sweep range")
            cfg = build_config(args, need_delta_or_leeway=False)
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            rows = run_sweep(cfg, args.sweep_over, args.sweep_min, args.sweep_max, args.sweep_steps, args.workers)
            text = format_rows(rows, SWEEP_COLUMNS) if args.format == "csv" else _dump(rows)
        elif args.command == "worst":
            text = _dump(run_worst(build_config(args)))
        elif args.command == "verify":
            if args.oracle_n < 2:
                raise ConfigError("--oracle-n must be at least 2")
            cfg = build_config(args, allow_default=True)
            text = _dump(run_verify(cfg, args.perturb, args.oracle_n, args.exhaustive))
        else:
            if args.delta is None:
                raise ConfigError("transparency needs --delta")
            text = _dump(run_transparency(build_config(args), args.signal, args.signal_hat))
    except (ConfigError, DomainError, OSError) as exc:
        print(f"relcomm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        bracket = f" (bracket {exc.bracket})" if exc.bracket else ""
        print(f"relcomm: no convergence: {exc}{bracket}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except VerificationFailure as exc:
        _emit(_dump(exc.payload), args.out)
        print(f"relcomm: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    _emit(text, args.out)
    return EXIT_OK


def _flat_solve(result: dict) -> dict:
    return {"delta": result["delta"], "ell": result["ell"], "regime": result["regime"], **result["thresholds"],
            **{k: result["simplex"][k] for k in ("v_bar", "v_s_min", "v_r_min")}}


if __name__ == "__main__":
    sys.exit(main())
