"""Sweep the leeway across every pooling regime and compare the closed form
with the DP oracle at each point.

    python3 scripts/regime_sweep.py --a 3 --b -1.2 --out regime_sweep.csv
"""

import argparse
import csv
import sys

import numpy as np

from relcomm.core import QuadraticModel
from relcomm.equilibrium import persuasion_problem, pooling_closed_form, regime_thresholds
from relcomm.oracle import DiscretizedProblem, dp_optimal_partition

FIELDS = ["ell", "regime", "theta_L_star", "theta_H_star", "theta_M_star", "v_bar", "v_bar_dp", "gap"]


def sweep(model: QuadraticModel, ells, n: int):
    for ell in ells:
        sol = pooling_closed_form(model, ell)
        dp = dp_optimal_partition(DiscretizedProblem.from_prior(model.prior, persuasion_problem(model, ell).value, n))
        yield {
            "ell": ell,
            "regime": sol.regime,
            "theta_L_star": sol.theta_L_star,
            "theta_H_star": sol.theta_H_star,
            "theta_M_star": sol.theta_M_star,
            "v_bar": sol.value,
            "v_bar_dp": dp.value,
            "gap": sol.value - dp.value,
        }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", type=float, default=3.0)
    ap.add_argument("--b", type=float, default=-1.2)
    ap.add_argument("--steps", type=int, default=61)
    ap.add_argument("--n", type=int, default=1000, help="DP carrier size")
    ap.add_argument("--out", help="CSV path (stdout if omitted)")
    args = ap.parse_args(argv)

    model = QuadraticModel(args.a, args.b, 1.0)
    thr = regime_thresholds(model)
    top = 1.25 * max(thr.values() or [1.0])
    rows = list(sweep(model, np.linspace(0.0, top, args.steps), args.n))

    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    finally:
        if args.out:
            fh.close()
    cuts = ", ".join(f"{k}={getattr(thr, k):.6g}" for k in ("ell_A", "ell_B", "ell_C", "ell_D") if getattr(thr, k) is not None)
    print(f"# {thr.tag}: {cuts}; max |closed form - DP| = {max(abs(r['gap']) for r in rows):.2e}", file=sys.stderr)


if __name__ == "__main__":
    main()
