"""Largest self-enforcing leeway and the payoff simplex over a grid of
discount factors, plus the discount factors at which the regime changes.

    python3 scripts/delta_table.py --a 3 --b -1.2 --c 1 --steps 20
"""

import argparse
import csv
import sys

import numpy as np

from relcomm.core import NonConvergenceError, QuadraticModel
from relcomm.equilibrium import regime_thresholds, solve_fixed_point


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", type=float, default=3.0)
    ap.add_argument("--b", type=float, default=-1.2)
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--delta-max", type=float, default=0.95)
    ap.add_argument("--steps", type=int, default=20)
    args = ap.parse_args(argv)

    model = QuadraticModel(args.a, args.b, args.c)
    if model.prior.is_uniform and model.a > 2:
        thr = regime_thresholds(model, with_delta=True)
        for name, value in sorted(thr.deltas.items(), key=lambda kv: kv[1]):
            print(f"# {name} = {value:.6f}", file=sys.stderr)

    writer = csv.writer(sys.stdout)
    writer.writerow(["delta", "ell", "regime", "v_bar", "v_s_min", "v_r_min", "surplus", "iterations"])
    for delta in np.linspace(0.0, args.delta_max, args.steps):
        try:
            fp = solve_fixed_point(model.with_delta(float(delta)))
        except NonConvergenceError as exc:
            # punishments grow without bound; no finite best equilibrium
            writer.writerow([delta, "inf", "", "", "", "", "", str(exc.bracket)])
            continue
        s = fp.simplex
        writer.writerow([delta, fp.ell, fp.solution.regime, s.v_bar, s.v_s_min, s.v_r_min, s.surplus, fp.iterations])


if __name__ == "__main__":
    main()
