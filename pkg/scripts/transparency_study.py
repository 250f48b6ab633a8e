"""Compare payoff simplices under a binary public signal and no signal for a
few instances, printing verdicts and margins.

    python3 scripts/transparency_study.py
"""

import argparse

from relcomm.core import QuadraticModel
from relcomm.transparency import SignalPartition, compare_transparency

CASES = [
    ((3.0, -1.2, 1.0), (0.1, 0.3, 0.6)),
    ((2.5, -1.5, 0.25), (0.05, 0.1, 0.2)),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--signal", default="0.5", help="comma-separated cutpoints of the finer signal")
    args = ap.parse_args(argv)
    psi = SignalPartition.parse(args.signal)

    print(f"{'a':>5} {'b':>6} {'c':>5} {'delta':>6} {'verdict':>20} {'dv_bar':>11} {'dv_s':>11} {'dv_r':>11} "
          f"{'ell_fine':>9} {'ell_coarse':>10}")
    for (a, b, c), deltas in CASES:
        for delta in deltas:
            v = compare_transparency(QuadraticModel(a, b, c, delta), psi, SignalPartition())
            m = v.margins
            print(f"{a:5.2f} {b:6.2f} {c:5.2f} {delta:6.2f} {v.verdict:>20} {m['v_bar']:+11.3e} "
                  f"{m['v_s_min']:+11.3e} {m['v_r_min']:+11.3e} {v.fine.ell:9.4f} {v.coarse.ell:10.4f}")


if __name__ == "__main__":
    main()
