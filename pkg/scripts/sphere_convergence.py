"""Icosphere moment error against the analytic sphere pattern, per subdivision level."""
import argparse
import time

import numpy as np

from se3inv.moments import RhoMomentTensor, compute_rho_moments, sphere_pattern, to_racah
from se3inv.surface import make_sphere, sample_measure


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, nargs="*", default=[2, 3, 4, 5, 6])
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--dprime", type=int, default=3)
    ap.add_argument("--quad-order", type=int, default=2)
    args = ap.parse_args(argv)
    exact = to_racah(RhoMomentTensor(args.d, args.dprime, sphere_pattern(args.d, args.dprime)))
    prev = None
    print(f"{'level':>5s} {'rel_error':>11s} {'ratio':>7s} {'seconds':>8s}")
    for level in args.levels:
        t0 = time.perf_counter()
        s = sample_measure(make_sphere(1.0, level), args.quad_order)
        rho = compute_rho_moments(s, args.d, args.dprime)
        err = float(np.abs(to_racah(rho) - exact).max() / np.abs(exact).max())
        ratio = f"{prev / err:7.4f}" if prev else "      -"
        print(f"{level:5d} {err:11.4e} {ratio} {time.perf_counter() - t0:8.2f}")
        prev = err


if __name__ == "__main__":
    main()
