"""Descriptor noise floor under random rigid motions, and the gap to a nearby shape."""
import argparse

import numpy as np

from se3inv.invariants import compute_descriptor, descriptor_distance, relative_change
from se3inv.so3 import random_rotation
from se3inv.surface import make_shape, sample_measure


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--axes", type=float, nargs=3, default=[1.0, 2.0, 3.0])
    ap.add_argument("--perturbed-c", type=float, default=3.1)
    ap.add_argument("--level", type=int, default=3)
    ap.add_argument("--motions", type=int, default=20)
    ap.add_argument("--d", type=int, default=4)
    ap.add_argument("--dprime", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    s = sample_measure(make_shape("ellipsoid", args.axes, args.level), 2)
    base = compute_descriptor(s, args.d, args.dprime)
    rel, dist = [], []
    for _ in range(args.motions):
        moved = compute_descriptor(s.transformed(random_rotation(rng), 3 * rng.normal(size=3)), args.d, args.dprime)
        rel.append(relative_change(base, moved))
        dist.append(descriptor_distance(base, moved))
    other = args.axes[:2] + [args.perturbed_c]
    b = compute_descriptor(sample_measure(make_shape("ellipsoid", other, args.level), 2), args.d, args.dprime)
    gap = descriptor_distance(base, b)
    print(f"entries            {base.values.size}")
    print(f"max relative change {max(rel):.3e}")
    print(f"noise floor         {max(dist):.3e}")
    print(f"distance to {other} {gap:.4e}  ({gap / max(max(dist), 1e-300):.2e} x floor)")


if __name__ == "__main__":
    main()
