"""Oracle-path fiber reconstruction on several seeds with summary statistics."""
import argparse
import time

from se3inv.fiber import DegeneracyError, evaluate_oracle, reconstruct
from se3inv.surface import make_shape, write_point_off


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", default="ellipsoid")
    ap.add_argument("--params", type=float, nargs="*", default=[1.0, 1.3, 1.7])
    ap.add_argument("--level", type=int, default=3)
    ap.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2])
    ap.add_argument("--eps", type=float)
    ap.add_argument("--out", help="directory for OFF point clouds of the best candidate")
    args = ap.parse_args(argv)
    mesh = make_shape(args.kind, args.params, args.level)
    print("seed copies   eps     hausdorff precision recall  monotone seconds")
    for seed in args.seeds:
        t0 = time.perf_counter()
        try:
            rec = reconstruct(mesh, seed=seed, eps=args.eps)
        except DegeneracyError as exc:
            print(f"{seed:4d} {type(exc).__name__}: {exc}")
            continue
        fr = rec.fibers[0]
        ev = evaluate_oracle(fr, rec.eps)
        print(f"{seed:4d} {fr.n_copies:6d} {rec.eps:.4f} {ev.best_hausdorff:9.4f} {ev.precision:9.4f} "
              f"{ev.recall:7.4f} {str(ev.monotone):8s} {time.perf_counter() - t0:7.1f}")
        if args.out and rec.best() is not None:
            write_point_off(rec.best().points[:, :3], f"{args.out}/seed{seed}_best.off")


if __name__ == "__main__":
    main()
