"""Command line: ``se3inv {gen,invariants,compare,check,reconstruct,selftest}``.

Exit codes: 0 success, 1 usage, 2 input data error, 3 numerical degeneracy.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import selftest as _selftest
from .config import ConfigError, RunConfig, cache_dir
from .fiber import (
    DegeneracyError,
    estimate_ball_integrals,
    evaluate_oracle,
    reconstruct,
)
from .genericity import Tolerances, check_star, check_star_star, format_report
from .invariants import CapMismatchError, InsufficientQuadratureError, compute_descriptor, distance_breakdown, \
    descriptor_distance
from .serialize import FormatError, load_descriptor, save_descriptor
from .surface import SHAPES, MeshError, format_off, load_mesh, make_shape, sample_measure

log = logging.getLogger("se3inv")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _embedded(cfg: RunConfig) -> dict:
    """Config recorded inside artifacts; the output destination is left out so reruns are byte-identical."""
    d = cfg.to_dict()
    d.pop("output", None)
    return d


def _config_json(cfg: RunConfig) -> str:
    return json.dumps(_embedded(cfg), sort_keys=True)


def _off_with_config(text: str, cfg: RunConfig) -> str:
    head, rest = text.split("\n", 1)
    return f"{head}\n# run_config {_config_json(cfg)}\n{rest}"


def _points_off(points, cfg: RunConfig) -> str:
    pts = np.asarray(points, dtype=float)
    lines = ["OFF", f"# run_config {_config_json(cfg)}", f"{len(pts)} 0 0"]
    lines += [" ".join(repr(float(c)) for c in p) for p in pts]
    return "\n".join(lines) + "\n"


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, cfg: RunConfig) -> int:
    try:
        mesh = make_shape(args.kind, args.params, args.resolution)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(_off_with_config(format_off(mesh), cfg), cfg.output)
    return EXIT_OK


def _cache_key(path: str, cfg: RunConfig) -> str:
    h = hashlib.sha256(Path(path).read_bytes())
    h.update(f"{cfg.caps_d},{cfg.caps_dprime},{cfg.quad_order},{cfg.format_version}".encode())
    return h.hexdigest()


def cmd_invariants(args, cfg: RunConfig) -> int:
    cache = cache_dir()
    hit = cache / f"{_cache_key(cfg.input, cfg)}.se3d" if cache else None
    if hit is not None and hit.exists():
        desc = load_descriptor(hit)
        log.info("descriptor cache hit %s", hit)
    else:
        mesh = load_mesh(cfg.input)
        sample = sample_measure(mesh, cfg.quad_order)
        desc = compute_descriptor(sample, cfg.caps_d, cfg.caps_dprime, run_config=_embedded(cfg), seed=cfg.seed)
        if hit is not None:
            hit.parent.mkdir(parents=True, exist_ok=True)
            save_descriptor(desc, hit)
    if not cfg.output:
        raise UsageError("invariants needs --out")
    save_descriptor(desc, cfg.output, cfg.format)
    print(f"entries = {desc.values.size}")
    return EXIT_OK


def cmd_compare(args, cfg: RunConfig) -> int:
    a, b = load_descriptor(args.a), load_descriptor(args.b)
    lines = [f"distance = {descriptor_distance(a, b):.17g}"]
    for J, v in sorted(distance_breakdown(a, b).items()):
        lines.append(f"distance_sq[J={J}] = {v:.17g}")
    _emit("\n".join(lines) + "\n", cfg.output)
    return EXIT_OK


def _tolerances(cfg: RunConfig) -> Tolerances:
    return Tolerances(rank_tol=cfg.rank_tol, margin_d1=cfg.margin_d1, margin_delta=cfg.margin_delta, seed=cfg.seed)


def cmd_check(args, cfg: RunConfig) -> int:
    mesh = load_mesh(cfg.input)
    tol = _tolerances(cfg)
    star = check_star(mesh, tol)
    text = f"# run_config {_config_json(cfg)}\n[star]\n" + format_report(star)
    if star.verdict != "fail" or args.always_star_star:
        ss = check_star_star(mesh, tol)
        text += "[star_star]\n" + format_report(ss)
    else:
        text += "[star_star]\nverdict = skipped\nnote = star failed\n"
    _emit(text, cfg.output)
    return EXIT_OK


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    mesh = load_mesh(cfg.input)
    out = Path(cfg.output) if cfg.output else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rec = reconstruct(mesh, n_fibers=cfg.fibers, seed=cfg.seed, eps=cfg.eps,
                      margin_d1=cfg.margin_d1, margin_delta=cfg.margin_delta)
    lines = [f"# run_config {_config_json(cfg)}", f"eps = {rec.eps:.12g}", f"seed = {cfg.seed}",
             f"path = {args.path}"]
    desc = None
    if args.path == "descriptor":
        desc = compute_descriptor(sample_measure(mesh, cfg.quad_order), cfg.caps_d, cfg.caps_dprime)
    for k, fr in enumerate(rec.fibers):
        lines.append(f"[fiber {k}]")
        lines.append(f"spec = {fr.spec.describe()}")
        lines.append(f"copies = {fr.n_copies}")
        lines += [f"{key} = {val}" for key, val in fr.stats.items()]
        ev = evaluate_oracle(fr, rec.eps)
        lines += [f"precision = {ev.precision:.6f}", f"recall = {ev.recall:.6f}",
                  f"best_hausdorff = {ev.best_hausdorff:.6f}", f"monotone = {ev.monotone}"]
        for c, cand in enumerate(fr.candidates):
            lines.append(f"candidate[{c}] = points {len(cand.points)} residual {cand.residual:.6g}")
            if out:
                (out / f"fiber{k}_candidate{c}.off").write_text(_points_off(cand.points[:, :3], cfg))
        if desc is not None:
            rng = np.random.default_rng([cfg.seed, k])
            pick = np.sort(rng.choice(len(fr.classification.centers), size=min(16, len(fr.classification.centers)),
                                      replace=False))
            approx = estimate_ball_integrals(desc, fr.spec, fr.classification.centers[pick], rec.eps, rng=rng)
            agree = float(np.mean(approx.labels == fr.classification.labels[pick]))
            lines.append(f"descriptor_label_agreement = {agree:.4f}")
            lines += [f"warning = {w}" for w in approx.warnings]
    text = "\n".join(lines) + "\n"
    if out:
        (out / "report.txt").write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_selftest(args, cfg: RunConfig) -> int:
    results = _selftest.run_all(cfg.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_DEGENERATE


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with RunConfig fields (flags take precedence)")
    p.add_argument("--caps-d", dest="caps_d", type=int)
    p.add_argument("--caps-dprime", dest="caps_dprime", type=int)
    p.add_argument("--quad-order", dest="quad_order", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rank-tol", dest="rank_tol", type=float)
    p.add_argument("--margin-d1", dest="margin_d1", type=float)
    p.add_argument("--margin-delta", dest="margin_delta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--fibers", type=int)
    p.add_argument("--out", dest="output")
    p.add_argument("--format", choices=("binary", "text"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="se3inv", description="Degree-4 SE(3) invariants of surfaces and fiber reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a generated test mesh as OFF")
    p.add_argument("kind", choices=sorted(SHAPES))
    p.add_argument("params", nargs="*", type=float)
    p.add_argument("--resolution", type=int, default=3)
    _common(p)

    p = sub.add_parser("invariants", help="mesh -> invariant descriptor file")
    p.add_argument("input")
    _common(p)

    p = sub.add_parser("compare", help="distance between two descriptor files")
    p.add_argument("a")
    p.add_argument("b")
    _common(p)

    p = sub.add_parser("check", help="audit the genericity properties")
    p.add_argument("input")
    p.add_argument("--always-star-star", action="store_true", help="run the star-star audit even if star fails")
    _common(p)

    p = sub.add_parser("reconstruct", help="fiber-selection reconstruction")
    p.add_argument("input")
    p.add_argument("--path", choices=("oracle", "descriptor"), default="oracle")
    _common(p)

    p = sub.add_parser("selftest", help="run the embedded oracle suites")
    _common(p)
    return parser


COMMANDS = {"gen": cmd_gen, "invariants": cmd_invariants, "compare": cmd_compare, "check": cmd_check,
            "reconstruct": cmd_reconstruct, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k != "config"}
    flags["command"] = args.command
    if "input" in flags:
        flags["input"] = str(flags["input"])
    try:
        cfg = RunConfig.from_sources(flags, args.config)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"se3inv: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegeneracyError as exc:
        print(f"se3inv: degenerate input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (MeshError, FormatError, CapMismatchError, InsufficientQuadratureError, OSError, json.JSONDecodeError) as exc:
        print(f"se3inv: input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
