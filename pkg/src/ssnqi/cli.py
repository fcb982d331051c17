"""Command-line runner: ``ssnqi simulate|analyze|demo-pi|sweep|render``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment, theory
from .config import load_config
from .frames import read_fstk
from .pgm import write_pgm
from .validation import ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("ssnqi")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment JSON (or a run manifest)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--out", help="output directory, overrides the config")
    p.add_argument("--threads", type=int, default=1, help="worker threads (wall time only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssnqi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write FSTK1 signal/idler stacks and a manifest")
    _common(p)

    p = sub.add_parser("analyze", help="sigma table, class R table and mean absorption maps")
    _common(p)
    p.add_argument("--signal", help="signal FSTK1 file (default: <out>/signal.fstk)")
    p.add_argument("--idler", help="idler FSTK1 file (default: <out>/idler.fstk)")
    p.add_argument("--expect-sigma", type=float, help="fail with exit 4 unless mean sigma is within --tol")
    p.add_argument("--tol", type=float, default=0.02)

    p = sub.add_parser("demo-pi", help="pi-glyph images for the three schemes")
    _common(p)
    p.add_argument("--check", action="store_true", help="exit 4 unless q residual < cl residual")

    p = sub.add_parser("sweep", help="measured R versus sigma with theory overlay")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sigmas", type=float, nargs="+")
    g.add_argument("--etas", type=float, nargs="+")
    p.add_argument("--check", action="store_true",
                   help="exit 4 unless every point is within 10%% of theory")

    p = sub.add_parser("render", help="theory curves CSV and/or a stack's mean frame as PGM")
    _common(p, config_required=False)
    p.add_argument("--stack", help="FSTK1 file whose temporal mean is rendered")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--excess", type=float, default=0.0)
    p.add_argument("--sigma-grid", type=float, nargs=3, metavar=("START", "STOP", "N"),
                   default=(0.0, 1.2, 121))
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError(f"--seed {args.seed} is not a u64")
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out if args.out else cfg.output_dir)
    return cfg, out


def cmd_simulate(args) -> int:
    cfg, out = _load(args)
    pair = experiment.simulate(cfg, cfg.mask(Path(args.config).parent), args.threads)
    experiment.write_run(cfg, pair, out)
    print(f"wrote {out/'signal.fstk'}, {out/'idler.fstk'}, {out/'manifest.json'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg, out = _load(args)
    pair = experiment.read_pair(args.signal or out / "signal.fstk", args.idler or out / "idler.fstk")
    report = experiment.analyze(pair, cfg, cfg.mask(Path(args.config).parent))
    summary = experiment.write_analysis(report, out)
    print(f"sigma = {summary['sigma_mean']:.4f} +/- {summary['sigma_sem']:.4f} "
          f"over {len(report.sigmas)} frames; E = {summary['excess_mean']:.4f}")
    for row in summary["classes"]:
        print(f"class {row['j']}: sigma_j={row['sigma_j']:.3f} n={row['n_frames']} "
              f"R_cl={row['R_cl']:.3f} (theory {row['R_cl_theory']:.3f}) "
              f"R_dcl={row['R_dcl']:.3f} (theory {row['R_dcl_theory']:.3f})")
    if args.expect_sigma is not None and abs(report.sigma_mean - args.expect_sigma) > args.tol:
        print(f"CHECK FAILED: sigma {report.sigma_mean:.4f} not within {args.tol} of {args.expect_sigma}")
        return EXIT_CHECK
    return EXIT_OK


def cmd_demo_pi(args) -> int:
    cfg, out = _load(args)
    result = experiment.demo_pi(cfg, args.threads)
    experiment.write_demo(result, out)
    for k in ("q", "dcl", "cl"):
        print(f"{k:>3}: residual rms {result.residual_rms[k]:.5f}  "
              f"glyph contrast {result.contrast.get(k, float('nan')):.5f}")
    if args.check and not result.residual_rms["q"] < result.residual_rms["cl"]:
        print("CHECK FAILED: quantum image is not less noisy than the direct classical image")
        return EXIT_CHECK
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, out = _load(args)
    points = experiment.run_sweep(cfg, args.sigmas, args.etas, args.threads)
    out.mkdir(parents=True, exist_ok=True)
    experiment.write_sweep_csv(out / "sweep.csv", points)
    theory.write_curves_csv(out / "theory.csv", np.linspace(0.0, 1.2, 121), experiment.bin_mask(
        cfg.mask(), cfg.detector.bin_factor).max())
    ok = True
    for p in points:
        good = (abs(p.R_cl / p.R_cl_theory - 1) <= 0.1) and (abs(p.R_dcl / p.R_dcl_theory - 1) <= 0.1)
        ok &= good
        print(f"sigma={p.sigma:.3f}  R_cl={p.R_cl:.3f}+/-{p.R_cl_err:.3f} (theory {p.R_cl_theory:.3f})  "
              f"R_dcl={p.R_dcl:.3f}+/-{p.R_dcl_err:.3f} (theory {p.R_dcl_theory:.3f})"
              + ("" if good else "  <-- off by more than 10%"))
    x = experiment.crossing([p.sigma for p in points], [p.R_cl for p in points])
    print(f"R_cl crosses 1 at sigma = {x:.3f}")
    if args.check and not ok:
        return EXIT_CHECK
    return EXIT_OK


def cmd_render(args) -> int:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    start, stop, n = args.sigma_grid
    alpha, excess = args.alpha, args.excess
    if args.config:
        cfg, out = _load(args)
        out.mkdir(parents=True, exist_ok=True)
        mask = cfg.mask(Path(args.config).parent)
        if mask is not None:
            alpha = float(mask.alpha.max())
    theory.write_curves_csv(out / "theory.csv", np.linspace(start, stop, int(n)), alpha, excess)
    print(f"wrote {out/'theory.csv'}")
    if args.stack:
        stack = read_fstk(args.stack)
        mean = stack.counts.mean(axis=0)
        top = mean.max()
        gray = np.zeros(mean.shape, dtype=np.uint16) if top == 0 else np.rint(mean / top * 65535)
        name = out / (Path(args.stack).stem + "_mean.pgm")
        write_pgm(name, gray.astype(np.uint16), 65535)
        print(f"wrote {name}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "demo-pi": cmd_demo_pi,
            "sweep": cmd_sweep, "render": cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
