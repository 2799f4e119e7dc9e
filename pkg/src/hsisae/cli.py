"""Command-line entry point ``hsisae``.

Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
3 data error, 4 numerical divergence.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .autoenc import grad_check
from .errors import ConfigError, ContractError, DataError, DivergenceError, ShapeError
from .hsidata import GroundTruth, SynthSpec, read_label_csv, save_cube, save_ground_truth, synth_scene
from .pipeline import ExperimentConfig, run_experiment

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

GRADCHECK_TOL = 1e-6

log = logging.getLogger("hsisae")


def _cmd_synth(args):
    try:
        raw = json.loads(Path(args.spec).read_text())
        spec = SynthSpec.from_dict(raw)
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {args.spec}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON ({exc})") from None
    except (TypeError, ContractError) as exc:
        raise ConfigError(f"{args.spec}: {exc}") from None
    cube, gt = synth_scene(spec)
    save_cube(cube, args.out)
    save_ground_truth(gt, args.gt)
    print(f"wrote {cube.width}x{cube.height}x{cube.bands} cube to {args.out}, "
          f"{int((gt.labels > 0).sum())} labeled pixels to {args.gt}")
    return EXIT_OK


def _cmd_gradcheck(args):
    worst = 0.0
    for seed in range(args.seed, args.seed + args.seeds):
        err = grad_check(args.d, args.h, args.m, seed)
        worst = max(worst, err)
        print(f"seed {seed}: max relative error {err:.3e}")
    ok = worst < GRADCHECK_TOL
    print(f"max over {args.seeds} seed(s): {worst:.3e} ({'PASS' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_GRADCHECK


def _cmd_run(args):
    cfg = ExperimentConfig.load(args.config)
    report = run_experiment(cfg, map_path=args.map, report_path=args.report)
    print(f"{cfg.scheme}: overall test error {report.overall_error_percent:.3f}% "
          f"on {report.n_test} pixels ({report.wall_clock_seconds:.1f} s)")
    return EXIT_OK


def _cmd_convert_gt(args):
    labels = read_label_csv(args.csv, args.width, args.height)
    save_ground_truth(GroundTruth(labels), args.out)
    print(f"wrote {args.width}x{args.height} labels to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="hsisae", description="Autoencoder-based hyperspectral classification")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--spec", required=True, help="JSON file with SynthSpec fields")
    p.add_argument("--out", required=True, help="output cube (.hsc)")
    p.add_argument("--gt", required=True, help="output ground truth (.pgm)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("gradcheck", help="compare autoencoder gradients with finite differences")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--h", type=int, default=5)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--map", help="write a PPM classification map here")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("convert-gt", help="convert 'row,col,label' CSV labels to PGM")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.set_defaults(func=_cmd_convert_gt)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, ShapeError, ContractError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
