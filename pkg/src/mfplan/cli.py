"""Command line entry point: ``mfplan {run, convergence-study, bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import scipy.fft

from .config import ConfigError, load_config
from .experiments import bench, convergence_study, fmt, run
from .solver import SolverDivergence

DEFAULT_LADDER = "16x64,32x128,64x256,128x512"


def _grids(text: str) -> list:
    try:
        return [tuple(int(v) for v in item.lower().split("x")) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grids look like 16x64,32x128, not {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="INI experiment file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=None, help="seed for init = random (default: fixed)")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads (default: 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mfplan", description="Mean-field planning and transport solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="solve one configuration")
    p = sub.add_parser("convergence-study", parents=[common], help="1D reference problem over a grid ladder")
    p.add_argument("--grids", type=_grids, default=_grids(DEFAULT_LADDER), help=f"default: {DEFAULT_LADDER}")
    p = sub.add_parser("bench", parents=[common], help="compare solver variants on one problem")
    p.add_argument("--variants", default="fista,mlfista,mgfista(5)", help="comma separated, e.g. fista,mgfista(3)")
    return parser


def _split_variants(text: str) -> list:
    # commas inside mgfista(K) never occur, so a plain split is enough
    return [v for v in text.split(",") if v.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        with scipy.fft.set_workers(args.threads):
            if args.command == "run":
                res = run(cfg, args.out, seed=args.seed)
                for k, v in res.summary.items():
                    print(f"{k:>18}: {fmt(v)}")
            elif args.command == "convergence-study":
                rows = convergence_study(cfg, args.grids, args.out)
                print((args.out / "convergence.md").read_text(), end="")
                if not all(r["converged"] for r in rows):
                    print("note: some grids stopped at the iteration cap", file=sys.stderr)
            else:
                rows = bench(cfg, _split_variants(args.variants), args.out)
                for r in rows:
                    print(
                        f"{r['variant']:>12}  iters {r['iterations']:>6}  {r['seconds']:8.3f} s  "
                        f"objective {r['objective']:.10g}  mass {r['max_mass_residue']:.1e}"
                    )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverDivergence as exc:
        print(f"solver diverged: {exc} (partial diagnostics in {args.out})", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
