"""CLI: python -m dials_plots --in <dir> --fig {curves,runtime,ce} --out <file>"""

import argparse
import sys

from .figures import plot_ce_curves, plot_learning_curves, plot_runtime_bars
from .runset import SchemaError, load_runset

FIGURES = {
    "curves": plot_learning_curves,
    "runtime": plot_runtime_bars,
    "ce": plot_ce_curves,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dials_plots")
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory of run directories (metrics.csv + manifest.json)")
    parser.add_argument("--fig", choices=sorted(FIGURES), required=True)
    parser.add_argument("--out", required=True, help="output SVG path")
    args = parser.parse_args(argv)
    try:
        runset = load_runset(args.in_dir)
        FIGURES[args.fig](runset, args.out)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.fig} figure for {len(runset)} runs to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
