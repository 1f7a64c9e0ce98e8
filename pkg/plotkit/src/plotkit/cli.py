"""``fedplot``: render figures from a fedsim run directory."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .plots import plot_convergence, plot_fairness
from .runs import SchemaError

_COMMANDS = {"convergence": plot_convergence, "fairness": plot_fairness}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedplot", description="Render figures from a fedsim run directory."
    )
    parser.add_argument("--version", action="version", version=f"fedplot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("convergence", "train-loss and mean-accuracy curves per algorithm"),
        ("fairness", "client-accuracy density curves per algorithm"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("run_dir", help="directory produced by `fedsim run`")
        p.add_argument(
            "-o",
            "--out",
            default=f"{name}.svg",
            help="output image path; format from the extension (.svg default, .png supported)",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = _COMMANDS[args.command](args.run_dir, args.out)
    except SchemaError as exc:
        print(f"fedplot: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"fedplot: error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
