"""Command-line front end: ``plot --spec FILE`` or direct flags.

The spec file is TOML mirroring PlotSpec:

    x = "payload_words_total"
    y = "val_loss"
    logy = true
    out = "overlay.svg"

    [[input]]
    path = "runs/variant_c2dfb.csv"
    label = "reference-point"

Direct flags cover the same fields; --csv repeats once per curve and
takes PATH or PATH:LABEL (label defaults to the file stem).
"""

import argparse
import pathlib
import sys

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .render import PlotSpec, render
from .schema import X_AXES, PlotError

_SPEC_KEYS = {"input", "x", "y", "logx", "logy", "out"}


def _spec_from_file(path: str) -> PlotSpec:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise PlotError(f"cannot read spec file {path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise PlotError(f"cannot parse spec file {path}: {e}") from None

    unknown = sorted(set(raw) - _SPEC_KEYS)
    if unknown:
        raise PlotError(f"{path}: unknown spec keys {unknown}; expected {sorted(_SPEC_KEYS)}")
    entries = raw.get("input", [])
    if not isinstance(entries, list):
        raise PlotError(f"{path}: input must be an array of tables ([[input]])")
    inputs = []
    for k, entry in enumerate(entries):
        if not isinstance(entry, dict) or "path" not in entry:
            raise PlotError(f"{path}: input #{k + 1} needs a path")
        csv_path = str(entry["path"])
        inputs.append((csv_path, str(entry.get("label", pathlib.Path(csv_path).stem))))
    return PlotSpec(
        inputs=tuple(inputs),
        x=str(raw.get("x", "t")),
        y=str(raw.get("y", "value_surrogate")),
        logx=bool(raw.get("logx", False)),
        logy=bool(raw.get("logy", False)),
        out=str(raw.get("out", "plot.svg")),
    )


def _parse_csv_arg(arg: str):
    # PATH:LABEL splits on the last colon; a bare PATH labels itself
    path, sep, label = arg.rpartition(":")
    if not sep or not path:
        return arg, pathlib.Path(arg).stem
    return path, label


def _spec_from_flags(args) -> PlotSpec:
    return PlotSpec(
        inputs=tuple(_parse_csv_arg(a) for a in args.csv),
        x=args.x,
        y=args.y,
        logx=args.logx,
        logy=args.logy,
        out=args.out,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot",
        description="overlay a metric column from one or more run logs",
    )
    parser.add_argument("--spec", default=None, help="TOML file describing the figure")
    parser.add_argument(
        "--csv", action="append", default=[], metavar="PATH[:LABEL]",
        help="run log to draw; repeat once per curve",
    )
    parser.add_argument("--x", default="t", choices=X_AXES)
    parser.add_argument("--y", default="value_surrogate", help="schema column for the y axis")
    parser.add_argument("--logx", action="store_true")
    parser.add_argument("--logy", action="store_true")
    parser.add_argument("--out", default="plot.svg", help="output SVG path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.spec is not None:
            if args.csv:
                raise PlotError("use either --spec or --csv flags, not both")
            spec = _spec_from_file(args.spec)
        else:
            if not args.csv:
                raise PlotError("nothing to draw; pass --spec FILE or at least one --csv")
            spec = _spec_from_flags(args)
        out = render(spec)
    except (PlotError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {out} ({len(spec.inputs)} curves)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
