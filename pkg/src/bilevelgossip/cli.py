"""Command-line front end.

    bilevelgossip run --config run.toml [--output-dir DIR] [--variant NAME]
    bilevelgossip sweep --config run.toml --axis lambda --values 10,20,40 [--jobs N]
    bilevelgossip topology-info --config run.toml
    bilevelgossip check-compressor --config run.toml

Exit codes: 0 success, 1 config or data validation failure, 2 runtime
failure (divergence, non-finite iterates, failed sweep cells).

`run` writes run_<hash>.csv and summary_<hash>.json where <hash> names
the effective config.  The summary embeds that config, so passing the
summary JSON back to `run` reproduces the identical CSV (wall_seconds
excepted, as wall time is not deterministic).
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .compression import contraction_suite
from .config import RunBundle, _build_compressor, config_hash, load_config, resolve
from .errors import ConfigError, DataError, SimulationError
from .metrics import CsvSink
from .outer import run as run_simulation
from .topology import TopologySpec, build_mixing_matrix

_SWEEP_SECTIONS = {
    "lambda": "schedule",
    "inner_steps": "schedule",
    "rounds": "schedule",
    "eta_in": "schedule",
    "eta_out": "schedule",
    "gamma_in": "schedule",
    "gamma_out": "schedule",
    "eps": "schedule",
    "ratio": "compressor",
    "variant": "",
}


def _execute(bundle: RunBundle) -> dict:
    """Run one bundle to completion, writing CSV + summary files."""
    os.makedirs(bundle.output_dir, exist_ok=True)
    csv_name = f"run_{bundle.hash}.csv"
    csv_path = os.path.join(bundle.output_dir, csv_name)
    with CsvSink(csv_path) as sink:
        log = run_simulation(
            bundle.run_config, bundle.problem, bundle.mixing, bundle.compressor, sink=sink
        )
    summary = {
        "schema_version": 1,
        "config_hash": bundle.hash,
        "csv": csv_name,
        "advisories": bundle.advisories,
        "config": bundle.effective,
        **log.summary(),
    }
    with open(os.path.join(bundle.output_dir, f"summary_{bundle.hash}.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def cmd_run(args) -> int:
    raw = load_config(args.config)
    bundle = resolve(raw, variant_override=args.variant, output_dir_override=args.output_dir)
    for line in bundle.advisories:
        print(f"advisory: {line}", file=sys.stderr)
    summary = _execute(bundle)
    print(f"config hash: {bundle.hash}")
    print(f"csv: {os.path.join(bundle.output_dir, summary['csv'])}")
    final = summary["final"]
    shown = [k for k in ("value_surrogate", "grad_norm_oracle", "train_loss",
                         "val_loss", "val_accuracy") if final.get(k) is not None]
    for key in shown:
        print(f"final {key}: {final[key]:.6g}")
    print(f"total payload words: {summary['payload_words']['total']}")
    return 0


def _apply_axis(raw: dict, axis: str, value) -> dict:
    patched = json.loads(json.dumps(raw))  # deep copy, config dicts are JSON-safe
    section = _SWEEP_SECTIONS[axis]
    if section:
        patched.setdefault(section, {})[axis] = value
    else:
        patched[axis] = value
    return patched


def _sweep_cell(raw: dict, axis: str, value, output_dir, variant):
    """Worker for one sweep cell; returns a summary row dict."""
    patched = _apply_axis(raw, axis, value)
    bundle = resolve(patched, variant_override=variant, output_dir_override=output_dir)
    summary = _execute(bundle)
    row = {
        "value": value,
        "config_hash": bundle.hash,
        "csv": summary["csv"],
        "status": "ok",
        "final": summary["final"],
    }
    return row


def cmd_sweep(args) -> int:
    if args.axis not in _SWEEP_SECTIONS:
        raise ConfigError(
            f"cannot sweep {args.axis!r}; supported axes: {sorted(_SWEEP_SECTIONS)}"
        )
    raw = load_config(args.config)
    values = []
    for token in args.values.split(","):
        token = token.strip()
        if not token:
            continue
        if args.axis == "variant":
            values.append(token)
        elif args.axis in ("inner_steps", "rounds"):
            values.append(int(token))
        else:
            values.append(float(token))
    if not values:
        raise ConfigError("sweep needs a non-empty --values list")

    # fail fast on a broken base config before spawning any work
    resolve(_apply_axis(raw, args.axis, values[0]),
            variant_override=args.variant, output_dir_override=args.output_dir)

    rows = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_sweep_cell, raw, args.axis, v, args.output_dir, args.variant)
                for v in values
            ]
            for value, fut in zip(values, futures):
                try:
                    rows.append(fut.result())
                except Exception as e:
                    rows.append({"value": value, "status": f"failed: {e}"})
    else:
        for value in values:
            try:
                rows.append(_sweep_cell(raw, args.axis, value, args.output_dir, args.variant))
            except Exception as e:
                rows.append({"value": value, "status": f"failed: {e}"})

    header = f"{args.axis:>12}  {'hash':>12}  {'status':<8}  final"
    print(header)
    for row in rows:
        if row["status"] == "ok":
            final = row["final"]
            bits = [
                f"{k}={final[k]:.6g}"
                for k in ("value_surrogate", "grad_norm_oracle", "hypergrad_bias",
                          "train_loss", "val_accuracy")
                if final.get(k) is not None
            ]
            print(f"{row['value']!s:>12}  {row['config_hash']:>12}  ok        {' '.join(bits)}")
        else:
            print(f"{row['value']!s:>12}  {'-':>12}  {row['status']}")

    out_dir = args.output_dir or raw.get("output_dir", "runs")
    os.makedirs(out_dir, exist_ok=True)
    sweep_doc = {"axis": args.axis, "rows": rows}
    with open(os.path.join(out_dir, "sweep_summary.json"), "w") as fh:
        json.dump(sweep_doc, fh, indent=2)
        fh.write("\n")
    return 0 if all(r["status"] == "ok" for r in rows) else 2


def cmd_topology_info(args) -> int:
    raw = load_config(args.config)
    topo = raw.get("topology")
    if not isinstance(topo, dict):
        raise ConfigError("config has no [topology] section")
    master = int(raw.get("seeds", {}).get("master", 0))
    edges = topo.get("custom_edges")
    spec = TopologySpec(
        kind=topo.get("kind", ""),
        m=topo.get("m", 0),
        p=topo.get("p"),
        seed=int(topo.get("seed", master)),
        custom_edges=None if edges is None else tuple(tuple(e) for e in edges),
    )
    mixing = build_mixing_matrix(spec)
    w = mixing.matrix
    edge_list = sorted(
        (i, j) for i in range(mixing.m) for j in range(i + 1, mixing.m) if w[i, j] > 0
    )
    print(f"kind: {spec.kind}")
    print(f"nodes: {mixing.m}")
    print(f"edges: {len(edge_list)}")
    print(f"second eigenvalue: {mixing.second_eigen:.12g}")
    print(f"spectral gap: {mixing.spectral_gap:.12g}")
    print(f"mixing penalty: {mixing.mixing_norm:.12g}")
    if mixing.m <= 16:
        print("edge list: " + " ".join(f"{i}-{j}" for i, j in edge_list))
    return 0


def cmd_check_compressor(args) -> int:
    raw = load_config(args.config)
    section = raw.get("compressor")
    if not isinstance(section, dict):
        raise ConfigError("config has no [compressor] section")
    errors = []
    compressor = _build_compressor(dict(section), errors)
    if compressor is None:
        raise ConfigError("; ".join(errors))
    rows = contraction_suite(compressor, trials=args.trials, seed=0)
    print(f"{'dim':>6} {'keep':>6} {'worst':>10} {'mean':>10} {'bound':>10}  type      violations")
    worst = 0.0
    violations = 0
    for row in rows:
        print(
            f"{row.dim:>6} {row.keep:>6} {row.worst_ratio:>10.6f} "
            f"{row.mean_ratio:>10.6f} {row.bound:>10.6f}  {row.bound_type:<8}  {row.violations}"
        )
        worst = max(worst, row.worst_ratio)
        violations += row.violations
    print(f"worst contraction ratio: {worst:.6f}")
    print(f"violations: {violations}")
    return 0 if violations == 0 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilevelgossip",
        description="decentralized bilevel optimization with compressed gossip",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML or JSON config file")

    p_run = sub.add_parser("run", help="execute one run, write CSV + summary")
    common(p_run)
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--variant", default=None, help="override the config variant")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a one-axis parameter sweep")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True, help="schedule key, ratio, or variant")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--output-dir", default=None)
    p_sweep.add_argument("--variant", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_topo = sub.add_parser("topology-info", help="print mixing-matrix spectrum")
    common(p_topo)
    p_topo.set_defaults(func=cmd_topology_info)

    p_check = sub.add_parser("check-compressor", help="Monte-Carlo contraction check")
    common(p_check)
    p_check.add_argument("--trials", type=int, default=1000)
    p_check.set_defaults(func=cmd_check_compressor)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SimulationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
