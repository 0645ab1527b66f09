"""Run configuration files.

A run is described by a TOML document (JSON works too; a JSON summary
produced by a previous run is accepted directly and re-runs its echoed
config).  Sections:

  variant      "c2dfb" (reference-point compressed gossip), "naive"
               (error-feedback compression), or "uncompressed"
  output_dir   where CSV/summary files go (excluded from the run hash)
  init_scale   std-dev of the random initial iterates
  [seeds]      master: every random stream derives from this one seed
  [topology]   kind/m plus p for erdos_renyi, custom_edges for custom
  [compressor] kind plus ratio; rescaled takes inner = another kind
  [problem]    family plus family-specific sizes
  [schedule]   eta_in, eta_out, gamma_in, gamma_out, lambda,
               inner_steps, rounds; optional eps fills missing values
               of lambda/inner_steps/eta_out/gamma_out from the
               accuracy-driven defaults

Unknown keys are rejected with a suggestion; all problems are reported
at once.  The resolved ("effective") config has every default
materialized, is echoed into the run summary, and its hash names the
output files, so identical configs land on identical file names.
"""

import difflib
import hashlib
import json
from dataclasses import dataclass

from .compression import Compressor, rescale_biased
from .datasets import read_dataset, partition_heterogeneous
from .errors import ConfigError
from .outer import RunConfig, ScheduleCoefficients, default_schedule, VARIANTS
from .problems import (
    BilevelProblem,
    CoefficientTuning,
    HyperRepresentation,
    make_coefficient_tuning_problem,
    make_hyper_representation_problem,
    make_quadratic_problem,
)
from .topology import MixingMatrix, TopologySpec, build_mixing_matrix

__all__ = ["load_config", "resolve", "RunBundle", "config_hash"]

_NUM = (int, float)

# section -> key -> (allowed types, required)
_SCHEMA = {
    "": {
        "variant": (str, False),
        "output_dir": (str, False),
        "init_scale": (_NUM, False),
    },
    "seeds": {"master": (int, False)},
    "topology": {
        "kind": (str, True),
        "m": (int, True),
        "p": (_NUM, False),
        "seed": (int, False),
        "custom_edges": (list, False),
    },
    "compressor": {
        "kind": (str, True),
        "ratio": (_NUM, False),
        "inner": (str, False),
    },
    "problem": {
        "family": (str, True),
        "dim_x": (int, False),
        "dim_y": (int, False),
        "coupling_spread": (_NUM, False),
        "target_spread": (_NUM, False),
        "n_samples": (int, False),
        "n_features": (int, False),
        "n_classes": (int, False),
        "hidden": (int, False),
        "ridge": (_NUM, False),
        "h": (_NUM, False),
        "val_fraction": (_NUM, False),
        "dataset_path": (str, False),
    },
    "schedule": {
        "eta_in": (_NUM, True),
        "eta_out": (_NUM, False),
        "gamma_in": (_NUM, True),
        "gamma_out": (_NUM, False),
        "lambda": (_NUM, False),
        "inner_steps": (int, False),
        "rounds": (int, True),
        "eps": (_NUM, False),
        "c_lambda": (_NUM, False),
        "c_steps": (_NUM, False),
        "c_eta": (_NUM, False),
        "c_gamma": (_NUM, False),
    },
}

_FAMILY_KEYS = {
    "quadratic": {"family", "dim_x", "dim_y", "coupling_spread", "target_spread"},
    "coefficient_tuning": {
        "family", "n_samples", "n_features", "n_classes", "h", "val_fraction", "dataset_path",
    },
    "hyper_representation": {
        "family", "n_samples", "n_features", "n_classes", "hidden", "ridge", "h",
        "val_fraction", "dataset_path",
    },
}

# defaults echoed into the effective config when a key is omitted
_FAMILY_DEFAULTS = {
    "quadratic": {"dim_x": 8, "dim_y": 6, "coupling_spread": 0.3, "target_spread": 0.5},
    "coefficient_tuning": {
        "n_samples": 2000, "n_features": 500, "n_classes": 10, "h": 0.8,
        "val_fraction": 0.5,
    },
    "hyper_representation": {
        "n_samples": 800, "n_features": 20, "n_classes": 8, "hidden": 8,
        "ridge": 1e-2, "h": 0.8, "val_fraction": 0.5,
    },
}


def load_config(path) -> dict:
    """Parse a TOML or JSON config file into a raw nested dict."""
    text_path = str(path)
    try:
        if text_path.endswith(".json"):
            with open(path) as fh:
                obj = json.load(fh)
            # a run summary embeds its effective config; accept it directly
            if isinstance(obj, dict) and "config" in obj and isinstance(obj["config"], dict):
                obj = obj["config"]
        else:
            try:
                import tomllib as toml
            except ImportError:
                import tomli as toml
            with open(path, "rb") as fh:
                obj = toml.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except ValueError as e:  # json.JSONDecodeError, TOMLDecodeError
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must be a table/object at top level")
    return obj


def _suggest(key: str, known) -> str:
    match = difflib.get_close_matches(key, list(known), n=1, cutoff=0.6)
    return f"; did you mean {match[0]!r}?" if match else ""


def _check_structure(raw: dict) -> list[str]:
    errors = []
    known_sections = {k for k in _SCHEMA if k} | set(_SCHEMA[""])
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in _SCHEMA or key == "":
                errors.append(f"unknown section [{key}]{_suggest(key, known_sections)}")
                continue
            for sub, sval in value.items():
                spec = _SCHEMA[key].get(sub)
                if spec is None:
                    errors.append(
                        f"unknown key {sub!r} in [{key}]{_suggest(sub, _SCHEMA[key])}"
                    )
                    continue
                types, _ = spec
                if isinstance(sval, bool) or not isinstance(sval, types):
                    if not (key == "topology" and sub == "custom_edges"):
                        errors.append(
                            f"[{key}] {sub} has wrong type {type(sval).__name__}"
                        )
        else:
            spec = _SCHEMA[""].get(key)
            if spec is None:
                errors.append(f"unknown key {key!r}{_suggest(key, known_sections)}")
                continue
            types, _ = spec
            if isinstance(value, bool) or not isinstance(value, types):
                errors.append(f"key {key} has wrong type {type(value).__name__}")
    for section, keys in _SCHEMA.items():
        if not section:
            continue
        present = raw.get(section, {})
        if not isinstance(present, dict):
            continue
        if section in ("seeds",):
            continue
        for key, (_, required) in keys.items():
            if required and key not in present:
                errors.append(f"missing required key {key!r} in [{section}]")
    return errors


def _build_compressor(section: dict, errors: list[str]) -> Compressor | None:
    kind = section.get("kind")
    if kind in ("top_k", "rand_k"):
        if "ratio" not in section:
            errors.append(f"[compressor] {kind} requires a ratio")
            return None
        try:
            return Compressor.top_k(float(section["ratio"])) if kind == "top_k" else Compressor.rand_k(float(section["ratio"]))
        except ConfigError as e:
            errors.append(str(e))
            return None
    if kind == "identity":
        return Compressor.identity()
    if kind == "rescaled":
        inner_kind = section.get("inner")
        if inner_kind not in ("top_k", "rand_k", "identity"):
            errors.append(
                "[compressor] rescaled requires inner = top_k, rand_k, or identity"
            )
            return None
        inner_section = {"kind": inner_kind, "ratio": section.get("ratio")}
        inner = _build_compressor(inner_section, errors)
        return None if inner is None else rescale_biased(inner)
    errors.append(
        f"[compressor] unknown kind {kind!r}; expected top_k, rand_k, identity, or rescaled"
    )
    return None


def _build_problem(section: dict, master_seed: int, errors: list[str], m: int):
    family = section.get("family")
    keys = _FAMILY_KEYS.get(family)
    if keys is None:
        errors.append(
            f"[problem] unknown family {section.get('family')!r}; expected "
            "quadratic, coefficient_tuning, or hyper_representation"
        )
        return None
    stray = set(section) - keys
    if stray:
        errors.append(
            f"[problem] keys {sorted(stray)} do not apply to family {family}"
        )
        return None
    try:
        if family == "quadratic":
            return make_quadratic_problem(
                m=m,
                dim_x=int(section.get("dim_x", 8)),
                dim_y=int(section.get("dim_y", 6)),
                seed=master_seed,
                coupling_spread=float(section.get("coupling_spread", 0.3)),
                target_spread=float(section.get("target_spread", 0.5)),
            )
        if family == "coefficient_tuning":
            if "dataset_path" in section:
                ds = read_dataset(section["dataset_path"])
                split = partition_heterogeneous(
                    ds.labels, m, float(section.get("h", 0.8)), master_seed
                )
                return CoefficientTuning(
                    ds, split, float(section.get("val_fraction", 0.5)), master_seed
                )
            return make_coefficient_tuning_problem(
                m=m,
                h=float(section.get("h", 0.8)),
                n_samples=int(section.get("n_samples", 2000)),
                n_features=int(section.get("n_features", 500)),
                n_classes=int(section.get("n_classes", 10)),
                seed=master_seed,
            )
        if "dataset_path" in section:
            ds = read_dataset(section["dataset_path"])
            split = partition_heterogeneous(
                ds.labels, m, float(section.get("h", 0.8)), master_seed
            )
            return HyperRepresentation(
                ds,
                split,
                hidden=int(section.get("hidden", 8)),
                ridge=float(section.get("ridge", 1e-2)),
                val_fraction=float(section.get("val_fraction", 0.5)),
                seed=master_seed,
            )
        return make_hyper_representation_problem(
            m=m,
            h=float(section.get("h", 0.8)),
            n_samples=int(section.get("n_samples", 800)),
            n_features=int(section.get("n_features", 20)),
            n_classes=int(section.get("n_classes", 8)),
            hidden=int(section.get("hidden", 8)),
            ridge=float(section.get("ridge", 1e-2)),
            seed=master_seed,
        )
    except (ConfigError, ValueError, OSError) as e:
        errors.append(f"[problem] {e}")
        return None


@dataclass
class RunBundle:
    """Everything needed to execute one run."""

    run_config: RunConfig
    problem: BilevelProblem
    mixing: MixingMatrix
    compressor: Compressor
    effective: dict
    hash: str
    output_dir: str
    advisories: list


def config_hash(effective: dict) -> str:
    scrubbed = {k: v for k, v in effective.items() if k != "output_dir"}
    blob = json.dumps(scrubbed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def resolve(raw: dict, variant_override: str | None = None, output_dir_override=None) -> RunBundle:
    """Validate a raw config dict and build the run objects.

    Raises ConfigError listing every problem found, before any
    simulation work starts.
    """
    errors = _check_structure(raw)
    if errors:
        raise ConfigError("; ".join(errors))

    variant = variant_override or raw.get("variant", "c2dfb")
    if variant not in VARIANTS:
        errors.append(f"variant must be one of {VARIANTS}, got {variant!r}")
    output_dir = str(output_dir_override or raw.get("output_dir", "runs"))
    master_seed = int(raw.get("seeds", {}).get("master", 0))

    topo_raw = dict(raw.get("topology", {}))
    topo_seed = int(topo_raw.get("seed", master_seed))
    mixing = None
    try:
        edges = topo_raw.get("custom_edges")
        spec = TopologySpec(
            kind=topo_raw.get("kind", ""),
            m=topo_raw.get("m", 0),
            p=topo_raw.get("p"),
            seed=topo_seed,
            custom_edges=None if edges is None else tuple(tuple(e) for e in edges),
        )
        mixing = build_mixing_matrix(spec)
    except ConfigError as e:
        errors.append(f"[topology] {e}")

    compressor = _build_compressor(dict(raw.get("compressor", {})), errors)

    problem = None
    if mixing is not None:
        problem = _build_problem(
            dict(raw.get("problem", {})), master_seed, errors, int(topo_raw["m"])
        )

    if errors:
        raise ConfigError("; ".join(errors))

    sched = dict(raw.get("schedule", {}))
    coeffs = ScheduleCoefficients(
        c_lambda=float(sched.get("c_lambda", 1.0)),
        c_steps=float(sched.get("c_steps", 1.0)),
        c_eta=float(sched.get("c_eta", 1.0)),
        c_gamma=float(sched.get("c_gamma", 1.0)),
    )
    eps = sched.get("eps")
    need_filling = [k for k in ("lambda", "inner_steps", "eta_out", "gamma_out") if k not in sched]
    if need_filling and eps is None:
        raise ConfigError(
            f"[schedule] missing {need_filling}; set them or provide eps to derive defaults"
        )
    if eps is not None and need_filling:
        lam_d, steps_d, eta_out_d, gamma_out_d = default_schedule(
            float(eps), problem.constants, mixing.spectral_gap, coeffs
        )
        sched.setdefault("lambda", lam_d)
        sched.setdefault("inner_steps", steps_d)
        sched.setdefault("eta_out", eta_out_d)
        sched.setdefault("gamma_out", gamma_out_d)

    family = raw["problem"]["family"]
    # coefficient tuning likes the deterministic zero start, but a zero
    # backbone is a stationary point of the representation family, so
    # that one must start off-origin
    default_init = {"quadratic": 0.5, "hyper_representation": 0.1}.get(family, 0.0)
    run_config = RunConfig(
        eta_in=float(sched["eta_in"]),
        eta_out=float(sched["eta_out"]),
        gamma_in=float(sched["gamma_in"]),
        gamma_out=float(sched["gamma_out"]),
        lam=float(sched["lambda"]),
        inner_steps=int(sched["inner_steps"]),
        rounds=int(sched["rounds"]),
        variant=variant,
        seed=master_seed,
        init_scale=float(raw.get("init_scale", default_init)),
        eps=None if eps is None else float(eps),
    )
    run_config.validate()

    effective = {
        "variant": variant,
        "output_dir": output_dir,
        "init_scale": run_config.init_scale,
        "seeds": {"master": master_seed},
        "topology": {
            "kind": topo_raw["kind"],
            "m": int(topo_raw["m"]),
            "seed": topo_seed,
            **({"p": float(topo_raw["p"])} if "p" in topo_raw else {}),
            **(
                {"custom_edges": [list(e) for e in topo_raw["custom_edges"]]}
                if "custom_edges" in topo_raw
                else {}
            ),
        },
        "compressor": {k: v for k, v in raw.get("compressor", {}).items()},
        "problem": {
            **{
                k: v
                for k, v in _FAMILY_DEFAULTS[family].items()
                if "dataset_path" not in raw["problem"] or k not in ("n_samples", "n_features", "n_classes")
            },
            **raw["problem"],
        },
        "schedule": {
            "eta_in": run_config.eta_in,
            "eta_out": run_config.eta_out,
            "gamma_in": run_config.gamma_in,
            "gamma_out": run_config.gamma_out,
            "lambda": run_config.lam,
            "inner_steps": run_config.inner_steps,
            "rounds": run_config.rounds,
            **({"eps": run_config.eps} if eps is not None else {}),
        },
    }
    return RunBundle(
        run_config=run_config,
        problem=problem,
        mixing=mixing,
        compressor=compressor,
        effective=effective,
        hash=config_hash(effective),
        output_dir=output_dir,
        advisories=run_config.advisories(problem.constants),
    )
