"""Command-line entry point: ``diffem {impute, genmask, eval, synth}``.

Exit codes are 0 on success, 1 for usage errors (bad flags, unreadable or
invalid config) and 2 for failures while running.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .emloop import EmConfig, impute_out_of_sample, run_em
from .errors import DiffemError
from .evalkit import SyntheticSpec, evaluate, split_indices, synth_generate
from .missingness import MaskSpec, generate_mask, read_mask_csv, write_mask_csv, write_mask_spec
from .ndcore import kernels
from .seeding import derive_rng, derive_seed
from .tabular import (
    TabularDataset,
    decode,
    encode,
    from_matrix,
    load_schema,
    numeric_matrix,
    read_csv,
    save_schema,
    write_csv,
)

log = logging.getLogger("diffem")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# EmConfig overrides applied before the user's config. "full" keeps the
# library defaults; "desk" is sized to finish on one CPU core in minutes.
PROFILES = {
    "full": {},
    "desk": {
        "hidden_dim": 128,
        "lr": 1e-3,
        "epochs": 300,
        "sampler": {"repeats": 5, "resample": 5},
    },
}

DEFAULT_MASK = {"mechanism": "MCAR", "ratio": 0.3}


def profile_config(profile: str = "desk", **overrides) -> EmConfig:
    """EmConfig for a named profile with optional field overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    return EmConfig.from_json(_merge(_merge(dataclasses.asdict(EmConfig()), PROFILES[profile]), overrides))


class UsageError(Exception):
    pass


# --- config handling ----------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _resolve_path(value, base: Path) -> str:
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def build_experiment(raw: dict, *, profile=None, seed=None, base_dir=Path(".")) -> dict:
    """Resolve an impute config to a fully explicit dict.

    Layering, later wins: library defaults, the profile, the config file,
    command-line flags. The result is what ``config.json`` records and is
    enough to replay the run.
    """
    known = {"profile", "seed", "data", "mask", "split_fraction", "em"}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    profile = profile or raw.get("profile", "full")
    if profile not in PROFILES:
        raise UsageError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    master = int(seed if seed is not None else raw.get("seed", 0))

    data = dict(raw.get("data") or {"synthetic": {}})
    if ("csv" in data) == ("synthetic" in data):
        raise UsageError("config 'data' needs exactly one of 'csv' or 'synthetic'")
    if "csv" in data:
        data["csv"] = _resolve_path(data["csv"], base_dir)
        if data.get("schema"):
            data["schema"] = _resolve_path(data["schema"], base_dir)
        for key in ("csv", "schema"):
            if data.get(key) and not Path(data[key]).exists():
                raise UsageError(f"data {key} not found: {data[key]}")
    else:
        try:
            data["synthetic"] = SyntheticSpec.from_json(data["synthetic"]).to_json()
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid synthetic spec: {exc}") from None

    mask = dict(raw.get("mask") or DEFAULT_MASK)
    if "path" in mask:
        mask = {"path": _resolve_path(mask["path"], base_dir)}
        if not Path(mask["path"]).exists():
            raise UsageError(f"mask file not found: {mask['path']}")
    else:
        try:
            spec = MaskSpec(**{**mask, "seed": derive_seed(master, "mask")})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid mask spec: {exc}") from None
        mask = spec.to_json()

    em_raw = _merge(_merge(dataclasses.asdict(EmConfig()), PROFILES[profile]), raw.get("em") or {})
    em_raw["seed"] = derive_seed(master, "em")
    em_raw.pop("workers", None)
    try:
        em = EmConfig.from_json(em_raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid em config: {exc}") from None

    fraction = float(raw.get("split_fraction", 0.7))
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"split_fraction must lie in (0, 1), got {fraction}")

    em_json = em.to_json()
    em_json.pop("workers")
    return {"profile": profile, "seed": master, "data": data, "mask": mask,
            "split_fraction": fraction, "em": em_json}


def _em_config(exp: dict, workers: int) -> EmConfig:
    return EmConfig.from_json({**exp["em"], "workers": workers})


# --- impute -----------------------------------------------------------------


def _load_data(exp: dict):
    data = exp["data"]
    if "synthetic" in data:
        ds, oracle = synth_generate(SyntheticSpec.from_json(data["synthetic"]))
        return ds, oracle
    specs = load_schema(data["schema"]) if data.get("schema") else None
    return read_csv(data["csv"], specs), None


def _complete_for_masking(ds: TabularDataset) -> np.ndarray:
    """Logistic mechanisms need complete inputs; cells already missing in
    the source get their column's observed mean (0 for an empty column,
    which encoding rejects later with a clear message)."""
    x = numeric_matrix(ds)
    obs = np.isfinite(x)
    counts = obs.sum(axis=0)
    means = np.where(obs, x, 0.0).sum(axis=0) / np.maximum(counts, 1)
    return np.where(obs, x, means)


def _mask_for(ds: TabularDataset, exp: dict) -> np.ndarray:
    if "path" in exp["mask"]:
        mask, header = read_mask_csv(exp["mask"]["path"])
        if header != ds.names or mask.shape != ds.missing.shape:
            raise ValueError(f"mask file {exp['mask']['path']} does not match the data's shape or header")
        return mask
    return generate_mask(_complete_for_masking(ds), MaskSpec.from_json(exp["mask"]))


def _column_stds(enc) -> list:
    return [float(enc.col_stds[a]) for a, _ in enc.spans]


def _metrics(pred: TabularDataset, truth: TabularDataset, eval_mask, stds):
    if not eval_mask.any():
        return None
    return evaluate(pred, truth, eval_mask, stds=stds).to_json()


def run_impute(exp: dict, out: Path, workers: int = 1) -> dict:
    cfg = _em_config(exp, workers)
    out.mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    t_start = time.perf_counter()

    ds, oracle = _load_data(exp)
    mask = _mask_for(ds, exp)
    write_mask_csv(mask, ds.names, out / "masks" / "mask.csv")
    if "path" not in exp["mask"]:
        write_mask_spec(MaskSpec.from_json(exp["mask"]), out / "masks" / "mask_spec.json")

    train_idx, test_idx = split_indices(ds.n_rows, exp["split_fraction"], derive_seed(exp["seed"], "split"))
    truth_train, truth_test = ds.take(train_idx), ds.take(test_idx)
    mask_train, mask_test = mask[train_idx], mask[test_idx]
    # score only cells hidden by the mask and known in the source
    eval_train = mask_train & ~truth_train.missing
    eval_test = mask_test & ~truth_test.missing

    enc_train = encode(truth_train.with_missing(mask_train))
    enc_test = encode(truth_test.with_missing(mask_test), reference=enc_train)
    stds = _column_stds(enc_train)

    result = run_em(enc_train, cfg, checkpoint_dir=out / "checkpoints")
    in_sample = []
    for k, snap in enumerate(result.snapshots):
        in_sample.append({"k": k, "metrics": _metrics(decode(snap), truth_train, eval_train, stds)})
    imputed_train = decode(result.imputed)

    t_test = time.perf_counter()
    if result.params is not None:
        test_filled = impute_out_of_sample(result.params, enc_test, cfg, derive_rng(exp["seed"], "test-estep"))
    else:
        test_filled = enc_test
    imputed_test = decode(test_filled)
    t_end = time.perf_counter()

    write_csv(imputed_train, out / "imputed_train.csv")
    write_csv(imputed_test, out / "imputed_test.csv")
    with open(out / "config.json", "w") as fh:
        json.dump(exp, fh, indent=2, sort_keys=True)
        fh.write("\n")

    report = {
        "diffem_version": __version__,
        "config": exp,
        "rows": {"train": int(len(train_idx)), "test": int(len(test_idx))},
        "missing_cells": {"train": int(eval_train.sum()), "test": int(eval_test.sum())},
        "in_sample": in_sample,
        "out_of_sample": _metrics(imputed_test, truth_test, eval_test, stds),
        "loss_traces": [[float(v) for v in tr] for tr in result.loss_traces],
        "em_history": result.history,
        "artifacts": {
            "config": "config.json",
            "imputed_train": "imputed_train.csv",
            "imputed_test": "imputed_test.csv",
            "mask": "masks/mask.csv",
            "checkpoints": "checkpoints",
        },
        "timings": {
            "kernel_backend": kernels.BACKEND,
            "workers": workers,
            "per_iteration": result.timings,
            "test_imputation_s": t_end - t_test,
            "total_s": t_end - t_start,
        },
    }
    if oracle is not None:
        truth_m = numeric_matrix(truth_train)
        oracle_pred = from_matrix(oracle.conditional_mean(truth_m, eval_train), names=truth_train.names)
        report["oracle"] = {
            "in_sample": _metrics(oracle_pred, truth_train, eval_train, stds),
            "parameters": oracle.to_json(),
        }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def cmd_impute(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    base = Path(args.config).resolve().parent if args.config else Path.cwd()
    exp = build_experiment(raw, profile=args.profile, seed=args.seed, base_dir=base)
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    report = run_impute(exp, Path(args.out), workers=args.workers)
    last = report["in_sample"][-1]["metrics"]
    print(json.dumps({"out": str(args.out), "in_sample_final": last,
                      "out_of_sample": report["out_of_sample"]}, sort_keys=True))
    return EXIT_OK


# --- genmask ----------------------------------------------------------------


def cmd_genmask(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    specs = load_schema(args.schema) if args.schema else None
    try:
        ds = read_csv(args.data, specs)
    except OSError as exc:
        raise UsageError(f"cannot read {args.data}: {exc.strerror}") from None
    observed = [int(c) for c in args.observed_cols.split(",")] if args.observed_cols else []
    seed = 0 if args.seed is None else args.seed
    try:
        MaskSpec(args.mechanism, args.ratio, seed, observed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    x = _complete_for_masking(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = MaskSpec(args.mechanism, args.ratio, derive_seed(seed, "genmask", i), observed,
                        ensure_observed=not args.allow_empty_rows)
        mask = generate_mask(x, spec)
        write_mask_csv(mask, ds.names, out / f"mask_{i:03d}.csv")
        write_mask_spec(spec, out / f"mask_{i:03d}.json")
        print(f"mask_{i:03d}.csv missing ratio {mask.mean():.4f}")
    return EXIT_OK


# --- eval -------------------------------------------------------------------


def cmd_eval(args) -> int:
    specs = load_schema(args.schema) if args.schema else None
    try:
        truth = read_csv(args.truth, specs)
        pred = read_csv(args.imputed, truth.specs)
        mask, header = read_mask_csv(args.mask)
    except OSError as exc:
        raise UsageError(f"cannot read input: {exc}") from None
    if header != truth.names:
        raise ValueError(f"mask header {header} does not match truth columns {truth.names}")
    if mask.shape != truth.missing.shape:
        raise ValueError(f"mask shape {mask.shape} does not match truth {truth.missing.shape}")
    report = evaluate(pred, truth, mask & ~truth.missing, space=args.space)
    text = report.dumps()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# --- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    obj = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    for key in ("family", "dim", "rows", "correlation"):
        val = getattr(args, key)
        if val is not None:
            obj[key] = val
    try:
        spec = SyntheticSpec.from_json(obj)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synthetic spec: {exc}") from None
    ds, oracle = synth_generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out / "data.csv")
    save_schema(ds.specs, out / "schema.json")
    with open(out / "oracle.json", "w") as fh:
        json.dump({"spec": spec.to_json(), "oracle": oracle.to_json()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {ds.n_rows} rows x {len(ds.specs)} columns to {out}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed; all others derive from it")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="diffem", description="Diffusion-model EM imputation for tabular data.")
    p.add_argument("--version", action="version", version=f"diffem {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    imp = sub.add_parser("impute", parents=[common], help="run EM imputation on train, impute test")
    imp.add_argument("--config", help="experiment JSON")
    imp.add_argument("--profile", choices=sorted(PROFILES), default=None)
    imp.add_argument("--workers", type=int, default=1, help="threads for E-step row blocks")
    imp.set_defaults(func=cmd_impute)

    gm = sub.add_parser("genmask", parents=[common], help="write seeded missingness masks for a CSV")
    gm.add_argument("--data", required=True)
    gm.add_argument("--schema")
    gm.add_argument("--mechanism", type=str.upper, choices=["MCAR", "MAR", "MNAR"], default="MCAR")
    gm.add_argument("--ratio", type=float, default=0.3)
    gm.add_argument("--observed-cols", default="", help="comma-separated column indices kept observed (MAR)")
    gm.add_argument("--count", type=int, default=1)
    gm.add_argument("--allow-empty-rows", action="store_true",
                    help="do not force one observed cell in fully masked rows")
    gm.set_defaults(func=cmd_genmask)

    ev = _Parser(add_help=False)
    ev.add_argument("--imputed", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--mask", required=True)
    ev.add_argument("--schema")
    ev.add_argument("--space", choices=["standardized", "raw"], default="standardized")
    ev.add_argument("--out", default=None, help="write the report JSON here as well")
    e = sub.add_parser("eval", parents=[ev], help="score imputed values against the truth")
    e.add_argument("-v", "--verbose", action="store_true")
    e.set_defaults(func=cmd_eval)

    sy = sub.add_parser("synth", parents=[common], help="sample a synthetic benchmark with its oracle")
    sy.add_argument("--config", help="SyntheticSpec JSON")
    sy.add_argument("--family", choices=["gaussian", "gaussian-mixture"], default=None)
    sy.add_argument("--dim", type=int, default=None)
    sy.add_argument("--rows", type=int, default=None)
    sy.add_argument("--correlation", type=float, default=None)
    sy.set_defaults(func=cmd_synth)
    return p


def _origin_module(exc) -> str:
    """Name of the innermost diffem module on the traceback, for error context."""
    name = "diffem"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("diffem.") and mod != "diffem.cli":
            name = mod.split(".", 1)[1]
    return name


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"diffem: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"diffem {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DiffemError, ValueError, FloatingPointError, RuntimeError, OSError, KeyError) as exc:
        module = _origin_module(exc)
        print(f"diffem {args.command}: {module}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
