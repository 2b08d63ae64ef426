"""Command-line front end: ``fwips <subcommand> ...``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ann, fla, pipelines, synth
from .radiomap import (EvalSet, Extent, RadioMap, RadioMapError, downsample, load_evalset,
                       load_radiomap, save_evalset, save_radiomap)

log = logging.getLogger("fwips")

NA = "NA"
METHODS = ("knn", "wknn", "bpnn-la", "rm-knn", "rm-wknn")
SWEEP_COLUMNS = ("row_type", "method", "g_s", "g_r", "layers", "widths", "k", "seed", "mean_m",
                 "std_m", "stop_reason", "epochs", "test_mse", "sigma_mean_m", "sigma_std_m",
                 "n_ok", "locally_optimal", "error")


class CliError(Exception):
    pass


def _widths(text: str) -> list[int]:
    try:
        widths = [int(w) for w in text.replace(",", " ").split()]
    except ValueError as exc:
        raise CliError(f"--widths expects integers, got {text!r}") from exc
    if not widths or min(widths) < 1:
        raise CliError("--widths needs at least one positive width")
    return widths


def _extent(text: str) -> Extent:
    vals = [float(v) for v in text.split(",")]
    if len(vals) % 2:
        raise CliError("--extent expects lower coordinates followed by upper coordinates")
    half = len(vals) // 2
    return Extent(tuple(vals[:half]), tuple(vals[half:]))


def _out_file(path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return NA
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- subcommands ---------------------------------------------------------

def cmd_synth(args) -> int:
    scene = synth.load_scene(args.config) if args.config else synth.SynthScene()
    if args.seed is not None:
        scene = scene.with_seed(args.seed)
    out = _out_dir(args.out)
    orm = synth.generate_orm(scene, grid_size=args.grid_size)
    vds = synth.generate_vds(scene, count=args.vds_count)
    save_radiomap(orm, out / "orm.csv")
    save_evalset(vds, out / "vds.csv")
    print(f"wrote {out / 'orm.csv'} (M={orm.M}, N={orm.N}) and {out / 'vds.csv'} (T={vds.T})")
    return 0


def cmd_downsample(args) -> int:
    trm = downsample(load_radiomap(args.map), args.grid_size)
    save_radiomap(trm, _out_file(args.out))
    print(f"wrote {args.out} (M={trm.M}, G={trm.grid_size:g})")
    return 0


def _training_config(args, task: str) -> ann.TrainingConfig:
    factory = ann.TrainingConfig.for_localization if task == "la" else ann.TrainingConfig.for_radio_map
    overrides = {"seed": args.seed}
    for name, attr in (("lr", "learning_rate"), ("max_epochs", "max_epochs"),
                       ("max_error", "max_error"), ("max_failed_validations", "max_failed_validations"),
                       ("batch_size", "batch_size")):
        value = getattr(args, name)
        if value is not None:
            overrides[attr] = value
    return factory(**overrides)


def _write_training_log(path: Path, outcome: ann.TrainingOutcome) -> None:
    lines = ["epoch,train_mse,valid_mse"]
    lines += [f"{i},{tr!r},{va!r}" for i, (tr, va) in enumerate(outcome.mse_history, start=1)]
    lines += [
        f"epochs_run={outcome.epochs_run}",
        f"selected_epoch={outcome.selected_epoch}",
        f"valid_mse={outcome.valid_mse!r}",
        f"test_mse={outcome.test_mse!r}",
        f"consistent={outcome.consistent}",
        f"attempts={outcome.attempts}",
        f"stop_reason={outcome.stop_reason}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _cmd_train(args, task: str) -> int:
    widths = _widths(args.widths)
    if args.layers is not None and args.layers != len(widths):
        raise CliError(f"--layers {args.layers} does not match {len(widths)} widths")
    trm = load_radiomap(args.map)
    config = _training_config(args, task)
    train = pipelines.train_la if task == "la" else pipelines.train_rm
    model = train(trm, widths, config)
    out = _out_file(args.out)
    pipelines.save_model(model, out)
    log_path = out.with_suffix(".log")
    _write_training_log(log_path, model.outcome)
    print(f"wrote {out} and {log_path}; stop_reason={model.outcome.stop_reason} "
          f"epochs={model.outcome.epochs_run} valid_mse={model.outcome.valid_mse:.4g}")
    return 0


def cmd_train_la(args) -> int:
    return _cmd_train(args, "la")


def cmd_train_rm(args) -> int:
    return _cmd_train(args, "rm")


def cmd_reconstruct(args) -> int:
    model = pipelines.load_model(args.model)
    if not isinstance(model, pipelines.RadioMapModel):
        raise CliError(f"{args.model} is not a radio-map model")
    extent = _extent(args.extent) if args.extent else None
    rrm = pipelines.reconstruct(model, args.grid_size, extent)
    save_radiomap(rrm, _out_file(args.out))
    print(f"wrote {args.out} (M={rrm.M}, G={rrm.grid_size:g})")
    return 0


def resolve_k(M: int, k: int | None, policy: str) -> int:
    bound = fla.k_upper_bound(M)
    if k is None:
        return bound
    if policy == "upper-bound" and k > bound:
        warnings.warn(f"k={k} exceeds floor(sqrt(M))={bound}; clamped", RuntimeWarning, stacklevel=2)
        return bound
    return k


def cmd_evaluate(args) -> int:
    vds = load_evalset(args.vds)
    if args.fla == "bpnn-la":
        if not args.model:
            raise CliError("--fla bpnn-la needs --model")
        model = pipelines.load_model(args.model)
        if not isinstance(model, pipelines.LocalizationModel):
            raise CliError(f"{args.model} is not a localization model")
        locator = model.locate
        k = None
    else:
        if not args.map:
            raise CliError(f"--fla {args.fla} needs --map")
        rm = load_radiomap(args.map)
        k = resolve_k(rm.M, args.k, args.k_policy)
        locator = fla.knn_locator(rm, k) if args.fla == "knn" else fla.wknn_locator(rm, k)
    report = fla.evaluate(locator, vds)
    out = _out_dir(args.out)
    report.to_csv(out / "report.csv")
    fla.cdf(report).to_csv(out / "cdf.csv")
    k_note = f" k={k}" if k is not None else ""
    print(f"{args.fla}{k_note}: mean_m={report.mean_m:.4f} std_m={report.std_m:.4f} T={vds.T}")
    return 0


# --- sweep ---------------------------------------------------------------

@dataclass
class ExperimentSpec:
    scene: str | None = None
    seed: int = 0
    grid_sizes: list[float] = field(default_factory=lambda: [0.25])
    reconstruction_grid_sizes: list[float] = field(default_factory=list)
    layers: list[int] = field(default_factory=lambda: [1])
    width_values: list[int] = field(default_factory=lambda: [9])
    widths: list[list[int]] | None = None
    replicates: int = 1
    methods: list[str] = field(default_factory=lambda: ["knn", "wknn", "bpnn-la"])
    k: int | None = None
    k_policy: str = "upper-bound"
    learning_rate: float | None = None
    max_epochs: int | None = None
    batch_size: int | None = None
    workers: int = 1
    out: str | None = None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise CliError(f"{path}: unknown keys {sorted(unknown)}")
        spec = cls(**data)
        if spec.scene is not None and not Path(spec.scene).is_absolute():
            spec.scene = str(path.parent / spec.scene)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.scene is not None and not Path(self.scene).exists():
            raise CliError(f"scene file {self.scene} does not exist")
        for name in ("grid_sizes", "layers", "methods"):
            if not getattr(self, name):
                raise CliError(f"experiment list {name!r} is empty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise CliError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if any(m.startswith("rm-") for m in self.methods) and not self.reconstruction_grid_sizes:
            raise CliError("rm-* methods need reconstruction_grid_sizes")
        if self.replicates < 1:
            raise CliError("replicates must be >= 1")
        if self.k_policy not in ("explicit", "upper-bound"):
            raise CliError("k_policy must be 'explicit' or 'upper-bound'")

    def width_configs(self) -> list[tuple[int, ...]]:
        if self.widths:
            return [tuple(int(w) for w in ws) for ws in self.widths]
        return [combo for L in self.layers for combo in itertools.product(self.width_values, repeat=L)]

    def training_config(self, task: str, seed: int) -> ann.TrainingConfig:
        factory = ann.TrainingConfig.for_localization if task == "la" else ann.TrainingConfig.for_radio_map
        overrides = {"seed": seed}
        for name in ("learning_rate", "max_epochs", "batch_size"):
            if getattr(self, name) is not None:
                overrides[name] = getattr(self, name)
        return factory(**overrides)


def _cells(spec: ExperimentSpec):
    """Every (method, G_S, G_R, widths, seed) in deterministic configuration order."""
    for method in spec.methods:
        for g_s in spec.grid_sizes:
            if method in ("knn", "wknn"):
                yield (method, g_s, None, None, None)
                continue
            g_rs = spec.reconstruction_grid_sizes if method.startswith("rm-") else [None]
            for g_r in g_rs:
                for widths in spec.width_configs():
                    for r in range(spec.replicates):
                        yield (method, g_s, g_r, widths, spec.seed + r)


def _run_cell(spec: ExperimentSpec, orm: RadioMap, vds: EvalSet, cell) -> dict:
    method, g_s, g_r, widths, seed = cell
    row = {"row_type": "replicate", "method": method, "g_s": g_s, "g_r": g_r,
           "layers": len(widths) if widths else None,
           "widths": "-".join(map(str, widths)) if widths else None, "seed": seed}
    try:
        trm = downsample(orm, g_s)
        outcome = None
        if method in ("knn", "wknn"):
            k = resolve_k(trm.M, spec.k, spec.k_policy)
            locator = fla.knn_locator(trm, k) if method == "knn" else fla.wknn_locator(trm, k)
            row["k"] = k
        elif method == "bpnn-la":
            model = pipelines.train_la(trm, widths, spec.training_config("la", seed))
            locator, outcome = model.locate, model.outcome
        else:
            model = pipelines.train_rm(trm, widths, spec.training_config("rm", seed))
            rrm = pipelines.reconstruct(model, g_r)
            k = resolve_k(rrm.M, spec.k, spec.k_policy)
            locator = fla.knn_locator(rrm, k) if method == "rm-knn" else fla.wknn_locator(rrm, k)
            row["k"] = k
            outcome = model.outcome
        report = fla.evaluate(locator, vds)
        row.update(mean_m=report.mean_m, std_m=report.std_m)
        if outcome is not None:
            row.update(stop_reason=str(outcome.stop_reason), epochs=outcome.epochs_run,
                       test_mse=outcome.test_mse)
    except (ValueError, RadioMapError, ann.TrainingError, FloatingPointError) as exc:
        row["error"] = str(exc).replace(",", ";").replace("\n", " ")
    return row


def _aggregate(rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["method"], row["g_s"], row["g_r"], row["widths"])
        groups.setdefault(key, []).append(row)
    aggregates = []
    for (method, g_s, g_r, widths), members in groups.items():
        ok = [r for r in members if r.get("error") is None]
        means = [r["mean_m"] for r in ok]
        stds = [r["std_m"] for r in ok]
        agg = {"row_type": "aggregate", "method": method, "g_s": g_s, "g_r": g_r,
               "layers": members[0]["layers"], "widths": widths, "k": members[0].get("k"),
               "n_ok": len(ok)}
        if ok:
            agg["mean_m"] = float(np.mean(means))
            agg["std_m"] = float(np.mean(stds))
            agg["sigma_mean_m"] = pipelines.replicate_spread(means)
            agg["sigma_std_m"] = pipelines.replicate_spread(stds)
        else:
            agg["error"] = "all replicates failed"
        aggregates.append(agg)
    best: dict[tuple, dict] = {}
    for agg in aggregates:
        if agg.get("mean_m") is None:
            continue
        key = (agg["method"], agg["g_s"], agg["g_r"], agg["layers"])
        if key not in best or agg["mean_m"] < best[key]["mean_m"]:
            best[key] = agg
    for agg in aggregates:
        agg["locally_optimal"] = int(any(agg is b for b in best.values()))
    return aggregates


def run_sweep(spec: ExperimentSpec, out_dir: Path) -> Path:
    scene = synth.load_scene(spec.scene) if spec.scene else synth.SynthScene()
    scene = scene.with_seed(spec.seed)
    orm = synth.generate_orm(scene)
    vds = synth.generate_vds(scene)
    cells = list(_cells(spec))
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_run_cell, itertools.repeat(spec), itertools.repeat(orm),
                                 itertools.repeat(vds), cells))
    else:
        rows = [_run_cell(spec, orm, vds, c) for c in cells]
    rows += _aggregate(rows)
    out = out_dir / "results.csv"
    lines = [",".join(SWEEP_COLUMNS)]
    lines += [",".join(_fmt(r.get(c)) for c in SWEEP_COLUMNS) for r in rows]
    out.write_text("\n".join(lines) + "\n", encoding="ascii")
    return out


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    if args.workers is not None:
        spec.workers = args.workers
    if args.replicates is not None:
        spec.replicates = args.replicates
    out_dir = args.out or spec.out
    if not out_dir:
        raise CliError("no output directory: pass --out or set 'out' in the spec")
    path = run_sweep(spec, _out_dir(out_dir))
    print(f"wrote {path}")
    return 0


# --- parser --------------------------------------------------------------

def _add_training_flags(p):
    p.add_argument("--map", required=True, help="training radio map CSV")
    p.add_argument("--layers", type=int, help="number of hidden layers (checked against --widths)")
    p.add_argument("--widths", required=True, help="hidden layer widths, e.g. '9' or '12,6'")
    p.add_argument("--lr", type=float, help="learning rate (default 0.05)")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--max-error", type=float, help="validation MSE target in m^2 or dB^2")
    p.add_argument("--max-failed-validations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file; the training log goes next to it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fwips", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate an ORM and a validation set from a scene")
    p.add_argument("--config", help="scene key=value file (default scene when omitted)")
    p.add_argument("--seed", type=int, help="overrides the scene seed")
    p.add_argument("--grid-size", type=float, help="ORM grid size in m^2")
    p.add_argument("--vds-count", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("downsample", help="derive a coarser training map")
    p.add_argument("--map", required=True)
    p.add_argument("--grid-size", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("train-la", help="train a localization network")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train_la)

    p = sub.add_parser("train-rm", help="train a radio-map network")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train_rm)

    p = sub.add_parser("reconstruct", help="predict a radio map on a new grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid-size", type=float, required=True)
    p.add_argument("--extent", help="lower then upper coordinates, e.g. 0,0,20,15")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="positioning errors of a locator on a validation set")
    p.add_argument("--vds", required=True)
    p.add_argument("--fla", choices=("knn", "wknn", "bpnn-la"), default="knn")
    p.add_argument("--map", help="radio map for knn/wknn")
    p.add_argument("--model", help="localization model for bpnn-la")
    p.add_argument("--k", type=int)
    p.add_argument("--k-policy", choices=("explicit", "upper-bound"), default="upper-bound")
    p.add_argument("--out", required=True, help="output directory for report.csv and cdf.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="parameter sweep with replicate statistics")
    p.add_argument("--spec", required=True, help="experiment JSON file")
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory (overrides the spec)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, RadioMapError, ValueError, OSError, ann.TrainingError) as exc:
        print(f"fwips {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
