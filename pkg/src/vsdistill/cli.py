"""Command-line entry point: ``vsdistill <subcommand> [flags]``.

Every subcommand reads an optional JSON config, applies flag overrides on top
of it and writes its artifacts plus a ``run.json`` provenance record into
``--out``. Outputs depend only on (config, seed), so reruns byte-match.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import (coreset_herding, coreset_kcenter, coreset_random, distill_dm_pixels,
                        feature_model)
from .dataio import ShapeSpec, generate_moving_shapes, read_set, write_set
from .evalkit import (EvalConfig, emit_report, evaluate_synthetic, fingerprint, gain_correlation,
                      per_class_gain, redundancy_by_class, run_ablation, summary_rows)
from .idtd import DistillConfig, distill, write_loss_log

METHODS = ("idtd", "dm", "random", "herding", "kcenter")


class CliError(Exception):
    """Bad input detected by the command layer itself."""


@dataclass
class RunConfig:
    """Settings shared by the distill, baseline, eval and ablate subcommands.

    ``distill`` and ``eval`` hold any further :class:`DistillConfig` and
    :class:`EvalConfig` keys; the named fields here take precedence.
    """
    method: str = "idtd"
    ipc: int = 1
    K: int = 8
    alpha1: float = 0.05
    alpha2: float = 1e-4
    lr: float = 0.01
    iterations: int = 200
    T_syn: int = 16
    T_real: int = 16
    eval_seeds: tuple[int, ...] = (0, 1, 2)
    seed: int = 0
    feature_epochs: int = 20
    variants: tuple[str, ...] = ("full", "compress-and-stitch", "no-pool", "no-fusor")
    distill: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise CliError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("ipc", "K", "lr", "T_syn", "T_real"):
            if not getattr(self, name) > 0:
                raise CliError(f"{name} must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0 or self.iterations < 0 or self.feature_epochs < 0:
            raise CliError("alpha1, alpha2, iterations and feature_epochs must be non-negative")
        if not self.eval_seeds or len(set(self.eval_seeds)) != len(self.eval_seeds):
            raise CliError("eval_seeds must be a non-empty list of distinct integers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_seeds"] = list(self.eval_seeds)
        d["variants"] = list(self.variants)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise CliError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        for key in ("eval_seeds", "variants"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def distill_config(self, threads: int = 1) -> DistillConfig:
        base = DistillConfig.from_dict(self.distill)
        return DistillConfig.from_dict({**base.to_dict(), "ipc": self.ipc, "K": self.K,
                                        "alpha1": self.alpha1, "alpha2": self.alpha2, "lr": self.lr,
                                        "iterations": self.iterations, "T_syn": self.T_syn,
                                        "T_real": self.T_real, "threads": threads})

    def eval_config(self) -> EvalConfig:
        cfg = EvalConfig.from_dict(self.eval)
        cfg.train.frames = self.T_real
        return cfg


# -- plumbing -------------------------------------------------------------------

def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        body = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    if not isinstance(body, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return body


def _overrides(args, names) -> dict:
    return {k: getattr(args, k) for k in names if getattr(args, k, None) is not None}


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _threads(args) -> int:
    value = args.threads if args.threads is not None else os.environ.get("VDS_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise CliError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise CliError("thread count must be >= 1")
    return n


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_provenance(out: Path, command: str, config: dict, seeds, inputs=None) -> None:
    record = {
        "command": command,
        "config": config,
        "fingerprint": fingerprint(config),
        "seeds": list(seeds),
        "inputs": {k: str(v) for k, v in sorted((inputs or {}).items())},
        "versions": {"vsdistill": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    (out / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def _run_config(args, extra=()) -> RunConfig:
    names = ("method", "ipc", "K", "alpha1", "alpha2", "lr", "iterations", "T_syn", "T_real",
             "eval_seeds", "seed", "feature_epochs", "variants") + tuple(extra)
    merged = {**_load_json(args.config), **_overrides(args, names)}
    cfg = RunConfig.from_dict(merged)
    cfg.validate()
    return cfg


# -- subcommands ----------------------------------------------------------------

def cmd_gen_data(args) -> None:
    merged = {**_load_json(args.config)}
    seed = args.seed if args.seed is not None else merged.pop("seed", 0)
    merged.pop("seed", None)
    spec = ShapeSpec.from_dict(merged)
    spec.validate()
    train, test = generate_moving_shapes(spec, seed)
    out = _out_dir(args)
    write_set(out / "train", train)
    write_set(out / "test", test)
    _write_provenance(out, "gen-data", {**spec.to_dict(), "seed": seed}, [seed])


def cmd_distill(args) -> None:
    run = _run_config(args)
    if run.method not in ("idtd", "dm"):
        raise CliError(f"distill supports idtd and dm, not {run.method!r}; use baseline")
    cfg = run.distill_config(_threads(args))
    train = read_set(args.data)
    fn = distill if run.method == "idtd" else distill_dm_pixels
    syn, log = fn(train, cfg, run.seed)
    out = _out_dir(args)
    write_set(out / "synset", syn)
    write_loss_log(out / "loss.csv", log)
    _write_provenance(out, "distill", {**run.to_dict(), "resolved": cfg.to_dict()}, [run.seed],
                      {"data": args.data})


def cmd_baseline(args) -> None:
    run = _run_config(args)
    train = read_set(args.data)
    if run.method == "random":
        result = coreset_random(train, run.ipc, run.seed)
    elif run.method in ("herding", "kcenter"):
        model = feature_model(train, run.seed, epochs=run.feature_epochs, frames=run.T_real,
                              train_cfg=run.eval_config().train)
        select = coreset_herding if run.method == "herding" else coreset_kcenter
        result = select(train, run.ipc, model, frames=run.T_real, feature_seed=run.seed)
    else:
        raise CliError(f"baseline supports random, herding and kcenter, not {run.method!r}")
    out = _out_dir(args)
    (out / "coreset.json").write_text(result.to_json() + "\n")
    write_set(out / "synset", result.subset(train))
    _write_provenance(out, "baseline", run.to_dict(), [run.seed], {"data": args.data})


def cmd_eval(args) -> None:
    run = _run_config(args)
    cfg = run.eval_config()
    syn, test = read_set(args.syn), read_set(args.test)
    result = evaluate_synthetic(syn, test, cfg, list(run.eval_seeds))
    out = _out_dir(args)
    emit_report(result.eval_rows(), out / "eval.csv", "csv", "eval")
    emit_report([{"variant": args.label, "mean": result.mean, "std": result.std,
                  "n_seeds": len(result.seeds)}], out / "summary.csv", "csv", "summary")
    per_class = [{"class": n, "accuracy": float(a)} for n, a in enumerate(result.class_mean)]
    (out / "per_class.json").write_text(json.dumps(per_class, indent=1) + "\n")
    _write_provenance(out, "eval", {**run.to_dict(), "resolved": cfg.to_dict()}, run.eval_seeds,
                      {"syn": args.syn, "test": args.test})
    print(f"{args.label}: {100 * result.mean:.2f} +/- {100 * result.std:.2f} over {len(result.seeds)} seeds")


def cmd_ablate(args) -> None:
    run = _run_config(args)
    cfg = run.distill_config(_threads(args))
    train, test = read_set(Path(args.data) / "train"), read_set(Path(args.data) / "test")
    rows = run_ablation(cfg, run.variants, train, test, run.eval_config(), list(run.eval_seeds), run.seed)
    out = _out_dir(args)
    emit_report(summary_rows(rows), out / "ablation.csv", "csv", "summary")
    for row in rows:
        write_set(out / "synsets" / row["variant"], row["synthetic"])
    _write_provenance(out, "ablate", {**run.to_dict(), "resolved": cfg.to_dict()}, run.eval_seeds,
                      {"data": args.data})
    for row in summary_rows(rows):
        print(f"{row['variant']}: {100 * row['mean']:.2f} +/- {100 * row['std']:.2f}")


def _per_class(path) -> list[float]:
    try:
        rows = json.loads(Path(path).read_text())
        return [float(r["accuracy"]) for r in sorted(rows, key=lambda r: r["class"])]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(f"cannot read per-class accuracies from {path}: {exc}") from None


def cmd_analyze(args) -> None:
    run = _run_config(args)
    train = read_set(args.data)
    acc_a, acc_b = _per_class(args.acc_a), _per_class(args.acc_b)
    model = feature_model(train, run.seed, epochs=run.feature_epochs, frames=run.T_real,
                          train_cfg=run.eval_config().train)
    score = redundancy_by_class(model, train, frames=run.T_real, symmetric=args.symmetric)
    rows = per_class_gain(acc_a, acc_b, score)
    rho = gain_correlation(rows)
    out = _out_dir(args)
    emit_report(rows, out / "gain.csv", "csv", "gain")
    (out / "correlation.json").write_text(json.dumps({"spearman": None if np.isnan(rho) else rho,
                                                       "classes": len(rows)}, indent=1) + "\n")
    _write_provenance(out, "analyze", {**run.to_dict(), "symmetric": args.symmetric}, [run.seed],
                      {"data": args.data, "acc_a": args.acc_a, "acc_b": args.acc_b})
    print(f"spearman(R_t + R_IC, gain) = {rho:.4f} over {len(rows)} classes")


# -- argument parsing -------------------------------------------------------------

def _common(p: argparse.ArgumentParser, run_flags: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="cap on module parallelism (fallback: VDS_THREADS, then 1)")
    if not run_flags:
        return
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--ipc", type=int, help="synthetic videos per class")
    p.add_argument("--K", type=int, help="segments per synthetic video")
    p.add_argument("--alpha1", type=float, help="selector matching weight")
    p.add_argument("--alpha2", type=float, help="diversity weight")
    p.add_argument("--lr", type=float, help="distillation learning rate")
    p.add_argument("--iterations", type=int, help="outer distillation iterations")
    p.add_argument("--T-syn", dest="T_syn", type=int, help="synthetic clip length")
    p.add_argument("--T-real", dest="T_real", type=int, help="real and evaluation clip length")
    p.add_argument("--seeds", dest="eval_seeds", type=_int_list, help="evaluation seeds, e.g. 0,1,2")
    p.add_argument("--feature-epochs", type=int, help="epochs for the coreset/analysis feature student")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsdistill", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"vsdistill {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the moving-shapes toy dataset")
    _common(p, run_flags=False)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("distill", help="run IDTD (or DM on pixels) on a training set")
    _common(p)
    p.add_argument("--data", required=True, help="training set directory")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("baseline", help="select a random, herding or k-center coreset")
    _common(p)
    p.add_argument("--data", required=True, help="training set directory")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="train students on a synthetic set and test them")
    _common(p)
    p.add_argument("--syn", required=True, help="synthetic set directory")
    p.add_argument("--test", required=True, help="test set directory")
    p.add_argument("--label", default="synthetic", help="row name in summary.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="distill and evaluate several variants with shared seeds")
    _common(p)
    p.add_argument("--data", required=True, help="directory holding train/ and test/")
    p.add_argument("--variants", type=_str_list, help="comma-separated variant tags")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="per-class gain against redundancy of the real data")
    _common(p)
    p.add_argument("--data", required=True, help="training set directory")
    p.add_argument("--acc-a", required=True, help="per_class.json of the method under study")
    p.add_argument("--acc-b", required=True, help="per_class.json of the reference method")
    p.add_argument("--symmetric", action="store_true", help="normalise R_IC like R_t")
    p.set_defaults(func=cmd_analyze)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its diagnostic
        return int(exc.code or 0)
    try:
        args.func(args)
    except (CliError, ValueError, OSError, TypeError) as exc:
        print(f"vsdistill {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
