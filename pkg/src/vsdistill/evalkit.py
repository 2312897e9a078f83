"""Train-on-synthetic evaluation, redundancy scores, ablation harness and reports."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .baselines import class_features
from .dataio import VideoSet
from .idtd import DistillConfig, distill
from .student import (ArchConfig, StudentModel, TrainConfig, init_student, per_class_accuracy,
                      temporal_features, train_classifier)

SCHEMAS = {
    "eval": ("seed", "accuracy"),
    "summary": ("variant", "mean", "std", "n_seeds"),
    "gain": ("class", "R_t", "R_IC", "gain"),
}

ABLATION_VARIANTS = {
    # tag: overrides applied to the base distill config
    "full": {},
    "compress-and-stitch": {"variant": "compress-and-stitch"},
    "no-pool": {"variant": "no-pool"},
    "no-fusor": {"variant": "no-fusor"},
    "fusor-loss-only": {"selector_matching": False, "diversity": False},
    "+diversity": {"selector_matching": False},
    "+selector-matching": {"diversity": False},
}


def fingerprint(payload) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class EvalResult:
    seeds: list[int]
    accuracies: list[float]
    per_class: list[list[float]]  # [seed][class]
    fingerprint: str = ""

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("evaluation seeds must be distinct")

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def class_mean(self) -> np.ndarray:
        return np.mean(np.asarray(self.per_class), axis=0)

    def eval_rows(self) -> list[dict]:
        return [{"seed": s, "accuracy": a} for s, a in zip(self.seeds, self.accuracies)]


@dataclass
class EvalConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    precision: str = "float32"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        d = dict(d)
        train = dict(d.pop("train", {}))
        if "betas" in train:
            train["betas"] = tuple(train["betas"])
        train = TrainConfig(**train)
        return cls(train=train, **d)


def evaluate_synthetic(syn_set: VideoSet, test_set: VideoSet, cfg: EvalConfig, seeds) -> EvalResult:
    """Train a fresh student per seed on ``syn_set`` and score it on ``test_set``."""
    if syn_set.num_classes != test_set.num_classes:
        raise ValueError(f"label spaces differ: {syn_set.num_classes} vs {test_set.num_classes} classes")
    if syn_set.frame_shape() != test_set.frame_shape():
        raise ValueError(f"frame shapes differ: {syn_set.frame_shape()} vs {test_set.frame_shape()}")
    seeds = [int(s) for s in seeds]
    C, H, W = test_set.frame_shape()
    arch = ArchConfig(num_classes=test_set.num_classes, in_channels=C, height=H, width=W)
    accs, per_class = [], []
    for seed in seeds:
        model = init_student(arch, seed, np.dtype(cfg.precision))
        model, _ = train_classifier(model, syn_set, cfg.train, np.random.default_rng(seed))
        pc = per_class_accuracy(model, test_set, cfg.train.frames)
        hits = pc * np.bincount(test_set.labels, minlength=test_set.num_classes)
        accs.append(float(hits.sum() / len(test_set)))
        per_class.append([float(x) for x in pc])
    fp = fingerprint({"eval": cfg.to_dict(), "seeds": seeds, "syn": len(syn_set)})
    return EvalResult(seeds, accs, per_class, fp)


# -- redundancy ---------------------------------------------------------------

def _tanh_reciprocal(mean_var: float) -> float:
    if mean_var <= 0.0:
        return 1.0
    return float(np.tanh(1.0 / mean_var))


def temporal_redundancy(F_t) -> float:
    """``tanh(1 / mean_b var_t(F_t[b]))`` with the per-sample variance averaged over feature dims."""
    F_t = np.asarray(F_t, dtype=np.float64)
    if F_t.ndim != 3 or F_t.shape[0] < 1:
        raise ValueError(f"F_t must be [B][t][d], got {F_t.shape}")
    if F_t.shape[1] < 2:
        raise ValueError("temporal redundancy needs t >= 2")
    per_sample = F_t.var(axis=1).mean(axis=1)
    return _tanh_reciprocal(float(per_sample.mean()))


def inter_sample_redundancy(F_IC, symmetric: bool = False) -> float:
    """``tanh(1 / ((1/B) * var_b(F_IC)))``, variance averaged over feature dims.

    ``symmetric=True`` drops the ``1/B`` factor so the form matches the
    temporal score, for sensitivity checks.
    """
    F_IC = np.asarray(F_IC, dtype=np.float64)
    if F_IC.ndim != 2:
        raise ValueError(f"F_IC must be [B][d], got {F_IC.shape}")
    B = F_IC.shape[0]
    if B < 2:
        raise ValueError("inter-sample redundancy needs B >= 2")
    var = float(F_IC.var(axis=0).mean())
    return _tanh_reciprocal(var if symmetric else var / B)


@dataclass
class RedundancyScore:
    R_t: list[float]
    R_IC: list[float]
    B: int


def redundancy_by_class(model: StudentModel, videos: VideoSet, frames: int = 16,
                        max_per_class: int | None = None, symmetric: bool = False) -> RedundancyScore:
    r_t, r_ic = [], []
    B = None
    for n in range(videos.num_classes):
        idx = videos.class_indices(n)
        if max_per_class is not None:
            idx = idx[:max_per_class]
        batch = videos.stacked(frames, idx).astype(model.dtype)
        r_t.append(temporal_redundancy(temporal_features(model, batch).value))
        _, feats = class_features(model, videos, n, frames)
        r_ic.append(inter_sample_redundancy(feats[:len(idx)], symmetric=symmetric))
        B = len(idx) if B is None else min(B, len(idx))
    return RedundancyScore(r_t, r_ic, int(B))


def per_class_gain(acc_a, acc_b, redundancy: RedundancyScore) -> list[dict]:
    """One row per class: redundancy scores and ``acc_a - acc_b``."""
    acc_a, acc_b = np.asarray(acc_a, dtype=float), np.asarray(acc_b, dtype=float)
    if acc_a.shape != acc_b.shape or len(acc_a) != len(redundancy.R_t):
        raise ValueError("per-class tables cover different class sets")
    return [{"class": n, "R_t": redundancy.R_t[n], "R_IC": redundancy.R_IC[n],
             "gain": float(acc_a[n] - acc_b[n])} for n in range(len(acc_a))]


def gain_correlation(rows: list[dict]) -> float:
    """Spearman rank correlation between ``R_t + R_IC`` and gain."""
    x = [r["R_t"] + r["R_IC"] for r in rows]
    y = [r["gain"] for r in rows]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return float("nan")
    return float(spearmanr(x, y).statistic)


# -- ablation -----------------------------------------------------------------

def variant_config(base: DistillConfig, tag: str) -> DistillConfig:
    """Distill config for an ablation tag; ``tsyn-<T>`` sweeps the synthetic length."""
    if tag in ABLATION_VARIANTS:
        return replace(base, **ABLATION_VARIANTS[tag])
    if tag.startswith("tsyn-"):
        try:
            T = int(tag[5:])
        except ValueError:
            raise ValueError(f"unknown variant {tag!r}") from None
        return replace(base, T_syn=T, T_pool=None)
    raise ValueError(f"unknown variant {tag!r}; expected one of {sorted(ABLATION_VARIANTS)} or tsyn-<T>")


def run_ablation(base: DistillConfig, variants, train_set: VideoSet, test_set: VideoSet,
                 eval_cfg: EvalConfig, seeds, distill_seed: int = 0) -> list[dict]:
    """Distill and evaluate each variant with shared seeds.

    Returns rows ``{"variant", "result", "synthetic"}`` in request order.
    """
    configs = [(tag, variant_config(base, tag)) for tag in variants]
    rows = []
    for tag, cfg in configs:
        syn, _ = distill(train_set, cfg, distill_seed)
        rows.append({"variant": tag, "result": evaluate_synthetic(syn, test_set, eval_cfg, seeds),
                     "synthetic": syn})
    return rows


def summary_rows(rows: list[dict]) -> list[dict]:
    return [{"variant": r["variant"], "mean": r["result"].mean, "std": r["result"].std,
             "n_seeds": len(r["result"].seeds)} for r in rows]


# -- reports --------------------------------------------------------------------

def _render(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            return "NaN"
        return f"{float(value):.4f}"
    return str(value)


def emit_report(rows: list[dict], path, fmt: str, schema: str) -> Path:
    """Write rows under a documented schema as CSV or JSON.

    Columns follow the schema order and floats use four decimals, so
    re-emitting the same rows gives identical bytes.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    if schema not in SCHEMAS:
        raise ValueError(f"unknown report schema {schema!r}")
    cols = SCHEMAS[schema]
    for r in rows:
        missing = set(cols) - set(r)
        if missing:
            raise ValueError(f"row lacks columns {sorted(missing)}")
    path = Path(path)
    if fmt == "csv":
        lines = [",".join(cols)] + [",".join(_render(r[c]) for c in cols) for r in rows]
        path.write_text("\n".join(lines) + "\n")
        return path
    body = []
    for r in rows:
        fields_ = []
        for c in cols:
            v = r[c]
            text = json.dumps(v) if isinstance(v, str) else _render(v)
            fields_.append(f"{json.dumps(c)}: {text}")
        body.append("  {" + ", ".join(fields_) + "}")
    path.write_text('{"schema": ' + json.dumps(schema) + ', "columns": ' + json.dumps(list(cols))
                    + ', "rows": [\n' + ",\n".join(body) + "\n]}\n")
    return path


def read_report(path, fmt: str) -> list[dict]:
    path = Path(path)
    if fmt == "json":
        return json.loads(path.read_text())["rows"]
    lines = path.read_text().splitlines()
    cols = lines[0].split(",")
    out = []
    for line in lines[1:]:
        vals = []
        for v in line.split(","):
            try:
                vals.append(int(v))
            except ValueError:
                try:
                    vals.append(float(v))
                except ValueError:
                    vals.append(v)
        out.append(dict(zip(cols, vals)))
    return out
