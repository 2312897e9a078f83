"""Coreset baselines (random, herding, k-center) and the raw-pixel DM baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .dataio import VideoSet
from .idtd import DistillConfig, distill
from .student import ArchConfig, StudentModel, TrainConfig, features, init_student, train_classifier


@dataclass
class CoresetResult:
    method: str
    M: int
    indices: list[list[int]]  # per class, positions into the source VideoSet
    feature_seed: int | None = None

    def to_json(self) -> str:
        body = {"method": self.method, "M": self.M,
                "classes": [{"class": n, "indices": [int(i) for i in idx]}
                            for n, idx in enumerate(self.indices)]}
        if self.feature_seed is not None:
            body["feature_seed"] = self.feature_seed
        return json.dumps(body, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CoresetResult":
        d = json.loads(text)
        classes = sorted(d["classes"], key=lambda c: c["class"])
        return cls(d["method"], int(d["M"]), [list(c["indices"]) for c in classes], d.get("feature_seed"))

    def subset(self, videos: VideoSet) -> VideoSet:
        picked = [videos.samples[i] for idx in self.indices for i in idx]
        return VideoSet(picked, videos.num_classes, "coreset", videos.seed)


def coreset_random(videos: VideoSet, M: int, seed: int) -> CoresetResult:
    """Uniform sampling without replacement within each class."""
    out = []
    for n in range(videos.num_classes):
        idx = videos.class_indices(n)
        if len(idx) == 0:
            raise ValueError(f"class {n} has no samples")
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n,)))
        out.append([int(i) for i in rng.choice(idx, size=M, replace=len(idx) < M)])
    return CoresetResult("random", M, out)


def herding_select(feats: np.ndarray, M: int) -> list[int]:
    """Greedy mean matching: each step adds the unused row that brings the
    running mean closest to the full mean. Ties go to the lowest row."""
    feats = np.asarray(feats, dtype=np.float64)
    target = feats.mean(axis=0)
    chosen: list[int] = []
    acc = np.zeros_like(target)
    for _ in range(M):
        unused = np.ones(len(feats), dtype=bool)
        if len(chosen) < len(feats):
            unused[chosen] = False
        cand = (acc + feats) / (len(chosen) + 1)
        dist = np.linalg.norm(cand - target, axis=1)
        dist[~unused] = np.inf
        best = int(np.argmin(dist))
        chosen.append(best)
        acc += feats[best]
    return chosen


def kcenter_select(feats: np.ndarray, M: int) -> list[int]:
    """Start from the row nearest the mean, then repeatedly add the row farthest
    from its nearest chosen row. Ties go to the lowest row."""
    feats = np.asarray(feats, dtype=np.float64)
    n = len(feats)
    first = int(np.argmin(np.linalg.norm(feats - feats.mean(axis=0), axis=1)))
    chosen = [first]
    nearest = np.linalg.norm(feats - feats[first], axis=1)
    while len(chosen) < M:
        score = nearest.copy()
        if len(chosen) < n:
            score[chosen] = -np.inf
        best = int(np.argmax(score))
        chosen.append(best)
        nearest = np.minimum(nearest, np.linalg.norm(feats - feats[best], axis=1))
    return chosen


def covering_radius(feats: np.ndarray, chosen) -> float:
    d = np.linalg.norm(feats[:, None, :] - feats[None, list(chosen), :], axis=2)
    return float(d.min(axis=1).max())


def class_features(model: StudentModel, videos: VideoSet, n: int, frames: int = 16,
                   chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    idx = videos.class_indices(n)
    rows = []
    for i in range(0, len(idx), chunk):
        batch = videos.stacked(frames, idx[i:i + chunk]).astype(model.dtype)
        rows.append(features(model, batch).value)
    return idx, np.concatenate(rows)


def _feature_coreset(method, select, videos, M, model, frames, feature_seed):
    out = []
    for n in range(videos.num_classes):
        idx, feats = class_features(model, videos, n, frames)
        if len(idx) == 0:
            raise ValueError(f"class {n} has no samples")
        out.append([int(idx[j]) for j in select(feats, M)])
    return CoresetResult(method, M, out, feature_seed)


def coreset_herding(videos: VideoSet, M: int, model: StudentModel, frames: int = 16,
                    feature_seed: int | None = None) -> CoresetResult:
    return _feature_coreset("herding", herding_select, videos, M, model, frames, feature_seed)


def coreset_kcenter(videos: VideoSet, M: int, model: StudentModel, frames: int = 16,
                    feature_seed: int | None = None) -> CoresetResult:
    return _feature_coreset("kcenter", kcenter_select, videos, M, model, frames, feature_seed)


def feature_model(videos: VideoSet, seed: int, epochs: int = 20, frames: int = 16,
                  train_cfg: TrainConfig | None = None, dtype=np.float32) -> StudentModel:
    """Student trained briefly on the full set, used as the coreset feature extractor."""
    C, H, W = videos.frame_shape()
    arch = ArchConfig(num_classes=videos.num_classes, in_channels=C, height=H, width=W)
    cfg = replace(train_cfg or TrainConfig(), epochs=epochs, frames=frames)
    model = init_student(arch, seed, dtype)
    model, _ = train_classifier(model, videos, cfg, np.random.default_rng(seed))
    return model


def distill_dm_pixels(train_set: VideoSet, config: DistillConfig, seed: int):
    """Distribution matching directly on ``M`` videos per class initialised from real ones."""
    return distill(train_set, replace(config, variant="dm-pixels"), seed)
