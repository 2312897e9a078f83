"""Moving-shapes toy videos, temporal resampling and the on-disk video-set container."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx

MOTIONS = ("translate-right", "translate-left", "translate-up", "translate-down",
           "rotate", "scale-oscillate")
SHAPES = ("square", "triangle", "bar")

MAGIC = b"VDS1"
FORMAT_VERSION = 1
# more values than this in one sample file is treated as a corrupt header
MAX_VALUES = 1 << 28
SPLIT_IDS = {"train": 0, "test": 1}


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class DimensionOverflowError(ContainerError):
    pass


@dataclass
class VideoSample:
    video: np.ndarray  # [T][C][H][W]
    label: int
    native_length: int

    def __post_init__(self):
        if self.video.ndim != 4:
            raise ValueError(f"video must be [T][C][H][W], got shape {self.video.shape}")
        if self.native_length < 1:
            raise ValueError("native_length must be >= 1")


@dataclass
class VideoSet:
    samples: list[VideoSample]
    num_classes: int
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        for s in self.samples:
            if not 0 <= s.label < self.num_classes:
                raise ValueError(f"label {s.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def class_indices(self, n: int) -> np.ndarray:
        return np.flatnonzero(self.labels == n)

    def frame_shape(self) -> tuple[int, int, int]:
        return self.samples[0].video.shape[1:]

    def stacked(self, T: int, indices=None) -> np.ndarray:
        """Videos at ``indices`` resampled to ``T`` frames, as ``[B][T][C][H][W]``."""
        if indices is None:
            indices = range(len(self.samples))
        return np.stack([resample_temporal(self.samples[i].video, T) for i in indices])

    def equals(self, other: "VideoSet") -> bool:
        if (self.num_classes, self.split, self.seed, len(self)) != \
                (other.num_classes, other.split, other.seed, len(other)):
            return False
        return all(a.label == b.label and a.native_length == b.native_length
                   and a.video.shape == b.video.shape
                   and a.video.tobytes() == b.video.tobytes()
                   for a, b in zip(self.samples, other.samples))


@dataclass
class ShapeSpec:
    num_classes: int = 5
    motions: tuple[str, ...] | None = None  # default: first num_classes of MOTIONS
    height: int = 32
    width: int = 32
    channels: int = 1
    min_length: int = 8
    max_length: int = 32
    train_per_class: int = 100
    test_per_class: int = 20
    noise: float = 0.05
    shapes: tuple[str, ...] = SHAPES
    size_range: tuple[int, int] = (4, 6)
    travel_range: tuple[float, float] = (0.8, 1.0)  # fraction of the free span crossed
    random_orientation: bool = True

    def motion_programs(self) -> tuple[str, ...]:
        return tuple(self.motions) if self.motions is not None else MOTIONS[:self.num_classes]

    def validate(self) -> None:
        programs = self.motion_programs()
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if len(programs) != self.num_classes:
            raise ValueError(f"need {self.num_classes} motion programs, got {len(programs)}")
        if len(set(programs)) != len(programs):
            raise ValueError("motion programs must be pairwise distinct")
        unknown = set(programs) - set(MOTIONS)
        if unknown:
            raise ValueError(f"unknown motion programs {sorted(unknown)}")
        if set(self.shapes) - set(SHAPES) or not self.shapes:
            raise ValueError(f"shapes must be a non-empty subset of {SHAPES}")
        if self.min_length < 4 or self.max_length < self.min_length:
            raise ValueError("need 4 <= min_length <= max_length")
        lo, hi = self.size_range
        if not 2 <= lo <= hi or hi > min(self.height, self.width) // 2:
            raise ValueError("size_range must satisfy 2 <= lo <= hi <= min(H, W) / 2")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ValueError("need at least one sample per class and split")
        t_lo, t_hi = self.travel_range
        if not 0 <= t_lo <= t_hi <= 1:
            raise ValueError("travel_range must satisfy 0 <= lo <= hi <= 1")
        if self.noise < 0 or self.channels < 1:
            raise ValueError("noise must be >= 0 and channels >= 1")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["motions"] = list(self.motion_programs())
        d["shapes"] = list(self.shapes)
        d["size_range"] = list(self.size_range)
        d["travel_range"] = list(self.travel_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        d = dict(d)
        for key in ("motions", "shapes", "size_range", "travel_range"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def sample_rng(seed: int, split: str, label: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, split, class, index)."""
    ss = np.random.SeedSequence(seed, spawn_key=(SPLIT_IDS[split], label, index))
    return np.random.Generator(np.random.Philox(ss))


def _shape_mask(kind, px, py, half):
    """Membership of object-frame pixel offsets in a shape of half-extent ``half``."""
    if kind == "square":
        return (px >= -half) & (px < half) & (py >= -half) & (py < half)
    if kind == "bar":
        return (px >= -half) & (px < half) & (py >= -half / 2) & (py < half / 2)
    # triangle, apex pointing up in object frame
    inside_y = (py >= -half) & (py < half)
    width = (py + half) / 2.0
    return inside_y & (px >= -width) & (px < width)


def _render_video(spec: ShapeSpec, motion: str, rng: np.random.Generator):
    H, W, C = spec.height, spec.width, spec.channels
    length = int(rng.integers(spec.min_length, spec.max_length + 1))
    kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
    size = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
    half = size / 2.0
    intensity = rng.uniform(0.6, 1.0, size=C)
    base_angle = rng.uniform(0, 2 * np.pi) if spec.random_orientation else 0.0

    margin = 0.75 * size
    cx0 = rng.uniform(margin, W - margin)
    cy0 = rng.uniform(margin, H - margin)
    travel = rng.uniform(*spec.travel_range) * (min(H, W) - 2 * margin)
    spin = rng.uniform(0.5, 1.0) * np.pi * rng.choice([-1.0, 1.0])
    cycles = rng.uniform(1.0, 2.0)
    phase = rng.uniform(0, 2 * np.pi)

    u = np.linspace(0.0, 1.0, length) if length > 1 else np.zeros(1)
    cx = np.full(length, cx0)
    cy = np.full(length, cy0)
    angle = np.full(length, base_angle)
    scale = np.ones(length)
    if motion in ("translate-right", "translate-left"):
        direction = 1.0 if motion == "translate-right" else -1.0
        start = W / 2 - direction * travel / 2 + rng.uniform(-1, 1) * (W / 2 - margin - travel / 2)
        cx = start + direction * travel * u
    elif motion in ("translate-up", "translate-down"):
        direction = -1.0 if motion == "translate-up" else 1.0
        start = H / 2 - direction * travel / 2 + rng.uniform(-1, 1) * (H / 2 - margin - travel / 2)
        cy = start + direction * travel * u
    elif motion == "rotate":
        angle = base_angle + spin * u * 2
    elif motion == "scale-oscillate":
        scale = 1.0 + 0.45 * np.sin(2 * np.pi * cycles * u + phase)

    if motion.startswith("translate") and not spec.random_orientation:
        # edges on integer coordinates keep pixel centres off the boundary
        cx = np.floor(cx - half) + half
        cy = np.floor(cy - half) + half

    ys, xs = np.mgrid[0:H, 0:W] + 0.5
    video = np.zeros((length, C, H, W))
    for t in range(length):
        dx, dy = xs - cx[t], ys - cy[t]
        ca, sa = np.cos(angle[t]), np.sin(angle[t])
        px = (ca * dx + sa * dy) / scale[t]
        py = (-sa * dx + ca * dy) / scale[t]
        mask = _shape_mask(kind, px, py, half)
        video[t] = mask[None] * intensity[:, None, None]
    if spec.noise > 0:
        video += spec.noise * rng.standard_normal(video.shape)
    return np.clip(video, 0.0, 1.0).astype(np.float32), length


def generate_moving_shapes(spec: ShapeSpec, seed: int) -> tuple[VideoSet, VideoSet]:
    """Train and test sets where only the motion program identifies the class."""
    spec.validate()
    programs = spec.motion_programs()
    out = []
    for split, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        samples = []
        for label, motion in enumerate(programs):
            for i in range(per_class):
                video, length = _render_video(spec, motion, sample_rng(seed, split, label, i))
                samples.append(VideoSample(video, label, length))
        out.append(VideoSet(samples, spec.num_classes, split, seed))
    return out[0], out[1]


def resample_temporal(video, T_out: int):
    """Linearly interpolate a ``[T][...]`` video to ``T_out`` frames.

    Arrays in give arrays out; graph nodes in give a differentiable node.
    """
    if isinstance(video, nx.Node):
        return nx.resample(video, T_out)
    video = np.asarray(video)
    if video.shape[0] == T_out:
        return video.copy()
    return nx.Interp(nx.resample_positions(video.shape[0], T_out)).forward(video)


def sample_class_batch(videos: VideoSet, n: int, size: int, rng: np.random.Generator,
                       T: int = 16) -> np.ndarray:
    """``size`` videos of class ``n`` as ``[B][T][C][H][W]``.

    Without replacement when the class is large enough, else with replacement.
    """
    idx = videos.class_indices(n)
    if len(idx) == 0:
        raise ValueError(f"class {n} has no samples")
    pick = rng.choice(idx, size=size, replace=len(idx) < size)
    return videos.stacked(T, pick)


# -- container ---------------------------------------------------------------

def encode_video(video: np.ndarray) -> bytes:
    T, C, H, W = video.shape
    body = np.ascontiguousarray(video, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<4I", T, C, H, W) + body


def decode_video(buf: bytes, name: str = "<buffer>") -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"{name}: bad magic {buf[:4]!r}")
    if len(buf) < 20:
        raise TruncatedPayloadError(f"{name}: truncated header")
    dims = struct.unpack("<4I", buf[4:20])
    if min(dims) < 1:
        raise DimensionOverflowError(f"{name}: zero extent in {dims}")
    count = 1
    for d in dims:
        count *= d
    if count > MAX_VALUES:
        raise DimensionOverflowError(f"{name}: {dims} exceeds {MAX_VALUES} values")
    need = 20 + 4 * count
    if len(buf) < need:
        raise TruncatedPayloadError(f"{name}: payload has {len(buf) - 20} bytes, header needs {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=20).reshape(dims).astype(np.float32)


def write_set(path, videos: VideoSet) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    table = []
    for i, s in enumerate(videos.samples):
        fname = f"{i:06d}.vds"
        (path / fname).write_bytes(encode_video(s.video))
        T, C, H, W = s.video.shape
        table.append({"file": fname, "label": int(s.label), "native_length": int(s.native_length),
                      "T": T, "C": C, "H": H, "W": W})
    manifest = {"format_version": FORMAT_VERSION, "num_classes": videos.num_classes,
                "split": videos.split, "seed": videos.seed, "samples": table}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def read_set(path) -> VideoSet:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise ContainerError(f"{path}: no manifest.json") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {manifest.get('format_version')}")
    samples = []
    for row in manifest["samples"]:
        f = path / row["file"]
        if not f.exists():
            raise TruncatedPayloadError(f"{path}: manifest lists {len(manifest['samples'])} samples, "
                                        f"{row['file']} is missing")
        video = decode_video(f.read_bytes(), str(f))
        expect = tuple(row[k] for k in "TCHW")
        if video.shape != expect:
            raise ContainerError(f"{f}: shape {video.shape} disagrees with manifest {expect}")
        samples.append(VideoSample(video, int(row["label"]), int(row["native_length"])))
    return VideoSet(samples, int(manifest["num_classes"]), manifest["split"], int(manifest["seed"]))
