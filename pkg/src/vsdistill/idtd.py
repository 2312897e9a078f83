"""Feature Pool / Feature Selectors / Temporal Fusor video-set distillation.

Each synthetic instance ``(n, m)`` owns a pool tensor, ``K`` selectors that
mix pool frames into segments, and a fusor that merges the segments into one
video by a stride-``K`` temporal convolution. Training alternates over
classes; every outer iteration draws a fresh randomly initialised student
whose features drive both the distribution-matching and diversity terms.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as nx
from .augment import TemporalInterval, sample_interval, temporal_augment
from .dataio import VideoSample, VideoSet, sample_class_batch
from .student import ArchConfig, StudentModel, features, init_student

VARIANTS = ("full", "no-pool", "no-fusor", "compress-and-stitch", "dm-pixels")
LOG_COLUMNS = ("iteration", "class", "L_M(D)", "L_div", "L_M(V')", "total")


@dataclass
class DistillConfig:
    ipc: int = 1
    K: int = 8
    alpha1: float = 0.05
    alpha2: float = 1e-4
    lr: float = 0.01
    structure_lr: float | None = None  # selectors and fusor; None means lr
    optimizer: str = "adam"  # or "sgd" with momentum
    momentum: float = 0.5
    betas: tuple[float, float] = (0.9, 0.999)
    iterations: int = 500
    real_batch: int = 16
    T_syn: int = 16
    T_pool: int | None = None  # default 2 * T_syn
    T_real: int = 16
    min_frac: float = 0.25
    pool_std: float = 0.1
    pool_init: str = "noise"  # or "real": a resampled real clip of the class plus pool noise
    selector_noise: float = 0.01
    variant: str = "full"
    selector_matching: bool = True
    diversity: bool = True
    fusor_matching: bool = True
    precision: str = "float32"
    threads: int = 1
    arch: ArchConfig = field(default_factory=ArchConfig)

    @property
    def pool_length(self) -> int:
        return self.T_pool if self.T_pool is not None else 2 * self.T_syn

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("ipc", "K", "real_batch", "T_syn", "T_real", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.pool_length < self.T_syn:
            raise ValueError(f"T_pool ({self.pool_length}) must be >= T_syn ({self.T_syn})")
        if not 0 < self.min_frac <= 1:
            raise ValueError("min_frac must lie in (0, 1]")
        if self.structure_lr is not None and self.structure_lr < 0:
            raise ValueError("structure_lr must be non-negative")
        if min(self.alpha1, self.alpha2, self.lr, self.momentum, self.pool_std, self.selector_noise) < 0:
            raise ValueError("weights, lr, momentum and init scales must be non-negative")
        if self.pool_init not in ("noise", "real"):
            raise ValueError("pool_init must be noise or real")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be sgd or adam")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["arch"]["widths"] = list(self.arch.widths)
        d["arch"]["temporal_kernels"] = list(self.arch.temporal_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        d = dict(d)
        arch = d.pop("arch", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown distill config keys {sorted(unknown)}")
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        cfg = cls(**d)
        if arch is not None:
            arch = dict(arch)
            for key in ("widths", "temporal_kernels"):
                if key in arch:
                    arch[key] = tuple(arch[key])
            cfg.arch = ArchConfig(**arch)
        return cfg


@dataclass
class DistillerState:
    """Learnable variables with leading ``[N][M]`` axes, plus momentum buffers.

    Which entries exist depends on the variant: ``pool``/``sel_w``/``sel_b``
    for pool-based variants, ``segments`` for free or real segments,
    ``fus_k``/``fus_b`` for a learnable fusor, ``videos`` for raw-pixel DM.
    """

    config: DistillConfig
    num_classes: int
    frame_shape: tuple[int, int, int]
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    second: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def learnable(self) -> tuple[str, ...]:
        if self.config.variant == "compress-and-stitch":
            return ()
        return tuple(self.params)

    def copy(self) -> "DistillerState":
        return DistillerState(self.config, self.num_classes, self.frame_shape,
                              {k: v.copy() for k, v in self.params.items()},
                              {k: v.copy() for k, v in self.velocity.items()},
                              {k: v.copy() for k, v in self.second.items()})

    def equals(self, other: "DistillerState") -> bool:
        return (self.params.keys() == other.params.keys()
                and all(np.array_equal(self.params[k], other.params[k]) for k in self.params))


def _rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def selector_offset(T_pool: int, T_seg: int, K: int) -> int:
    return (T_pool - T_seg) // (K - 1) if K > 1 else 0


def _real_segments(train_set, n, count, T, rng, dtype):
    idx = train_set.class_indices(n)
    if len(idx) == 0:
        raise ValueError(f"class {n} has no samples")
    pick = rng.choice(idx, size=count, replace=len(idx) < count)
    return train_set.stacked(T, pick).astype(dtype)


def init_distiller(config: DistillConfig, seed: int, num_classes: int,
                   frame_shape: tuple[int, int, int], train_set: VideoSet | None = None) -> DistillerState:
    """Initial variables for every ``(n, m)``; deterministic in ``seed``.

    Pools are N(0, pool_std^2), added to a real clip of the class resampled
    to ``T_pool`` frames when ``pool_init == "real"``. Selector ``k`` starts
    as the identity picking pool frames ``[k*offset, k*offset + T_seg)`` plus
    N(0, selector_noise^2); the fusor kernel starts at ``1/K`` with zero bias.
    Real-initialised pools and variants need ``train_set``.
    """
    config.validate()
    N, M, K = num_classes, config.ipc, config.K
    T_seg, T_pool = config.T_syn, config.pool_length
    C, H, W = frame_shape
    dt = config.dtype
    rng = _rng(seed, 0)
    params = {}
    v = config.variant
    if v in ("full", "no-fusor"):
        pool = config.pool_std * rng.standard_normal((N, M, T_pool, C, H, W))
        if config.pool_init == "real":
            if train_set is None:
                raise ValueError("pool_init='real' needs train_set")
            for n in range(N):
                pool[n] += _real_segments(train_set, n, M, T_pool, _rng(seed, 1, n), np.float64)
        params["pool"] = pool.astype(dt)
        offset = selector_offset(T_pool, T_seg, K)
        eye = np.zeros((K, T_seg, T_pool))
        for k in range(K):
            eye[k, np.arange(T_seg), k * offset + np.arange(T_seg)] = 1.0
        noise = config.selector_noise * rng.standard_normal((N, M, K, T_seg, T_pool))
        params["sel_w"] = (eye[None, None] + noise).astype(dt)
        params["sel_b"] = np.zeros((N, M, K, T_seg), dtype=dt)
    if v in ("no-pool", "compress-and-stitch", "dm-pixels"):
        if train_set is None:
            raise ValueError(f"variant {v!r} initialises from real videos and needs train_set")
        count = M if v == "dm-pixels" else M * K
        key = "videos" if v == "dm-pixels" else "segments"
        per_class = []
        for n in range(N):
            real = _real_segments(train_set, n, count, T_seg, _rng(seed, 1, n), dt)
            lead = (M,) if v == "dm-pixels" else (M, K)
            per_class.append(real.reshape(lead + real.shape[1:]))
        params[key] = np.stack(per_class)
    if v in ("full", "no-pool"):
        params["fus_k"] = np.full((N, M, K), 1.0 / K, dtype=dt)
        params["fus_b"] = np.zeros((N, M), dtype=dt)
    velocity = {k: np.zeros_like(p) for k, p in params.items()}
    second = {k: np.zeros_like(p) for k, p in params.items()} if config.optimizer == "adam" else {}
    return DistillerState(config, N, tuple(frame_shape), params, velocity, second)


# -- building blocks ---------------------------------------------------------

def mix_segments(pool, sel_w, sel_b) -> nx.Node:
    """Segment ``k`` frame ``t`` is ``sum_j sel_w[k, t, j] * pool[j] + sel_b[k, t]``.

    ``pool`` is ``[T_pool][C][H][W]``, ``sel_w`` ``[K][T_seg][T_pool]``,
    ``sel_b`` ``[K][T_seg]``; returns ``[K][T_seg][C][H][W]``.
    """
    pool, sel_w, sel_b = (x if isinstance(x, nx.Node) else nx.constant(x) for x in (pool, sel_w, sel_b))
    K, T_seg, T_pool = sel_w.shape
    if pool.shape[0] != T_pool:
        raise nx.ShapeError(f"mix_segments: shape mismatch {pool.shape} vs {sel_w.shape}")
    frame = pool.shape[1:]
    flat = nx.matmul(nx.reshape(sel_w, (K * T_seg, T_pool)), nx.reshape(pool, (T_pool, -1)))
    flat = nx.add_bias(flat, nx.reshape(sel_b, (K * T_seg,)), axis=0)
    return nx.reshape(flat, (K, T_seg) + frame)


def fuse_segments(segments, kernel, bias) -> nx.Node:
    """Concatenate ``[K][T_seg][...]`` segments in time and convolve with stride ``K``."""
    segments = segments if isinstance(segments, nx.Node) else nx.constant(segments)
    K, T_seg = segments.shape[:2]
    if kernel.shape != (K,):
        raise nx.ShapeError(f"fuse: {K} segments but kernel shape {kernel.shape}")
    stream = nx.reshape(segments, (K * T_seg,) + segments.shape[2:])
    return nx.temporal_conv1d(stream, kernel, bias, stride=K)


def delta_kernel(K: int, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    k = np.zeros(K, dtype=dtype)
    k[0] = 1.0
    return k, np.zeros((), dtype=dtype)


def diversity_from_features(feats) -> nx.Node:
    """Mean over pairs ``k < q`` of ``-||f_k - f_q||^2`` on L2-normalised rows.

    Uses ``sum_{k<q} ||a_k - a_q||^2 = K * sum_k ||a_k||^2 - ||sum_k a_k||^2``.
    """
    feats = feats if isinstance(feats, nx.Node) else nx.constant(feats)
    K = feats.shape[0]
    if K < 2:
        return nx.constant(0.0, dtype=feats.value.dtype)
    unit = nx.l2_normalize(feats)
    pair_sum = nx.sub(nx.scale(nx.squared_l2(unit), float(K)), nx.squared_l2(nx.sum_(unit, axis=0)))
    return nx.scale(pair_sum, -2.0 / (K * (K - 1)))


def diversity_loss(segments, phi) -> nx.Node:
    """Diversity of segments under the feature map ``phi`` (batch in, ``[K][d]`` out)."""
    if segments.shape[0] < 2:
        return nx.constant(0.0)
    return diversity_from_features(phi(segments))


def matching_from_features(syn_feats, real_mean) -> nx.Node:
    """``||mean_b syn_feats - real_mean||^2``."""
    diff = nx.sub(nx.mean(syn_feats, axis=0), nx.constant(real_mean, dtype=syn_feats.value.dtype))
    return nx.squared_l2(diff)


def matching_loss_dm(syn_batch, real_batch, model: StudentModel) -> nx.Node:
    """Distribution matching: squared distance between mean student features.

    Gradients flow to ``syn_batch`` only. Synthetic clips with a different
    frame count than the real batch are resampled to it first.
    """
    real_batch = np.asarray(real_batch.value if isinstance(real_batch, nx.Node) else real_batch)
    if len(real_batch) == 0 or syn_batch.shape[0] == 0:
        raise ValueError("matching_loss_dm: empty batch")
    syn = _to_length(syn_batch, real_batch.shape[1])
    if tuple(syn.shape[2:]) != tuple(real_batch.shape[2:]):
        raise nx.ShapeError(f"matching_loss_dm: shape mismatch {syn.shape} vs {real_batch.shape}")
    real_mean = features(model, real_batch.astype(model.dtype)).value.mean(axis=0)
    return matching_from_features(features(model, syn), real_mean)


def _to_length(batch, T: int) -> nx.Node:
    """Resample every clip of a ``[B][T'][...]`` batch along time to ``T`` frames."""
    batch = batch if isinstance(batch, nx.Node) else nx.constant(batch)
    if batch.shape[1] == T:
        return batch
    moved = nx.transpose(batch, (1, 0, 2, 3, 4))
    return nx.transpose(nx.resample(moved, T), (1, 0, 2, 3, 4))


def fuse(state: DistillerState, m: int, n: int, segments) -> nx.Node:
    if segments.shape[0] != state.config.K:
        raise nx.ShapeError(f"fuse: expected {state.config.K} segments, got {segments.shape[0]}")
    if "fus_k" in state.params:
        return fuse_segments(segments, state.params["fus_k"][n, m], state.params["fus_b"][n, m])
    k, b = delta_kernel(state.config.K, state.config.dtype)
    return fuse_segments(segments, k, b)


def select_segments(state: DistillerState, m: int, n: int) -> nx.Node:
    p = state.params
    if "pool" in p:
        return mix_segments(p["pool"][n, m], p["sel_w"][n, m], p["sel_b"][n, m])
    if "segments" in p:
        return nx.constant(p["segments"][n, m])
    raise ValueError(f"variant {state.config.variant!r} has no segments")


# -- objective ---------------------------------------------------------------

@dataclass
class InstanceGraph:
    leaves: dict[str, nx.Node]
    segments: nx.Node | None
    video: nx.Node


def _instance_graph(state: DistillerState, m: int, n: int) -> InstanceGraph:
    dt = state.config.dtype
    leaves = {k: nx.leaf(v[n, m], requires_grad=k in state.learnable, dtype=dt)
              for k, v in state.params.items()}
    if "videos" in leaves:
        return InstanceGraph(leaves, None, leaves["videos"])
    if "pool" in leaves:
        segments = mix_segments(leaves["pool"], leaves["sel_w"], leaves["sel_b"])
    else:
        segments = leaves["segments"]
    if "fus_k" in leaves:
        video = fuse_segments(segments, leaves["fus_k"], leaves["fus_b"])
    else:
        k, b = delta_kernel(state.config.K, dt)
        video = fuse_segments(segments, k, b)
    return InstanceGraph(leaves, segments, video)


def total_loss(state: DistillerState, m: int, n: int, real_batch, model: StudentModel,
               rng: np.random.Generator, real_mean: np.ndarray | None = None,
               interval: TemporalInterval | None = None):
    """Weighted objective for instance ``(n, m)``.

    ``L_M(D) + alpha1 * L_div + alpha2 * L_M({v'})`` where ``v'`` is the
    fused video after a random temporal crop. Terms switched off in the config
    are skipped. Returns ``(loss_node, parts, leaves)``.
    """
    cfg = state.config
    if real_mean is None:
        real = np.asarray(real_batch).astype(model.dtype)
        real_mean = features(model, real).value.mean(axis=0)
    T_real = cfg.T_real if real_batch is None else np.asarray(real_batch).shape[1]
    g = _instance_graph(state, m, n)
    parts = {"L_M(D)": 0.0, "L_div": 0.0, "L_M(V')": 0.0}
    terms = []

    if cfg.variant == "dm-pixels":
        syn = _to_length(nx.reshape(g.video, (1,) + g.video.shape), T_real)
        loss = matching_from_features(features(model, syn), real_mean)
        parts["L_M(V')"] = float(loss.value)
        parts["total"] = float(loss.value)
        return loss, parts, g.leaves

    want_seg = cfg.selector_matching or (cfg.diversity and cfg.K > 1)
    batch = []
    K = cfg.K
    if want_seg:
        batch.append(g.segments)
    if cfg.fusor_matching:
        mu = interval if interval is not None else sample_interval(rng, cfg.min_frac)
        v_aug = temporal_augment(g.video, mu)
        batch.append(nx.reshape(v_aug, (1,) + v_aug.shape))
    if not batch:
        raise ValueError("all loss terms are switched off")
    stacked = batch[0] if len(batch) == 1 else nx.concat(batch, axis=0)
    feats = features(model, _to_length(stacked, T_real))

    if want_seg:
        seg_feats = nx.slice_(feats, 0, K) if cfg.fusor_matching else feats
        if cfg.selector_matching:
            lm_d = matching_from_features(seg_feats, real_mean)
            parts["L_M(D)"] = float(lm_d.value)
            terms.append(lm_d)
        if cfg.diversity and K > 1:
            ldiv = diversity_from_features(seg_feats)
            parts["L_div"] = float(ldiv.value)
            terms.append(nx.scale(ldiv, cfg.alpha1))
    if cfg.fusor_matching:
        vid_feats = nx.slice_(feats, feats.shape[0] - 1, feats.shape[0])
        lm_v = matching_from_features(vid_feats, real_mean)
        parts["L_M(V')"] = float(lm_v.value)
        terms.append(nx.scale(lm_v, cfg.alpha2))

    loss = terms[0]
    for t in terms[1:]:
        loss = nx.add(loss, t)
    parts["total"] = float(loss.value)
    return loss, parts, g.leaves


def _step(state: DistillerState, n: int, m: int, leaves: dict[str, nx.Node], t: int) -> None:
    """One optimiser update of instance ``(n, m)``; ``t`` counts steps from 1."""
    cfg = state.config
    for k in state.learnable:
        grad = leaves[k].grad
        if grad is None:
            continue
        lr = cfg.lr if k in ("pool", "segments", "videos") or cfg.structure_lr is None else cfg.structure_lr
        vel = state.velocity[k][n, m]
        if cfg.optimizer == "sgd":
            vel *= cfg.momentum
            vel += grad
            state.params[k][n, m] -= lr * vel
            continue
        b1, b2 = cfg.betas
        sq = state.second[k][n, m]
        vel *= b1
        vel += (1 - b1) * grad
        sq *= b2
        sq += (1 - b2) * grad * grad
        denom = np.sqrt(sq / (1 - b2 ** t)) + 1e-8
        state.params[k][n, m] -= lr * (vel / (1 - b1 ** t)) / denom


def _class_step(state, train_set, model, seed, it, n):
    cfg = state.config
    real = sample_class_batch(train_set, n, cfg.real_batch, _rng(seed, 2, it, n), cfg.T_real)
    real = real.astype(model.dtype)
    real_mean = features(model, real).value.mean(axis=0)
    rows = []
    for m in range(cfg.ipc):
        loss, parts, leaves = total_loss(state, m, n, real, model, _rng(seed, 3, it, n, m),
                                         real_mean=real_mean)
        nx.backward(loss)
        _step(state, n, m, leaves, it + 1)
        rows.append(parts)
    return {k: float(np.mean([r[k] for r in rows])) for k in LOG_COLUMNS[2:]}


def distill(train_set: VideoSet, config: DistillConfig, seed: int):
    """Optimise the distiller class by class and return ``(synthetic_set, loss_log)``.

    Every outer iteration samples a fresh student; per class it draws a real
    batch, and for each instance takes one optimiser step (Adam or momentum
    SGD) on the total loss. Classes touch disjoint variables and use their own random streams,
    so the threaded schedule is bit-identical to the sequential one.
    """
    config.validate()
    if len(train_set) == 0:
        raise ValueError("empty training set")
    N = train_set.num_classes
    frame_shape = train_set.frame_shape()
    arch = ArchConfig(**{**asdict(config.arch), "num_classes": N,
                         "in_channels": frame_shape[0], "height": frame_shape[1], "width": frame_shape[2]})
    for n in range(N):
        if len(train_set.class_indices(n)) == 0:
            raise ValueError(f"class {n} has no training samples")
    state = init_distiller(config, seed, N, frame_shape, train_set)
    log = []
    if state.learnable:
        for it in range(config.iterations):
            model = init_student(arch, np.random.SeedSequence(seed, spawn_key=(4, it)), config.dtype)
            if config.threads > 1:
                with ThreadPoolExecutor(config.threads) as pool:
                    results = list(pool.map(lambda n: _class_step(state, train_set, model, seed, it, n),
                                            range(N)))
            else:
                results = [_class_step(state, train_set, model, seed, it, n) for n in range(N)]
            for n, parts in enumerate(results):
                log.append({"iteration": it, "class": n, **parts})
    return synthesize(state), log


def synthesize(state: DistillerState) -> VideoSet:
    """Final videos for every ``(n, m)``, no augmentation, clamped to [0, 1]."""
    cfg = state.config
    samples = []
    for n in range(state.num_classes):
        for m in range(cfg.ipc):
            g = _instance_graph(state, m, n)
            video = np.clip(g.video.value, 0.0, 1.0).astype(np.float32)
            samples.append(VideoSample(video, n, video.shape[0]))
    return VideoSet(samples, state.num_classes, "synthetic", 0)


def write_loss_log(path, log: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([row["iteration"], row["class"]] + [f"{row[c]:.6e}" for c in LOG_COLUMNS[2:]])
