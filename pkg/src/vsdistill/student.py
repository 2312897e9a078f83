"""Small 3D ConvNet student with feature taps, plus its SGD training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .augment import sample_interval, temporal_augment
from .dataio import VideoSet


@dataclass
class ArchConfig:
    num_classes: int = 5
    in_channels: int = 1
    height: int = 32
    width: int = 32
    widths: tuple[int, ...] = (16, 32, 32)
    temporal_kernels: tuple[int, ...] = (1, 1, 3)
    spatial_kernel: int = 3
    pool: int = 2

    def validate(self):
        if len(self.widths) != 3 or len(self.temporal_kernels) != 3:
            raise ValueError("student has exactly three conv blocks")
        if self.temporal_kernels[0] != 1 or self.temporal_kernels[1] != 1:
            raise ValueError("blocks 1-2 must use temporal kernel 1 so F_t keeps the time axis")
        reduce = self.pool ** 3
        if self.height % reduce or self.width % reduce:
            raise ValueError(f"H and W must be divisible by {reduce}")
        if self.num_classes < 1 or self.in_channels < 1:
            raise ValueError("num_classes and in_channels must be >= 1")


@dataclass
class StudentModel:
    cfg: ArchConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def copy(self) -> "StudentModel":
        return StudentModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def check_batch(self, shape):
        cfg = self.cfg
        if len(shape) != 5 or tuple(shape[2:]) != (cfg.in_channels, cfg.height, cfg.width):
            raise nx.ShapeError(f"student: batch shape {tuple(shape)} does not match "
                                f"[B][T][{cfg.in_channels}][{cfg.height}][{cfg.width}]")

    def graph(self, batch, trainable: bool = False, upto: str = "logits"):
        """Build the forward graph. Returns a dict of named nodes.

        ``upto`` stops early at ``"F_t"`` or ``"F_IC"``. With ``trainable`` the
        parameter leaves require gradients and are returned under ``"params"``.
        """
        x = batch if isinstance(batch, nx.Node) else nx.constant(batch, dtype=self.dtype)
        self.check_batch(x.shape)
        p = {k: nx.leaf(v, requires_grad=trainable, dtype=v.dtype) for k, v in self.params.items()}
        out = {"params": p}
        h = x
        for i in range(3):
            h = nx.conv3d(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
            h = nx.relu(h)
            h = nx.avg_pool(h, self.cfg.pool)
            if i == 1:
                out["F_t"] = nx.mean(h, axis=(3, 4))
                if upto == "F_t":
                    return out
        out["F_IC"] = nx.mean(h, axis=(1, 3, 4))
        if upto == "F_IC":
            return out
        out["logits"] = nx.add_bias(nx.matmul(out["F_IC"], p["head.w"]), p["head.b"], axis=1)
        return out

    def forward(self, batch) -> np.ndarray:
        return self.graph(batch)["logits"].value

    def predict(self, videos: np.ndarray, chunk: int = 64) -> np.ndarray:
        preds = [self.forward(videos[i:i + chunk]).argmax(axis=1) for i in range(0, len(videos), chunk)]
        return np.concatenate(preds)


def init_student(cfg: ArchConfig, seed, dtype=np.float64) -> StudentModel:
    """Fan-in scaled uniform weights (He bound for convs), zero conv biases."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    c_in = cfg.in_channels
    k = cfg.spatial_kernel
    for i, (c_out, kt) in enumerate(zip(cfg.widths, cfg.temporal_kernels)):
        fan_in = c_in * kt * k * k
        bound = np.sqrt(6.0 / fan_in)  # keeps activation scale through ReLU
        params[f"conv{i}.w"] = rng.uniform(-bound, bound, size=(c_out, c_in, kt, k, k)).astype(dtype)
        params[f"conv{i}.b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    bound = 1.0 / np.sqrt(c_in)
    params["head.w"] = rng.uniform(-bound, bound, size=(c_in, cfg.num_classes)).astype(dtype)
    params["head.b"] = rng.uniform(-bound, bound, size=cfg.num_classes).astype(dtype)
    return StudentModel(cfg, params)


def features(model: StudentModel, batch) -> nx.Node:
    """Penultimate features F_IC, ``[B][d]``."""
    return model.graph(batch, upto="F_IC")["F_IC"]


def temporal_features(model: StudentModel, batch) -> nx.Node:
    """Block-2 features pooled over space, ``[B][t][d]``."""
    return model.graph(batch, upto="F_t")["F_t"]


@dataclass
class TrainConfig:
    epochs: int = 200
    optimizer: str = "adam"  # or "sgd" (momentum)
    lr: float = 0.001
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 32
    patience: int = 20
    min_delta: float = 1e-4
    temporal_aug: bool = True
    min_frac: float = 0.25
    frames: int = 16


def train_classifier(model: StudentModel, train_set: VideoSet, cfg: TrainConfig,
                     rng: np.random.Generator):
    """Mini-batch Adam (or SGD with momentum) on softmax cross-entropy; updates ``model`` in place.

    Stops after ``cfg.epochs`` or once the best epoch loss has not improved by
    ``cfg.min_delta`` for ``cfg.patience`` epochs. Returns the model and the
    per-epoch mean loss.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if cfg.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    x_all = train_set.stacked(cfg.frames).astype(model.dtype)
    y_all = train_set.labels
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    second = {k: np.zeros_like(v) for k, v in model.params.items()}
    b1, b2 = cfg.betas
    step = 0
    history = []
    best, stale = np.inf, 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x_all))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x_all[idx]
            if cfg.temporal_aug:
                xb = np.stack([temporal_augment(v, sample_interval(rng, cfg.min_frac)) for v in xb])
            g = model.graph(xb, trainable=True)
            loss = nx.softmax_cross_entropy(g["logits"], y_all[idx])
            nx.backward(loss)
            step += 1
            for k, node in g["params"].items():
                if cfg.optimizer == "sgd":
                    velocity[k] = cfg.momentum * velocity[k] + node.grad
                    model.params[k] = model.params[k] - cfg.lr * velocity[k]
                    continue
                velocity[k] = b1 * velocity[k] + (1 - b1) * node.grad
                second[k] = b2 * second[k] + (1 - b2) * node.grad * node.grad
                m_hat = velocity[k] / (1 - b1 ** step)
                v_hat = second[k] / (1 - b2 ** step)
                model.params[k] = (model.params[k] - cfg.lr * m_hat / (np.sqrt(v_hat) + 1e-8)).astype(model.dtype)
            total += float(loss.value) * len(idx)
        epoch_loss = total / len(x_all)
        history.append(epoch_loss)
        if not np.isfinite(epoch_loss):
            break
        if epoch_loss < best - cfg.min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return model, history


def accuracy(model: StudentModel, test_set: VideoSet, frames: int = 16) -> float:
    x = test_set.stacked(frames).astype(model.dtype)
    return float(np.mean(model.predict(x) == test_set.labels))


def per_class_accuracy(model: StudentModel, test_set: VideoSet, frames: int = 16) -> np.ndarray:
    x = test_set.stacked(frames).astype(model.dtype)
    hit = model.predict(x) == test_set.labels
    return np.array([hit[test_set.labels == n].mean() for n in range(test_set.num_classes)])
