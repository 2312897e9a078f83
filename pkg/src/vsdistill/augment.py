"""Stochastic temporal augmentation: random interval crop, resampled back to full length."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx


@dataclass(frozen=True)
class TemporalInterval:
    s: float
    e: float

    def __post_init__(self):
        if not 0.0 <= self.s < self.e <= 1.0:
            raise ValueError(f"need 0 <= s < e <= 1, got ({self.s}, {self.e})")


FULL = TemporalInterval(0.0, 1.0)


def sample_interval(rng: np.random.Generator, min_frac: float = 0.25) -> TemporalInterval:
    """Uniform on the triangle ``s < e`` in the unit square, restricted to ``e - s >= min_frac``."""
    if not 0.0 < min_frac <= 1.0:
        raise ValueError("min_frac must lie in (0, 1]")
    if min_frac == 1.0:
        return FULL
    while True:
        a, b = rng.random(2)
        s, e = min(a, b), max(a, b)
        if e - s >= min_frac:
            return TemporalInterval(float(s), float(e))


def interval_positions(T: int, mu: TemporalInterval) -> np.ndarray:
    """Source frame positions for resampling the span ``[s, e]`` of a ``T``-frame video to ``T`` frames."""
    if T == 1:
        return np.zeros(1)
    start = mu.s * (T - 1)
    step = (mu.e - mu.s) * (T - 1) / (T - 1)
    return start + np.arange(T) * step


def temporal_augment(video, mu: TemporalInterval):
    """Crop ``video`` (array or graph node, time on axis 0) to ``mu`` and stretch back to its length.

    Cropping is continuous: frames are linearly interpolated at the cropped
    positions, so the full interval reproduces the input exactly.
    """
    T = video.shape[0]
    if mu == FULL:
        return video if isinstance(video, nx.Node) else np.array(video, copy=True)
    pos = interval_positions(T, mu)
    if isinstance(video, nx.Node):
        return nx.interp(video, pos)
    return nx.Interp(pos).forward(np.asarray(video))
