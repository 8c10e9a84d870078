"""Image similarity: Chamfer distance, the clipped training reward, and IoU."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .render import diagonal


class EmptyImageError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    gamma: float = 20.0
    delta: float = 0.3
    rho: float = diagonal(64)

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")


def nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Distance from every set pixel of ``src`` (row-major) to the nearest set pixel of ``dst``."""
    # EDT measures distance to the nearest zero, so feed it the complement of dst
    return distance_transform_edt(~dst)[src]


def chamfer(x: np.ndarray, y: np.ndarray) -> float:
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    nx, ny = int(x.sum()), int(y.sum())
    if nx == 0 or ny == 0:
        raise EmptyImageError("chamfer distance needs two non-empty images")
    # fsum is correctly rounded, so the value does not depend on summation order
    return math.fsum(nearest_distances(x, y)) / nx + math.fsum(nearest_distances(y, x)) / ny


def _chamfer_term(ch: float, cfg: RewardConfig) -> float:
    base = min(1.0, max(0.0, 1.0 - ch / cfg.rho))
    return base ** cfg.gamma


def reward(x: np.ndarray, y: np.ndarray, cfg: RewardConfig = RewardConfig()) -> float:
    """Clipped reward for prediction ``y`` against target ``x``; lies in [delta, 2]."""
    if not y.any():
        return cfg.delta
    nx = int(x.sum())
    if nx == 0:
        raise EmptyImageError("target image is empty")
    coverage = int(np.count_nonzero(x & y)) / nx
    return max(cfg.delta, _chamfer_term(chamfer(x, y), cfg) + coverage)


def chamfer_reward(x: np.ndarray, y: np.ndarray, cfg: RewardConfig = RewardConfig()) -> float:
    """Chamfer-only reward, ``(1 - Ch/rho)^gamma``, with the same empty fallback."""
    if not y.any():
        return cfg.delta
    return _chamfer_term(chamfer(x, y), cfg)


def iou(x: np.ndarray, y: np.ndarray) -> float:
    union = int(np.count_nonzero(x | y))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(x & y)) / union


def score(mode: str, x: np.ndarray, y: np.ndarray, cfg: RewardConfig) -> float:
    if mode == "full":
        return reward(x, y, cfg)
    if mode == "chamfer-only":
        return chamfer_reward(x, y, cfg)
    raise ValueError(f"unknown reward mode {mode!r}")
