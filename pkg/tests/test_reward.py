import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csgparse.reward import (
    EmptyImageError, RewardConfig, chamfer, chamfer_reward, iou, reward, score,
)

CFG = RewardConfig()


def brute_chamfer(x, y):
    px, py = np.argwhere(x), np.argwhere(y)

    def avg_nn(a, b):
        return math.fsum(min(math.dist(p, q) for q in b) for p in a) / len(a)
    return avg_nn(px, py) + avg_nn(py, px)


def random_sparse(rng, n, size=64):
    img = np.zeros((size, size), bool)
    flat = rng.choice(size * size, size=n, replace=False)
    img.flat[flat] = True
    return img


def pixels(*pts):
    img = np.zeros((64, 64), bool)
    for p in pts:
        img[p] = True
    return img


def test_chamfer_examples():
    x = pixels((0, 0), (5, 9))
    assert chamfer(x, x) == 0.0
    assert chamfer(pixels((0, 0)), pixels((3, 4))) == 10.0
    with pytest.raises(EmptyImageError):
        chamfer(x, np.zeros_like(x))


def test_chamfer_matches_brute_force_small():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = random_sparse(rng, 5), random_sparse(rng, 7)
        assert chamfer(x, y) == brute_chamfer(x, y)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40))
def test_chamfer_symmetric_and_bounded(seed, nx, ny):
    rng = np.random.default_rng(seed)
    x, y = random_sparse(rng, nx), random_sparse(rng, ny)
    assert chamfer(x, y) == pytest.approx(chamfer(y, x), abs=1e-12)
    assert 0 < chamfer(x, y) <= 2 * CFG.rho or np.array_equal(x, y)


def test_reward_examples():
    x = pixels((10, 10), (10, 11), (11, 10))
    assert reward(x, x) == 2.0
    assert reward(x, np.zeros_like(x)) == CFG.delta == 0.3


def test_reward_arithmetic_case():
    # y covers half of x; rho is chosen so that Ch / rho = 0.1
    x = pixels((10, 10), (10, 20))
    y = pixels((10, 10), (40, 40))
    cfg = RewardConfig(rho=10 * brute_chamfer(x, y))
    assert reward(x, y, cfg) == pytest.approx(0.6216, abs=5e-5)
    assert reward(x, y, cfg) == pytest.approx(0.9 ** 20 + 0.5, abs=1e-12)


def test_clamp_before_power():
    cfg = RewardConfig(gamma=2.0, delta=0.0, rho=1.0)
    x = pixels((0, 0))
    far = pixels((63, 63))
    # Ch/rho > 1: an unclamped even power would give a large positive reward
    assert reward(x, far, cfg) == 0.0
    assert reward(x, pixels((0, 1)), cfg) < reward(x, pixels((0, 0), (0, 1)), cfg) + 1e-12


def test_reward_monotone_in_chamfer():
    x = pixels((32, 32))
    vals = [reward(x, pixels((32, 32), (32, 32 + d))) for d in range(1, 30)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_reward_bounds_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(300):
        x = random_sparse(rng, int(rng.integers(1, 200)))
        y = random_sparse(rng, int(rng.integers(0, 200)))
        r = reward(x, y)
        assert CFG.delta <= r <= 2.0


def test_iou_examples():
    x = np.zeros((64, 64), bool)
    x[:5, :10] = True
    y = np.zeros((64, 64), bool)
    y[:10, :10] = True
    assert iou(x, x) == 1.0
    assert iou(x, np.roll(x, 20, axis=0)) == 0.0
    assert iou(x, y) == 0.5
    assert iou(np.zeros_like(x), np.zeros_like(x)) == 1.0


def test_chamfer_reward():
    rng = np.random.default_rng(2)
    x = random_sparse(rng, 30)
    assert chamfer_reward(x, x) == 1.0
    assert chamfer_reward(x, np.zeros_like(x)) == CFG.delta
    for _ in range(30):
        a, b = random_sparse(rng, 40), random_sparse(rng, 60)
        cover = (a & b).sum() / a.sum()
        full = chamfer_reward(a, b) + cover
        if full > CFG.delta:
            assert reward(a, b) == pytest.approx(full, abs=1e-12)
    assert score("chamfer-only", x, x, CFG) == 1.0 and score("full", x, x, CFG) == 2.0
    with pytest.raises(ValueError):
        score("other", x, x, CFG)


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(gamma=0.5)
    with pytest.raises(ValueError):
        RewardConfig(delta=1.0)
