"""Standalone estimator studies: the 100-way entropy ascent demo and the variance sweep."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objective import decomposed_entropy, naive_entropy, swor_entropy, swor_naive_entropy
from .swor import importance_weights, sample_iid, stochastic_beam_search
from .toy import TreeModel


# entropy ascent on a categorical ------------------------------------------------

@dataclass(frozen=True)
class EntropyDemoConfig:
    m: int = 100
    iterations: int = 700
    swor_k: int = 20
    swr_k: int = 40
    lr: float = 0.1
    spikes: int = 3
    spike_logit: float = 6.0  # the rest start at 0
    seed: int = 0
    # "estimator": ascend the SWR estimator itself with the draws held fixed;
    # "score": use the unbiased score-function entropy gradient instead
    swr_gradient: str = "estimator"

    def __post_init__(self):
        if not 0 < self.swor_k < self.m:
            raise ValueError("swor_k must lie in (0, m)")
        if self.swr_k < 1 or self.iterations < 1 or self.spikes > self.m:
            raise ValueError("bad entropy demo configuration")
        if self.swr_gradient not in ("estimator", "score"):
            raise ValueError(f"unknown swr_gradient {self.swr_gradient!r}")


def initial_logits(cfg: EntropyDemoConfig) -> np.ndarray:
    theta = np.zeros(cfg.m)
    theta[: cfg.spikes] = cfg.spike_logit
    return theta


def exact_entropy(theta: np.ndarray) -> float:
    lp = theta - np.logaddexp.reduce(theta)
    p = np.exp(lp)
    return float(-(p[p > 0] * lp[p > 0]).sum())


def _swor_gradient(theta, k, rng):
    """Gradient of ``-sum (p/q) log p`` over k distinct draws, q held fixed."""
    lp = theta - np.logaddexp.reduce(theta)
    p = np.exp(lp)
    g = lp + rng.gumbel(size=lp.shape)
    order = np.argsort(-g, kind="stable")
    idx, kappa = order[:k], g[order[k]]
    w = importance_weights(lp[idx], kappa)
    coef = -w * (lp[idx] + 1.0)
    return _score_sum(coef, idx, p)


def _swr_gradient(theta, k, rng, mode):
    lp = theta - np.logaddexp.reduce(theta)
    p = np.exp(lp)
    idx = rng.choice(len(p), size=k, p=p)
    if mode == "estimator":
        coef = np.full(k, -1.0 / k)  # d/dtheta of -(1/K) sum log p(s_i)
    else:
        coef = -(lp[idx] + 1.0) / k
    return _score_sum(coef, idx, p)


def _score_sum(coef, idx, p):
    # sum_i c_i * d log p(idx_i) / d theta = sum_i c_i (e_idx_i - p)
    g = np.zeros_like(p)
    np.add.at(g, idx, coef)
    return g - coef.sum() * p


def entropy_demo(cfg: EntropyDemoConfig = EntropyDemoConfig()) -> dict:
    """Per-iteration exact entropy of both arms plus the final distributions."""
    out = {}
    for arm, seed_tag in (("swor", 0), ("swr", 1)):
        rng = np.random.default_rng([cfg.seed, seed_tag])
        theta = initial_logits(cfg)
        hist = []
        for _ in range(cfg.iterations):
            hist.append(exact_entropy(theta))
            if arm == "swor":
                g = _swor_gradient(theta, cfg.swor_k, rng)
            else:
                g = _swr_gradient(theta, cfg.swr_k, rng, cfg.swr_gradient)
            theta = theta + cfg.lr * g
        hist.append(exact_entropy(theta))
        out[arm] = {"entropy": np.array(hist), "probs": np.exp(theta - np.logaddexp.reduce(theta))}
    return out


def write_entropy_demo(result: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "entropy.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "swor_entropy", "swr_entropy"])
        for i, (a, b) in enumerate(zip(result["swor"]["entropy"], result["swr"]["entropy"])):
            w.writerow([i, repr(float(a)), repr(float(b))])
    with open(out / "final_distribution.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["category", "swor_prob", "swr_prob"])
        for i, (a, b) in enumerate(zip(result["swor"]["probs"], result["swr"]["probs"])):
            w.writerow([i, repr(float(a)), repr(float(b))])


def tail_mean(series: np.ndarray, window: int = 50) -> float:
    return float(np.mean(series[-window:]))


# variance study -------------------------------------------------------------

ARMS = ("swr_naive", "swr_decomposed", "swor_naive", "swor_decomposed")
VARIANCE_FIELDS = ["count", "arm", "mean", "std"]


def estimate_once(model_factory, count: int, rng, max_steps: int) -> dict:
    """All four estimates from one SWR draw and one SWOR batch of ``count`` samples."""
    iid = sample_iid(model_factory(), count, rng, max_steps)
    batch = stochastic_beam_search(model_factory(), count, rng, max_steps)
    return {
        "swr_naive": naive_entropy([b.phi for b in iid]),
        "swr_decomposed": decomposed_entropy([b.ents for b in iid]),
        "swor_naive": swor_naive_entropy(batch),
        "swor_decomposed": swor_entropy(batch),
    }


def variance_study(model_factory, max_steps: int, counts=(2, 5, 10, 20, 40, 80), repeats: int = 100,
                   seed: int = 0) -> list[dict]:
    """``model_factory()`` returns a fresh sampler model (a policy rollout is single-use)."""
    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    rows = []
    for count in counts:
        rng = np.random.default_rng([seed, count])
        vals = {a: [] for a in ARMS}
        for _ in range(repeats):
            est = estimate_once(model_factory, count, rng, max_steps)
            for a in ARMS:
                vals[a].append(est[a])
        for a in ARMS:
            v = np.asarray(vals[a])
            rows.append({"count": count, "arm": a, "mean": float(v.mean()), "std": float(v.std(ddof=1))})
    return rows


def toy_factory(depth: int = 3, n_actions: int = 4, seed: int = 0, scale: float = 1.5):
    m = TreeModel(depth=depth, n_actions=n_actions, seed=seed, scale=scale)
    return (lambda: m), m


def write_variance(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(VARIANCE_FIELDS)
        for r in rows:
            w.writerow([r["count"], r["arm"], repr(r["mean"]), repr(r["std"])])
