"""Entropy estimators and the entropy-regularised REINFORCE objective.

Gradients are assembled as a surrogate scalar ``J`` that is linear in the
per-step log-probabilities and per-step entropies recorded by a model. The
coefficients are plain floats (reward, weights, normalisers and baseline are
detached), so ``grad J`` is exactly the estimator being implemented.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .swor import Beam, SworBatch, importance_weights, weights


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float = 0.05
    normalize: bool = True  # 1/W, 1/W^i and per-step 1/W_j (biased, lower variance)
    baseline: bool = True  # subtract B/W
    # differentiate p in the p/q weight of the entropy estimator (score-function term)
    entropy_score_term: bool = True
    iid_entropy: str = "naive"  # estimator used with i.i.d. samples: "naive" or "decomposed"


@dataclass
class LossReport:
    reinforce: float
    entropy: float
    alpha: float
    mean_reward: float
    max_reward: float
    loss: float
    rewards: list = field(default_factory=list)
    weights: list = field(default_factory=list)


# estimators ---------------------------------------------------------------

def naive_entropy(logps: Sequence[float]) -> float:
    """``-(1/K) sum log P(s_i)`` over i.i.d. samples."""
    return -float(np.mean(logps))


def decomposed_entropy(step_entropies: Sequence[Sequence[float]]) -> float:
    """``(1/K) sum_i sum_j H(X_j | prefix_i)``."""
    return float(np.mean([np.sum(h) for h in step_entropies]))


def swor_entropy(batch: SworBatch, normalize: bool = True) -> float:
    """Importance-weighted decomposed entropy, one weighted sum per step."""
    total = 0.0
    for lvl in batch.levels:
        beams = lvl.beams[: batch.k]
        w = importance_weights([b.phi for b in beams], lvl.kappa)
        h = np.array([b.h_step for b in beams])
        s = float(np.dot(w, h))
        if normalize:
            Wj = float(w.sum())
            if not Wj > 0:
                raise ValueError("degenerate step normaliser W_j = 0")
            s /= Wj
        total += s
    return total


def swor_naive_entropy(batch: SworBatch, normalize: bool = True) -> float:
    beams = batch.samples
    phi = np.array([b.phi for b in beams])
    w = importance_weights(phi, batch.kappa)
    s = -float(np.dot(w, phi))
    return s / float(w.sum()) if normalize else s


def swor_expectation(batch: SworBatch, f: Sequence[float], normalize: bool = False) -> float:
    """``sum (p/q) f``, or ``B/W`` when normalised."""
    wt = weights([b.phi for b in batch.samples], batch.kappa, f)
    return wt.B / wt.W if normalize else wt.B


# surrogate coefficients ---------------------------------------------------

Coefs = tuple[dict, dict]  # ({(level,row,token): c}, {(level,row): c})


def _add_path(table: dict, beam: Beam, c: float, upto: int | None = None) -> None:
    for (lvl, row, tok) in beam.path:
        if upto is not None and lvl > upto:
            break
        table[(lvl, row, tok)] += c


def swor_coefficients(batch: SworBatch, rewards: Sequence[float], cfg: ObjectiveConfig) -> tuple[Coefs, dict]:
    f = np.asarray(rewards, dtype=np.float64)
    samples = batch.samples
    wt = weights([b.phi for b in samples], batch.kappa, f)
    base = wt.B / wt.W if cfg.baseline else 0.0
    denom = wt.Wi if cfg.normalize else np.ones_like(wt.w)
    c = wt.w / denom * (f - base)
    lp, ent = defaultdict(float), defaultdict(float)
    for beam, ci in zip(samples, c):
        _add_path(lp, beam, float(ci))
    h_est = 0.0
    for j, lvl in enumerate(batch.levels):
        beams = lvl.beams[: batch.k]
        w = importance_weights([b.phi for b in beams], lvl.kappa)
        Wj = float(w.sum()) if cfg.normalize else 1.0
        for b, wi in zip(beams, w):
            if b.row is None:  # finished earlier: no step taken at this level
                continue
            h_est += wi * b.h_step / Wj
            if cfg.alpha:
                ent[(j, b.row)] += cfg.alpha * wi / Wj
                if cfg.entropy_score_term:
                    _add_path(lp, b, cfg.alpha * wi * b.h_step / Wj, upto=j)
    reinforce = wt.B / wt.W if cfg.normalize else wt.B
    report = dict(reinforce=float(reinforce), entropy=float(h_est), weights=wt.w.tolist())
    return (lp, ent), report


def iid_coefficients(samples: Sequence[Beam], rewards: Sequence[float], cfg: ObjectiveConfig) -> tuple[Coefs, dict]:
    f = np.asarray(rewards, dtype=np.float64)
    K = len(samples)
    base = float(f.mean()) if cfg.baseline else 0.0
    lp, ent = defaultdict(float), defaultdict(float)
    for b, fi in zip(samples, f):
        _add_path(lp, b, (fi - base) / K)
    if cfg.iid_entropy == "naive":
        h_est = naive_entropy([b.phi for b in samples])
        if cfg.alpha:
            # gradient of -(1/K) sum log p(s_i) with the samples held fixed
            for b in samples:
                _add_path(lp, b, -cfg.alpha / K)
    elif cfg.iid_entropy == "decomposed":
        h_est = decomposed_entropy([b.ents for b in samples])
        if cfg.alpha:
            for b in samples:
                for (lvl, row, _tok) in b.path:
                    ent[(lvl, row)] += cfg.alpha / K
    else:
        raise ValueError(f"unknown iid entropy estimator {cfg.iid_entropy!r}")
    report = dict(reinforce=float(f.mean()), entropy=float(h_est), weights=[1.0 / K] * K)
    return (lp, ent), report


def surrogate(steps: Sequence[tuple[nn.Tensor, nn.Tensor]], coefs: Coefs) -> nn.Tensor | None:
    """``J = sum c * logp[level][row, token] + sum e * H[level][row]`` as a graph node."""
    lp, ent = coefs
    by_level: dict[int, list] = defaultdict(list)
    for (lvl, row, tok), c in lp.items():
        if c:
            by_level[lvl].append((row, tok, c))
    ent_level: dict[int, list] = defaultdict(list)
    for (lvl, row), c in ent.items():
        if c:
            ent_level[lvl].append((row, c))
    terms = []
    for lvl, items in sorted(by_level.items()):
        rows, toks, cs = zip(*items)
        g = nn.gather_logprob(steps[lvl][0], rows, toks)
        terms.append(nn.dot_const(g, cs))
    for lvl, items in sorted(ent_level.items()):
        rows, cs = zip(*items)
        h = steps[lvl][1]
        full = np.zeros(h.shape)
        np.add.at(full, np.asarray(rows), cs)
        terms.append(nn.dot_const(h, full))
    if not terms:
        return None
    total = terms[0]
    for t in terms[1:]:
        total = nn.add(total, t)
    return total


def total_update(model, batch, rewards: Sequence[float], cfg: ObjectiveConfig,
                 scale: float = 1.0, iid: bool = False) -> LossReport:
    """Backpropagate ``-scale * J`` through ``model.steps`` and report the terms."""
    if iid:
        coefs, rep = iid_coefficients(batch, rewards, cfg)
    else:
        coefs, rep = swor_coefficients(batch, rewards, cfg)
    J = surrogate(model.steps, coefs)
    if J is not None and J.requires_grad:
        nn.backward(J, np.asarray(-scale))
    f = np.asarray(rewards, dtype=np.float64)
    loss = -(rep["reinforce"] + cfg.alpha * rep["entropy"])
    return LossReport(rep["reinforce"], rep["entropy"], cfg.alpha, float(f.mean()),
                      float(f.max()), loss, f.tolist(), rep["weights"])
