"""Sampling sequences without replacement by stochastic beam search.

A model is any object with

    root() -> state
    finished(state) -> bool
    step(states) -> (logp [B, A], entropy [B])   # masked entries are -inf
    advance(state, token, row) -> state          # row: index of state in the step batch

Every beam carries ``phi`` (log-probability of its prefix) and ``score``
(the Gumbel score conditioned on its ancestors). A finished beam stays in
the pool unchanged, which is the same as expanding it with a single
probability-one token, so every level is a complete set of disjoint
prefixes and the top-(k+1) beams at each level are the top-(k+1) perturbed
prefixes of that level.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Beam:
    state: object
    phi: float
    score: float
    tokens: tuple = ()
    # ((level, row, token), ...): the model steps whose chosen log-prob sum to phi
    path: tuple = ()
    ents: tuple = ()  # entropy of each step in ``path``
    row: int | None = None  # row of the parent in this level's step batch; None if it was finished
    h_step: float = 0.0  # entropy of the step that produced this beam


@dataclass
class Level:
    beams: list[Beam]  # descending by score
    kappa: float  # (k+1)-th largest score, -inf when no beam was dropped


@dataclass
class SworBatch:
    k: int
    levels: list[Level] = field(default_factory=list)

    @property
    def final(self) -> list[Beam]:
        return self.levels[-1].beams if self.levels else []

    @property
    def samples(self) -> list[Beam]:
        return self.final[: self.k]

    @property
    def kappa(self) -> float:
        return self.levels[-1].kappa if self.levels else -np.inf

    def estimation_beams(self, j: int) -> list[Beam]:
        return self.levels[j].beams[: self.k]


def gumbel_perturb(phi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``phi + Gumbel(0, 1)`` noise; ``-inf`` entries stay ``-inf``."""
    phi = np.asarray(phi, dtype=np.float64)
    out = np.full(phi.shape, -np.inf)
    ok = np.isfinite(phi)
    out[ok] = phi[ok] + rng.gumbel(size=int(ok.sum()))
    return out


def sample_gumbel(loc: float, rng: np.random.Generator) -> float:
    return float(loc + rng.gumbel())


def _log1mexp(a: np.ndarray) -> np.ndarray:
    """``log(1 - exp(a))`` for ``a <= 0``."""
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    near = a > -np.log(2.0)
    out[near] = np.log(-np.expm1(a[near]))
    out[~near] = np.log1p(-np.exp(a[~near]))
    return out


def adjust(g: np.ndarray, g_parent: float, z: float | None = None) -> np.ndarray:
    """Condition child scores on their maximum being ``g_parent``.

    Evaluates ``-log(exp(-g_parent) - exp(-z) + exp(-g))`` without forming
    the exponentials; the child that attains ``z`` maps to ``g_parent``.
    """
    if not np.isfinite(g_parent):
        raise ValueError(f"parent score must be finite, got {g_parent}")
    g = np.asarray(g, dtype=np.float64)
    out = np.full(g.shape, -np.inf)
    ok = np.isfinite(g)
    if not ok.any():
        return out
    if z is None:
        z = float(g[ok].max())
    gv = g[ok]
    with np.errstate(divide="ignore"):
        v = g_parent - gv + _log1mexp(gv - z)
    out[ok] = g_parent - np.maximum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    return out


def q_kappa(phi, kappa: float):
    """``P(Gumbel(phi) > kappa) = 1 - exp(-exp(phi - kappa))``."""
    phi = np.asarray(phi, dtype=np.float64)
    if kappa == -np.inf:
        return np.ones_like(phi)
    return -np.expm1(-np.exp(phi - kappa))


def log_q_kappa(phi, kappa: float):
    phi = np.asarray(phi, dtype=np.float64)
    if kappa == -np.inf:
        return np.zeros_like(phi)
    return _log1mexp(-np.exp(phi - kappa))


def importance_weights(phi, kappa: float) -> np.ndarray:
    """``p / q`` per beam, computed in log space."""
    phi = np.asarray(phi, dtype=np.float64)
    return np.exp(phi - log_q_kappa(phi, kappa))


@dataclass(frozen=True)
class Weights:
    w: np.ndarray
    W: float
    Wi: np.ndarray
    B: float


def weights(phi, kappa: float, f=None) -> Weights:
    """Importance weights and the normalisers ``W``, ``W^i`` and baseline ``B``.

    With ``kappa = -inf`` (support exhausted) the weights are the exact
    probabilities.
    """
    phi = np.asarray(phi, dtype=np.float64)
    w = importance_weights(phi, kappa)
    W = float(w.sum())
    Wi = W - w + np.exp(phi)
    B = float(np.dot(w, f)) if f is not None else float("nan")
    return Weights(w, W, Wi, B)


def select_top(candidates: list[tuple[float, int, int]], n: int) -> list[int]:
    """Indices of the ``n`` best ``(score, beam, token)`` candidates.

    Ties go to the lower beam index, then the lower token index.
    """
    order = sorted(range(len(candidates)),
                   key=lambda c: (-candidates[c][0], candidates[c][1], candidates[c][2]))
    return order[:n]


def _expand(model, beams: list[Beam], level: int, n_keep: int, rng, stochastic: bool):
    active = [i for i, b in enumerate(beams) if not model.finished(b.state)]
    if not active:
        return None
    logp, ent = model.step([beams[i].state for i in active])
    rows = {i: r for r, i in enumerate(active)}
    cands: list[tuple[float, int, int]] = []
    child_phi: dict[tuple[int, int], float] = {}
    for i, b in enumerate(beams):
        r = rows.get(i)
        if r is None:
            cands.append((b.score, i, -1))
            continue
        phis = b.phi + logp[r]
        if stochastic:
            scores = adjust(gumbel_perturb(phis, rng), b.score)
        else:
            scores = phis
        for a in np.flatnonzero(np.isfinite(phis)):
            cands.append((float(scores[a]), i, int(a)))
            child_phi[(i, int(a))] = float(phis[a])
    chosen = select_top(cands, n_keep)
    new = []
    for c in chosen:
        score, i, a = cands[c]
        b = beams[i]
        if a < 0:
            new.append(Beam(b.state, b.phi, b.score, b.tokens, b.path, b.ents, None, 0.0))
            continue
        r = rows[i]
        h = float(ent[r])
        new.append(Beam(model.advance(b.state, a, r), child_phi[(i, a)], score,
                        b.tokens + (a,), b.path + ((level, r, a),), b.ents + (h,), r, h))
    return new, len(cands)


def stochastic_beam_search(model, k: int, rng: np.random.Generator, max_steps: int,
                           root_score: float | None = None) -> SworBatch:
    """Draw ``k`` distinct sequences without replacement, keeping ``k + 1`` beams.

    The root score is sampled from Gumbel(0) unless given; fixing it biases
    the ``p / q`` weights.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    g0 = sample_gumbel(0.0, rng) if root_score is None else float(root_score)
    beams = [Beam(model.root(), 0.0, g0)]
    batch = SworBatch(k)
    for j in range(max_steps):
        res = _expand(model, beams, j, k + 1, rng, stochastic=True)
        if res is None:
            break
        beams, n_cands = res
        kappa = beams[k].score if n_cands > k else -np.inf
        batch.levels.append(Level(beams, kappa))
    if any(not model.finished(b.state) for b in beams):
        raise RuntimeError(f"sequences unfinished after {max_steps} steps")
    return batch


def beam_search(model, k: int, max_steps: int) -> list[Beam]:
    """Deterministic top-``k`` beam search by log-probability."""
    beams = [Beam(model.root(), 0.0, 0.0)]
    for j in range(max_steps):
        res = _expand(model, beams, j, k, None, stochastic=False)
        if res is None:
            break
        beams = res[0]
    return beams


def sample_iid(model, n: int, rng: np.random.Generator, max_steps: int) -> list[Beam]:
    """Ancestral sampling of ``n`` independent sequences (with replacement)."""
    root = model.root()
    beams = [Beam(root, 0.0, 0.0) for _ in range(n)]
    for j in range(max_steps):
        active = [i for i, b in enumerate(beams) if not model.finished(b.state)]
        if not active:
            break
        logp, ent = model.step([beams[i].state for i in active])
        for r, i in enumerate(active):
            b = beams[i]
            p = np.exp(logp[r])
            a = int(rng.choice(len(p), p=p / p.sum()))
            h = float(ent[r])
            beams[i] = Beam(model.advance(b.state, a, r), b.phi + float(logp[r, a]), 0.0,
                            b.tokens + (a,), b.path + ((j, r, a),), b.ents + (h,), r, h)
    if any(not model.finished(b.state) for b in beams):
        raise RuntimeError(f"sequences unfinished after {max_steps} steps")
    return beams
