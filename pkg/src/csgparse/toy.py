"""Small enumerable autoregressive models for checking samplers and estimators.

``TreeModel`` is a fixed-depth tree with ``n_actions`` children per node and
its own logits at every internal node. An optional ``stop`` action ends a
sequence early, which exercises finished beams. With ``differentiable=True``
the logits are a parameter and every ``step`` call is recorded in
``self.steps`` as ``(logp, entropy)`` graph nodes, the same trace the policy
exposes to :func:`csgparse.objective.surrogate`.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import nn


@dataclass(frozen=True)
class Leaf:
    tokens: tuple
    logp: float
    step_entropies: tuple


class TreeModel:
    def __init__(self, depth: int = 3, n_actions: int = 4, seed: int = 0, scale: float = 1.0,
                 stop: int | None = None, logits: np.ndarray | None = None,
                 differentiable: bool = False):
        self.depth, self.n_actions, self.stop = depth, n_actions, stop
        self.nodes: dict[tuple, int] = {}
        for d in range(depth):
            for prefix in product(range(n_actions), repeat=d):
                if stop is not None and stop in prefix:
                    continue
                self.nodes[prefix] = len(self.nodes)
        if logits is None:
            logits = scale * np.random.default_rng(seed).standard_normal((len(self.nodes), n_actions))
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (len(self.nodes), n_actions):
            raise ValueError(f"logits must have shape {(len(self.nodes), n_actions)}")
        self.differentiable = differentiable
        self.theta = nn.parameter(logits) if differentiable else nn.constant(logits)
        self.steps: list[tuple[nn.Tensor, nn.Tensor]] = []

    # protocol -------------------------------------------------------------
    def root(self) -> tuple:
        return ()

    def finished(self, state: tuple) -> bool:
        return len(state) == self.depth or (self.stop is not None and self.stop in state)

    def step(self, states):
        ids = [self.nodes[s] for s in states]
        logp = nn.log_softmax(nn.take_rows(self.theta, ids))
        ent = nn.row_entropy(logp)
        if self.differentiable:
            self.steps.append((logp, ent))
        return logp.value, ent.value

    def advance(self, state: tuple, token: int, row: int) -> tuple:
        return state + (int(token),)

    def reset(self) -> None:
        self.steps = []

    # exact quantities -----------------------------------------------------
    def node_logp(self, prefix: tuple) -> np.ndarray:
        z = self.theta.value[self.nodes[prefix]]
        return z - np.logaddexp.reduce(z)

    def leaves(self) -> list[Leaf]:
        out = []

        def walk(prefix, lp, ents):
            if self.finished(prefix):
                out.append(Leaf(prefix, lp, ents))
                return
            row = self.node_logp(prefix)
            h = float(-(np.exp(row) * row).sum())
            for a in range(self.n_actions):
                walk(prefix + (a,), lp + float(row[a]), ents + (h,))

        walk((), 0.0, ())
        return out

    def entropy(self) -> float:
        return float(-sum(np.exp(l.logp) * l.logp for l in self.leaves()))

    def expectation(self, f) -> float:
        return float(sum(np.exp(l.logp) * f(l.tokens) for l in self.leaves()))

    def grad_expectation(self, f) -> np.ndarray:
        """Exact ``d/dlogits E_p[f]`` by enumeration."""
        g = np.zeros(self.theta.shape)
        for leaf in self.leaves():
            p = np.exp(leaf.logp)
            fx = f(leaf.tokens)
            for d, a in enumerate(leaf.tokens):
                node = self.nodes[leaf.tokens[:d]]
                probs = np.exp(self.node_logp(leaf.tokens[:d]))
                g[node] += p * fx * (np.eye(self.n_actions)[a] - probs)
        return g
