"""Grammar-encoded LSTM policy over CSG programs.

At each step the decoder pops the grammar stack, feeds
``[embed(popped symbol), encode(top of image stack), encode(target)]`` to an
LSTM cell, and masks the output logits to the expansions the popped symbol
allows. Sampled shapes and operations drive an image stack that mirrors
program execution, so the next step sees the partial render.

A :class:`Rollout` binds the policy to one target image and implements the
model protocol used by :mod:`csgparse.swor`. For training it records every
step as ``(logp, entropy)`` graph nodes in ``rollout.steps``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .grammar import (
    Kind, MASK_VALUE, GrammarError, GrammarStack, Vocabulary, apply_token, extract_program,
    initial_stack, is_valid_program, step_mask,
)
from .render import SIZE, apply_op, rasterize


@dataclass(frozen=True)
class PolicyConfig:
    channels: tuple = (8, 16, 32)
    embed_dim: int = 128  # image embedding
    token_dim: int = 64
    hidden: int = 128
    stack_depth: int = 1  # how many top images of the image stack are encoded
    input_pool: int = 1  # average-pool factor applied to images before the encoders
    image_size: int = SIZE
    max_shapes: int = 3
    grammar_mask: bool = True
    triangle: str = "inscribed"

    def __post_init__(self):
        n_pools = len(self.channels)
        side = self.image_size // self.input_pool
        if self.image_size % self.input_pool or side % (2 ** n_pools):
            raise ValueError(f"image size {self.image_size} / pool {self.input_pool} "
                             f"not divisible by 2^{n_pools}")
        if self.stack_depth < 1:
            raise ValueError("stack_depth must be >= 1")
        if self.max_shapes < 1:
            raise ValueError("max_shapes must be >= 1")

    @property
    def max_steps(self) -> int:
        # S, then per shape: E, P, shape; per op: E (as EET) and T; then $
        return 4 * self.max_shapes if self.grammar_mask else 2 * self.max_shapes

    @property
    def flat_dim(self) -> int:
        side = self.image_size // self.input_pool // (2 ** len(self.channels))
        return side * side * self.channels[-1]


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Policy:
    def __init__(self, vocab: Vocabulary, cfg: PolicyConfig = PolicyConfig(), seed: int = 0):
        self.vocab, self.cfg = vocab, cfg
        self.store = nn.ParameterStore()
        rng = np.random.default_rng(seed)
        add = self.store.add
        for enc in ("target", "stack"):
            c_in = 1
            for li, c_out in enumerate(cfg.channels):
                add(f"{enc}.conv{li}.w", _he(rng, (3, 3, c_in, c_out), 9 * c_in))
                add(f"{enc}.conv{li}.b", np.zeros(c_out))
                c_in = c_out
            add(f"{enc}.fc.w", _he(rng, (cfg.flat_dim, cfg.embed_dim), cfg.flat_dim))
            add(f"{enc}.fc.b", np.zeros(cfg.embed_dim))
        add("embed", rng.standard_normal((vocab.n_embed, cfg.token_dim)) * 0.1)
        n_in = cfg.token_dim + cfg.embed_dim * (cfg.stack_depth + 1)
        H = cfg.hidden
        lim = 1.0 / np.sqrt(H)
        add("lstm.w", rng.uniform(-lim, lim, (n_in + H, 4 * H)))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        add("lstm.b", b)
        add("out.w", rng.uniform(-lim, lim, (H, len(vocab))))
        add("out.b", np.zeros(len(vocab)))
        self.shape_images = [rasterize(s, cfg.image_size, cfg.triangle) for s in vocab.shapes]

    def weights(self, grad: bool) -> dict[str, nn.Tensor]:
        if grad:
            return dict(self.store.params)
        return {n: nn.constant(t.value) for n, t in self.store.params.items()}

    def meta(self) -> dict:
        c = self.cfg
        return {"vocab": self.vocab.signature(), "policy": {
            "channels": list(c.channels), "embed_dim": c.embed_dim, "token_dim": c.token_dim,
            "hidden": c.hidden, "stack_depth": c.stack_depth, "input_pool": c.input_pool,
            "image_size": c.image_size, "max_shapes": c.max_shapes,
            "grammar_mask": c.grammar_mask, "triangle": c.triangle}}

    @staticmethod
    def config_from_meta(meta: dict) -> PolicyConfig:
        p = dict(meta["policy"])
        p["channels"] = tuple(p["channels"])
        return PolicyConfig(**p)

    # encoders -------------------------------------------------------------
    def preprocess(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        k = self.cfg.input_pool
        if k > 1:
            n, h, w = x.shape
            x = x.reshape(n, h // k, k, w // k, k).mean(axis=(2, 4))
        return x[..., None]

    def encode(self, images: np.ndarray, which: str, W: dict) -> nn.Tensor:
        """``[N, H, W]`` bitmaps to ``[N, embed_dim]`` embeddings."""
        images = np.asarray(images)
        if images.ndim != 3 or images.shape[1:] != (self.cfg.image_size,) * 2:
            raise ValueError(f"expected [N,{self.cfg.image_size},{self.cfg.image_size}] images, "
                             f"got {images.shape}")
        x = nn.constant(self.preprocess(images))
        for li in range(len(self.cfg.channels)):
            x = nn.relu(nn.conv2d(x, W[f"{which}.conv{li}.w"], W[f"{which}.conv{li}.b"]))
            x = nn.maxpool2d(x, 2)
        x = nn.reshape(x, (x.shape[0], -1))
        return nn.relu(nn.dense(x, W[f"{which}.fc.w"], W[f"{which}.fc.b"]))

    def encode_target(self, target: np.ndarray, grad: bool = False) -> nn.Tensor:
        return self.encode(np.asarray(target)[None], "target", self.weights(grad))

    def rollout(self, target: np.ndarray, grad: bool = True) -> "Rollout":
        return Rollout(self, target, grad)


@dataclass(frozen=True)
class DecoderState:
    stack: GrammarStack | None  # None for the unconstrained language model
    images: tuple = ()  # ids into the rollout image table, top last
    hrow: int | None = None  # row of the previous step's hidden state
    last: int = 0  # previous token (unconstrained model input)
    t: int = 0
    ended: bool = False
    invalid: bool = False  # only reachable without the grammar mask


class Rollout:
    """One target image bound to a policy; implements the sampler protocol."""

    def __init__(self, policy: Policy, target: np.ndarray, grad: bool = True):
        self.policy, self.vocab, self.cfg = policy, policy.vocab, policy.cfg
        self.W = policy.weights(grad)
        self.target = np.asarray(target, dtype=bool)
        self.target_emb = policy.encode(self.target[None], "target", self.W)
        blank = np.zeros((self.cfg.image_size,) * 2, dtype=bool)
        self._images: list[np.ndarray] = [blank]
        self._ids: dict[bytes, int] = {blank.tobytes(): 0}
        self._shape_ids = [self._intern(img) for img in policy.shape_images]
        self._enc_nodes: list[nn.Tensor] = []
        self._enc_at: dict[int, tuple[int, int]] = {}
        self.steps: list[tuple[nn.Tensor, nn.Tensor]] = []
        self._hc: tuple[nn.Tensor, nn.Tensor] | None = None
        self.n_encoded = 0
        mask = self.vocab.unmasked_for_naive()
        self._naive_add = np.where(mask, 0.0, MASK_VALUE)
        end_only = np.zeros(len(self.vocab), dtype=bool)
        end_only[self.vocab.end] = True
        self._naive_end = np.where(end_only, 0.0, MASK_VALUE)

    def _intern(self, img: np.ndarray) -> int:
        key = img.tobytes()
        i = self._ids.get(key)
        if i is None:
            i = self._ids[key] = len(self._images)
            self._images.append(img)
        return i

    def image(self, image_id: int) -> np.ndarray:
        return self._images[image_id]

    def _encode_ids(self, ids: list[int]) -> nn.Tensor:
        new = [i for i in dict.fromkeys(ids) if i not in self._enc_at]
        if new:
            node = self.policy.encode(np.stack([self._images[i] for i in new]), "stack", self.W)
            src = len(self._enc_nodes)
            self._enc_nodes.append(node)
            for r, i in enumerate(new):
                self._enc_at[i] = (src, r)
            self.n_encoded += len(new)
        which, rows = zip(*(self._enc_at[i] for i in ids))
        return nn.gather_multi(self._enc_nodes, which, rows)

    # protocol -------------------------------------------------------------
    def root(self) -> DecoderState:
        return DecoderState(initial_stack() if self.cfg.grammar_mask else None,
                            last=self.vocab.start)

    def finished(self, state: DecoderState) -> bool:
        return state.stack.empty if state.stack is not None else state.ended

    def step(self, states):
        vocab, B = self.vocab, len(states)
        if not states:
            raise ValueError("step needs at least one state")
        emb_rows, mask_add = [], np.empty((B, len(vocab)))
        for r, s in enumerate(states):
            if s.stack is not None:
                popped, rest = s.stack.pop()
                emb_rows.append(vocab.embed_row[popped])
                m = step_mask(vocab, popped, rest, self.cfg.max_shapes)
                mask_add[r] = np.where(m, 0.0, MASK_VALUE)
            else:
                emb_rows.append(s.last)
                last_step = s.t >= self.cfg.max_steps - 1
                mask_add[r] = self._naive_end if last_step else self._naive_add
        depth = self.cfg.stack_depth
        stack_encs = []
        for d in range(1, depth + 1):
            ids = [s.images[-d] if len(s.images) >= d else 0 for s in states]
            stack_encs.append(self._encode_ids(ids))
        tgt = nn.take_rows(self.target_emb, np.zeros(B, dtype=np.intp))
        x = nn.concat([nn.embedding_lookup(self.W["embed"], emb_rows)] + stack_encs + [tgt], axis=1)
        H = self.cfg.hidden
        if self._hc is None:
            h = c = nn.constant(np.zeros((B, H)))
        else:
            rows = [s.hrow for s in states]
            h, c = nn.take_rows(self._hc[0], rows), nn.take_rows(self._hc[1], rows)
        h, c = nn.lstm_cell(x, h, c, self.W["lstm.w"], self.W["lstm.b"])
        self._hc = (h, c)
        logp = nn.log_softmax(nn.dense(h, self.W["out.w"], self.W["out.b"]), mask_add)
        ent = nn.row_entropy(logp)
        self.steps.append((logp, ent))
        out = np.where(mask_add < 0, -np.inf, logp.value)
        return out, ent.value

    def advance(self, state: DecoderState, token: int, row: int) -> DecoderState:
        vocab, token = self.vocab, int(token)
        kind = vocab.kinds[token]
        stack = state.stack
        if stack is not None:
            popped, rest = stack.pop()
            stack = apply_token(vocab, popped, rest, token)
        images, invalid, ended = state.images, state.invalid, state.ended
        if kind is Kind.SHAPE:
            images = images + (self._shape_ids[token - vocab.shape_slice.start],)
        elif kind is Kind.OP:
            if len(images) < 2:
                if state.stack is not None:
                    raise GrammarError("image stack underflow under the grammar mask")
                invalid = True
            else:
                a, b = self._images[images[-2]], self._images[images[-1]]
                images = images[:-2] + (self._intern(apply_op(vocab[token].value, a, b)),)
        elif kind is Kind.END:
            ended = True
        return DecoderState(stack, images, row, token, state.t + 1, ended, invalid)

    # results --------------------------------------------------------------
    def output(self, state: DecoderState) -> np.ndarray | None:
        """Rendered program of a finished state, or None if it is not a valid program."""
        if state.invalid or len(state.images) != 1:
            return None
        return self._images[state.images[0]]

    def program(self, tokens) -> tuple:
        prog = extract_program(self.vocab, tokens)
        return prog if is_valid_program(prog) else ()
