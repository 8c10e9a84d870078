"""CSG program grammar, the grammar stack, and output masking.

The grammar is

    S -> E
    E -> E E T | P
    T -> + | - | *
    P -> SHAPE_1 | ... | SHAPE_n

Generation pops one symbol from the grammar stack per step and emits one
vocabulary token naming the production taken. The popped symbol decides the
mask, so every masked rollout spells a valid postfix program once the
non-terminal tokens are discarded.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .render import ShapeSpec

MASK_VALUE = -1e9


class Kind(enum.Enum):
    START = "S"
    END = "$"
    E = "E"
    T = "T"
    EET = "EET"
    P = "P"
    OP = "op"
    SHAPE = "shape"


@dataclass(frozen=True)
class Token:
    kind: Kind
    value: object = None  # op character or ShapeSpec

    @property
    def is_terminal(self) -> bool:
        return self.kind in (Kind.SHAPE, Kind.OP)

    def __str__(self) -> str:
        if self.kind is Kind.SHAPE:
            return self.value.text
        if self.kind is Kind.OP:
            return self.value
        return self.kind.value


START = Token(Kind.START)
END = Token(Kind.END)
E = Token(Kind.E)
T = Token(Kind.T)
EET = Token(Kind.EET)
P = Token(Kind.P)
OPS = ("+", "-", "*")
OP_TOKENS = tuple(Token(Kind.OP, o) for o in OPS)

NONTERMINALS = (Kind.START, Kind.E, Kind.T, Kind.P)


class GrammarError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (token {position})")
        self.position = position


def shape_token(spec: ShapeSpec) -> Token:
    return Token(Kind.SHAPE, spec)


def expansions_of(nt: Token, shapes: Sequence[ShapeSpec]) -> list[tuple[Token, ...]]:
    """Right-hand sides of the productions for non-terminal ``nt``."""
    if nt.kind is Kind.START:
        return [(E,)]
    if nt.kind is Kind.E:
        return [(E, E, T), (P,)]
    if nt.kind is Kind.T:
        return [(t,) for t in OP_TOKENS]
    if nt.kind is Kind.P:
        return [(shape_token(s),) for s in shapes]
    raise GrammarError(f"{nt} is not a non-terminal")


class Vocabulary:
    """Ordered output tokens: start, end, shapes, operations, EET, P.

    S -> E is emitted as the start token; the E and T stack symbols have no
    output slot and get the two embedding rows after the vocabulary.
    """

    def __init__(self, shapes: Sequence[ShapeSpec]):
        self.shapes = tuple(shapes)
        self.tokens: tuple[Token, ...] = (
            (START, END)
            + tuple(shape_token(s) for s in self.shapes)
            + OP_TOKENS
            + (EET, P)
        )
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise GrammarError("duplicate shapes in vocabulary")
        self.start = 0
        self.end = 1
        self.shape_slice = slice(2, 2 + len(self.shapes))
        self.op_slice = slice(self.shape_slice.stop, self.shape_slice.stop + len(OPS))
        self.eet = self.op_slice.stop
        self.p = self.eet + 1
        self.kinds = [t.kind for t in self.tokens]
        n = len(self.tokens)
        masks = {}
        for kind, idx in (
            (Kind.START, [self.start]),
            (Kind.END, [self.end]),
            (Kind.E, [self.eet, self.p]),
            (Kind.T, list(range(self.op_slice.start, self.op_slice.stop))),
            (Kind.P, list(range(self.shape_slice.start, self.shape_slice.stop))),
        ):
            m = np.zeros(n, dtype=bool)
            m[idx] = True
            masks[kind] = m
        self._masks = masks
        # stack symbol -> embedding row
        self.embed_row = {
            Kind.START: self.start, Kind.END: self.end, Kind.P: self.p,
            Kind.E: n, Kind.T: n + 1,
        }
        self.n_embed = n + 2
        self.terminal = np.array([t.is_terminal for t in self.tokens])

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, i: int) -> Token:
        return self.tokens[i]

    def signature(self) -> list[str]:
        return [str(t) for t in self.tokens]

    def mask_for(self, top: Token | Kind) -> np.ndarray:
        kind = top.kind if isinstance(top, Token) else top
        try:
            return self._masks[kind]
        except KeyError:
            raise GrammarError(f"no mask for {kind}") from None

    def additive_mask(self, top: Token | Kind) -> np.ndarray:
        return np.where(self.mask_for(top), 0.0, MASK_VALUE)

    def unmasked_for_naive(self) -> np.ndarray:
        """Candidate set of the unconstrained language model: end, ops, shapes."""
        m = np.zeros(len(self), dtype=bool)
        m[self.end] = True
        m[self.shape_slice] = True
        m[self.op_slice] = True
        return m


@dataclass(frozen=True)
class GrammarStack:
    """Immutable grammar stack; the last element is the top."""

    items: tuple[Kind, ...] = (Kind.END, Kind.START)
    shapes_committed: int = 0  # shapes emitted so far plus one per E/P on the stack

    @property
    def empty(self) -> bool:
        return not self.items

    def pop(self) -> tuple[Kind, "GrammarStack"]:
        if not self.items:
            raise GrammarError("pop from empty grammar stack")
        return self.items[-1], GrammarStack(self.items[:-1], self.shapes_committed)

    def can_expand(self, max_shapes: int | None) -> bool:
        """Whether E -> EET keeps the program within ``max_shapes``.

        Call on the stack after popping E; that E already counts once.
        """
        return max_shapes is None or self.shapes_committed + 1 <= max_shapes


def initial_stack() -> GrammarStack:
    return GrammarStack()


def step_mask(vocab: Vocabulary, popped: Kind, rest: GrammarStack,
              max_shapes: int | None = None) -> np.ndarray:
    """Mask for the step that popped ``popped``, with the length cap applied."""
    m = vocab.mask_for(popped)
    if popped is Kind.E and not rest.can_expand(max_shapes):
        m = m.copy()
        m[vocab.eet] = False
    return m


def apply_token(vocab: Vocabulary, popped: Kind, rest: GrammarStack, sampled: int) -> GrammarStack:
    """Push the right-hand side implied by ``sampled`` onto ``rest``."""
    if not vocab.mask_for(popped)[sampled]:
        raise GrammarError(f"{vocab[sampled]} is illegal after popping {popped.value}")
    kind = vocab.kinds[sampled]
    items, committed = rest.items, rest.shapes_committed
    if kind is Kind.START:
        return GrammarStack(items + (Kind.E,), committed + 1)
    if kind is Kind.EET:
        # popped E counted once; it becomes two E's
        return GrammarStack(items + (Kind.T, Kind.E, Kind.E), committed + 1)
    if kind is Kind.P:
        return GrammarStack(items + (Kind.P,), committed)
    return rest


def extract_program(vocab: Vocabulary, tokens: Iterable[int]) -> tuple[Token, ...]:
    return tuple(vocab[t] for t in tokens if vocab.terminal[t])


def is_valid_program(program: Sequence[Token]) -> bool:
    c = 0
    for tok in program:
        if tok.kind is Kind.SHAPE:
            c += 1
        elif tok.kind is Kind.OP:
            if c < 2:
                return False
            c -= 1
        else:
            return False
    return c == 1


def shape_count(program: Sequence[Token]) -> int:
    return sum(1 for t in program if t.kind is Kind.SHAPE)


_SHAPE_RE = re.compile(r"^([cst])\((-?\d+),(-?\d+),(-?\d+)\)$")
_OP_ALIASES = {"+": "+", "-": "-", "−": "-", "*": "*"}


def parse(text: str) -> tuple[Token, ...]:
    """Parse a whitespace-separated postfix program such as ``s(16,16,12) c(48,48,8) +``."""
    out = []
    depth = 0
    for pos, word in enumerate(text.split()):
        if word in _OP_ALIASES:
            if depth < 2:
                raise ParseError(f"postfix underflow at {word!r}", pos)
            depth -= 1
            out.append(Token(Kind.OP, _OP_ALIASES[word]))
            continue
        m = _SHAPE_RE.match(word)
        if not m:
            if word[:1] in "cst" and "(" in word:
                raise ParseError(f"malformed shape {word!r}", pos)
            raise ParseError(f"unknown token {word!r}", pos)
        kind, x, y, r = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
        try:
            spec = ShapeSpec(kind, x, y, r)
        except ValueError as exc:
            raise ParseError(str(exc), pos) from None
        out.append(Token(Kind.SHAPE, spec))
        depth += 1
    if depth != 1:
        raise ParseError("program does not reduce to a single shape", len(out))
    return tuple(out)


def serialize(program: Sequence[Token]) -> str:
    return " ".join(str(t) for t in program)
