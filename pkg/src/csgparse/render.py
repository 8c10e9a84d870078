"""Rasterizer and postfix stack machine for CSG programs.

Images are ``(height, width)`` boolean numpy arrays indexed ``[y, x]``;
shape ``c(48,16,8)`` is centred on column 48, row 16.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

SIZE = 64
KINDS = {"c": "circle", "s": "square", "t": "triangle"}


class RenderError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ShapeSpec:
    kind: str  # "c", "s" or "t"
    x: int
    y: int
    r: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.r <= 0:
            raise ValueError(f"shape size must be positive, got {self.r}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"shape centre ({self.x},{self.y}) is off the image")

    @property
    def text(self) -> str:
        return f"{self.kind}({self.x},{self.y},{self.r})"


def blank(size: int = SIZE) -> np.ndarray:
    return np.zeros((size, size), dtype=bool)


def diagonal(img_or_size) -> float:
    if isinstance(img_or_size, np.ndarray):
        h, w = img_or_size.shape
    else:
        h = w = img_or_size
    return math.hypot(h, w)


def _triangle_vertices(spec: ShapeSpec, mode: str) -> np.ndarray:
    # apex up (towards row 0)
    if mode == "inscribed":
        R = float(spec.r)
    elif mode == "side":
        R = spec.r / math.sqrt(3.0)
    else:
        raise ValueError(f"unknown triangle mode {mode!r}")
    h = R * math.sqrt(3.0) / 2.0
    return np.array([
        (spec.x, spec.y - R),
        (spec.x + h, spec.y + R / 2.0),
        (spec.x - h, spec.y + R / 2.0),
    ])


@lru_cache(maxsize=4096)
def _rasterize_cached(spec: ShapeSpec, size: int, triangle: str) -> np.ndarray:
    if spec.x >= size or spec.y >= size:
        raise RenderError(f"{spec.text} lies outside a {size}x{size} image")
    yy, xx = np.mgrid[0:size, 0:size]
    dx, dy = xx - spec.x, yy - spec.y
    if spec.kind == "c":
        img = dx * dx + dy * dy <= spec.r * spec.r
    elif spec.kind == "s":
        img = np.maximum(np.abs(dx), np.abs(dy)) <= spec.r
    else:
        v = _triangle_vertices(spec, triangle)
        img = np.ones((size, size), dtype=bool)
        for a, b in ((v[0], v[1]), (v[1], v[2]), (v[2], v[0])):
            # clockwise on screen (y down): inside is where the cross product is >= 0
            cross = (b[0] - a[0]) * (yy - a[1]) - (b[1] - a[1]) * (xx - a[0])
            img &= cross >= -1e-9
    img.flags.writeable = False
    return img


def rasterize(spec: ShapeSpec, size: int = SIZE, triangle: str = "inscribed") -> np.ndarray:
    """Closed (boundary-inclusive) bitmap of one primitive. Returned array is read-only."""
    return _rasterize_cached(spec, size, triangle)


def apply_op(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a op b`` for postfix ``a b op``: union, intersection or subtraction."""
    if a.shape != b.shape:
        raise RenderError(f"image shapes differ: {a.shape} vs {b.shape}")
    if op == "+":
        return a | b
    if op == "*":
        return a & b
    if op == "-":
        return a & ~b
    raise RenderError(f"unknown operation {op!r}")


def execute(program: Sequence, size: int = SIZE, triangle: str = "inscribed") -> np.ndarray:
    """Run a postfix program (grammar Tokens) on an image stack."""
    from .grammar import Kind

    stack: list[np.ndarray] = []
    for pos, tok in enumerate(program):
        if tok.kind is Kind.SHAPE:
            stack.append(rasterize(tok.value, size, triangle))
        elif tok.kind is Kind.OP:
            if len(stack) < 2:
                raise RenderError(f"stack underflow at token {pos} ({tok})")
            b = stack.pop()
            a = stack.pop()
            stack.append(apply_op(tok.value, a, b))
        else:
            raise RenderError(f"non-terminal {tok} in program")
    if len(stack) != 1:
        raise RenderError(f"program leaves {len(stack)} images on the stack")
    return stack[0]


# PBM I/O ---------------------------------------------------------------

def write_pbm(path, img: np.ndarray, plain: bool = False) -> None:
    h, w = img.shape
    with open(path, "wb") as f:
        if plain:
            f.write(f"P1\n{w} {h}\n".encode())
            for row in img:
                f.write((" ".join("1" if v else "0" for v in row) + "\n").encode())
        else:
            f.write(f"P4\n{w} {h}\n".encode())
            f.write(np.packbits(img.astype(np.uint8), axis=1).tobytes())


def _tokens(data: bytes, start: int, count: int) -> tuple[list[bytes], int]:
    out, i = [], start
    while len(out) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ValueError("truncated PBM header")
        out.append(data[i:j])
        i = j
    return out, i


def read_pbm(path, expect_size: int | None = None) -> np.ndarray:
    data = open(path, "rb").read()
    try:
        (magic, w, h), pos = _tokens(data, 0, 3)
        w, h = int(w), int(h)
        if magic == b"P4":
            pos += 1  # single whitespace byte after the header
            row_bytes = (w + 7) // 8
            raw = np.frombuffer(data, dtype=np.uint8, count=row_bytes * h, offset=pos)
            img = np.unpackbits(raw.reshape(h, row_bytes), axis=1)[:, :w].astype(bool)
        elif magic == b"P1":
            body = b"".join(data[pos:].split())
            bits = [c for c in body.decode("ascii") if c in "01"]
            if len(bits) < w * h:
                raise ValueError("truncated P1 body")
            img = np.array(bits[: w * h], dtype=np.uint8).reshape(h, w).astype(bool)
        else:
            raise ValueError(f"not a PBM file (magic {magic!r})")
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if expect_size is not None and img.shape != (expect_size, expect_size):
        raise ValueError(f"{path}: expected {expect_size}x{expect_size}, got {w}x{h}")
    return img
