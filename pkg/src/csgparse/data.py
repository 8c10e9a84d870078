"""Synthetic CSG datasets: shape vocabulary, program sampling, filtering and file I/O.

Dataset directory layout::

    meta            key=value lines (seed, length, thresholds, vocabulary)
    programs.txt    one serialized program per line (absent for image-only sets)
    images/00000.pbm ...
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .grammar import OP_TOKENS, Token, parse, serialize, shape_token
from .render import SIZE, ShapeSpec, execute, read_pbm, write_pbm

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeVocabularyConfig:
    kinds: tuple = ("c", "s", "t")
    positions: tuple = ((16, 16), (32, 32), (48, 48))
    sizes: tuple = (8, 12, 16)
    n: int | None = 27  # declared size; None skips the check

    @classmethod
    def from_text(cls, kinds: str, positions: str, sizes: str, n: int | None = None):
        """Parse ``"c,s,t"``, ``"16:16,32:32"`` and ``"8,12"`` style strings."""
        pos = tuple(tuple(int(v) for v in p.split(":")) for p in positions.split(","))
        return cls(tuple(kinds.split(",")), pos, tuple(int(s) for s in sizes.split(",")), n)


def build_vocab(cfg: ShapeVocabularyConfig = ShapeVocabularyConfig()) -> list[ShapeSpec]:
    """Ordered shapes: kind-major, then position, then size."""
    shapes = [ShapeSpec(k, x, y, r) for k in cfg.kinds for (x, y) in cfg.positions for r in cfg.sizes]
    if len(set(shapes)) != len(shapes):
        raise DatasetError("shape vocabulary has duplicates")
    if cfg.n is not None and len(shapes) != cfg.n:
        raise DatasetError(f"shape vocabulary has {len(shapes)} entries, expected {cfg.n}")
    return shapes


# uniform sampling over derivations -----------------------------------------

@lru_cache(maxsize=None)
def tree_count(n_shapes: int) -> int:
    """Number of binary tree shapes with ``n_shapes`` leaves (Catalan number)."""
    if n_shapes == 1:
        return 1
    return sum(tree_count(i) * tree_count(n_shapes - i) for i in range(1, n_shapes))


def derivation_count(length: int, n_shape_tokens: int, n_ops: int = len(OP_TOKENS)) -> int:
    shapes = (length + 1) // 2
    return tree_count(shapes) * n_shape_tokens ** shapes * n_ops ** (shapes - 1)


def _sample_tree(n_shapes: int, rng) -> list:
    """Postfix skeleton (``'s'`` leaves, ``'o'`` internal nodes) of a uniform binary tree."""
    if n_shapes == 1:
        return ["s"]
    w = np.array([tree_count(i) * tree_count(n_shapes - i) for i in range(1, n_shapes)], float)
    left = 1 + int(rng.choice(len(w), p=w / w.sum()))
    return _sample_tree(left, rng) + _sample_tree(n_shapes - left, rng) + ["o"]


def sample_program(length: int, shapes, rng) -> tuple[Token, ...]:
    if length < 1 or length % 2 == 0:
        raise DatasetError(f"program length must be odd and positive, got {length}")
    prog = []
    for slot in _sample_tree((length + 1) // 2, rng):
        if slot == "s":
            prog.append(shape_token(shapes[int(rng.integers(len(shapes)))]))
        else:
            prog.append(OP_TOKENS[int(rng.integers(len(OP_TOKENS)))])
    return tuple(prog)


@dataclass(frozen=True)
class FilterConfig:
    empty_below: int = 120  # set-pixel count <= this is treated as empty
    duplicate_within: int = 120  # XOR popcount <= this is a duplicate
    max_attempts: int | None = None  # default: 200 x count


@dataclass
class Dataset:
    images: list[np.ndarray]
    programs: list[tuple | None] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.images)


def _popcounts(packed: np.ndarray, row: np.ndarray) -> np.ndarray:
    return np.unpackbits(packed ^ row, axis=1).sum(axis=1)


def generate(length: int, count: int, seed: int, shapes, filt: FilterConfig = FilterConfig(),
             size: int = SIZE, triangle: str = "inscribed") -> Dataset:
    """Rejection-sample ``count`` distinct, non-empty targets of a fixed program length."""
    if count < 1:
        raise DatasetError("count must be >= 1")
    rng = np.random.default_rng(seed)
    attempts = filt.max_attempts or 200 * count
    images, programs = [], []
    packed = np.zeros((count, size * size // 8), dtype=np.uint8)
    for _ in range(attempts):
        if len(images) == count:
            break
        prog = sample_program(length, shapes, rng)
        img = execute(prog, size, triangle)
        if int(img.sum()) <= filt.empty_below:
            continue
        row = np.packbits(img.ravel())
        if images and _popcounts(packed[:len(images)], row).min() <= filt.duplicate_within:
            continue
        packed[len(images)] = row
        images.append(np.array(img))
        programs.append(prog)
    if len(images) < count:
        log.warning("only %d of %d targets accepted after %d attempts", len(images), count, attempts)
    meta = {"seed": seed, "length": length, "count": len(images), "requested": count,
            "empty_below": filt.empty_below, "duplicate_within": filt.duplicate_within,
            "size": size, "triangle": triangle, "shapes": " ".join(s.text for s in shapes)}
    return Dataset(images, programs, meta)


# I/O -------------------------------------------------------------------------

def save(ds: Dataset, directory) -> None:
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(ds.images):
        write_pbm(d / "images" / f"{i:05d}.pbm", img)
    if ds.programs and all(p is not None for p in ds.programs):
        with open(d / "programs.txt", "w", encoding="utf-8") as f:
            for p in ds.programs:
                f.write(serialize(p) + "\n")
    with open(d / "meta", "w", encoding="utf-8") as f:
        for k in sorted(ds.meta):
            f.write(f"{k}={ds.meta[k]}\n")


def read_meta(path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta


def load(directory, size: int | None = SIZE) -> Dataset:
    """Load a dataset directory; ``programs.txt`` and ``meta`` are optional (CAD images)."""
    d = Path(directory)
    img_dir = d / "images" if (d / "images").is_dir() else d
    files = sorted(p for p in img_dir.iterdir() if p.suffix == ".pbm") if img_dir.is_dir() else []
    if not files:
        raise DatasetError(f"{d}: no .pbm images found")
    images = []
    for p in files:
        try:
            images.append(read_pbm(p, expect_size=size))
        except ValueError as exc:
            raise DatasetError(f"{p}: {exc}") from None
    programs: list = [None] * len(images)
    if (d / "programs.txt").exists():
        with open(d / "programs.txt", encoding="utf-8") as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        if len(lines) != len(images):
            raise DatasetError(f"{d}/programs.txt has {len(lines)} lines for {len(images)} images")
        programs = []
        for n, ln in enumerate(lines, 1):
            try:
                programs.append(parse(ln))
            except ValueError as exc:
                raise DatasetError(f"{d}/programs.txt:{n}: {exc}") from None
    meta = read_meta(d / "meta") if (d / "meta").exists() else {}
    return Dataset(images, programs, meta)


def dataset_shapes(ds: Dataset) -> list[ShapeSpec] | None:
    """Shape vocabulary recorded in the dataset meta, if any."""
    text = ds.meta.get("shapes")
    if not text:
        return None
    return [parse(t)[0].value for t in text.split()]
