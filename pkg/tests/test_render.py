import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csgparse.data import build_vocab, sample_program
from csgparse.grammar import Kind, parse
from csgparse.render import (
    RenderError, ShapeSpec, apply_op, blank, diagonal, execute, rasterize, read_pbm, write_pbm,
)

SHAPES = build_vocab()


def test_circle_examples():
    img = rasterize(ShapeSpec("c", 48, 16, 8))
    assert img.shape == (64, 64)
    assert img[16, 48]  # images are indexed [y, x]
    assert not img[25, 48]
    assert img[24, 48]  # closed boundary


@pytest.mark.parametrize("text,count", [
    # golden values from an independent pixel-by-pixel scan with the stated inside tests
    ("c(48,16,8)", 197),
    ("s(16,16,12)", 625),
    ("t(32,32,16)", 347),
    ("t(48,48,8)", 91),
    ("c(0,0,3)", 11),
])
def test_pixel_counts(text, count):
    assert rasterize(parse(text)[0].value).sum() == count


def test_triangle_apex_up():
    img = rasterize(ShapeSpec("t", 32, 32, 16))
    ys = np.flatnonzero(img.any(axis=1))
    top_w, bottom_w = img[ys[0]].sum(), img[ys[-1]].sum()
    assert top_w < bottom_w and ys[0] == 16  # apex at y - r
    side = rasterize(ShapeSpec("t", 32, 32, 16), triangle="side")
    assert side.sum() < img.sum()


def test_shape_validation():
    with pytest.raises(ValueError):
        ShapeSpec("c", 10, 10, 0)
    with pytest.raises(ValueError):
        ShapeSpec("x", 10, 10, 3)
    with pytest.raises(RenderError):
        rasterize(ShapeSpec("c", 70, 10, 3))


def test_ops_examples():
    a = rasterize(ShapeSpec("c", 16, 16, 8))
    b = rasterize(ShapeSpec("s", 48, 48, 8))
    assert np.array_equal(apply_op("+", a, a), a)
    assert not apply_op("-", a, a).any()
    assert not apply_op("*", a, b).any()
    with pytest.raises(RenderError):
        apply_op("+", a, np.zeros((32, 32), bool))


def test_subtraction_order():
    a = rasterize(ShapeSpec("c", 32, 32, 16))
    b = rasterize(ShapeSpec("s", 32, 32, 8))
    ab = execute(parse("c(32,32,16) s(32,32,8) -"))
    assert np.array_equal(ab, a & ~b)
    assert not np.array_equal(ab, execute(parse("s(32,32,8) c(32,32,16) -")))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 26), st.integers(0, 26), st.integers(0, 26))
def test_union_intersection_laws(i, j, k):
    a, b, c = (rasterize(SHAPES[n]) for n in (i, j, k))
    for op in "+*":
        assert np.array_equal(apply_op(op, a, b), apply_op(op, b, a))
        assert np.array_equal(apply_op(op, apply_op(op, a, b), c), apply_op(op, a, apply_op(op, b, c)))


def _recursive_eval(prog):
    """Second evaluator: split the postfix program into its two operand subtrees."""
    last = prog[-1]
    if last.kind is Kind.SHAPE:
        assert len(prog) == 1
        return rasterize(last.value)
    need, i = 1, len(prog) - 1  # right operand starts where one complete subtree begins
    while need:
        i -= 1
        need += 1 if prog[i].kind is Kind.OP else -1
    left, right = prog[:i], prog[i:-1]
    a, b = _recursive_eval(left), _recursive_eval(right)
    return {"+": a | b, "*": a & b, "-": a & ~b}[last.value]


def test_execute_matches_recursive_evaluator():
    rng = np.random.default_rng(3)
    for _ in range(50):
        prog = sample_program(5, SHAPES, rng)
        assert np.array_equal(execute(prog), _recursive_eval(prog))
    for length in (7, 9):
        prog = sample_program(length, SHAPES, rng)
        assert np.array_equal(execute(prog), _recursive_eval(prog))


def test_execute_errors():
    c = parse("c(48,16,8)")[0]
    plus = parse("c(1,1,1) c(2,2,2) +")[-1]
    with pytest.raises(RenderError):
        execute((c, plus))
    with pytest.raises(RenderError):
        execute((c, c))
    assert np.array_equal(execute((c,)), rasterize(c.value))


def test_execute_is_pure():
    prog = parse("c(48,16,8) s(48,16,8) +")
    first = execute(prog).copy()
    assert np.array_equal(execute(prog), first)
    with pytest.raises(ValueError):
        rasterize(ShapeSpec("c", 48, 16, 8))[0, 0] = True  # cached arrays are read-only


def test_misc():
    assert diagonal(64) == pytest.approx(np.sqrt(2) * 64)
    assert not blank().any() and blank().shape == (64, 64)


@pytest.mark.parametrize("plain", [False, True])
def test_pbm_roundtrip(tmp_path, plain):
    img = execute(parse("c(48,16,8) t(32,32,16) +"))
    img = img.copy()
    img[0, 63] = True
    path = tmp_path / "x.pbm"
    write_pbm(path, img, plain=plain)
    back = read_pbm(path, expect_size=64)
    assert back.dtype == bool and np.array_equal(back, img)
    assert path.read_bytes().startswith(b"P1" if plain else b"P4")


def test_pbm_header_comments_and_errors(tmp_path):
    p = tmp_path / "c.pbm"
    p.write_bytes(b"P1\n# comment\n3 2\n1 0 1\n0 1 0\n")
    assert read_pbm(p).tolist() == [[True, False, True], [False, True, False]]
    with pytest.raises(ValueError):
        read_pbm(p, expect_size=64)
    (tmp_path / "bad.pbm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        read_pbm(tmp_path / "bad.pbm")
