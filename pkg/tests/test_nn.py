import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csgparse import nn
from gradcheck import TOL, check

dims = st.integers(1, 4)
seeds = st.integers(0, 2**32 - 1)
FD = settings(max_examples=15, deadline=None)


def rand(rng, *shape):
    return rng.standard_normal(shape)


def assert_ok(errs):
    assert max(errs) < TOL, errs


@FD
@given(seeds, dims, dims)
def test_elementwise(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, n, m), rand(rng, n, m)
    row = rand(rng, 1, m)
    assert_ok(check(lambda x, y: nn.add(x, y), [a, b], seed))
    assert_ok(check(lambda x, y: nn.sub(x, y), [a, b], seed))
    assert_ok(check(lambda x, y: nn.mul(x, y), [a, b], seed))
    assert_ok(check(lambda x, y: nn.add(x, y), [a, row], seed))  # broadcast bias
    assert_ok(check(nn.sigmoid, [a], seed))
    assert_ok(check(nn.tanh, [a], seed))
    assert_ok(check(nn.exp, [a], seed))
    # keep relu inputs away from the kink
    away = np.where(np.abs(a) < 1e-3, 0.5, a)
    assert_ok(check(nn.relu, [away], seed))


@FD
@given(seeds, dims, dims, dims)
def test_linear(seed, n, k, m):
    rng = np.random.default_rng(seed)
    x, w, b = rand(rng, n, k), rand(rng, k, m), rand(rng, m)
    assert_ok(check(nn.matmul, [x, w], seed))
    assert_ok(check(nn.dense, [x, w, b], seed))


@FD
@given(seeds, dims, st.integers(2, 6))
def test_reductions_and_shapes(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, n, m), rand(rng, n, 2)
    assert_ok(check(nn.sum_all, [a], seed))
    assert_ok(check(nn.sum_rows, [a], seed))
    assert_ok(check(lambda x: nn.reshape(x, (m, n)), [a], seed))
    assert_ok(check(lambda x, y: nn.concat([x, y], axis=1), [a, b], seed))
    assert_ok(check(lambda x: nn.slice_cols(x, 1, m), [a], seed))
    assert_ok(check(lambda x: nn.dot_const(x, np.arange(x.value.size).reshape(x.shape)), [a], seed))


@FD
@given(seeds, st.integers(2, 6), st.integers(1, 5), st.integers(1, 8))
def test_gathers(seed, rows, cols, count):
    rng = np.random.default_rng(seed)
    table = rand(rng, rows, cols)
    idx = rng.integers(rows, size=count)  # repeats exercise accumulation
    assert_ok(check(lambda t: nn.take_rows(t, idx), [table], seed))
    assert_ok(check(lambda t: nn.embedding_lookup(t, idx), [table], seed))
    cidx = rng.integers(cols, size=count)
    assert_ok(check(lambda t: nn.gather_logprob(t, idx, cidx), [table], seed))
    other = rand(rng, rows + 1, cols)
    which = rng.integers(2, size=count)
    r = np.where(which == 0, idx, rng.integers(rows + 1, size=count))
    assert_ok(check(lambda a, b: nn.gather_multi([a, b], which, r), [table, other], seed))


@FD
@given(seeds, dims, st.integers(2, 7))
def test_log_softmax_and_entropy(seed, n, m):
    rng = np.random.default_rng(seed)
    z = rand(rng, n, m) * 2
    mask = np.where(rng.uniform(size=(n, m)) < 0.3, -1e9, 0.0)
    mask[:, 0] = 0.0
    # masked outputs sit near -1e9 where float64 spacing exceeds the FD step; they are
    # never read downstream, so only unmasked log-probs enter the checked scalar
    keep = (mask == 0).astype(float)
    assert_ok(check(lambda x: nn.mul(nn.log_softmax(x, mask), keep), [z], seed))
    assert_ok(check(nn.log_softmax, [z], seed))
    assert_ok(check(lambda x: nn.row_entropy(nn.log_softmax(x, mask)), [z], seed))
    lp = nn.log_softmax(nn.constant(z), mask).value
    lse = np.log(np.exp(lp).sum(axis=1))
    assert np.all(np.abs(lse) < 1e-9)


@FD
@given(seeds, st.integers(1, 2), st.sampled_from([2, 4, 6]), st.integers(1, 3), st.integers(1, 3))
def test_conv_and_pool(seed, n, hw, c, f):
    rng = np.random.default_rng(seed)
    x, w, b = rand(rng, n, hw, hw, c), rand(rng, 3, 3, c, f), rand(rng, f)
    assert_ok(check(nn.conv2d, [x, w, b], seed))
    assert_ok(check(lambda t: nn.maxpool2d(t, 2), [x], seed))
    assert_ok(check(lambda t, k, bb: nn.maxpool2d(nn.relu(nn.conv2d(t, k, bb)), 2), [x, w, b], seed))


@FD
@given(seeds, dims, dims, dims)
def test_lstm_cell(seed, n, nin, hid):
    rng = np.random.default_rng(seed)
    x, h, c = rand(rng, n, nin), rand(rng, n, hid), rand(rng, n, hid)
    w, b = rand(rng, nin + hid, 4 * hid) * 0.5, rand(rng, 4 * hid)
    assert_ok(check(nn.lstm_cell, [x, h, c, w, b], seed))


def test_conv_against_direct_loop():
    rng = np.random.default_rng(0)
    x, w, b = rand(rng, 1, 5, 5, 2), rand(rng, 3, 3, 2, 3), rand(rng, 3)
    out = nn.conv2d(nn.constant(x), nn.constant(w), nn.constant(b)).value
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((1, 5, 5, 3))
    for i in range(5):
        for j in range(5):
            ref[0, i, j] = np.einsum("abc,abcf->f", xp[0, i:i + 3, j:j + 3], w) + b
    assert np.allclose(out, ref, atol=1e-12)


def test_trivial_examples():
    x = nn.parameter([[1.0, 2.0, 3.0]])
    nn.backward(nn.sum_all(nn.relu(x)))
    assert np.array_equal(x.grad, np.ones((1, 3)))
    z = np.zeros
    h, c = nn.lstm_cell(nn.constant(z((2, 3))), nn.constant(z((2, 4))), nn.constant(z((2, 4))),
                        nn.constant(z((7, 16))), nn.constant(z(16)))
    assert not h.value.any() and not c.value.any()


def test_shape_errors():
    with pytest.raises(ValueError):
        nn.matmul(nn.constant(np.ones((2, 3))), nn.constant(np.ones((2, 3))))
    with pytest.raises(ValueError):
        nn.conv2d(nn.constant(np.ones((1, 4, 4, 2))), nn.constant(np.ones((3, 3, 1, 1))),
                  nn.constant(np.ones(1)))
    with pytest.raises(ValueError):
        nn.maxpool2d(nn.constant(np.ones((1, 3, 3, 1))))
    with pytest.raises(ValueError):
        nn.lstm_cell(nn.constant(np.ones((1, 2))), nn.constant(np.ones((1, 3))),
                     nn.constant(np.ones((1, 3))), nn.constant(np.ones((4, 12))), nn.constant(np.ones(12)))


def test_shared_node_gradients_accumulate():
    x = nn.parameter([[0.5, -1.0]])
    y = nn.mul(x, x)  # x used twice
    nn.backward(nn.sum_all(nn.add(y, x)))
    assert np.allclose(x.grad, 2 * x.value + 1)


def test_no_graph_for_constants():
    out = nn.add(nn.constant([1.0]), nn.constant([2.0]))
    assert not out.requires_grad and out.parents == ()


def test_determinism():
    rng = np.random.default_rng(4)
    x, w, b = rand(rng, 2, 8, 8, 1), rand(rng, 3, 3, 1, 2), rand(rng, 2)
    a = nn.conv2d(nn.constant(x), nn.constant(w), nn.constant(b)).value
    assert np.array_equal(a, nn.conv2d(nn.constant(x), nn.constant(w), nn.constant(b)).value)


# optimiser and checkpoints ---------------------------------------------------

def _store(values):
    s = nn.ParameterStore()
    for k, v in values.items():
        s.add(k, v)
    return s


def test_sgd_plain_and_zero_lr():
    s = _store({"a": np.array([1.0, 2.0])})
    s["a"].grad = np.array([0.5, -1.0])
    nn.sgd_momentum_step(s, lr=0.1, momentum=0.0)
    assert np.allclose(s["a"].value, [0.95, 2.1]) and s["a"].grad is None
    s["a"].grad = np.array([3.0, 3.0])
    before = s["a"].value.copy()
    nn.sgd_momentum_step(s, lr=0.0, momentum=0.9)
    assert np.array_equal(s["a"].value, before)


def test_sgd_momentum_recurrence():
    s = _store({"a": np.array([0.0])})
    g, lr = 2.0, 0.1
    for _ in range(2):
        s["a"].grad = np.array([g])
        nn.sgd_momentum_step(s, lr=lr, momentum=0.9)
    # v1 = g, v2 = 0.9 g + g
    assert s["a"].value[0] == pytest.approx(-lr * g * (1 + 1.9))
    assert s.step == 2


def test_sgd_missing_gradient():
    s = _store({"a": np.zeros(2), "b": np.zeros(1)})
    s["a"].grad = np.ones(2)
    with pytest.raises(ValueError, match="'b'"):
        nn.sgd_momentum_step(s, 0.1, 0.9)
    nn.sgd_momentum_step(s, 0.1, 0.9, allow_missing=True)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    s = _store({"w": rng.standard_normal((3, 4)), "b": rng.standard_normal(4), "s": np.array(2.5)})
    for _, t in s:
        t.grad = rng.standard_normal(t.shape)
    nn.sgd_momentum_step(s, 0.01, 0.9)
    path = tmp_path / "c.bin"
    nn.save_checkpoint(path, s, {"note": "x"})
    t = _store({"w": np.zeros((3, 4)), "b": np.zeros(4), "s": np.array(0.0)})
    assert nn.load_into(t, path) == {"note": "x"}
    for name, p in s:
        assert np.array_equal(p.value, t[name].value)
        assert np.array_equal(s.momentum[name], t.momentum[name])
    assert t.step == 1
    assert path.read_bytes()[:8] == b"CSGCKPT\0"


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(nn.CheckpointError):
        nn.read_checkpoint(bad)
    s = _store({"w": np.zeros(2)})
    good = tmp_path / "good.bin"
    nn.save_checkpoint(good, s)
    with pytest.raises(nn.CheckpointError):
        nn.load_into(_store({"w": np.zeros(3)}), good)
    with pytest.raises(nn.CheckpointError):
        nn.load_into(_store({"v": np.zeros(2)}), good)
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".ckpt-")]
