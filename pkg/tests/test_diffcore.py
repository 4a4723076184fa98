from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from suffixbench import diffcore as dc

from .helpers import leaf, op_cases


@pytest.fixture
def f64():
    with dc.precision(np.float64):
        yield


OP_NAMES = sorted(op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", OP_NAMES)
def test_op_gradient_matches_finite_differences(name, f64):
    fn, inputs = op_cases(np.random.default_rng(11))[name]
    result = dc.gradcheck(fn, inputs, eps=1e-4)
    assert result.ok, (name, result)


def test_every_exported_differentiable_op_is_covered():
    exported = {"add", "sub", "mul", "neg", "matmul", "exp", "log", "sigmoid", "tanh", "relu", "softplus",
                "log_sigmoid", "sum", "mean", "reshape", "transpose", "expand", "getitem", "concat", "stack",
                "softmax", "log_softmax", "layer_norm", "dropout", "embedding", "causal_conv1d", "lstm_cell",
                "cross_entropy_masked", "mse_masked", "gumbel_softmax_sample"}
    covered = {n.split("_2d")[0].split("_3d")[0].split("_batched")[0].split("_axis")[0]
               .replace("getitem_slice", "getitem").replace("getitem_fancy", "getitem") for n in OP_NAMES}
    covered = {"gumbel_softmax_sample" if c == "gumbel_softmax" else c for c in covered}
    assert exported <= covered


def test_softmax_symmetry_and_rows():
    assert np.allclose(dc.softmax(dc.Tensor([0.0, 0.0])).data, [0.5, 0.5])
    rows = dc.softmax(dc.Tensor(np.random.default_rng(0).normal(size=(5, 7)) * 10)).data
    assert np.allclose(rows.sum(-1), 1.0, atol=1e-6)
    assert (rows > 0).all() and (rows < 1).all()
    # max subtraction keeps huge logits finite
    assert np.isfinite(dc.softmax(dc.Tensor([1000.0, 0.0])).data).all()


def test_causal_conv_delta_filter_is_a_shift(f64):
    x = np.random.default_rng(0).normal(size=(2, 6, 3))
    w = np.zeros((2, 3, 3))
    w[0] = np.eye(3)  # tap 0 reads t - dilation
    out = dc.causal_conv1d(dc.Tensor(x), dc.Tensor(w), dilation=2).data
    assert np.allclose(out[:, 2:], x[:, :-2])
    assert np.allclose(out[:, :2], 0.0)
    w = np.zeros((2, 3, 3))
    w[1] = np.eye(3)  # tap 1 reads t itself
    assert np.allclose(dc.causal_conv1d(dc.Tensor(x), dc.Tensor(w), dilation=2).data, x)


def test_causal_conv_gradient_sparsity(f64):
    rng = np.random.default_rng(1)
    n, k, d = 12, 2, 4
    x = dc.Tensor(rng.normal(size=(1, n, 2)), requires_grad=True)
    w = dc.Tensor(rng.normal(size=(k, 2, 2)))
    t = 9
    dc.backward(dc.sum(dc.getitem(dc.causal_conv1d(x, w, d), (0, t))))
    touched = np.nonzero(np.abs(x.grad[0]).sum(-1))[0]
    assert set(touched) <= set(range(t - (k - 1) * d, t + 1))
    assert set(touched) == {t - d, t}


def test_shape_errors_name_the_op():
    with pytest.raises(dc.ShapeError, match="matmul"):
        dc.matmul(dc.Tensor(np.ones((2, 3))), dc.Tensor(np.ones((4, 2))))
    with pytest.raises(dc.ShapeError, match="add"):
        dc.add(dc.Tensor(np.ones((2, 3))), dc.Tensor(np.ones((4,))))
    with pytest.raises(dc.ShapeError, match="cross_entropy_masked"):
        dc.cross_entropy_masked(dc.Tensor(np.ones((2, 3, 4))), np.zeros((2, 2), int), np.ones((2, 2)))


def _ce_oracle(logits, targets, mask):
    total, count = 0.0, 0
    for b in range(logits.shape[0]):
        for i in range(logits.shape[1]):
            if mask[b, i]:
                row = [float(v) for v in logits[b, i]]
                top = max(row)
                lse = top + math.log(sum(math.exp(v - top) for v in row))
                total += lse - row[targets[b, i]]
                count += 1
    return total / count


def test_cross_entropy_examples(f64):
    logits = np.full((1, 1, 5), -1e4)
    logits[0, 0, 2] = 1e4
    assert dc.cross_entropy_masked(dc.Tensor(logits), np.array([[2]]), np.ones((1, 1))).item() == pytest.approx(0.0)
    uniform = dc.cross_entropy_masked(dc.Tensor(np.zeros((2, 3, 6))), np.zeros((2, 3), int), np.ones((2, 3)))
    assert uniform.item() == pytest.approx(math.log(6))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cross_entropy_matches_scalar_loop(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(3, 4, 5)) * 3
    targets = rng.integers(0, 5, size=(3, 4))
    mask = (rng.random((3, 4)) < 0.6).astype(float)
    mask[0, 0] = 1
    with dc.precision(np.float64):
        got = dc.cross_entropy_masked(dc.Tensor(logits), targets, mask).item()
    assert got == pytest.approx(_ce_oracle(logits, targets, mask), rel=1e-12, abs=1e-12)


def test_masked_positions_contribute_nothing(f64):
    rng = np.random.default_rng(3)
    logits = dc.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    targets = rng.integers(0, 4, size=(2, 3))
    mask = np.array([[1, 0, 1], [0, 0, 1]], float)
    loss = dc.cross_entropy_masked(logits, targets, mask)
    dc.backward(loss)
    assert np.all(logits.grad[mask == 0] == 0.0)
    changed = logits.data.copy()
    changed[mask == 0] = 99.0
    assert dc.cross_entropy_masked(dc.Tensor(changed), targets, mask).item() == pytest.approx(loss.item())


def test_mse_examples_and_oracle(f64):
    assert dc.mse_masked(dc.Tensor([[1.0, 2.0]]), np.array([[1.0, 2.0]]), np.ones((1, 2))).item() == 0.0
    assert dc.mse_masked(dc.Tensor([[3.0]]), np.array([[1.0]]), np.ones((1, 1))).item() == 4.0
    rng = np.random.default_rng(4)
    pred, target = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    mask = (rng.random((3, 5)) < 0.5).astype(float)
    mask[1, 1] = 1
    terms = [(pred[b, i] - target[b, i]) ** 2 for b in range(3) for i in range(5) if mask[b, i]]
    got = dc.mse_masked(dc.Tensor(pred), target, mask).item()
    assert abs(got - sum(terms) / len(terms)) <= 1e-12


def test_empty_mask_is_zero_with_warning():
    before = dict(dc.warning_counter)
    ce = dc.cross_entropy_masked(dc.Tensor(np.ones((1, 2, 3))), np.zeros((1, 2), int), np.zeros((1, 2)))
    mse = dc.mse_masked(dc.Tensor(np.ones((1, 2))), np.zeros((1, 2)), np.zeros((1, 2)))
    assert ce.item() == 0.0 and mse.item() == 0.0
    assert dc.warning_counter["cross_entropy_empty_mask"] == before.get("cross_entropy_empty_mask", 0) + 1
    assert dc.warning_counter["mse_empty_mask"] == before.get("mse_empty_mask", 0) + 1


def test_backward_basics(f64):
    x = dc.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    dc.backward(dc.sum(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))
    a, b = dc.Tensor(3.0, requires_grad=True), dc.Tensor(-2.0, requires_grad=True)
    dc.backward(dc.mul(a, b))
    assert a.grad == -2.0 and b.grad == 3.0


def test_backward_errors():
    x = dc.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        dc.backward(dc.mul(x, 2.0))
    loss = dc.sum(dc.mul(x, x))
    dc.backward(loss)
    with pytest.raises(RuntimeError):
        dc.backward(loss)


def test_shared_subgraph_accumulates(f64):
    x = dc.Tensor(2.0, requires_grad=True)
    y = dc.mul(x, x)
    dc.backward(dc.add(y, y))  # d(2x^2)/dx = 4x
    assert x.grad == pytest.approx(8.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_six_op_graph(seed):
    rng = np.random.default_rng(seed)
    unary = [dc.tanh, dc.sigmoid, dc.exp, lambda t: dc.mul(t, 0.7), dc.softplus, dc.neg]
    with dc.precision(np.float64):
        a, b = leaf(rng, 3, 3, name="a"), leaf(rng, 3, 3, name="b")
        plan = [int(i) for i in rng.integers(0, len(unary), size=6)]

        def fn():
            h = dc.matmul(a, b)
            for i, op in enumerate(plan):
                h = unary[op](h)
                if i % 2:
                    h = dc.add(h, a)
            return dc.mean(h)

        assert dc.gradcheck(fn, [a, b]).ok


def test_no_grad_builds_no_tape():
    x = dc.Tensor(np.ones(2), requires_grad=True)
    with dc.no_grad():
        y = dc.mul(x, 3.0)
    assert not y.requires_grad and y._parents == ()
    assert dc.grad_enabled()


def test_precision_switch():
    assert dc.Tensor(1.0).data.dtype == np.float32
    with dc.precision(np.float64):
        assert dc.Tensor(1.0).data.dtype == np.float64
    assert dc.get_dtype() is np.float32


def test_dropout_identity_cases():
    x = dc.Tensor(np.random.default_rng(0).normal(size=(4, 4)))
    assert dc.dropout(x, 0.0, np.random.default_rng(0)) is x
    assert dc.dropout(x, 0.3, np.random.default_rng(0), training=False) is x
    out = dc.dropout(x, 0.5, np.random.default_rng(0)).data
    kept = out != 0
    assert np.allclose(out[kept], 2.0 * x.data[kept])
    with pytest.raises(ValueError):
        dc.dropout(x, 1.0, np.random.default_rng(0))


def test_embedding_equals_one_hot_projection(f64):
    rng = np.random.default_rng(2)
    w = rng.normal(size=(6, 3))
    idx = rng.integers(0, 6, size=(2, 5))
    assert np.allclose(dc.embedding(idx, dc.Tensor(w)).data, np.eye(6)[idx] @ w)
    with pytest.raises(dc.ShapeError):
        dc.embedding(np.array([6]), dc.Tensor(w))


def test_lstm_cell_matches_hand_computation(f64):
    rng = np.random.default_rng(5)
    d = 3
    z, h, c = rng.normal(size=(2, 4 * d)), rng.normal(size=(2, d)), rng.normal(size=(2, d))
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, g, o = sig(z[:, :d]), sig(z[:, d:2 * d]), np.tanh(z[:, 2 * d:3 * d]), sig(z[:, 3 * d:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    out = dc.lstm_cell(dc.Tensor(z), dc.Tensor(h), dc.Tensor(c)).data
    assert np.allclose(out, np.concatenate([h_new, c_new], -1))
    frozen = dc.lstm_cell(dc.Tensor(z), dc.Tensor(h), dc.Tensor(c), keep=np.array([0.0, 1.0])).data
    assert np.allclose(frozen[0], np.concatenate([h[0], c[0]]))


def test_gumbel_softmax_contract():
    rng = np.random.default_rng(0)
    logits = dc.Tensor(rng.normal(size=(4, 6)))
    out = dc.gumbel_softmax_sample(logits, 1.0, rng).data
    assert np.allclose(out.sum(-1), 1.0, atol=1e-6)
    noise = -np.log(-np.log(rng.uniform(size=(4, 6))))
    sharp = dc.gumbel_softmax_sample(logits, 0.01, noise=noise).data
    expected = np.eye(6)[np.argmax(logits.data + noise, -1)]
    assert np.allclose(sharp, expected, atol=1e-3)
    with pytest.raises(ValueError):
        dc.gumbel_softmax_sample(logits, 0.0, rng)


# --- optimizer ------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameter(f64):
    p = dc.Parameter(np.array([1.0, -2.0]), name="w")
    opt = dc.Adam([("w", p)], lr=1e-4)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])
    assert p.grad is None


def test_adam_first_step_is_lr(f64):
    p = dc.Parameter(np.array([0.5, 0.5, 0.5]), name="w")
    opt = dc.Adam([("w", p)], lr=1e-4)
    p.grad = np.array([3.0, -0.2, 1e3])
    opt.step()
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = 0.5 - 1e-4 * np.array([3.0, -0.2, 1e3]) / (np.abs([3.0, -0.2, 1e3]) + 1e-8)
    assert np.allclose(p.data, expected, rtol=0, atol=1e-12)


def test_adam_descends_quadratic(f64):
    p = dc.Parameter(np.array([1.0]), name="w")
    opt = dc.Adam([("w", p)], lr=1e-2)
    values = [abs(p.data[0])]
    for _ in range(100):
        loss = dc.sum(dc.mul(p, p))
        dc.backward(loss)
        opt.step()
        values.append(abs(p.data[0]))
    assert values[-1] < values[0]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adam_aborts_on_nan_with_name():
    p = dc.Parameter(np.ones(2), name="decoder.W")
    opt = dc.Adam([("decoder.W", p)])
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(FloatingPointError, match="decoder.W"):
        opt.step()


def test_clip_grad_norm():
    a, b = dc.Parameter(np.zeros(2)), dc.Parameter(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    norm = dc.clip_grad_norm([a, b], 1.0)
    assert norm == pytest.approx(5.0)
    assert np.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum()) == pytest.approx(1.0)
    a.grad = np.array([0.3, 0.4])
    b.grad = None
    assert dc.clip_grad_norm([a, b], 1.0) == pytest.approx(0.5)
    assert np.allclose(a.grad, [0.3, 0.4])


# --- modules and checkpoints ------------------------------------------------------

class _Tiny(dc.Module):
    def __init__(self, rng):
        self.w = dc.uniform_fan_in(rng, (3, 2), 3, "w")
        self.blocks = [_Leaf(rng), _Leaf(rng)]


class _Leaf(dc.Module):
    def __init__(self, rng):
        self.b = dc.Parameter(rng.normal(size=2), "b")


def test_module_walk_and_state_dict():
    m = _Tiny(np.random.default_rng(0))
    assert [n for n, _ in m.named_parameters()] == ["w", "blocks.0.b", "blocks.1.b"]
    assert m.num_parameters() == 10
    bound = 1 / np.sqrt(3)
    assert np.all(np.abs(m.w.data) <= bound)
    m.eval()
    assert not m.blocks[1].training
    state = m.state_dict()
    other = _Tiny(np.random.default_rng(1))
    other.load_state_dict(state)
    assert all(np.array_equal(state[k], v) for k, v in other.state_dict().items())
    with pytest.raises(KeyError):
        other.load_state_dict({"w": state["w"]})
    with pytest.raises(ValueError):
        other.load_state_dict({**state, "w": np.zeros((2, 2))})


def test_checkpoint_round_trip_and_byte_stability(tmp_path):
    m = _Tiny(np.random.default_rng(0))
    header = {"b": 1, "a": [1, 2]}
    blob = dc.checkpoint.dumps(m.state_dict(), header)
    assert blob == dc.checkpoint.dumps(_Tiny(np.random.default_rng(0)).state_dict(), {"a": [1, 2], "b": 1})
    dc.checkpoint.save(tmp_path / "m.sbck", m.state_dict(), header)
    arrays, head = dc.checkpoint.load(tmp_path / "m.sbck")
    assert head == header
    for k, v in m.state_dict().items():
        assert np.array_equal(arrays[k], v.astype(np.float32))
    with pytest.raises(dc.checkpoint.CheckpointError):
        dc.checkpoint.loads(b"XXXX" + blob[4:])
    with pytest.raises(dc.checkpoint.CheckpointError):
        dc.checkpoint.loads(blob + b"\0")


def test_gradcheck_detects_a_wrong_gradient(f64):
    x = leaf(np.random.default_rng(0), 4, name="x")

    def broken():
        out = dc.sum(dc.mul(x, x))
        # attach a backward rule that is off by a factor of two
        return dc.tensor.make_node(out.data, (x,), lambda g: (g * 4 * x.data,), "broken")

    assert not dc.gradcheck(broken, [x]).ok
    assert dc.relative_error(0.0, 1e-10) <= 1e-4  # floor keeps tiny values from exploding
