import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shego.numerics import (
    AdamW,
    CheckpointError,
    F,
    ParamGroup,
    ShapeError,
    Tensor,
    clip_grad_norm,
    finite_diff_check,
    load_checkpoint,
    no_grad,
    precision,
    save_checkpoint,
    tensor_checksum,
)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def check(loss_fn, params, tol=1e-6, **kw):
    report = finite_diff_check(loss_fn, params, tolerance=tol, **kw)
    bad = {k: r.max_rel_error for k, r in report.items() if not r.passed}
    assert not bad, bad


# -- forward values -------------------------------------------------------------

def test_softmax_of_equal_logits_is_uniform():
    out = F.softmax(Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-7)


def test_softmax_fully_masked_row_is_zero():
    out = F.softmax(Tensor(np.ones((2, 3))), mask=np.array([[True, False, True], [False, False, False]]))
    np.testing.assert_allclose(out.data[0], [0.5, 0, 0.5])
    assert np.all(out.data[1] == 0)


@pytest.mark.parametrize("vocab", [2, 7, 50])
def test_cross_entropy_of_uniform_prediction_is_log_v(vocab):
    with precision(np.float64):
        nll = F.cross_entropy(Tensor(np.zeros((1, 3, vocab))), np.array([[0, 1, vocab - 1]]))
    np.testing.assert_allclose(nll.data, math.log(vocab), rtol=1e-12)


def test_cross_entropy_ignores_padding_positions():
    logits = Tensor(np.random.default_rng(0).normal(size=(1, 3, 5)), requires_grad=True)
    nll = F.cross_entropy(logits, np.array([[1, 0, 0]]), ignore_index=0)
    assert nll.data[0, 1] == 0 and nll.data[0, 2] == 0
    F.tsum(nll).backward()
    assert np.all(logits.grad[0, 1:] == 0)


def test_layer_norm_matches_dense_reference():
    rng = np.random.default_rng(1)
    with precision(np.float64):
        x, g, b = rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=6)
        out = F.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
    ref = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-6) * g + b
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_gelu_matches_tanh_approximation():
    x = np.linspace(-4, 4, 41)
    with precision(np.float64):
        out = F.gelu(Tensor(x)).data
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_matmul_shape_mismatch_names_operation():
    with pytest.raises(ShapeError, match="matmul"):
        F.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 2))))


def test_add_shape_mismatch_names_operation():
    with pytest.raises(ShapeError, match="add"):
        F.add(Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4))))


def test_float32_default_is_not_promoted_by_python_constants():
    x = Tensor(np.ones(3, dtype=np.float32))
    assert (x * 0.5 + 1.0).dtype == np.float32


# -- gradients ----------------------------------------------------------------------

def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        check(lambda: F.tsum(F.matmul(a, b) ** 2), {"a": a, "b": b}, tol=1e-6)


UNARY = {
    "relu": F.relu,
    "tanh": F.tanh,
    "sigmoid": F.sigmoid,
    "gelu": F.gelu,
    "exp": F.exp,
    "leaky_relu": F.leaky_relu,
    "softmax": lambda x: F.softmax(x, axis=-1),
    "log_softmax": lambda x: F.log_softmax(x, axis=-1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name):
    rng = np.random.default_rng(3)
    fn = UNARY[name]
    with precision(np.float64):
        x = Tensor(rng.normal(size=(3, 5)) + 0.05, requires_grad=True)
        w = rng.normal(size=(3, 5))
        check(lambda: F.tsum(fn(x) * w), {"x": x})


def test_reduction_and_structural_op_gradients():
    rng = np.random.default_rng(4)
    with precision(np.float64):
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 2, 3, 4)
        table = leaf(rng, 6, 4)
        g, beta = leaf(rng, 4), leaf(rng, 4)

        def loss():
            x = F.concat([a, b], axis=1)
            x = F.layer_norm(x, g, beta)
            y = F.mean(x, axis=1) + F.tmax(x, axis=1)
            z = F.transpose(F.reshape(F.stack([a, b], axis=0), (4, 3, 4)), (0, 2, 1))
            e = F.embedding(table, np.array([[0, 5, 5], [2, 1, 0]]))
            return F.tsum(y * y) + F.tsum(z[1:, :, ::2]) + F.tsum(e * e) + F.mean(F.broadcast_to(g, (3, 4)) * 2.0)

        check(loss, {"a": a, "b": b, "table": table, "g": g, "beta": beta})


def test_cross_entropy_gradient():
    rng = np.random.default_rng(5)
    with precision(np.float64):
        logits = leaf(rng, 2, 3, 7)
        tgt = np.array([[1, 6, 0], [3, 0, 0]])
        check(lambda: F.tsum(F.cross_entropy(logits, tgt, ignore_index=0)), {"logits": logits})


def test_masked_softmax_gradient():
    rng = np.random.default_rng(6)
    mask = np.array([[True, True, False, True]] * 3)
    with precision(np.float64):
        x = leaf(rng, 3, 4)
        w = rng.normal(size=(3, 4))
        check(lambda: F.tsum(F.softmax(x, mask=mask) * w), {"x": x})


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_composite_gradients_pass_check(n, k, m, seed):
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        a, b, c = leaf(rng, n, k), leaf(rng, k, m), leaf(rng, m)
        check(lambda: F.mean(F.tanh(F.matmul(a, b) + c) * F.sigmoid(F.matmul(a, b))),
              {"a": a, "b": b, "c": c}, tol=1e-5, epsilon=1e-5)


def test_gradients_accumulate_over_reused_nodes():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x
    F.tsum(y).backward()
    assert x.grad[0] == pytest.approx(5.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad


# -- gradient checker -------------------------------------------------------------

def test_gradcheck_quadratic_exact():
    with precision(np.float64):
        x = Tensor(np.array([3.0]), requires_grad=True)
        report = finite_diff_check(lambda: F.tsum(x * x * 0.5), {"x": x}, tolerance=1e-9)
    assert x.grad[0] == 3.0
    assert report["x"].max_rel_error < 1e-9 and report["x"].passed


def test_gradcheck_detects_corrupted_gradient():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        a = leaf(rng, 3, 3)
        fn = lambda: F.tsum(F.tanh(a))  # noqa: E731
        fn().backward()
        report = finite_diff_check(fn, {"a": a}, analytic={"a": a.grad * 2.0})
    assert not report["a"].passed


def test_gradcheck_samples_large_tensors():
    with precision(np.float64):
        x = Tensor(np.random.default_rng(0).normal(size=(20, 20)), requires_grad=True)
        report = finite_diff_check(lambda: F.tsum(x * x), {"x": x}, max_coords=10)
    assert report["x"].checked == 10 and report["x"].passed


# -- AdamW ----------------------------------------------------------------------------

def reference_adamw(theta, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adamw_first_step_scalar_reference():
    with precision(np.float64):
        p = Tensor(np.array([1.0]))
        opt = AdamW([ParamGroup("g", {"p": p}, lr=0.01)])
        p.grad = np.array([1.0])
        opt.step()
    assert p.data[0] - 1.0 == pytest.approx(-0.01, rel=1e-6)
    assert p.data[0] == pytest.approx(reference_adamw(1.0, [1.0], 0.01, 0.0), abs=1e-15)
    assert opt.step_count == 1


@pytest.mark.parametrize("wd", [0.0, 5e-4, 0.1])
def test_adamw_multi_step_matches_reference(wd):
    grads = [0.3, -1.2, 2.0, 0.0, 0.7]
    with precision(np.float64):
        p = Tensor(np.array([0.4]))
        opt = AdamW([ParamGroup("g", {"p": p}, lr=0.05, weight_decay=wd)])
        for g in grads:
            p.grad = np.array([g])
            opt.step()
    assert p.data[0] == pytest.approx(reference_adamw(0.4, grads, 0.05, wd), abs=1e-14)


def test_adamw_zero_gradient_leaves_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]))
    opt = AdamW([ParamGroup("g", {"p": p}, lr=0.1)])
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.step_count == 1


def test_frozen_group_untouched_and_stateless():
    frozen = Tensor(np.array([1.0, 2.0]))
    live = Tensor(np.array([0.0]))
    fg = ParamGroup("frozen", {"w": frozen}, lr=1.0, frozen=True)
    opt = AdamW([fg, ParamGroup("live", {"v": live}, lr=0.1)])
    before = frozen.data.copy()
    frozen.grad = np.array([5.0, 5.0])
    live.grad = np.array([1.0])
    opt.step()
    assert frozen.data.tobytes() == before.tobytes()
    assert all(not k.startswith("frozen") for k in opt.state)
    assert not frozen.requires_grad


def test_nan_gradient_aborts_naming_parameter():
    p = Tensor(np.array([1.0]))
    opt = AdamW([ParamGroup("grp", {"weights": p})])
    p.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="weights"):
        opt.step()


def test_clip_grad_norm_rescales_to_max():
    a, b = Tensor(np.zeros(2)), Tensor(np.zeros(1))
    g = ParamGroup("g", {"a": a, "b": b})
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    norm = clip_grad_norm([g], 1.0)
    assert norm == pytest.approx(5.0)
    assert math.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum()) == pytest.approx(1.0)


# -- checkpoint container -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    tensors = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5, -2.0])}
    digest = save_checkpoint(tmp_path / "c.ckpt", tensors, {"w": True}, step=7, meta={"note": "x"})
    ck = load_checkpoint(tmp_path / "c.ckpt")
    assert ck.manifest_hash == digest and ck.step == 7 and ck.meta == {"note": "x"}
    assert ck.frozen == {"w": True, "b": False}
    for k, v in tensors.items():
        assert ck.tensors[k].dtype == v.dtype and ck.tensors[k].tobytes() == v.tobytes()
        assert tensor_checksum(ck.tensors[k]) == tensor_checksum(v)


def test_checkpoint_is_byte_deterministic(tmp_path):
    tensors = {"w": np.ones((2, 2))}
    save_checkpoint(tmp_path / "a", tensors)
    save_checkpoint(tmp_path / "b", tensors)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_checkpoint_detects_corruption(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, {"w": np.ones(4)})
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
