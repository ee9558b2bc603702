import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adgraph_embed import numeric as nm
from adgraph_embed.numeric import Tape, Tensor, backward, grad_check


def _grad(f, *arrays):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = f(*ts)
    backward(out, tape, wrt=ts)
    return [t.grad for t in ts]


class TestPrimitiveValues:
    def test_relu(self):
        assert nm.relu(Tensor([-2.0, 3.0])).data.tolist() == [0.0, 3.0]

    def test_leaky_relu(self):
        assert nm.leaky_relu(Tensor(-2.0), 0.2).item() == pytest.approx(-0.4, abs=1e-15)
        assert nm.leaky_relu(Tensor(5.0), 0.2).item() == 5.0

    def test_masked_softmax_two_entries(self):
        y = nm.masked_softmax(Tensor([0.0, math.log(2.0)]), [0, 1]).data
        np.testing.assert_allclose(y, [1 / 3, 2 / 3], atol=1e-15)

    def test_masked_softmax_zero_outside_mask(self):
        y = nm.masked_softmax(Tensor([5.0, 1.0, 1.0]), [1, 2]).data
        np.testing.assert_allclose(y, [0.0, 0.5, 0.5])

    def test_masked_softmax_empty_raises(self):
        with pytest.raises(ValueError, match="empty"):
            nm.masked_softmax(Tensor([1.0, 2.0]), [])

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError, match="incompatible"):
            nm.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError):
            nm.add(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_concat_rows(self):
        out = nm.concat_rows([Tensor(np.ones((1, 2))), Tensor(np.zeros((2, 2)))])
        assert out.shape == (3, 2)

    def test_segment_softmax_matches_masked(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=7)
        seg = np.array([0, 0, 1, 1, 1, 2, 2])
        y = nm.segment_softmax(Tensor(logits), seg, 3).data
        for s in range(3):
            idx = np.flatnonzero(seg == s)
            np.testing.assert_allclose(y[idx], nm.masked_softmax(Tensor(logits), idx).data[idx], atol=1e-15)

    def test_spmm_matches_dense(self):
        rng = np.random.default_rng(1)
        rows, cols = np.array([0, 0, 1, 2, 2]), np.array([0, 2, 1, 0, 1])
        vals, dense = rng.normal(size=5), rng.normal(size=(3, 4))
        M = np.zeros((3, 3))
        M[rows, cols] = vals
        np.testing.assert_allclose(nm.spmm(Tensor(vals), rows, cols, Tensor(dense), 3).data, M @ dense, atol=1e-14)


class TestBackward:
    def test_square(self):
        (g,) = _grad(lambda w: nm.reduce_sum(w * w), np.array([3.0]))
        assert g.tolist() == [6.0]

    def test_disconnected_gets_zero(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        x = Tensor([4.0], requires_grad=True)
        with Tape() as tape:
            _ = w * 2.0
            loss = nm.reduce_sum(x * x)
        backward(loss, tape, wrt=[w, x])
        assert w.grad.tolist() == [0.0, 0.0]
        assert x.grad.tolist() == [8.0]

    def test_relu_subgradient(self):
        (g,) = _grad(lambda w: nm.reduce_sum(nm.relu(w)), np.array([-1.0, 2.0]))
        assert g.tolist() == [0.0, 1.0]

    def test_relu_derivative_at_zero_is_zero(self):
        (g,) = _grad(lambda w: nm.reduce_sum(nm.relu(w)), np.array([0.0]))
        assert g.tolist() == [0.0]

    def test_fan_out_accumulates(self):
        # f = w*w + 3w at w=2 -> 2w + 3 = 7
        (g,) = _grad(lambda w: nm.reduce_sum(w * w + w * 3.0), np.array([2.0]))
        assert g.tolist() == [7.0]

    def test_repeated_gather_accumulates(self):
        (g,) = _grad(lambda w: nm.reduce_sum(nm.getitem(w, np.array([0, 0, 1]))), np.array([1.0, 1.0, 1.0]))
        assert g.tolist() == [2.0, 1.0, 0.0]

    def test_non_scalar_loss_rejected(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = w * 2.0
        with pytest.raises(ValueError, match="scalar"):
            backward(out, tape)

    def test_nothing_recorded_without_tape(self):
        w = Tensor([1.0], requires_grad=True)
        out = w * 2.0
        assert not out.requires_grad

    def test_two_fresh_tapes_identical_gradients(self):
        rng = np.random.default_rng(2)
        A, b = rng.normal(size=(4, 3)), rng.normal(size=3)

        def f(W, v):
            return nm.reduce_sum(nm.exp(nm.matmul(W, v) * 0.1) + nm.leaky_relu(nm.matmul(W, v)))

        g1 = _grad(f, A, b)
        g2 = _grad(f, A, b)
        for x, y in zip(g1, g2):
            np.testing.assert_array_equal(x, y)


class TestGradCheck:
    def test_quadratic(self):
        err = grad_check(lambda p: nm.reduce_sum(p[0] * p[0]), [Tensor([3.0])])
        assert err < 1e-6

    def test_exp_sum(self):
        w = Tensor(np.random.default_rng(3).uniform(-1, 1, 5))
        assert grad_check(lambda p: nm.reduce_sum(nm.exp(p[0])), [w]) < 1e-5

    def test_constant(self):
        assert grad_check(lambda p: nm.reduce_sum(Tensor([1.0, 2.0])) + nm.reduce_sum(p[0]) * 0.0, [Tensor([1.0])]) == 0.0

    def test_params_restored(self):
        w = Tensor([0.3, -0.2])
        before = w.data.copy()
        grad_check(lambda p: nm.reduce_sum(nm.exp(p[0])), [w])
        np.testing.assert_array_equal(w.data, before)

    def test_relative_error_floor(self):
        # both gradients at round-off level: compared against the floor, not each other
        assert nm.max_relative_error([np.array([1e-16])], [np.array([3e-10])]) == pytest.approx(3e-4)
        assert nm.max_relative_error([np.array([2.0])], [np.array([2.0 + 4e-6])]) == pytest.approx(1e-6, rel=1e-6)
        assert nm.error_floor(0.5) == nm.GRAD_FLOOR
        assert nm.error_floor(-300.0) == pytest.approx(300 * nm.GRAD_FLOOR)

    def test_numeric_gradient_quadratic(self):
        arrays = {"w": np.array([1.0, -2.0])}
        g = nm.numeric_gradient(lambda: float(np.sum(arrays["w"] ** 2)), arrays)
        np.testing.assert_allclose(g["w"], [2.0, -4.0], rtol=1e-10)
        np.testing.assert_array_equal(arrays["w"], [1.0, -2.0])

    def test_detects_wrong_gradient(self):
        # a primitive with a deliberately wrong adjoint must be caught
        from adgraph_embed.numeric.tensor import _record

        def bad_square(x):
            return _record("bad", x.data**2, (x,), lambda g: (g * x.data,))

        assert grad_check(lambda p: nm.reduce_sum(bad_square(p[0])), [Tensor([1.5, -0.7])]) > 0.1


def _smooth_cases():
    """(name, f, shapes) for each primitive, kept away from kinks by construction."""
    return [
        ("matmul", lambda a, b: nm.reduce_sum(nm.matmul(a, b)), [(3, 4), (4, 2)]),
        ("matvec", lambda a, b: nm.reduce_sum(nm.matmul(a, b) * nm.matmul(a, b)), [(3, 4), (4,)]),
        ("add_broadcast", lambda a, b: nm.reduce_sum((a + b) * (a + b)), [(3, 4), (4,)]),
        ("sub", lambda a, b: nm.reduce_sum((a - b) * a), [(3,), (3,)]),
        ("scale", lambda a: nm.reduce_sum(nm.scale(a, -2.5) * a), [(4,)]),
        ("concat_rows", lambda a, b: nm.reduce_sum(nm.exp(nm.concat_rows([a, b]) * 0.3)), [(2, 3), (1, 3)]),
        ("concat_cols", lambda a, b: nm.reduce_sum(nm.exp(nm.concat([a, b], axis=1) * 0.3)), [(2, 3), (2, 2)]),
        ("relu", lambda a: nm.reduce_sum(nm.relu(a) * a), [(6,)]),
        ("leaky_relu", lambda a: nm.reduce_sum(nm.leaky_relu(a, 0.2) * a), [(6,)]),
        ("exp", lambda a: nm.reduce_sum(nm.exp(a)), [(5,)]),
        ("expm1", lambda a: nm.reduce_sum(nm.expm1(a) * a), [(5,)]),
        ("log", lambda a: nm.reduce_sum(nm.log(a * a + 1.0)), [(5,)]),
        ("reduce_sum_axis", lambda a: nm.reduce_sum(nm.exp(nm.reduce_sum(a, axis=1) * 0.5)), [(3, 4)]),
        ("mul", lambda a, b: nm.reduce_sum(nm.elementwise_mul(a, b) * a), [(4,), (4,)]),
        ("transpose_reshape", lambda a: nm.reduce_sum(nm.exp(nm.reshape(nm.transpose(a), (6,)) * 0.4) * nm.reshape(a, (6,))), [(2, 3)]),
        ("masked_softmax", lambda a: nm.reduce_sum(nm.masked_softmax(a, [0, 2, 3]) * Tensor([1.0, 2.0, -1.0, 0.5])), [(4,)]),
        ("segment_softmax", lambda a: nm.reduce_sum(nm.segment_softmax(a, np.array([0, 0, 1, 1, 1]), 2) * Tensor([1.0, -2.0, 0.5, 3.0, 1.0])), [(5,)]),
        ("segment_sum", lambda a: nm.reduce_sum(nm.exp(nm.segment_sum(a, np.array([1, 0, 1]), 2) * 0.5)), [(3, 2)]),
        ("spmm", lambda v, d: nm.reduce_sum(nm.exp(nm.spmm(v, np.array([0, 0, 1]), np.array([1, 0, 1]), d, 2) * 0.3)), [(3,), (2, 3)]),
        ("getitem_pairs", lambda a: nm.reduce_sum(nm.exp(nm.getitem(a, (np.array([0, 2, 2]), 1)))), [(3, 2)]),
        ("clamp", lambda a: nm.reduce_sum(nm.clamp(a, -10.0, 10.0) * a), [(4,)]),
    ]


@pytest.mark.parametrize("name,f,shapes", _smooth_cases(), ids=[c[0] for c in _smooth_cases()])
def test_primitive_gradients_over_random_points(name, f, shapes):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    worst = 0.0
    for _ in range(20):
        params = []
        for shape in shapes:
            x = rng.uniform(-1.5, 1.5, size=shape)
            x = np.where(np.abs(x) < 0.1, np.where(x < 0, -0.1, 0.1), x)  # keep clear of the kinks
            params.append(Tensor(x))
        worst = max(worst, grad_check(lambda p: f(*p), params))
    assert worst < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_masked_softmax_is_distribution(values):
    y = nm.masked_softmax(Tensor(values), range(len(values))).data
    assert np.all(y >= 0)
    assert abs(y.sum() - 1.0) <= 1e-9


class TestOptimizers:
    def test_gd_step(self):
        assert nm.gd_step({"w": np.array(1.0)}, {"w": np.array(2.0)}, 0.1)["w"] == pytest.approx(0.8)

    def test_adamw_zero_gradient_is_noop(self):
        p = {"w": np.array([0.5, -1.0])}
        out, _ = nm.adamw_step(p, {"w": np.zeros(2)}, None, lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(out["w"], p["w"])

    def test_adamw_first_step(self):
        # bias-corrected first step: m_hat = g, v_hat = g^2 -> w - lr * g / (|g| + eps)
        out, state = nm.adamw_step({"w": np.array([0.0])}, {"w": np.array([1.0])}, None, lr=0.1)
        assert out["w"][0] == pytest.approx(-0.1 / (1.0 + 1e-8), abs=1e-15)
        assert state.step == 1

    def test_adamw_matches_reference_recurrence(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=3)
        grads = rng.normal(size=(5, 3))
        lr, wd, b1, b2, eps = 0.05, 0.1, 0.9, 0.999, 1e-8
        m = v = np.zeros(3)
        ref = w.copy()
        params, state = {"w": w}, None
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref = ref * (1 - lr * wd) - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            params, state = nm.adamw_step(params, {"w": g}, state, lr, wd)
        np.testing.assert_allclose(params["w"], ref, rtol=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            nm.gd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.1)
        with pytest.raises(ValueError, match="shape"):
            nm.adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, None, 0.1)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    params = {"W": rng.normal(size=(3, 4)), "a": rng.normal(size=6) * 1e-300, "s": np.array(np.pi)}
    nm.save_params(tmp_path / "ckpt.txt", params)
    loaded = nm.load_params(tmp_path / "ckpt.txt")
    assert list(loaded) == list(params)
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])
