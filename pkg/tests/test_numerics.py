import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fawn.numerics import (
    AdamState,
    ContractError,
    Graph,
    Rng,
    ShapeError,
    adam_step,
    bce_logits,
    conv2d,
    cross_entropy_logits,
    finite_diff_grad,
    flatten,
    linear,
    maxpool2d,
    mul,
    relative_error,
    relu,
    softmax,
    softmax_array,
    splitmix64,
    sum_all,
)

TOL = 1e-4


def grad_check(build, args, wrt=None):
    """Compare backward against central differences for every argument in ``wrt``."""
    wrt = range(len(args)) if wrt is None else wrt

    def scalar(vals):
        g = Graph()
        return float(build(*[g.leaf(v) for v in vals]).value)

    g = Graph()
    leaves = [g.leaf(a) for a in args]
    g.backward(build(*leaves))
    errs = []
    for i in wrt:
        def f(x, i=i):
            vals = list(args)
            vals[i] = x
            return scalar(vals)

        fd = finite_diff_grad(f, args[i], step=1e-5)
        errs.append(relative_error(leaves[i].grad, fd))
    return max(errs)


# --- rng ----------------------------------------------------------------------


class TestRng:
    def test_reference_sequence_seed0(self):
        r = Rng(0)
        assert [r.next_u64() for _ in range(3)] == [
            0xE220A8397B1DCDAF,
            0x6E789E6AA1B965F4,
            0x06C45D188009454F,
        ]

    def test_vector_path_matches_scalar(self):
        a, b = Rng(12345), Rng(12345)
        block = a.u64_array(50)
        assert [int(v) for v in block] == [b.next_u64() for _ in range(50)]
        assert a.state == b.state

    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(7).uniform_array(100), Rng(7).uniform_array(100))

    def test_uniform_range(self):
        u = Rng(3).uniform_array(10_000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_splitmix64_is_first_output(self):
        assert splitmix64(0) == 0xE220A8397B1DCDAF

    def test_permutation_is_permutation(self):
        assert sorted(Rng(1).permutation(37)) == list(range(37))


# --- conv2d -------------------------------------------------------------------


class TestConv2d:
    def test_zero_input_gives_bias(self):
        g = Graph()
        out = conv2d(g.leaf(np.zeros((1, 4, 4))), g.leaf(np.ones((1, 1, 3, 3))), g.leaf([2.5]))
        assert out.shape == (1, 4, 4)
        assert np.all(out.value == 2.5)

    def test_delta_kernel_is_identity(self):
        x = np.zeros((1, 3, 3))
        x[0, 1, 1] = 1.0
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        g = Graph()
        out = conv2d(g.leaf(x), g.leaf(w), g.leaf([0.0]))
        assert np.array_equal(out.value, x)

    def test_matches_direct_loops(self):
        rng = np.random.default_rng(0)
        x, w, b = rng.normal(size=(2, 5, 3)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        ref = np.zeros((4, 5, 3))
        for o in range(4):
            for i in range(5):
                for j in range(3):
                    ref[o, i, j] = np.sum(xp[:, i : i + 3, j : j + 3] * w[o]) + b[o]
        g = Graph()
        out = conv2d(g.leaf(x), g.leaf(w), g.leaf(b))
        np.testing.assert_allclose(out.value, ref, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(1)
        args = [rng.normal(size=(2, 5, 3)), rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)]
        assert grad_check(lambda x, w, b: sum_all(conv2d(x, w, b)), args) < TOL

    def test_gradients_batched_nonlinear_loss(self):
        rng = np.random.default_rng(2)
        args = [rng.normal(size=(3, 2, 4, 3)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2)]

        def build(x, w, b):
            y = conv2d(x, w, b)
            return sum_all(mul(y, y))

        assert grad_check(build, args) < TOL

    def test_channel_mismatch(self):
        g = Graph()
        with pytest.raises(ShapeError):
            conv2d(g.leaf(np.zeros((3, 4, 4))), g.leaf(np.zeros((1, 2, 3, 3))), g.leaf([0.0]))

    @settings(max_examples=25, deadline=None)
    @given(c=st.integers(1, 3), h=st.integers(1, 7), w=st.integers(1, 5), o=st.integers(1, 4))
    def test_shape_formula(self, c, h, w, o):
        g = Graph()
        out = conv2d(g.leaf(np.ones((c, h, w))), g.leaf(np.ones((o, c, 3, 3))), g.leaf(np.zeros(o)))
        assert out.shape == (o, h, w)


# --- maxpool2d ----------------------------------------------------------------


class TestMaxpool:
    def test_small(self):
        g = Graph()
        out = maxpool2d(g.leaf([[[1.0, 2.0], [3.0, 4.0]]]), (2, 2))
        assert out.value.tolist() == [[[4.0]]]

    def test_wifi_shape(self):
        g = Graph()
        assert maxpool2d(g.leaf(np.zeros((1, 52, 1))), (2, 1)).shape == (1, 26, 1)

    def test_gradients(self):
        x = np.random.default_rng(3).normal(size=(1, 6, 4))
        assert grad_check(lambda x: sum_all(maxpool2d(x, (2, 2))), [x]) < TOL

    def test_tie_routes_to_first(self):
        g = Graph()
        x = g.leaf(np.ones((1, 2, 2)))
        g.backward(sum_all(maxpool2d(x, (2, 2))))
        assert x.grad.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]

    def test_window_too_large(self):
        g = Graph()
        with pytest.raises(ShapeError):
            maxpool2d(g.leaf(np.zeros((1, 4, 1))), (2, 2))

    @settings(max_examples=25, deadline=None)
    @given(h=st.integers(1, 9), w=st.integers(1, 9), ph=st.integers(1, 3), pw=st.integers(1, 3))
    def test_floor_shapes(self, h, w, ph, pw):
        if ph > h or pw > w:
            return
        g = Graph()
        assert maxpool2d(g.leaf(np.zeros((2, h, w))), (ph, pw)).shape == (2, h // ph, w // pw)


# --- linear / relu --------------------------------------------------------------


class TestLinear:
    def test_identity(self):
        g = Graph()
        out = linear(g.leaf([1.0, 2.0, 3.0]), g.leaf(np.eye(3)), g.leaf(np.zeros(3)))
        assert out.value.tolist() == [1.0, 2.0, 3.0]

    def test_zero_weight(self):
        g = Graph()
        out = linear(g.leaf([7.0, -1.0, 2.0]), g.leaf(np.zeros((2, 3))), g.leaf([5.0, 6.0]))
        assert out.value.tolist() == [5.0, 6.0]

    def test_gradients(self):
        rng = np.random.default_rng(4)
        args = [rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)]
        assert grad_check(lambda x, w, b: sum_all(mul(linear(x, w, b), linear(x, w, b))), args) < TOL

    def test_length_mismatch(self):
        g = Graph()
        with pytest.raises(ShapeError):
            linear(g.leaf(np.zeros(5)), g.leaf(np.zeros((2, 4))), g.leaf(np.zeros(2)))


class TestRelu:
    def test_values(self):
        g = Graph()
        assert relu(g.leaf([-1.0, 0.0, 2.0])).value.tolist() == [0.0, 0.0, 2.0]

    def test_subgradient_zero_at_zero(self):
        g = Graph()
        x = g.leaf([0.0])
        g.backward(sum_all(relu(x)))
        assert x.grad.tolist() == [0.0]

    @given(arrays(np.float64, 12, elements=st.floats(-1e6, 1e6)))
    def test_idempotent(self, x):
        g = Graph()
        once = relu(g.leaf(x))
        assert np.array_equal(relu(once).value, once.value)

    def test_gradients(self):
        x = np.random.default_rng(5).normal(size=20)
        x = x[np.abs(x) >= 1e-3]
        assert grad_check(lambda x: sum_all(mul(relu(x), x)), [x]) < TOL


# --- softmax and losses -------------------------------------------------------


class TestSoftmax:
    def test_symmetric(self):
        assert softmax_array(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]

    def test_no_overflow(self):
        assert softmax_array(np.array([1000.0, 1000.0])).tolist() == [0.5, 0.5]

    def test_rows_sum_to_one(self):
        s = softmax_array(np.random.default_rng(6).normal(size=(2, 4)))
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    @given(arrays(np.float64, (3, 5), elements=st.floats(-700, 700)))
    def test_nonnegative_rows_sum_to_one(self, z):
        s = softmax_array(z)
        assert np.all(s >= 0)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(7)
        z, c = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        assert grad_check(lambda z: sum_all(mul(softmax(z), c)), [z]) < TOL


class TestCrossEntropy:
    def test_uniform(self):
        g = Graph()
        assert cross_entropy_logits(g.leaf(np.zeros(4)), 2).value == pytest.approx(math.log(4), abs=1e-12)
        assert math.log(4) == pytest.approx(1.386294, abs=1e-6)

    def test_confident(self):
        g = Graph()
        assert cross_entropy_logits(g.leaf([30.0, -30.0]), 0).value == pytest.approx(0.0, abs=1e-20)

    def test_out_of_range(self):
        g = Graph()
        with pytest.raises(IndexError):
            cross_entropy_logits(g.leaf(np.zeros(3)), 3)
        with pytest.raises(IndexError):
            cross_entropy_logits(g.leaf(np.zeros(3)), -1)

    def test_gradients(self):
        z = np.random.default_rng(8).normal(size=9)
        assert grad_check(lambda z: cross_entropy_logits(z, 4), [z]) < TOL

    @given(arrays(np.float64, 6, elements=st.floats(-50, 50)), st.integers(0, 5))
    def test_nonnegative(self, z, t):
        g = Graph()
        assert cross_entropy_logits(g.leaf(z), t).value >= 0


class TestBce:
    def test_zero_logit(self):
        g = Graph()
        assert bce_logits(g.leaf(0.0), 1).value == pytest.approx(math.log(2), abs=1e-15)

    def test_confident(self):
        g = Graph()
        assert bce_logits(g.leaf(30.0), 1).value == pytest.approx(0.0, abs=1e-12)

    def test_extreme_logits_finite(self):
        g = Graph()
        out = bce_logits(g.leaf([-800.0, 800.0]), [1.0, 0.0])
        assert np.all(np.isfinite(out.value))

    @pytest.mark.parametrize("target", [0, 1])
    def test_gradients(self, target):
        z = np.array(np.random.default_rng(9).normal())
        assert grad_check(lambda z: bce_logits(z, target), [z]) < TOL

    @given(st.floats(-100, 100), st.sampled_from([0, 1]))
    def test_nonnegative(self, z, t):
        g = Graph()
        assert bce_logits(g.leaf(z), t).value >= 0


# --- backward -----------------------------------------------------------------


class TestBackward:
    def test_sum(self):
        g = Graph()
        x = g.leaf(np.random.default_rng(10).normal(size=(3, 2)))
        g.backward(sum_all(x))
        assert np.array_equal(x.grad, np.ones((3, 2)))

    def test_square(self):
        g = Graph()
        xv = np.random.default_rng(11).normal(size=5)
        x = g.leaf(xv)
        loss = sum_all(mul(x, x))
        g.backward(loss)
        np.testing.assert_allclose(x.grad, 2 * xv)
        assert loss.grad == 1.0

    def test_non_scalar_rejected(self):
        g = Graph()
        with pytest.raises(ContractError):
            g.backward(g.leaf(np.zeros(3)))

    def test_inputs_reference_earlier_nodes(self):
        g = Graph()
        x = g.leaf(np.ones((1, 4, 4)))
        y = maxpool2d(relu(conv2d(x, g.leaf(np.ones((2, 1, 3, 3))), g.leaf(np.zeros(2)))), (2, 2))
        sum_all(y)
        for i, node in enumerate(g.nodes):
            assert all(j < i for j in node.inputs)

    def test_every_reachable_node_has_grad_shape(self):
        g = Graph()
        x = g.leaf(np.random.default_rng(12).normal(size=(1, 4, 4)))
        y = conv2d(x, g.leaf(np.ones((2, 1, 3, 3))), g.leaf(np.zeros(2)))
        loss = sum_all(relu(y))
        g.backward(loss)
        for node in g.nodes:
            assert node.grad.shape == node.value.shape

    def test_pipeline_gradients(self):
        rng = np.random.default_rng(13)
        args = [
            rng.normal(size=(2, 6, 4)),
            rng.normal(size=(3, 2, 3, 3)),
            rng.normal(size=3),
            rng.normal(size=(5, 18)),
            rng.normal(size=5),
        ]

        def build(x, w, b, fw, fb):
            h = maxpool2d(relu(conv2d(x, w, b)), (2, 2))
            logits = linear(flatten(h), fw, fb)
            return cross_entropy_logits(logits, 3)

        assert grad_check(build, args) < TOL


# --- adam ----------------------------------------------------------------------


class TestAdam:
    def test_zero_grad_no_change(self):
        p = {"w": np.array([1.0, -2.0])}
        new, state = adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p))
        assert np.array_equal(new["w"], p["w"])
        assert state.step == 1

    def test_first_step_is_signed_lr(self):
        p = {"w": np.zeros(3)}
        g = {"w": np.array([0.3, -4.0, 1e-2])}
        new, _ = adam_step(p, g, AdamState.zeros_like(p), lr=0.01)
        np.testing.assert_allclose(new["w"], -0.01 * np.sign(g["w"]), rtol=1e-5)

    def test_converges_on_quadratic(self):
        c = np.array([1.0, -2.0])
        p = {"w": np.zeros(2)}
        state = AdamState.zeros_like(p)
        for _ in range(200):
            p, state = adam_step(p, {"w": 2 * (p["w"] - c)}, state, lr=0.05)
        assert np.linalg.norm(p["w"] - c) < 1e-2
        assert state.step == 200
        assert all(np.all(v >= 0) for v in state.v.values())

    def test_shape_mismatch(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(ShapeError):
            adam_step(p, {"w": np.zeros(3)}, AdamState.zeros_like(p))


# --- finite differences -------------------------------------------------------


class TestFiniteDiff:
    def test_sum(self):
        x = np.random.default_rng(14).normal(size=(2, 3))
        np.testing.assert_allclose(finite_diff_grad(np.sum, x), 1.0, atol=1e-9)

    def test_square(self):
        fd = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), step=1e-5)
        assert abs(fd[0] - 6.0) < 1e-8

    def test_agrees_with_backward_on_linear(self):
        rng = np.random.default_rng(15)
        args = [rng.normal(size=6), rng.normal(size=(4, 6)), rng.normal(size=4)]
        assert grad_check(lambda x, w, b: sum_all(relu(linear(x, w, b))), args) < TOL
