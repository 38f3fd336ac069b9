import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framesearch import nn
from framesearch.errors import ShapeError
from framesearch.nn import Tensor
from framesearch.nn import functional as F
from framesearch.nn import layers as L

from _gradcheck import check, numeric_grad, rel_error


def direct_conv(x, w, b, stride=1):
    """Nested-loop same-padded convolution."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    p = k // 2
    xp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    xp[:, :, p:p + h, p:p + wd] = x
    oh, ow = (h - 1) // stride + 1, (wd - 1) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for i in range(n):
        for o in range(f):
            for y in range(oh):
                for z in range(ow):
                    win = xp[i, :, y * stride:y * stride + k, z * stride:z * stride + k]
                    out[i, o, y, z] = (win * w[o]).sum() + b[o]
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = F.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_ones_3x3_matches_nested_loops(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        w, b = np.ones((1, 1, 3, 3)), np.zeros(1)
        expected = direct_conv(x, w, b)
        # every 3x3 window around a 2x2 image covers all four cells
        np.testing.assert_array_equal(expected, [[[[10.0, 10.0], [10.0, 10.0]]]])
        np.testing.assert_allclose(F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data, expected)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_random_against_nested_loops(self, stride):
        rng = np.random.default_rng(stride)
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
        np.testing.assert_allclose(got, direct_conv(x, w, b, stride), rtol=1e-12, atol=1e-12)

    @given(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**16))
    @settings(max_examples=25, deadline=None)
    def test_identity_kernel_any_input(self, c, h, w, seed):
        x = np.random.default_rng(seed).random((2, c, h, w))
        k = np.zeros((c, c, 3, 3))
        for i in range(c):
            k[i, i, 1, 1] = 1.0
        out = F.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(c)))
        np.testing.assert_array_equal(out.data, x)

    def test_channel_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(3, 3, 3, 3\)"):
            F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 3, 3, 3))))

    def test_kernel_gradient(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 2, 5, 5))
        b = rng.standard_normal(3)
        err = check(lambda w: F.conv2d(Tensor(x), w, Tensor(b)).sum(), [rng.standard_normal((3, 2, 3, 3))])
        assert err <= 1e-4


class TestDense:
    def test_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        out = F.dense(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_by_hand(self):
        out = F.dense(Tensor([[1.0, 2.0]]), Tensor([[1.0, 1.0], [0.0, 1.0]]), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [[3.0, 2.0]])

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            F.dense(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 2))))

    def test_gradient(self):
        rng = np.random.default_rng(1)
        err = check(F.dense, [rng.standard_normal((4, 5)), rng.standard_normal((3, 5)), rng.standard_normal(3)])
        assert err <= 1e-4


class TestBCE:
    def test_perfect_ones(self):
        p = np.ones((2, 3))
        assert float(F.bce_loss(Tensor(p), Tensor(p))) <= 1e-6

    def test_half(self):
        p = np.full((4,), 0.5)
        assert float(F.bce_loss(Tensor(p), Tensor(p))) == pytest.approx(np.log(2), abs=1e-12)
        assert float(F.bce_loss(Tensor(p), Tensor(p))) == pytest.approx(0.6931, abs=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            F.bce_loss(Tensor(np.full(3, 0.5)), Tensor(np.full(4, 0.5)))

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            F.bce_loss(Tensor(np.array([0.5, np.nan])), Tensor(np.array([0.5, 0.5])))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        t = rng.random((3, 4))
        err = check(lambda p: F.bce_loss(p, Tensor(t)), [rng.uniform(0.05, 0.95, (3, 4))])
        assert err <= 1e-4

    @given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=20), st.integers(0, 2**16))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative_and_minimised_at_target(self, ts, seed):
        t = np.array(ts)
        p = np.clip(t + np.random.default_rng(seed).uniform(-0.3, 0.3, t.shape), 0.001, 0.999)
        at_target = float(F.bce_loss(Tensor(t), Tensor(t)))
        assert float(F.bce_loss(Tensor(p), Tensor(t))) >= 0
        assert float(F.bce_loss(Tensor(p), Tensor(t))) >= at_target - 1e-12


class TestKL:
    def test_unit_normal_is_zero(self):
        assert float(F.kl_unit_normal(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))))) == 0.0

    def test_one_dim_mean_one(self):
        assert float(F.kl_unit_normal(Tensor([[1.0]]), Tensor([[0.0]]))) == pytest.approx(0.5)

    def test_nonfinite_log_var(self):
        with pytest.raises(ValueError):
            F.kl_unit_normal(Tensor([[0.0]]), Tensor([[np.inf]]))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        err = check(F.kl_unit_normal, [rng.standard_normal((3, 5)), rng.standard_normal((3, 5))])
        assert err <= 1e-4

    @given(st.integers(0, 2**16))
    @settings(max_examples=50, deadline=None)
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        mu, lv = rng.standard_normal((2, 4)) * 3, rng.standard_normal((2, 4)) * 3
        assert float(F.kl_unit_normal(Tensor(mu), Tensor(lv))) >= 0


class TestContrastive:
    def test_identical_similar_pair(self):
        assert float(F.contrastive_loss(0.0, 0, 1.0)) == 0.0

    @pytest.mark.parametrize("d", [1.0, 1.5, 7.0])
    def test_saturated_hinge(self, d):
        assert float(F.contrastive_loss(d, 1, 1.0)) == 0.0

    def test_direct_value(self):
        assert float(F.contrastive_loss(0.5, 1, 1.0)) == pytest.approx(0.125)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            F.contrastive_loss(0.5, 2, 1.0)

    def test_continuous_at_margin(self):
        below = float(F.contrastive_loss(1.0 - 1e-9, 1, 1.0))
        assert below == pytest.approx(0.0, abs=1e-15)

    def test_saturated_hinge_has_zero_gradient(self):
        d = Tensor(np.array([1.0, 1.2, 3.0]), requires_grad=True)
        loss = F.contrastive_loss(d, np.ones(3), 1.0)
        loss.backward()
        assert float(loss) == 0.0
        np.testing.assert_array_equal(d.grad, 0.0)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_sum(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_repeat_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = x.sum()
        loss.backward()
        with pytest.raises(RuntimeError):
            loss.backward()

    def test_intermediates_receive_grads(self):
        x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        h = F.relu(x * 3.0)
        loss = h.sum()
        loss.backward()
        assert h.grad is not None and h.grad.shape == h.shape
        assert x.grad.shape == x.shape

    def test_composite_graph(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 2, 4, 4))
        target = rng.random((2, 3))

        def op(w, b, dw, db):
            h = F.relu(F.conv2d(Tensor(x), w, b, stride=2))
            return F.bce_loss(F.sigmoid(F.dense(F.flatten(h), dw, db)), Tensor(target))

        err = check(op, [rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3) * 0.1,
                         rng.standard_normal((3, 12)) * 0.3, rng.standard_normal(3) * 0.1])
        assert err <= 1e-4

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with nn.no_grad():
            y = x * 2.0
        assert not y.requires_grad


class TestResampling:
    @given(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5))
    @settings(max_examples=25, deadline=None)
    def test_down_then_up_preserves_shape(self, c, h2, w2):
        x = Tensor(np.random.default_rng(0).random((2, c, 2 * h2, 2 * w2)))
        d = F.downsample2(x)
        assert d.shape == (2, c, h2, w2)
        assert F.upsample2(d).shape == x.shape

    def test_odd_extent_rejected(self):
        with pytest.raises(ShapeError):
            F.downsample2(Tensor(np.zeros((1, 1, 3, 4))))


class TestOptimizer:
    def test_zero_gradient_keeps_params(self):
        for state in (nn.adam(), nn.adadelta()):
            p = np.array([1.0, -2.0])
            nn.optimizer_step(state, [p], [np.zeros(2)])
            np.testing.assert_array_equal(p, [1.0, -2.0])
            assert state.step == 1

    def test_adam_first_step_matches_scalar_reference(self):
        lr, b1, b2, eps, g = 0.005, 0.9, 0.999, 1e-8, 1.0
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        expected = -lr * (m / (1 - b1)) / ((v / (1 - b2)) ** 0.5 + eps)
        p = np.array([0.0])
        nn.optimizer_step(nn.adam(lr=lr), [p], [np.array([g])])
        assert p[0] == pytest.approx(expected, rel=1e-12)

    def test_adadelta_first_step_matches_scalar_reference(self):
        rho, eps, g = 0.95, 1e-6, 0.5
        eg = (1 - rho) * g * g
        expected = -((0 + eps) ** 0.5 / (eg + eps) ** 0.5) * g
        p = np.array([0.0])
        nn.optimizer_step(nn.adadelta(), [p], [np.array([g])])
        assert p[0] == pytest.approx(expected, rel=1e-12)

    def test_identical_params_evolve_identically(self):
        rng = np.random.default_rng(5)
        for make in (nn.adam, nn.adadelta):
            a, b = rng.standard_normal(4), None
            b = a.copy()
            sa, sb = make(), make()
            for _ in range(5):
                g = rng.standard_normal(4)
                nn.optimizer_step(sa, [a], [g])
                nn.optimizer_step(sb, [b], [g.copy()])
            np.testing.assert_array_equal(a, b)

    def test_nan_gradient_names_parameter(self):
        with pytest.raises(FloatingPointError, match="enc.weight"):
            nn.optimizer_step(nn.adam(), [np.zeros(2)], [np.array([np.nan, 0.0])], names=["enc.weight"])

    def test_buffers_track_param_shapes(self):
        state = nn.adam()
        params = [np.zeros((2, 3)), np.zeros(4)]
        nn.optimizer_step(state, params, [np.ones((2, 3)), np.ones(4)])
        assert [b["m"].shape for b in state.buffers] == [(2, 3), (4,)]


class TestLayers:
    def test_count_dense(self):
        assert L.count_parameters([L.dense(2, 3)]) == 9

    def test_count_conv(self):
        assert L.count_parameters([L.conv(3, 16, 3)]) == 448

    @pytest.mark.parametrize("k", [0, 2, 4])
    def test_even_kernel_rejected(self, k):
        with pytest.raises(ValueError):
            L.conv(3, 4, k)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            L.LayerSpec("maxpool")

    def test_network_forward_shapes(self):
        net = nn.Network([L.conv(3, 4, stride=2), L.RELU, L.FLATTEN, L.dense(4 * 4 * 4, 5)])
        out = net(Tensor(np.zeros((2, 3, 8, 8), dtype=np.float32)))
        assert out.shape == (2, 5)
        assert net.num_parameters() == sum(p.size for p in net.params)


def test_numeric_grad_oracle_on_known_function():
    x = np.array([1.0, 2.0])
    (g,) = numeric_grad(lambda a: float((a ** 3).sum()), [x])
    assert rel_error(g, 3 * x ** 2) < 1e-8
