import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_mixed_net, random_positive_net
from oracles import lrp_messages_loop, unrolled_conv_matrix
from srmap import lrp, netrt
from srmap.errors import InvalidArgumentError, UnsupportedOperationError


def trace_with_output(vec):
    vec = np.asarray(vec, float)
    return netrt.ForwardTrace([np.zeros(1)], [vec])


class TestInitRelevance:
    def test_keeps_top_class(self):
        np.testing.assert_array_equal(lrp.init_relevance(trace_with_output([0.1, 0.7, 0.2]), 1), [0, 0.7, 0])

    def test_single_class(self):
        np.testing.assert_array_equal(lrp.init_relevance(trace_with_output([1.0]), 0), [1.0])

    def test_chain(self, chain_net):
        trace = netrt.forward(chain_net, np.ones((1, 2, 1)))
        np.testing.assert_array_equal(lrp.init_relevance(trace, 0), [6.0])

    def test_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            lrp.init_relevance(trace_with_output([0.5, 0.5]), 2)

    def test_logit_start_uses_softmax_input(self):
        net = random_mixed_net(np.random.default_rng(0))
        trace = netrt.forward(net, np.random.default_rng(1).random((8, 8, 2)))
        k = int(trace.output.argmax())
        r = lrp.init_relevance(trace, k, start="logit", net=net)
        assert r[k] == trace.inputs[-1][k]


class TestLinear:
    def test_chain_hand_values(self):
        W1, W2 = np.ones((3, 2)), np.ones((1, 3))
        x = np.ones(2)
        hidden = W1 @ x
        R_hidden = lrp.lrp_linear(W2, hidden, [6.0], 1e-9)
        np.testing.assert_allclose(R_hidden, [2, 2, 2], rtol=1e-9)
        R_in = lrp.lrp_linear(W1, x, [2.0, 2.0, 2.0], 1e-9)
        np.testing.assert_allclose(R_in, [3, 3], rtol=1e-9)

    def test_single_contributor_takes_all(self):
        np.testing.assert_allclose(lrp.lrp_linear([[2.0]], [5.0], [4.0], 1e-9), [4.0], rtol=1e-9)

    def test_zero_input_gives_zero(self):
        W = np.random.default_rng(0).normal(size=(1, 4))
        np.testing.assert_array_equal(lrp.lrp_linear(W, np.zeros(4), [1.0], 0.01), np.zeros(4))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            lrp.lrp_linear(np.ones((2, 3)), np.ones(2), [1, 1])

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_message_loop(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(4, 6))
        x = rng.normal(size=6)
        R = rng.normal(size=4)
        expected, _ = lrp_messages_loop(W, x, R, 1e-6)
        np.testing.assert_allclose(lrp.lrp_linear(W, x, R, 1e-6), expected, rtol=1e-10, atol=1e-12)

    def test_epsilon_sign_follows_denominator(self):
        # z = -2: the stabilizer must push away from zero, giving -2 - eps
        eps = 0.5
        R = lrp.lrp_linear([[1.0, 1.0]], [-1.0, -1.0], [1.0], eps)
        np.testing.assert_allclose(R, [-1 / -2.5, -1 / -2.5])

    @pytest.mark.parametrize("seed", range(5))
    def test_message_conservation_eps0(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.normal(size=(3, 5))
        x = rng.normal(size=5)
        R = rng.normal(size=3)
        _, msgs = lrp_messages_loop(W, x, R, 0.0)
        np.testing.assert_allclose(msgs.sum(axis=1), R, rtol=1e-9)
        np.testing.assert_allclose(lrp.lrp_linear(W, x, R, 0.0).sum(), R.sum(), rtol=1e-9)


class TestConv:
    def test_1x1_identity(self):
        layer = netrt.Conv2D(np.ones((1, 1, 1, 1)))
        x = np.random.default_rng(0).uniform(0.1, 1, (4, 4, 1))
        R = np.random.default_rng(1).random((4, 4, 1))
        np.testing.assert_allclose(lrp.lrp_conv(layer, x, R, 1e-12), R, rtol=1e-10)

    def test_2x2_ones_kernel_conserves(self):
        layer = netrt.Conv2D(np.ones((1, 1, 2, 2)))
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        R_out = np.array([[[5.0]]])
        R_in = lrp.lrp_conv(layer, x, R_out, 1e-9)
        np.testing.assert_allclose(R_in.sum(), 5.0, rtol=1e-9)
        W = unrolled_conv_matrix(layer.weight, x.shape, 1, 0)
        np.testing.assert_allclose(R_in.ravel(), lrp.lrp_linear(W, x.ravel(), R_out.ravel(), 1e-9))

    def test_random_6x6_against_unrolled(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 6, 1))
        layer = netrt.Conv2D(rng.normal(size=(1, 1, 3, 3)))
        R = rng.normal(size=(4, 4, 1))
        W = unrolled_conv_matrix(layer.weight, x.shape, 1, 0)
        expected = lrp.lrp_linear(W, x.ravel(), R.ravel(), 1e-9).reshape(x.shape)
        np.testing.assert_allclose(lrp.lrp_conv(layer, x, R, 1e-9), expected, atol=1e-8, rtol=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 8), st.integers(2, 8), st.integers(1, 3),
           st.integers(1, 4), st.integers(1, 3), st.integers(0, 2))
    def test_equivalence_property(self, seed, h, w, cin, k, stride, pad):
        if k > min(h, w) + 2 * pad:
            return
        rng = np.random.default_rng(seed)
        layer = netrt.Conv2D(rng.normal(size=(2, cin, k, k)), None, stride, pad)
        x = rng.normal(size=(h, w, cin))
        R = rng.normal(size=layer.output_shape(x.shape))
        W = unrolled_conv_matrix(layer.weight, x.shape, stride, pad)
        expected = lrp.lrp_linear(W, x.ravel(), R.ravel(), 1e-6).reshape(x.shape)
        np.testing.assert_allclose(lrp.lrp_conv(layer, x, R, 1e-6), expected, atol=1e-8, rtol=1e-9)

    def test_relevance_shape_checked(self):
        layer = netrt.Conv2D(np.ones((1, 1, 2, 2)))
        with pytest.raises(InvalidArgumentError):
            lrp.lrp_conv(layer, np.ones((3, 3, 1)), np.ones((3, 3, 1)))


class TestMaxPool:
    def test_unique_max(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        R = lrp.lrp_maxpool(netrt.MaxPool2D(2, 2, 2), x, np.array([[[8.0]]]))
        np.testing.assert_array_equal(R[:, :, 0], [[0, 0], [0, 8]])

    def test_tie_goes_to_first(self):
        x = np.full((2, 2, 1), 5.0)
        R = lrp.lrp_maxpool(netrt.MaxPool2D(2, 2, 2), x, np.array([[[4.0]]]))
        np.testing.assert_array_equal(R[:, :, 0], [[4, 0], [0, 0]])

    def test_overlapping_windows(self):
        x = np.array([[1, 5, 2],
                      [3, 4, 9],
                      [8, 0, 6]], float)[:, :, None]
        R_out = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        # windows: TL max 5 @ (0,1); TR max 9 @ (1,2); BL max 8 @ (2,0); BR max 9 @ (1,2)
        expected = np.zeros((3, 3))
        expected[0, 1] = 1.0
        expected[1, 2] = 2.0 + 4.0
        expected[2, 0] = 3.0
        R = lrp.lrp_maxpool(netrt.MaxPool2D(2, 2, 1), x, R_out)
        np.testing.assert_array_equal(R[:, :, 0], expected)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
    def test_conserves(self, seed, k, stride):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(7, 6, 2))
        layer = netrt.MaxPool2D(k, k, stride)
        R = rng.normal(size=layer.output_shape(x.shape))
        assert lrp.lrp_maxpool(layer, x, R).sum() == pytest.approx(R.sum(), abs=1e-12)


class TestPassthrough:
    def test_relu(self):
        np.testing.assert_array_equal(lrp.lrp_passthrough([1.0, 2.0, 3.0]), [1, 2, 3])

    def test_flatten_restores_shape(self):
        out = lrp.lrp_passthrough(np.arange(4.0), (1, 2, 2))
        assert out.shape == (1, 2, 2)
        np.testing.assert_array_equal(out.ravel(), np.arange(4.0))

    def test_softmax_layer_is_skipped(self):
        net = netrt.Network([netrt.Flatten(), netrt.Softmax()], (1, 1, 3))
        trace = netrt.forward(net, np.array([[[0.1, 0.5, 0.2]]]))
        rels = lrp.propagate_from(net, trace, np.array([0.0, 0.4, 0.0]))
        assert rels[0].shape == (1, 1, 3)
        np.testing.assert_array_equal(rels[0].ravel(), [0.0, 0.4, 0.0])


class TestPropagate:
    def test_two_layer_chain(self, chain_net):
        trace = netrt.forward(chain_net, np.ones((1, 2, 1)))
        pix, state = lrp.propagate(chain_net, trace, 0, 1e-9)
        np.testing.assert_allclose(pix.values, [[3.0, 3.0]], rtol=1e-9)
        np.testing.assert_allclose(state.relevances[1], [2, 2, 2], rtol=1e-9)
        np.testing.assert_allclose(state.layer_sums, [6, 6, 6], rtol=1e-9)
        assert pix.source_class == 0 and pix.source_score == 6.0

    def test_single_relu(self):
        net = netrt.Network([netrt.ReLU()], (1, 3, 1))
        x = np.array([0.2, 0.9, 0.4]).reshape(1, 3, 1)
        trace = netrt.forward(net, x)
        pix, _ = lrp.propagate(net, trace, 1)
        np.testing.assert_array_equal(pix.values, [[0.0, 0.9, 0.0]])

    @pytest.mark.parametrize("seed", range(5))
    def test_random_conv_net_conserves(self, seed):
        rng = np.random.default_rng(seed)
        net = random_mixed_net(rng)
        trace = netrt.forward(net, rng.random((8, 8, 2)))
        k = int(trace.output.argmax())
        pix, state = lrp.propagate(net, trace, k, 1e-6)
        assert pix.values.shape == (8, 8)
        assert max(lrp.conservation_check(state)) < 1e-3
        assert pix.values.sum() == pytest.approx(state.relevances[0].sum())

    def test_unsupported_layer(self):
        class Odd:
            kind = "odd"

            def output_shape(self, s):
                return s

            def forward(self, x):
                return x

        net = netrt.Network([Odd()], (1, 2, 1))
        trace = netrt.forward(net, np.ones((1, 2, 1)))
        with pytest.raises(UnsupportedOperationError):
            lrp.propagate(net, trace, 0)

    @pytest.mark.parametrize("seed", range(4))
    def test_scale_covariance(self, seed):
        rng = np.random.default_rng(seed)
        net = random_mixed_net(rng)
        trace = netrt.forward(net, rng.random((8, 8, 2)))
        R_top = lrp.init_relevance(trace, 0)
        base = lrp.propagate_from(net, trace, R_top, 1e-9)
        scaled = lrp.propagate_from(net, trace, 4.0 * R_top, 1e-9)
        for a, b in zip(base, scaled):
            # power-of-two factor keeps the comparison exact
            np.testing.assert_array_equal(b, 4.0 * a)

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_conservation_positive_eps0(self, seed):
        rng = np.random.default_rng(seed)
        net = random_positive_net(rng)
        trace = netrt.forward(net, rng.uniform(0.1, 1.0, net.input_shape))
        _, state = lrp.propagate(net, trace, 0, 0.0)
        assert max(lrp.conservation_check(state)) < 1e-12


class TestConservationCheck:
    def test_chain_eps0_exact(self, chain_net):
        trace = netrt.forward(chain_net, np.ones((1, 2, 1)))
        _, state = lrp.propagate(chain_net, trace, 0, 0.0)
        assert lrp.conservation_check(state) == [0.0, 0.0, 0.0]

    @pytest.mark.parametrize("seed", range(6))
    def test_monotone_in_epsilon(self, seed):
        rng = np.random.default_rng(seed)
        net = random_mixed_net(rng)
        trace = netrt.forward(net, rng.random((8, 8, 2)))
        k = int(trace.output.argmax())
        worst = [max(lrp.conservation_check(lrp.propagate(net, trace, k, eps)[1])) for eps in (1e-9, 1e-6, 1e-3)]
        assert worst == sorted(worst)

    def test_zero_input_floor(self):
        net = netrt.Network([netrt.Dense(np.ones((1, 2)))], (1, 2, 1))
        trace = netrt.forward(net, np.zeros((1, 2, 1)))
        _, state = lrp.propagate(net, trace, 0)
        res = lrp.conservation_check(state)
        assert all(np.isfinite(res)) and res == [0.0, 0.0]
