import numpy as np
import numpy.testing as npt
import pytest

from cxrtriage import nn
from cxrtriage.errors import BuildError, DomainError, ShapeError

from reference import (conv2d_direct, maxpool_direct, same_pad, softmax_rows)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def f32(a):
    return np.asarray(a, dtype=np.float32)


class TestConv2d:
    def test_identity_kernel(self):
        conv = nn.Conv2d(1, 1, 1, 1)
        conv.weight.value[...] = 1.0
        x = f32(rng(1).random((2, 1, 5, 5)))
        npt.assert_array_equal(conv.forward(x), x)

    def test_zero_kernels_give_bias_maps(self):
        conv = nn.Conv2d(3, 4, 3, 3)
        conv.bias.value[...] = [0.5, -1.0, 2.0, 0.0]
        x = f32(rng(2).random((2, 3, 6, 6)))
        out = conv.forward(x)
        for fi, beta in enumerate([0.5, -1.0, 2.0, 0.0]):
            npt.assert_allclose(out[:, fi], beta, rtol=1e-6)

    def test_against_direct_loop(self):
        conv = nn.Conv2d(3, 4, 3, 3)
        g = rng(3)
        conv.weight.value[...] = f32(g.standard_normal((4, 3, 3, 3)))
        conv.bias.value[...] = f32(g.standard_normal(4))
        x = f32(g.standard_normal((2, 3, 8, 8)))
        want = conv2d_direct(x, conv.weight.value, conv.bias.value)
        got = conv.forward(x)
        npt.assert_allclose(got, want, rtol=1e-4)

    @pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (5, 1), (3, 2)])
    def test_same_padding_against_direct(self, k, stride):
        g = rng(10 + k + stride)
        conv = nn.Conv2d(2, 3, k, k, stride=stride, padding=nn.SAME)
        conv.weight.value[...] = f32(g.standard_normal((3, 2, k, k)))
        conv.bias.value[...] = f32(g.standard_normal(3))
        x = f32(g.standard_normal((2, 2, 9, 9)))
        pad = (same_pad(9, k, stride), same_pad(9, k, stride))
        want = conv2d_direct(x, conv.weight.value, conv.bias.value,
                             stride=stride, pad=pad)
        npt.assert_allclose(conv.forward(x), want, rtol=1e-4, atol=1e-5)

    def test_output_shape_formula(self):
        conv = nn.Conv2d(1, 2, 3, 3, stride=2)
        assert conv.out_shape((1, 9, 11)) == (2, 4, 5)

    def test_kernel_larger_than_input(self):
        conv = nn.Conv2d(1, 1, 7, 7)
        with pytest.raises(ShapeError, match="larger"):
            conv.out_shape((1, 5, 5))

    def test_wrong_channel_count(self):
        conv = nn.Conv2d(3, 1, 3, 3)
        with pytest.raises(ShapeError):
            conv.out_shape((2, 8, 8))


class TestMaxPool:
    def test_window_maximum(self):
        pool = nn.MaxPool2d(2, 2)
        x = f32([[[[1.0, 2.0], [3.0, 4.0]]]])
        npt.assert_array_equal(pool.forward(x), [[[[4.0]]]])

    def test_constant_input_tie_routing(self):
        pool = nn.MaxPool2d(2, 2)
        x = np.full((1, 1, 4, 4), 5.0, dtype=np.float32)
        out = pool.forward(x, train=True)
        npt.assert_array_equal(out, np.full((1, 1, 2, 2), 5.0))
        up = f32(rng(4).standard_normal((1, 1, 2, 2)))
        dx = pool.backward(up)
        # gradient goes to the first element of each window only
        npt.assert_array_equal(dx[0, 0, ::2, ::2], up[0, 0])
        assert dx[0, 0, 1::2, :].sum() == 0
        assert dx[0, 0, :, 1::2].sum() == 0

    def test_against_window_scan(self):
        pool = nn.MaxPool2d(2, 2)
        x = f32(rng(5).standard_normal((1, 2, 6, 6)))
        want, winners = maxpool_direct(x, 2, 2)
        out = pool.forward(x, train=True)
        npt.assert_array_equal(out, want)
        up = f32(rng(6).standard_normal(out.shape))
        dx = pool.backward(up)
        want_dx = np.zeros_like(x)
        for ni in range(1):
            for ci in range(2):
                for i in range(3):
                    for j in range(3):
                        r, c = winners[ni, ci, i, j]
                        want_dx[ni, ci, r, c] += up[ni, ci, i, j]
        npt.assert_array_equal(dx, want_dx)

    def test_floor_division_output(self):
        pool = nn.MaxPool2d(2, 2)
        assert pool.out_shape((1, 19, 19)) == (1, 9, 9)

    def test_gradient_mass_conserved(self):
        pool = nn.MaxPool2d(2, 2)
        x = f32(rng(7).standard_normal((2, 3, 8, 8)))
        out = pool.forward(x, train=True)
        up = f32(rng(8).standard_normal(out.shape))
        dx = pool.backward(up)
        npt.assert_allclose(dx.sum(), up.sum(), atol=1e-5)

    def test_window_larger_than_input(self):
        with pytest.raises(ShapeError):
            nn.MaxPool2d(4, 4).out_shape((1, 3, 3))


class TestDense:
    def test_identity_weights(self):
        d = nn.Dense(4, 4)
        d.weight.value[...] = np.eye(4, dtype=np.float32)
        x = f32(rng(9).standard_normal((3, 4)))
        npt.assert_array_equal(d.forward(x), x)

    def test_zero_input_yields_bias(self):
        d = nn.Dense(4, 2)
        d.bias.value[...] = [1.5, -2.0]
        out = d.forward(np.zeros((3, 4), np.float32))
        npt.assert_array_equal(out, np.tile([1.5, -2.0], (3, 1)))

    def test_backward_formulas(self):
        g = rng(10)
        d = nn.Dense(4, 3)
        d.weight.value[...] = f32(g.standard_normal((4, 3)))
        x = f32(g.standard_normal((5, 4)))
        d.forward(x, train=True)
        up = f32(g.standard_normal((5, 3)))
        dx = d.backward(up)
        npt.assert_allclose(dx, up @ d.weight.value.T, rtol=1e-5)
        npt.assert_allclose(d.weight.grad, x.T @ up, rtol=1e-5)
        npt.assert_allclose(d.bias.grad, up.sum(axis=0), rtol=1e-5)


class TestBatchNorm:
    def test_constant_channels_give_beta(self):
        bn = nn.BatchNorm(3)
        bn.beta.value[...] = [1.0, -2.0, 0.5]
        x = np.tile(f32([4.0, 7.0, -1.0]), (6, 1))
        out = bn.forward(x, train=True)
        npt.assert_allclose(out, np.tile([1.0, -2.0, 0.5], (6, 1)), atol=1e-4)

    def test_normalizes_batch(self):
        bn = nn.BatchNorm(4)
        x = f32(rng(11).standard_normal((64, 4)) * 3 + 2)
        out = bn.forward(x, train=True)
        npt.assert_allclose(out.mean(axis=0), 0, atol=1e-3)
        npt.assert_allclose(out.var(axis=0), 1, atol=1e-2)

    def test_first_batch_seeds_running_stats(self):
        bn = nn.BatchNorm(2)
        x = f32(rng(12).standard_normal((16, 2)) + 3.0)
        bn.forward(x, train=True)
        npt.assert_allclose(bn.running_mean, x.mean(axis=0), rtol=1e-5)
        npt.assert_allclose(bn.running_var, x.var(axis=0), rtol=1e-5)

    def test_running_stats_geometric_recurrence(self):
        # oracle: unroll running = mom*running + (1-mom)*batch by hand,
        # after batch A has seeded the stats
        mom = 0.9
        bn = nn.BatchNorm(2, momentum=mom)
        g = rng(12)
        a = f32(g.standard_normal((16, 2)) + 3.0)
        b = f32(g.standard_normal((16, 2)) - 1.0)
        bn.forward(a, train=True)
        a_mean, b_mean = a.mean(axis=0), b.mean(axis=0)
        expect = a_mean.astype(np.float64)
        for k in range(1, 8):
            bn.forward(b, train=True)
            expect = mom * expect + (1 - mom) * b_mean
            npt.assert_allclose(bn.running_mean, expect, rtol=1e-4)
            closed = (mom ** k) * a_mean + (1 - mom ** k) * b_mean
            npt.assert_allclose(bn.running_mean, closed, rtol=1e-4)

    def test_single_element_population_rejected(self):
        bn = nn.BatchNorm(3)
        with pytest.raises(ShapeError, match="population"):
            bn.forward(np.zeros((1, 3), np.float32), train=True)

    def test_inference_is_pure_and_deterministic(self):
        bn = nn.BatchNorm(2)
        bn.forward(f32(rng(13).standard_normal((8, 2))), train=True)
        x = f32(rng(14).standard_normal((4, 2)))
        rm, rv = bn.running_mean.copy(), bn.running_var.copy()
        out1 = bn.forward(x, train=False)
        out2 = bn.forward(x, train=False)
        npt.assert_array_equal(out1, out2)
        npt.assert_array_equal(bn.running_mean, rm)
        npt.assert_array_equal(bn.running_var, rv)

    def test_rank4_channel_axis(self):
        bn = nn.BatchNorm(3)
        x = f32(rng(15).standard_normal((4, 3, 5, 5)) * 2 + 1)
        out = bn.forward(x, train=True)
        npt.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-3)


class TestSoftmaxAndLoss:
    def test_uniform_logits(self):
        sm = nn.Softmax()
        out = sm.forward(np.zeros((2, 4), np.float32))
        npt.assert_allclose(out, 0.25, atol=1e-7)

    def test_shift_invariance(self):
        sm = nn.Softmax()
        x = f32(rng(16).standard_normal((3, 5)))
        npt.assert_allclose(sm.forward(x + 7.5), sm.forward(x), atol=1e-6)

    def test_closed_form_values(self):
        sm = nn.Softmax()
        logits = np.log(f32([[1.0, 2.0, 3.0]]))
        npt.assert_allclose(sm.forward(logits), [[1 / 6, 2 / 6, 3 / 6]],
                            atol=1e-6)

    def test_rows_sum_to_one(self):
        sm = nn.Softmax()
        out = sm.forward(f32(rng(17).standard_normal((20, 3)) * 3))
        npt.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(out > 0) and np.all(out < 1)

    def test_against_reference_rows(self):
        sm = nn.Softmax()
        x = f32(rng(18).standard_normal((6, 4)))
        npt.assert_allclose(sm.forward(x), softmax_rows(x), rtol=1e-5)

    def test_cross_entropy_perfect_prediction(self):
        probs = f32([[1.0, 0.0, 0.0]])
        onehot = f32([[1.0, 0.0, 0.0]])
        loss, _ = nn.cross_entropy(probs, onehot)
        assert loss == pytest.approx(0.0, abs=1e-7)

    def test_cross_entropy_uniform(self):
        probs = np.full((5, 3), 1 / 3, dtype=np.float32)
        onehot = np.eye(3, dtype=np.float32)[[0, 1, 2, 0, 1]]
        loss, _ = nn.cross_entropy(probs, onehot)
        assert loss == pytest.approx(np.log(3), rel=1e-6)

    def test_fused_gradient_formula(self):
        g = rng(19)
        probs = softmax_rows(g.standard_normal((4, 3))).astype(np.float32)
        onehot = np.eye(3, dtype=np.float32)[[2, 0, 1, 1]]
        _, dlogits = nn.cross_entropy(probs, onehot)
        npt.assert_allclose(dlogits, (probs - onehot) / 4, rtol=1e-6)

    def test_malformed_onehot_rejected(self):
        probs = np.full((2, 3), 1 / 3, dtype=np.float32)
        bad = f32([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(DomainError, match="one-hot"):
            nn.cross_entropy(probs, bad)
        with pytest.raises(DomainError):
            nn.cross_entropy(probs, f32([[0.5, 0.5, 0.0], [0, 0, 1]]))

    def test_unfused_path_matches_fused(self):
        g = rng(20)
        sm = nn.Softmax()
        logits = f32(g.standard_normal((5, 3)))
        probs = sm.forward(logits, train=True)
        onehot = np.eye(3, dtype=np.float32)[[0, 2, 1, 0, 2]]
        _, fused = nn.cross_entropy(probs, onehot)
        dprobs = nn.cross_entropy_probs_grad(probs, onehot)
        unfused = sm.backward(dprobs)
        npt.assert_allclose(unfused, fused, rtol=1e-4, atol=1e-7)


class TestInception:
    def build(self, in_ch=4, widths=(8, 16, 4, 4), seed=21):
        g = rng(seed)
        layer = nn.Inception(in_ch, *widths)
        for conv in (layer.conv1, layer.conv3, layer.conv5, layer.proj):
            conv.weight.value[...] = f32(
                g.standard_normal(conv.weight.shape) * 0.3)
            conv.bias.value[...] = f32(g.standard_normal(conv.bias.shape) * 0.1)
        return layer

    def test_channel_count(self):
        layer = self.build()
        assert layer.out_shape((4, 12, 12)) == (32, 12, 12)

    def test_spatial_dims_preserved(self):
        layer = self.build()
        for hw in (5, 9, 16):
            x = f32(rng(22).standard_normal((1, 4, hw, hw)))
            assert layer.forward(x).shape == (1, 32, hw, hw)

    def test_slices_match_independent_branches(self):
        layer = self.build()
        x = f32(rng(23).standard_normal((2, 4, 8, 8)))
        out = layer.forward(x)
        b1 = np.maximum(layer.conv1.forward(x), 0)
        b3 = np.maximum(layer.conv3.forward(x), 0)
        b5 = np.maximum(layer.conv5.forward(x), 0)
        bp = np.maximum(layer.proj.forward(layer.pool.forward(x)), 0)
        npt.assert_allclose(out[:, :8], b1, rtol=1e-5)
        npt.assert_allclose(out[:, 8:24], b3, rtol=1e-5)
        npt.assert_allclose(out[:, 24:28], b5, rtol=1e-5)
        npt.assert_allclose(out[:, 28:], bp, rtol=1e-5)

    def test_branch_width_validation(self):
        with pytest.raises(BuildError):
            nn.Inception(4, 0, 1, 1, 1)


class TestNetwork:
    def test_empty_network_rejected(self):
        with pytest.raises(BuildError):
            nn.Network([])

    def test_single_softmax_layer(self):
        net = nn.Network([nn.Softmax()])
        net.validate((3,))
        logits = f32([[0.0, np.log(2.0), np.log(3.0)]])
        npt.assert_allclose(net.forward(logits), [[1 / 6, 2 / 6, 3 / 6]],
                            atol=1e-6)

    def test_shape_error_names_layer_index(self):
        net = nn.Network([nn.Conv2d(1, 4, 3, 3), nn.Conv2d(8, 4, 3, 3)])
        with pytest.raises(BuildError, match="layer 1"):
            net.validate((1, 10, 10))

    def test_softmax_must_be_final(self):
        net = nn.Network([nn.Softmax(), nn.Dense(3, 3)])
        with pytest.raises(BuildError, match="final"):
            net.validate((3,))

    def test_backward_from_logits_requires_softmax(self):
        net = nn.Network([nn.Dense(3, 3)])
        net.validate((3,))
        with pytest.raises(BuildError):
            net.backward_from_logits(np.zeros((1, 3), np.float32))
