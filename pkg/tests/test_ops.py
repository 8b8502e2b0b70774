import numpy as np
import pytest

import hsifusion.autodiff as ad
from hsifusion.autodiff import Tensor, backward, mean_all, mul, sum_all
from hsifusion import ops

from oracles import assert_grads_match


def _sq_loss(out):
    return mean_all(mul(out, out))


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 3, 3)).astype(np.float32)
        kernel = np.ones((1, 1, 1, 1), dtype=np.float32)
        out = ops.conv2d(Tensor(x), Tensor(kernel))
        np.testing.assert_array_equal(out.data, x)

    def test_box_kernel_on_constant(self):
        # 3x3 all-ones kernel over a constant-7 image, pad 1: interior pixels
        # sum 9 taps, edges 6, corners 4
        x = Tensor(np.full((1, 5, 5), 7.0, dtype=np.float32))
        k = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        out = ops.conv2d(x, k, padding=1).data[0]
        assert out[2, 2] == 63.0
        assert out[0, 0] == 28.0
        assert out[0, 2] == 42.0

    def test_output_size_formula(self, rng):
        x = Tensor(rng.normal(size=(2, 11, 9)))
        k = Tensor(rng.normal(size=(4, 2, 3, 3)))
        assert ops.conv2d(x, k, stride=2, padding=1).shape == (4, 6, 5)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d(Tensor(rng.normal(size=(3, 5, 5))),
                       Tensor(rng.normal(size=(2, 4, 3, 3))))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ValueError, match="odd"):
            ops.conv2d(Tensor(rng.normal(size=(1, 5, 5))),
                       Tensor(rng.normal(size=(1, 1, 2, 2))))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_gradients(self, f64, rng, stride, padding):
        x = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ops.conv2d(x, k, stride, padding)), [x, k])


class TestBicubicUpsample:
    def test_constant_preserved(self, rng):
        x = Tensor(np.full((2, 5, 4), 3.25, dtype=np.float64))
        for scale in (1, 2, 3):
            out = ops.bicubic_upsample(x, scale)
            np.testing.assert_allclose(out.data, 3.25, atol=1e-12)

    def test_scale_one_is_identity(self, rng):
        x = rng.normal(size=(3, 6, 7))
        out = ops.bicubic_upsample(Tensor(x, dtype=np.float64), 1)
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_linear_ramp_reproduced_interior(self):
        # bicubic interpolation is exact for polynomials up to degree 2 away
        # from the replicated borders
        h = w = 8
        ramp = (np.arange(h)[:, None] * 2.0 + np.arange(w)[None, :] * 0.5)
        x = Tensor(ramp[None].astype(np.float64))
        out = ops.bicubic_upsample(x, 2).data[0]
        yy = (np.arange(2 * h) + 0.5) / 2 - 0.5
        xx = (np.arange(2 * w) + 0.5) / 2 - 0.5
        expected = yy[:, None] * 2.0 + xx[None, :] * 0.5
        interior = np.s_[4:-4, 4:-4]
        np.testing.assert_allclose(out[interior], expected[interior], atol=1e-5)

    def test_bad_scale(self, rng):
        with pytest.raises(ValueError, match="scale"):
            ops.bicubic_upsample(Tensor(rng.normal(size=(1, 4, 4))), 0)

    def test_gradient(self, f64, rng):
        x = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ops.bicubic_upsample(x, 2)), [x])


class TestGroupNorm:
    def test_standardizes_groups(self, rng):
        c, groups = 8, 4
        x = Tensor(rng.normal(size=(c, 6, 6)) * 3 + 1)
        out = ops.group_norm(x, groups, Tensor(np.ones(c)), Tensor(np.zeros(c))).data
        per_group = out.reshape(groups, -1)
        np.testing.assert_allclose(per_group.mean(axis=1), 0, atol=1e-5)
        np.testing.assert_allclose(per_group.var(axis=1), 1, atol=1e-3)

    def test_constant_input_zeroed(self):
        x = Tensor(np.full((4, 3, 3), 9.0))
        out = ops.group_norm(x, 2, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
        np.testing.assert_allclose(out, 0, atol=1e-4)

    def test_divisibility_enforced(self, rng):
        x = Tensor(rng.normal(size=(6, 4, 4)))
        with pytest.raises(ValueError, match="divisible"):
            ops.group_norm(x, 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))

    def test_gradients(self, f64, rng):
        x = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
        gamma = Tensor(rng.normal(size=(4,)), requires_grad=True)
        beta = Tensor(rng.normal(size=(4,)), requires_grad=True)
        assert_grads_match(
            lambda: _sq_loss(ops.group_norm(x, 2, gamma, beta)), [x, gamma, beta]
        )


class TestSelfAttention:
    def test_zero_projections_passthrough(self, rng):
        c = 4
        x = rng.normal(size=(c, 3, 3)).astype(np.float32)
        zeros = Tensor(np.zeros((c, c), dtype=np.float32))
        out = ops.self_attention(Tensor(x), zeros, zeros, zeros, zeros)
        np.testing.assert_array_equal(out.data, x)

    def test_attention_rows_normalized(self, rng):
        c = 6
        x = rng.normal(size=(c, 4, 4))
        wq, wk = rng.normal(size=(c, c)), rng.normal(size=(c, c))
        attn = ops.attention_weights(x, wq, wk)
        assert attn.shape == (16, 16)
        np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(attn >= 0)

    def test_gradients(self, f64, rng):
        c = 3
        x = Tensor(rng.normal(size=(c, 3, 3)), requires_grad=True)
        mats = [Tensor(rng.normal(size=(c, c)) * 0.5, requires_grad=True) for _ in range(4)]
        assert_grads_match(
            lambda: _sq_loss(ops.self_attention(x, *mats)), [x] + mats
        )


class TestElementwisePrimitives:
    def test_silu_values(self):
        x = Tensor(np.array([0.0, 100.0, -100.0]))
        out = ops.silu(x).data
        np.testing.assert_allclose(out, [0.0, 100.0, 0.0], atol=1e-6)

    def test_silu_gradient(self, f64, rng):
        x = Tensor(rng.normal(size=(10,)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ops.silu(x)), [x])

    def test_add_mul_gradients(self, f64, rng):
        a = Tensor(rng.normal(size=(6,)), requires_grad=True)
        b = Tensor(rng.normal(size=(6,)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ad.add(a, b)), [a, b])
        assert_grads_match(lambda: _sq_loss(ad.mul(a, b)), [a, b])

    def test_abs_gradient_away_from_zero(self, f64, rng):
        x = Tensor(rng.normal(size=(8,)) + np.sign(rng.normal(size=(8,))) * 2,
                   requires_grad=True)
        assert_grads_match(lambda: sum_all(ad.absolute(x)), [x])

    def test_softmax_normalized(self, rng):
        x = Tensor(rng.normal(size=(5, 7)) * 10)
        out = ops.softmax(x, axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    def test_softmax_gradient(self, f64, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)))
        assert_grads_match(lambda: sum_all(mul(ops.softmax(x, axis=-1), w)), [x])

    def test_softmax_extreme_inputs_finite(self):
        x = Tensor(np.array([[1e4, -1e4, 0.0]]))
        assert np.all(np.isfinite(ops.softmax(x, axis=-1).data))


class TestDense:
    def test_affine_values(self, rng):
        w = rng.normal(size=(3, 4))
        x = rng.normal(size=(4,))
        b = rng.normal(size=(3,))
        out = ops.dense(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, w @ x + b, rtol=1e-6)

    def test_gradients(self, f64, rng):
        x = Tensor(rng.normal(size=(4,)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3,)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ops.dense(x, w, b)), [x, w, b])

    def test_bias_shape_checked(self, rng):
        with pytest.raises(ValueError):
            ops.dense(Tensor(rng.normal(size=(4,))), Tensor(rng.normal(size=(3, 4))),
                      Tensor(rng.normal(size=(4,))))


class TestChannelOps:
    def test_concat_then_split_identity(self, rng):
        parts = [rng.normal(size=(c, 4, 4)).astype(np.float32) for c in (2, 3, 1)]
        merged = ops.concat_channels([Tensor(p) for p in parts])
        back = ops.split_channels(merged, [2, 3, 1])
        for orig, piece in zip(parts, back):
            np.testing.assert_array_equal(orig, piece.data)

    def test_concat_gradient(self, f64, rng):
        a = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 3, 3)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ops.concat_channels([a, b])), [a, b])

    def test_split_gradient(self, f64, rng):
        x = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)

        def loss():
            lo, hi = ops.split_channels(x, [1, 3])
            return ad.add(_sq_loss(lo), _sq_loss(hi))

        assert_grads_match(loss, [x])

    def test_spatial_mismatch(self, rng):
        with pytest.raises(ValueError, match="spatial"):
            ops.concat_channels([Tensor(rng.normal(size=(1, 3, 3))),
                                 Tensor(rng.normal(size=(1, 4, 4)))])

    def test_add_channel_bias_gradient(self, f64, rng):
        x = Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(3,)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ops.add_channel_bias(x, b)), [x, b])


class TestResampling:
    def test_upsample_nearest_values(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = ops.upsample_nearest(x, 2).data[0]
        np.testing.assert_array_equal(out[:2, :2], 1.0)
        np.testing.assert_array_equal(out[2:, 2:], 4.0)

    def test_down_then_up_gradients(self, f64, rng):
        x = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        assert_grads_match(lambda: _sq_loss(ops.upsample_nearest(x, 2)), [x])
        assert_grads_match(lambda: _sq_loss(ops.downsample_stride(x, 2)), [x])

    def test_downsample_picks_strided_grid(self, rng):
        x = rng.normal(size=(1, 6, 6)).astype(np.float32)
        out = ops.downsample_stride(Tensor(x), 3).data
        np.testing.assert_array_equal(out, x[:, ::3, ::3])


class TestComposedPipeline:
    def test_conv_norm_attention_l1_gradient(self, f64, rng):
        # the composed-pipeline check: conv -> group norm -> attention -> l1
        c = 4
        x = Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
        k = Tensor(rng.normal(size=(c, 2, 3, 3)) * 0.5, requires_grad=True)
        gamma = Tensor(np.ones(c) + 0.1 * rng.normal(size=(c,)), requires_grad=True)
        beta = Tensor(0.1 * rng.normal(size=(c,)), requires_grad=True)
        mats = [Tensor(rng.normal(size=(c, c)) * 0.4, requires_grad=True) for _ in range(4)]

        def loss():
            h = ops.conv2d(x, k, padding=1)
            h = ops.group_norm(h, 2, gamma, beta)
            h = ops.self_attention(h, *mats)
            return mean_all(ad.absolute(h))

        assert_grads_match(loss, [x, k, gamma, beta] + mats, rtol=1e-3)

    def test_determinism_bit_identical(self, rng):
        x = rng.normal(size=(3, 8, 8)).astype(np.float32)
        k = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)

        def run():
            h = ops.conv2d(Tensor(x), Tensor(k), padding=1)
            h = ops.silu(h)
            return ops.downsample_stride(h, 2).data.copy()

        assert np.array_equal(run(), run())


class TestRandomizedShapes:
    def test_primitives_pass_gradcheck_on_random_shapes(self, f64):
        # shape-randomized sweep over the core differentiable primitives
        shape_rng = np.random.default_rng(88)
        for trial in range(4):
            c_in = int(shape_rng.integers(1, 4))
            c_out = int(shape_rng.integers(1, 4))
            h = int(shape_rng.integers(3, 7))
            w = int(shape_rng.integers(3, 7))
            data_rng = np.random.default_rng(1000 + trial)

            x = Tensor(data_rng.normal(size=(c_in, h, w)), requires_grad=True)
            k = Tensor(data_rng.normal(size=(c_out, c_in, 3, 3)), requires_grad=True)
            assert_grads_match(lambda: _sq_loss(ops.conv2d(x, k, 1, 1)), [x, k])

            groups = 1 if c_in % 2 else 2
            gamma = Tensor(data_rng.normal(size=(c_in,)), requires_grad=True)
            beta = Tensor(data_rng.normal(size=(c_in,)), requires_grad=True)
            assert_grads_match(
                lambda: _sq_loss(ops.group_norm(x, groups, gamma, beta)),
                [x, gamma, beta],
            )

            assert_grads_match(lambda: _sq_loss(ops.silu(x)), [x])
            assert_grads_match(lambda: _sq_loss(ops.upsample_nearest(x, 2)), [x])
