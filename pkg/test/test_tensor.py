# -*- encoding: utf-8 -*-

from __future__ import unicode_literals

import numpy as np

from axialvig import tensor as T
from axialvig.common import DimensionError, ConfigurationError
from axialvig.checks import oracle_conv2d, oracle_batch_norm

from .common import ExtendedTest


def rand(shape, seed=0, dtype="f64"):
    return T.DeterministicRng(seed).uniform(shape, -1.0, 1.0, dtype)


class FeatureTensorTest(ExtendedTest):

    def test_default_dtype_is_f32(self):
        t = T.FeatureTensor([[1, 2], [3, 4]])
        self.assertEqual(t.dtype_name, "f32")
        self.assertEqual(t.shape, (2, 2))

    def test_constructor_copies(self):
        source = np.zeros((1, 1, 2, 2))
        t = T.FeatureTensor(source, dtype="f64")
        source[0, 0, 0, 0] = 5.0
        self.assertEqual(t.data[0, 0, 0, 0], 0.0)

    def test_immutable(self):
        t = T.FeatureTensor(np.zeros((1, 1, 2, 2)))
        with self.assertRaises(ValueError):
            t.data[0, 0, 0, 0] = 1.0

    def test_rank_bounds(self):
        with self.assertRaises(DimensionError):
            T.FeatureTensor(np.zeros((1, 1, 1, 1, 1)))
        with self.assertRaises(DimensionError):
            T.FeatureTensor(np.float64(1.0))

    def test_zero_extent_names_axis(self):
        with self.assertRaises(DimensionError) as ctx:
            T.FeatureTensor(np.zeros((1, 2, 0, 3)))
        self.assertEqual(ctx.exception.axis, "height")

    def test_unsupported_dtype(self):
        with self.assertRaises(ConfigurationError):
            T.FeatureTensor([1.0], dtype="f16")

    def test_item_needs_single_element(self):
        self.assertEqual(T.FeatureTensor([2.5], dtype="f64").item(), 2.5)
        with self.assertRaises(DimensionError):
            T.FeatureTensor([1.0, 2.0]).item()

    def test_astype(self):
        t = T.FeatureTensor([1.5], dtype="f64").astype("f32")
        self.assertEqual(t.dtype, np.float32)

    def test_bit_equal(self):
        a = T.FeatureTensor([1.0, 2.0], dtype="f64")
        self.assertTrue(T.bit_equal(a, T.FeatureTensor([1.0, 2.0], dtype="f64")))
        self.assertFalse(T.bit_equal(a, a.astype("f32")))
        self.assertFalse(T.bit_equal(a, T.FeatureTensor([1.0, 2.5], dtype="f64")))


class ConvTest(ExtendedTest):

    def test_identity_1x1(self):
        x = rand((2, 3, 4, 5))
        weight = T.FeatureTensor(np.eye(3).reshape(3, 3, 1, 1), dtype="f64")
        bias = T.FeatureTensor([0.5, 0.0, -0.5], dtype="f64")
        out = T.conv2d(x, T.ConvParams(weight, bias))
        expected = x.data + np.array([0.5, 0.0, -0.5])[None, :, None, None]
        self.assertAllClose(out, expected)

    def test_strided_padded_against_loops(self):
        x = rand((1, 2, 7, 6), seed=1)
        p = T.ConvParams(rand((4, 2, 3, 3), seed=2), rand((4, ), seed=3),
                         stride=2, padding=1)
        out = T.conv2d(x, p)
        self.assertEqual(out.shape, (1, 4, 4, 3))
        self.assertAllClose(out, oracle_conv2d(x, p))

    def test_grouped_against_loops(self):
        x = rand((2, 4, 5, 5), seed=4)
        p = T.ConvParams(rand((6, 2, 3, 3), seed=5), None, padding=1,
                         groups=2)
        self.assertAllClose(T.conv2d(x, p), oracle_conv2d(x, p))

    def test_depthwise_against_loops(self):
        x = rand((1, 3, 6, 4), seed=6)
        p = T.ConvParams(rand((3, 1, 3, 3), seed=7), rand((3, ), seed=8),
                         padding=1, groups=3)
        self.assertAllClose(T.depthwise_conv2d(x, p), oracle_conv2d(x, p))

    def test_depthwise_requires_matching_groups(self):
        x = rand((1, 4, 4, 4))
        p = T.ConvParams(rand((4, 2, 3, 3)), None, padding=1, groups=2)
        with self.assertRaises(ConfigurationError):
            T.depthwise_conv2d(x, p)

    def test_channel_mismatch(self):
        x = rand((1, 3, 4, 4))
        p = T.ConvParams(rand((2, 2, 1, 1)))
        with self.assertRaises(DimensionError) as ctx:
            T.conv2d(x, p)
        self.assertEqual(ctx.exception.axis, "channel")

    def test_output_channels_must_divide_groups(self):
        x = rand((1, 4, 4, 4))
        p = T.ConvParams(rand((3, 2, 1, 1)), groups=2)
        with self.assertRaises(ConfigurationError):
            T.conv2d(x, p)

    def test_requires_rank4(self):
        with self.assertRaises(DimensionError):
            T.conv2d(rand((3, 4, 4)), T.ConvParams(rand((1, 3, 1, 1))))


class PointwiseTest(ExtendedTest):

    def test_batch_norm_inference(self):
        x = rand((2, 3, 2, 2), seed=9)
        p = T.BatchNormParams(rand((3, ), seed=10), rand((3, ), seed=11),
                              rand((3, ), seed=12),
                              T.FeatureTensor([0.5, 1.0, 2.0], dtype="f64"))
        self.assertAllClose(T.batch_norm(x, p), oracle_batch_norm(x.data, p))

    def test_batch_norm_rejects_negative_variance(self):
        ones = T.full((2, ), 1.0, "f64")
        p = T.BatchNormParams(ones, ones, ones, T.full((2, ), -1.0, "f64"))
        with self.assertRaises(ConfigurationError):
            T.batch_norm(rand((1, 2, 2, 2)), p)

    def test_gelu_values(self):
        x = T.FeatureTensor([-1.0, 0.0, 1.0], dtype="f64")
        self.assertAllClose(T.gelu(x), [-0.15865525393145707, 0.0,
                                        0.8413447460685429], atol=1e-12)

    def test_roll_axes(self):
        x = T.FeatureTensor(np.arange(6.0).reshape(1, 1, 2, 3), dtype="f64")
        self.assertEqual(T.roll(x, 1, "width").data[0, 0].tolist(),
                         [[2.0, 0.0, 1.0], [5.0, 3.0, 4.0]])
        self.assertEqual(T.roll(x, 1, "height").data[0, 0].tolist(),
                         [[3.0, 4.0, 5.0], [0.0, 1.0, 2.0]])

    def test_roll_rejects_channel_axis(self):
        with self.assertRaises(ConfigurationError):
            T.roll(rand((1, 2, 2, 2)), 1, "channel")

    def test_elementwise_channel_broadcast(self):
        a = rand((1, 3, 2, 2), seed=1)
        mask = T.FeatureTensor(np.ones((1, 1, 2, 2)), dtype="f64")
        self.assertBitEqual(T.mul(a, mask), a)

    def test_elementwise_shape_mismatch_names_axis(self):
        with self.assertRaises(DimensionError) as ctx:
            T.add(rand((1, 2, 3, 3)), rand((1, 2, 3, 4)))
        self.assertEqual(ctx.exception.axis, "width")

    def test_concat_and_slice(self):
        a, b = rand((1, 2, 3, 3), seed=1), rand((1, 1, 3, 3), seed=2)
        both = T.concat_channels(a, b)
        self.assertEqual(both.shape, (1, 3, 3, 3))
        self.assertBitEqual(T.channel_slice(both, 2, 3), b)
        with self.assertRaises(DimensionError):
            T.concat_channels(a, rand((1, 1, 3, 4)))
        with self.assertRaises(DimensionError):
            T.channel_slice(both, 2, 5)

    def test_global_avg_pool(self):
        x = T.FeatureTensor(np.arange(8.0).reshape(1, 2, 2, 2), dtype="f64")
        pooled = T.global_avg_pool(x)
        self.assertEqual(pooled.shape, (1, 2, 1, 1))
        self.assertAllClose(pooled.data.ravel(), [1.5, 5.5])

    def test_reshape_checks_size(self):
        x = rand((1, 4, 1, 1))
        self.assertEqual(T.reshape(x, (1, 4)).shape, (1, 4))
        with self.assertRaises(DimensionError):
            T.reshape(x, (1, 3))


class QuadrantFlipTest(ExtendedTest):

    def test_involution_odd_extents(self):
        x = rand((2, 3, 7, 5), seed=3)
        self.assertBitEqual(T.quadrant_flip(T.quadrant_flip(x)), x)

    def test_central_row_and_column_stay(self):
        x = rand((1, 1, 5, 5), seed=4)
        flipped = T.quadrant_flip(x)
        self.assertBitEqual(flipped.data[0, 0, 2, :], x.data[0, 0, 2, :])
        self.assertBitEqual(flipped.data[0, 0, :, 2], x.data[0, 0, :, 2])
        self.assertEqual(flipped.data[0, 0, 0, 0], x.data[0, 0, 3, 3])
        self.assertEqual(flipped.data[0, 0, 0, 4], x.data[0, 0, 3, 1])

    def test_constant_unchanged(self):
        x = T.full((1, 2, 4, 6), 3.0, "f64")
        self.assertBitEqual(T.quadrant_flip(x), x)

    def test_too_small(self):
        with self.assertRaises(DimensionError) as ctx:
            T.quadrant_flip(rand((1, 1, 1, 4)))
        self.assertEqual(ctx.exception.axis, "height")


class TreeTest(ExtendedTest):

    def test_iter_and_map(self):
        p = T.BatchNormParams(T.full((2, ), 1.0), T.zeros((2, )),
                              T.zeros((2, )), T.full((2, ), 1.0))
        names = [name for name, _t in T.iter_tensors(p, "bn")]
        self.assertEqual(names, ["bn.gamma", "bn.beta", "bn.running_mean",
                                 "bn.running_var"])
        self.assertEqual(T.count_elements(p), 4)
        self.assertEqual(T.count_elements(p, buffers=True), 8)
        doubled = T.map_tensors(p, lambda n, t: T.full(t.shape, 2.0), "bn")
        self.assertEqual(doubled.epsilon, p.epsilon)
        self.assertEqual(doubled.gamma.data.tolist(), [2.0, 2.0])

    def test_is_buffer(self):
        self.assertTrue(T.is_buffer("stem.conv1.bn.running_var"))
        self.assertFalse(T.is_buffer("stem.conv1.bn.gamma"))


class DeterministicRngTest(ExtendedTest):

    def test_reproducible(self):
        a = T.DeterministicRng(42).uniform((3, 4), -1, 1, "f64")
        b = T.DeterministicRng(42).uniform((3, 4), -1, 1, "f64")
        self.assertBitEqual(a, b)

    def test_stream_continues(self):
        rng = T.DeterministicRng(7)
        first = rng.next_u64(3)
        rng = T.DeterministicRng(7)
        self.assertEqual(rng.next_u64(1).tolist() + rng.next_u64(2).tolist(),
                         first.tolist())

    def test_uniform_range(self):
        values = T.DeterministicRng(1).uniform((1000, ), 2.0, 3.0, "f64").data
        self.assertTrue((values >= 2.0).all() and (values < 3.0).all())

    def test_fork_differs(self):
        rng = T.DeterministicRng(5)
        fork = rng.fork()
        self.assertNotEqual(fork.next_u64(1)[0], rng.next_u64(1)[0])
