# -*- encoding: utf-8 -*-

from __future__ import unicode_literals

from axialvig import blocks
from axialvig.common import ConfigurationError, DimensionError
from axialvig.graph import MaskPlan
from axialvig.tensor import DeterministicRng, count_elements, zeros

from .common import ExtendedTest


def rand(shape, seed=0):
    return DeterministicRng(seed).uniform(shape, -1.0, 1.0, "f64")


class InitTest(ExtendedTest):

    def setUp(self):
        self.rng = DeterministicRng(1)

    def test_mbconv_param_count(self):
        self.assertEqual(count_elements(blocks.init_mbconv(self.rng, 48)),
                         21456)

    def test_bn_starts_at_identity(self):
        bn = blocks.init_bn(3)
        self.assertEqual(bn.gamma.data.tolist(), [1.0, 1.0, 1.0])
        self.assertEqual(bn.running_var.data.tolist(), [1.0, 1.0, 1.0])
        self.assertFalse(bn.beta.data.any() or bn.running_mean.data.any())

    def test_conv_bound(self):
        p = blocks.init_conv(self.rng, 4, 6, 3, dtype="f64")
        bound = 1.0 / 6.0
        self.assertTrue(abs(p.weight.data).max() <= bound)
        self.assertTrue(abs(p.bias.data).max() <= bound)
        self.assertEqual(p.padding, 1)

    def test_same_seed_same_params(self):
        a = blocks.init_ffn(DeterministicRng(3), 4, dtype="f64")
        b = blocks.init_ffn(DeterministicRng(3), 4, dtype="f64")
        self.assertBitEqual(a.w1.conv.weight, b.w1.conv.weight)
        self.assertEqual(a.expansion, 4)

    def test_grapher_without_cpe(self):
        p = blocks.init_grapher(self.rng, 8, cpe=False)
        self.assertTrue(p.cpe is None)
        self.assertEqual(p.dyn_out.conv.in_channels, 16)

    def test_head_needs_classes(self):
        with self.assertRaises(ConfigurationError):
            blocks.init_head(self.rng, 8, 0)


class BlockShapeTest(ExtendedTest):

    def setUp(self):
        rng = DeterministicRng(7)
        self.x = rand((2, 8, 6, 6), 8)
        self.grapher = blocks.init_grapher(rng, 8, dtype="f64")
        self.ffn = blocks.init_ffn(rng, 8, dtype="f64")
        self.mbconv = blocks.init_mbconv(rng, 8, dtype="f64")

    def test_shapes_preserved(self):
        self.assertEqual(blocks.mbconv(self.x, self.mbconv).shape, self.x.shape)
        self.assertEqual(blocks.ffn(self.x, self.ffn).shape, self.x.shape)
        for method in ("dagc", "svga", "knn"):
            out = blocks.dagc_block(self.x, 2, self.grapher, self.ffn,
                                    graph=method)
            self.assertEqual(out.shape, self.x.shape)

    def test_cpe(self):
        p = self.grapher.cpe
        self.assertEqual(blocks.cpe(self.x, p).shape, self.x.shape)
        with self.assertRaises(DimensionError):
            blocks.cpe(rand((1, 4, 6, 6)), p)

    def test_residual_with_zeroed_output(self):
        grapher = self.grapher._replace(
            w_out=blocks.zero_conv_bn(self.grapher.w_out))
        self.assertBitEqual(blocks.dynamic_grapher(self.x, 2, grapher), self.x)
        ffn = self.ffn._replace(w2=blocks.zero_conv_bn(self.ffn.w2))
        self.assertBitEqual(blocks.ffn(self.x, ffn), self.x)
        mb = self.mbconv._replace(project=blocks.zero_conv_bn(self.mbconv.project))
        self.assertBitEqual(blocks.mbconv(self.x, mb), self.x)

    def test_deterministic(self):
        first = blocks.dagc_block(self.x, 2, self.grapher, self.ffn)
        self.assertBitEqual(first,
                            blocks.dagc_block(self.x, 2, self.grapher, self.ffn))

    def test_plan_replays_masks(self):
        plan = MaskPlan()
        first = blocks.dagc_block(self.x, 2, self.grapher, self.ffn, plan=plan)
        self.assertEqual(len(plan.traces), 1)
        plan.replay()
        again = blocks.dagc_block(self.x, 2, self.grapher, self.ffn, plan=plan)
        self.assertBitEqual(first, again)
        self.assertEqual(len(plan.traces), 1)

    def test_channel_mismatch(self):
        with self.assertRaises(DimensionError) as ctx:
            blocks.ffn(rand((1, 4, 6, 6)), self.ffn)
        self.assertEqual(ctx.exception.axis, "channel")

    def test_unknown_graph(self):
        with self.assertRaises(ConfigurationError):
            blocks.graph_aggregate(self.x, 2, "grid")


class GraphAggregateTest(ExtendedTest):

    def test_knn_k_clamped(self):
        x = rand((1, 2, 2, 2))
        self.assertEqual(blocks.graph_aggregate(x, 8, "knn").shape, x.shape)

    def test_single_node_knn(self):
        x = rand((1, 2, 1, 1))
        self.assertFalse(blocks.graph_aggregate(x, 1, "knn").data.any())

    def test_dagc_on_thin_map(self):
        ## too small to flip: no connection at all
        x = rand((1, 2, 1, 5))
        self.assertFalse(blocks.graph_aggregate(x, 1, "dagc").data.any())


class StageIOTest(ExtendedTest):

    def setUp(self):
        self.rng = DeterministicRng(5)

    def test_stem(self):
        p = blocks.init_stem(self.rng, 8, dtype="f64")
        out = blocks.stem(rand((1, 3, 32, 32)), p)
        self.assertEqual(out.shape, (1, 8, 8, 8))
        with self.assertRaises(DimensionError) as ctx:
            blocks.stem(rand((1, 3, 30, 32)), p)
        self.assertEqual(ctx.exception.axis, "height")

    def test_downsample(self):
        p = blocks.init_downsample(self.rng, 8, 16, dtype="f64")
        self.assertEqual(blocks.downsample(rand((1, 8, 8, 8)), p).shape,
                         (1, 16, 4, 4))
        with self.assertRaises(DimensionError):
            blocks.downsample(rand((1, 8, 8, 7)), p)

    def test_head(self):
        p = blocks.init_head(self.rng, 8, 10, dtype="f64")
        self.assertEqual(p.fc1.out_channels, 32)
        self.assertEqual(blocks.head(rand((2, 8, 2, 2)), p, 10).shape, (2, 10))
        with self.assertRaises(ConfigurationError):
            blocks.head(rand((2, 8, 2, 2)), p, 5)

    def test_head_of_constant_map(self):
        p = blocks.init_head(self.rng, 4, 3, dtype="f64")
        logits = blocks.head(zeros((1, 4, 2, 2), "f64"), p, 3)
        self.assertEqual(logits.shape, (1, 3))
