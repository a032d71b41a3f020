# -*- encoding: utf-8 -*-

from __future__ import unicode_literals

import numpy as np

from axialvig import graph
from axialvig.common import ConfigurationError, DimensionError, TapeError
from axialvig.tensor import FeatureTensor, DeterministicRng, full
from axialvig.checks import oracle_axial, oracle_knn_neighbors, \
     oracle_knn_aggregate, oracle_stats

from .common import ExtendedTest


def rand(shape, seed=0):
    return DeterministicRng(seed).uniform(shape, -1.0, 1.0, "f64")


class StatsTest(ExtendedTest):

    def test_node_vector_example(self):
        ## nodes (0,0) and (1,1) hold (0,0) and (3,4): distances 5, 0, 0, 5
        data = np.zeros((1, 2, 2, 2))
        data[0, :, 1, 1] = [3.0, 4.0]
        stats = graph.estimate_stats(FeatureTensor(data, dtype="f64"))
        self.assertEqual(len(stats), 1)
        self.assertAlmostEqual(stats[0].mu, 2.5)
        self.assertAlmostEqual(stats[0].sigma, 2.5)
        self.assertAlmostEqual(stats[0].threshold, 0.0)

    def test_single_channel_example(self):
        x = FeatureTensor([[[[0.0, 0.0], [3.0, 4.0]]]], dtype="f64")
        stats = graph.estimate_stats(x)
        self.assertAlmostEqual(stats[0].mu, 3.5)
        self.assertAlmostEqual(stats[0].sigma, 0.5)

    def test_constant(self):
        stats = graph.estimate_stats(full((1, 3, 4, 4), 0.7, "f64"))
        self.assertEqual(stats[0][:2], (0.0, 0.0))

    def test_symmetric_under_flip(self):
        x = rand((2, 3, 7, 6), 1)
        self.assertEqual(
            [s[:2] for s in graph.estimate_stats(x)],
            [s[:2] for s in graph.estimate_stats(graph.quadrant_flip(x))])

    def test_per_image(self):
        x = rand((3, 2, 6, 6), 2)
        stats = graph.estimate_stats(x)
        self.assertEqual(len(stats), 3)
        self.assertNotEqual(stats[0].mu, stats[1].mu)
        self.assertAllClose([s[:2] for s in stats], oracle_stats(x))

    def test_counter(self):
        self.assertEqual(graph.estimate_stats(rand((1, 1, 7, 5)))[0].comparisons,
                         3 * 2)

    def test_quadrant_region(self):
        rows, cols = graph.quadrant_region(7, 4)
        self.assertEqual(rows.tolist(), [0, 1, 2, 4, 5, 6])
        self.assertEqual(cols.tolist(), [0, 1, 2, 3])


class AxialOffsetsTest(ExtendedTest):

    def test_examples(self):
        self.assertEqual(graph.axial_offsets(8, 2), [0, 2, 4, 6])
        self.assertEqual(graph.axial_offsets(7, 1), list(range(7)))
        self.assertEqual(graph.axial_offsets(5, 8), [0])

    def test_length(self):
        for extent in range(1, 12):
            for k in range(1, 6):
                self.assertEqual(len(graph.axial_offsets(extent, k)),
                                 -(-extent // k))

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            graph.axial_offsets(4, 0)


class DagcTest(ExtendedTest):

    def test_constant_image(self):
        x = full((1, 2, 6, 6), 1.25, "f64")
        x_final, trace = graph.dagc_aggregate(x, 2, graph.estimate_stats(x))
        self.assertFalse(x_final.data.any())
        self.assertEqual(trace.connections, 0)

    def test_non_positive_threshold_connects_nothing(self):
        x = rand((1, 2, 6, 6), 3)
        stats = [graph.StatPair(0.4, 0.6)]
        x_final, trace = graph.dagc_aggregate(x, 2, stats)
        self.assertFalse(x_final.data.any())
        self.assertEqual(trace.connections, 0)

    def test_matches_oracle(self):
        x = rand((1, 2, 8, 8), 4)
        stats = graph.estimate_stats(x)
        x_final, trace = graph.dagc_aggregate(x, 2, stats)
        expected = oracle_axial(x, 2, [s.threshold for s in stats])
        self.assertAllClose(x_final, expected, atol=1e-12)
        self.assertEqual(x_final.shape, x.shape)
        self.assertTrue((x_final.data >= 0).all())

    def test_batch_uses_own_thresholds(self):
        x = FeatureTensor(np.concatenate([rand((1, 3, 6, 6), 5).data,
                                          3 * rand((1, 3, 6, 6), 6).data]),
                          dtype="f64")
        stats = graph.estimate_stats(x)
        x_final, _trace = graph.dagc_aggregate(x, 2, stats)
        self.assertAllClose(x_final,
                            oracle_axial(x, 2, [s.threshold for s in stats]))

    def test_strict_threshold(self):
        ## node (0,0) sits at distance exactly 1 from its row neighbour
        data = np.zeros((1, 1, 2, 2))
        data[0, 0, 0, 1] = 1.0
        x = FeatureTensor(data, dtype="f64")
        stats = graph.estimate_stats(x)
        _x, at = graph.dagc_aggregate(x, 1, stats, threshold=1.0)
        _x, above = graph.dagc_aggregate(x, 1, stats, threshold=1.0 + 1e-9)
        ## two row hops and two column hops sit at exactly 1
        self.assertEqual(above.connections - at.connections, 4)
        self.assertEqual(above.connections, 8)

    def test_self_masks_are_not_connections(self):
        x = rand((1, 2, 8, 8), 2)
        _x, trace = graph.dagc_aggregate(x, 2, graph.estimate_stats(x),
                                         threshold=float("inf"))
        ## offsets 0, 2, 4, 6 on both axes; offset 0 only compares a node
        ## with itself
        self.assertTrue(all(mask.all() for _a, _o, mask in trace.masks))
        self.assertEqual(trace.connections, 6 * 64)
        self.assertEqual(trace.comparisons, 8 * 64)

    def test_forced_mask_is_svga(self):
        x = rand((2, 3, 7, 5), 7)
        stats = graph.estimate_stats(x)
        for k in (1, 2, 3):
            forced, _trace = graph.dagc_aggregate(x, k, stats,
                                                  threshold=float("inf"))
            self.assertBitEqual(forced, graph.svga_aggregate(x, k))

    def test_channel_permutation(self):
        x = rand((1, 4, 6, 6), 8)
        perm = [2, 0, 3, 1]
        permuted = FeatureTensor(x.data[:, perm], dtype="f64")
        out, _t = graph.dagc_aggregate(x, 2, graph.estimate_stats(x))
        out_p, _t = graph.dagc_aggregate(permuted, 2,
                                         graph.estimate_stats(permuted))
        self.assertAllClose(out_p, out.data[:, perm], atol=1e-12)

    def test_counters(self):
        x = rand((1, 2, 8, 8), 9)
        _x, trace = graph.dagc_aggregate(x, 2, graph.estimate_stats(x))
        self.assertEqual(trace.per_node_comparisons, 8)
        self.assertEqual(trace.stats_comparisons, 16)
        self.assertTrue(trace.connections <= trace.comparisons)
        self.assertEqual(len(trace.masks), 8)
        self.assertEqual(trace.to_tensor().shape, (1, 8, 8, 8))

    def test_variable_connectivity(self):
        counts = set()
        for seed in range(20):
            x = rand((1, 4, 8, 8), seed)
            _x, trace = graph.dagc_aggregate(x, 2, graph.estimate_stats(x))
            counts.add(trace.connections)
        self.assertTrue(len(counts) >= 2)

    def test_stats_batch_mismatch(self):
        x = rand((2, 1, 4, 4))
        with self.assertRaises(DimensionError):
            graph.dagc_aggregate(x, 1, graph.estimate_stats(rand((1, 1, 4, 4))))

    def test_replayed_masks(self):
        x = rand((1, 2, 6, 6), 10)
        stats = graph.estimate_stats(x)
        first, trace = graph.dagc_aggregate(x, 2, stats)
        again, _t = graph.dagc_aggregate(
            x, 2, stats, masks=[m for _a, _o, m in trace.masks])
        self.assertBitEqual(first, again)
        with self.assertRaises(DimensionError):
            graph.dagc_aggregate(x, 2, stats, masks=[])


class SvgaTest(ExtendedTest):

    def test_hot_pixel(self):
        data = np.zeros((1, 1, 4, 4))
        data[0, 0, 0, 0] = 1.0
        out = graph.svga_aggregate(FeatureTensor(data, dtype="f64"), 2)
        expected = np.zeros((4, 4))
        expected[0, 2] = expected[2, 0] = 1.0
        self.assertEqual(out.data[0, 0].tolist(), expected.tolist())

    def test_constant(self):
        self.assertFalse(graph.svga_aggregate(full((1, 2, 5, 5), 2.0, "f64"),
                                              2).data.any())

    def test_trace_all_true(self):
        trace = graph.svga_trace(rand((2, 1, 4, 6)), 2)
        self.assertTrue(all(m.all() for _a, _o, m in trace.masks))
        self.assertEqual(trace.comparisons, 0)
        self.assertEqual(len(trace.masks), 2 + 3)

    def test_matches_oracle(self):
        x = rand((1, 3, 6, 4), 11)
        self.assertAllClose(graph.svga_aggregate(x, 2), oracle_axial(x, 2))


class KnnTest(ExtendedTest):

    def test_line_example(self):
        x = FeatureTensor([[[[0.0, 1.0, 10.0]]]], dtype="f64")
        table = graph.knn_neighbors(x, 1)
        self.assertEqual(table.indices[0].ravel().tolist(), [1, 0, 1])

    def test_ties_to_lower_index(self):
        table = graph.knn_neighbors(full((1, 2, 2, 2), 1.0, "f64"), 1)
        self.assertEqual(table.indices[0].ravel().tolist(), [1, 0, 0, 0])
        table = graph.knn_neighbors(full((1, 2, 2, 2), 1.0, "f64"), 2)
        self.assertEqual(table.indices[0].tolist(),
                         [[1, 2], [0, 2], [0, 1], [0, 1]])

    def test_matches_oracle(self):
        x = rand((1, 3, 5, 5), 12)
        table = graph.knn_neighbors(x, 4)
        self.assertEqual(table.indices.tolist(),
                         oracle_knn_neighbors(x, 4).tolist())
        rows = table.indices[0]
        self.assertTrue(all(len(set(r)) == 4 and i not in r
                            for i, r in enumerate(rows.tolist())))

    def test_aggregate_matches_loop(self):
        x = rand((1, 2, 4, 4), 13)
        table = graph.knn_neighbors(x, 3)
        self.assertAllClose(graph.knn_aggregate(x, table),
                            oracle_knn_aggregate(x, table.indices))

    def test_matrix_path_agrees(self):
        x = rand((1, 8, 10, 10), 14)
        feats = x.data.reshape(8, 100).T
        direct = graph._squared_distances(feats)
        old = graph.DIRECT_DISTANCE_LIMIT
        graph.DIRECT_DISTANCE_LIMIT = 0
        try:
            expanded = graph._squared_distances(feats)
        finally:
            graph.DIRECT_DISTANCE_LIMIT = old
        self.assertAllClose(np.where(np.isinf(direct), 0, direct),
                            np.where(np.isinf(expanded), 0, expanded),
                            atol=1e-12)

    def test_positive_when_neighbours_larger(self):
        data = np.ones((1, 1, 2, 2))
        data[0, 0, 0, 0] = 0.0
        x = FeatureTensor(data, dtype="f64")
        out = graph.knn_aggregate(x, graph.knn_neighbors(x, 2))
        self.assertEqual(out.data[0, 0, 0, 0], 1.0)

    def test_k_too_large(self):
        with self.assertRaises(ConfigurationError):
            graph.knn_neighbors(rand((1, 1, 2, 2)), 4)

    def test_table_mismatch(self):
        table = graph.knn_neighbors(rand((1, 1, 2, 2)), 1)
        with self.assertRaises(DimensionError):
            graph.knn_aggregate(rand((1, 1, 3, 3)), table)

    def test_counter(self):
        table = graph.knn_neighbors(rand((2, 1, 3, 4)), 2)
        self.assertEqual(table.comparisons, 2 * 12 * 12)
        self.assertEqual(table.to_tensor().shape, (2, 12, 2))


class CountTest(ExtendedTest):

    def test_closed_forms(self):
        dagc = graph.count_comparisons("dagc", 56, 56, 8)
        knn = graph.count_comparisons("knn", 56, 56, 8)
        self.assertEqual((dagc.per_node, dagc.stats), (14, 784))
        self.assertEqual(dagc.total, 3136 * 14 + 784)
        self.assertEqual(knn.per_node, 3136)
        self.assertEqual(graph.count_comparisons("svga", 9, 7, 2).total, 0)

    def test_odd_extents(self):
        counts = graph.count_comparisons("dagc", 7, 5, 2)
        self.assertEqual(counts.per_node, 4 + 3)
        self.assertEqual(counts.stats, 3 * 2)

    def test_unknown_method(self):
        with self.assertRaises(ConfigurationError):
            graph.count_comparisons("grid", 4, 4, 1)


class GraphSpecTest(ExtendedTest):

    def test_validate(self):
        graph.GraphSpec("dagc", 2).validate(8, 8)
        for method, k in (("dagc", 8), ("svga", 0), ("knn", 64), ("foo", 1)):
            with self.assertRaises(ConfigurationError):
                graph.GraphSpec(method, k).validate(8, 8)

    def test_build_graph(self):
        x = rand((1, 2, 6, 6), 15)
        for method in graph.METHODS:
            x_final, trace = graph.build_graph(x, (method, 2))
            self.assertEqual(x_final.shape, x.shape)


class MaskPlanTest(ExtendedTest):

    def test_record_then_replay(self):
        x = rand((1, 2, 6, 6), 16)
        stats = graph.estimate_stats(x)
        plan = graph.MaskPlan()
        _x, trace = graph.dagc_aggregate(x, 2, stats, track_margins=True)
        plan.observe(trace)
        self.assertTrue(plan.recording)
        self.assertTrue(plan.threshold_margin > 0)
        plan.replay()
        self.assertEqual(len(plan.next_masks()), len(trace.masks))
        with self.assertRaises(TapeError):
            plan.next_masks()

    def test_empty_plan_margins(self):
        self.assertEqual(graph.MaskPlan().threshold_margin, np.inf)
