# -*- coding: utf-8 -*-
"""Brute-force oracles and the property suites run by ``axialvig check``.

The oracles deliberately walk nodes one at a time with plain loops; they
share no code with the vectorised implementations they verify.

"""

from __future__ import print_function

import collections
import itertools
import math

import numpy as np

from .common import ConfigurationError, debug
from .tensor import FeatureTensor, DeterministicRng, \
     bit_equal, roll, concat_channels, channel_slice, conv2d, full, \
     map_tensors
from . import graph
from . import blocks
from . import zoo


SUITES = ("oracle", "invariants")

ORACLE_EXTENTS = (4, 6, 8)
ORACLE_CHANNELS = (1, 2, 4)
ORACLE_HOPS = (1, 2, 4)


CaseResult = collections.namedtuple("CaseResult", "suite case passed detail")


class CheckReport(collections.namedtuple("CheckReport", "suites cases")):

    __slots__ = ()

    @property
    def passed(self):
        return all(c.passed for c in self.cases)

    def failures(self):
        return [c for c in self.cases if not c.passed]

    def count(self, suite=None):
        return len([c for c in self.cases if suite in (None, c.suite)])


##
## Oracles
##

def _distance(a, b):
    return math.sqrt(sum((float(p) - float(q)) ** 2 for p, q in zip(a, b)))


def oracle_stats(x):
    data = x.data
    n, _c, h, w = data.shape
    qh, qw = h // 2, w // 2
    pairs = []
    for b in range(n):
        distances = []
        for i in range(h):
            for j in range(w):
                if qh <= i < h - qh or qw <= j < w - qw:
                    continue
                pi = i + (h - qh) if i < qh else i - (h - qh)
                pj = j + (w - qw) if j < qw else j - (w - qw)
                distances.append(_distance(data[b, :, i, j], data[b, :, pi, pj]))
        mu = sum(distances) / len(distances)
        var = sum((d - mu) ** 2 for d in distances) / len(distances)
        pairs.append((mu, math.sqrt(var)))
    return pairs


def _axial_neighbours(i, j, h, w, k):
    for offset in range(0, h, k):
        yield (i - offset) % h, j
    for offset in range(0, w, k):
        yield i, (j - offset) % w


def oracle_axial(x, k, thresholds=None):
    """Per node: max over {0} and the admitted axial differences.

    ``thresholds`` holds one ``mu - sigma`` per image; ``None`` admits
    every axial neighbour.

    """
    data = x.data
    n, c, h, w = data.shape
    out = np.zeros(data.shape)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                best = [0.0] * c
                for ni, nj in _axial_neighbours(i, j, h, w, k):
                    diff = data[b, :, ni, nj] - data[b, :, i, j]
                    if thresholds is not None:
                        if not _distance(data[b, :, ni, nj],
                                         data[b, :, i, j]) < thresholds[b]:
                            continue
                    best = [max(p, float(q)) for p, q in zip(best, diff)]
                out[b, :, i, j] = best
    return out


def oracle_knn_neighbors(x, k):
    data = x.data
    n, c, h, w = data.shape
    nodes = h * w
    feats = data.reshape(n, c, nodes)
    table = []
    for b in range(n):
        rows = []
        for node in range(nodes):
            ranked = sorted(
                (sum((float(feats[b, ch, node]) - float(feats[b, ch, other]))
                     ** 2 for ch in range(c)), other)
                for other in range(nodes) if other != node)
            rows.append([other for _d, other in ranked[:k]])
        table.append(rows)
    return np.array(table, dtype=np.int64)


def oracle_knn_aggregate(x, indices):
    data = x.data
    n, c, h, w = data.shape
    feats = data.reshape(n, c, h * w)
    out = np.zeros((n, c, h * w))
    for b in range(n):
        for node in range(h * w):
            for ch in range(c):
                out[b, ch, node] = max(float(feats[b, ch, j] - feats[b, ch, node])
                                       for j in indices[b, node])
    return out.reshape(data.shape)


def oracle_conv2d(x, p):
    """Six nested loops over batch, output channel, pixel and taps."""
    data = x.data
    weight = p.weight.data
    n, c, h, w = data.shape
    out_ch, cg, kh, kw = weight.shape
    og = out_ch // p.groups
    ho = (h + 2 * p.padding - kh) // p.stride + 1
    wo = (w + 2 * p.padding - kw) // p.stride + 1
    out = np.zeros((n, out_ch, ho, wo))
    for b in range(n):
        for o in range(out_ch):
            first = (o // og) * cg
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0 if p.bias is None else float(p.bias.data[o])
                    for ci in range(cg):
                        for dy in range(kh):
                            for dz in range(kw):
                                iy = y * p.stride + dy - p.padding
                                iz = z * p.stride + dz - p.padding
                                if 0 <= iy < h and 0 <= iz < w:
                                    acc += (float(data[b, first + ci, iy, iz]) *
                                            float(weight[o, ci, dy, dz]))
                    out[b, o, y, z] = acc
    return out


def oracle_batch_norm(x, p):
    def b(t):
        return t.data[None, :, None, None]
    return b(p.gamma) * (x - b(p.running_mean)) / \
        np.sqrt(b(p.running_var) + p.epsilon) + b(p.beta)


def _oracle_gelu(v):
    erf = np.vectorize(math.erf)
    return v * 0.5 * (1.0 + erf(v / math.sqrt(2.0)))


def _oracle_conv_bn(v, p):
    return oracle_batch_norm(oracle_conv2d(FeatureTensor(v, dtype="f64"),
                                           p.conv), p.bn)


def oracle_ffn(y, p):
    v = y.data
    return _oracle_conv_bn(_oracle_gelu(_oracle_conv_bn(v, p.w1)), p.w2) + v


def oracle_mbconv(x, p):
    v = x.data
    h = _oracle_gelu(_oracle_conv_bn(v, p.expand))
    h = _oracle_gelu(_oracle_conv_bn(h, p.dw))
    return v + _oracle_conv_bn(h, p.project)


def oracle_cpe(x, p):
    return x.data + oracle_conv2d(x, p)


##
## Suites
##

def _max_err(a, b):
    return float(np.abs(np.asarray(a, dtype=np.float64) -
                        np.asarray(b, dtype=np.float64)).max())


class _Recorder(object):

    def __init__(self, suite, results):
        self.suite = suite
        self.results = results

    def close(self, case, actual, expected, tolerance):
        err = _max_err(actual, expected)
        self.check(case, err <= tolerance,
                   "max abs error %.3g > %.3g" % (err, tolerance))

    def check(self, case, passed, detail=""):
        passed = bool(passed)
        self.results.append(CaseResult(self.suite, case, passed,
                                       "" if passed else detail))
        if not passed:
            debug("check %s/%s failed: %s" % (self.suite, case, detail))


def oracle_grid():
    """``(h, w, c, k)`` combinations covered by the oracle suite."""
    return list(itertools.product(ORACLE_EXTENTS, ORACLE_EXTENTS,
                                  ORACLE_CHANNELS, ORACLE_HOPS))


def run_oracle_suite(results, seeds=5, tolerance=1e-12, threshold_bias=0.0):
    """``threshold_bias`` shifts the implementation's threshold only."""
    rec = _Recorder("oracle", results)
    for h, w, c, k in oracle_grid():
        for seed in range(seeds):
            label = "H%dW%dC%dK%d/seed%d" % (h, w, c, k, seed)
            rng = DeterministicRng(seed * 1000003 + h * 10007 + w * 101 + c * 11 + k)
            x = rng.uniform((1, c, h, w), -1.0, 1.0, "f64")
            stats = graph.estimate_stats(x)
            expected_stats = oracle_stats(x)
            rec.close("stats/" + label,
                      [(s.mu, s.sigma) for s in stats], expected_stats,
                      tolerance)
            thresholds = [mu - sigma for mu, sigma in expected_stats]
            x_final, trace = graph.dagc_aggregate(
                x, k, stats,
                threshold=[s.threshold + threshold_bias for s in stats])
            rec.close("dagc/" + label, x_final.data,
                      oracle_axial(x, k, thresholds), tolerance)
            counts = graph.count_comparisons("dagc", h, w, k)
            rec.check("dagc-count/" + label,
                      trace.per_node_comparisons == counts.per_node and
                      trace.stats_comparisons == counts.stats,
                      "counter %d/%d != closed form %d/%d"
                      % (trace.per_node_comparisons, trace.stats_comparisons,
                         counts.per_node, counts.stats))
            rec.close("svga/" + label, graph.svga_aggregate(x, k).data,
                      oracle_axial(x, k), tolerance)
            table = graph.knn_neighbors(x, k)
            expected_table = oracle_knn_neighbors(x, k)
            rec.check("knn-table/" + label,
                      np.array_equal(table.indices, expected_table),
                      "neighbour tables differ")
            rec.close("knn/" + label, graph.knn_aggregate(x, table).data,
                      oracle_knn_aggregate(x, expected_table), tolerance)
            rec.check("knn-count/" + label,
                      table.comparisons ==
                      graph.count_comparisons("knn", h, w, k).total,
                      "counter %d" % table.comparisons)
    for seed in range(seeds):
        rng = DeterministicRng(7000 + seed)
        label = "seed%d" % seed
        x = rng.uniform((1, 2, 4, 4), -1.0, 1.0, "f64")
        p = blocks.init_conv(rng, 2, 2, 3, groups=2, dtype="f64")
        rec.close("cpe/" + label, blocks.cpe(x, p).data, oracle_cpe(x, p),
                  tolerance)
        conv = blocks.init_conv(rng, 2, 6, 3, stride=2, dtype="f64")
        rec.close("conv2d/" + label,
                  conv2d(x, conv).data, oracle_conv2d(x, conv),
                  tolerance)
        x = rng.uniform((1, 4, 4, 4), -1.0, 1.0, "f64")
        p = _randomise_bn(blocks.init_ffn(rng, 4, dtype="f64"), rng)
        rec.close("ffn/" + label, blocks.ffn(x, p).data, oracle_ffn(x, p),
                  tolerance)
        p = _randomise_bn(blocks.init_mbconv(rng, 4, dtype="f64"), rng)
        rec.close("mbconv/" + label, blocks.mbconv(x, p).data,
                  oracle_mbconv(x, p), tolerance)
    return results


def _randomise_bn(params, rng):
    """Move the running statistics away from the identity."""
    def move(name, t):
        if name.endswith("running_mean") or name.endswith("beta"):
            return rng.uniform(t.shape, -0.5, 0.5, "f64")
        if name.endswith("running_var") or name.endswith("gamma"):
            return rng.uniform(t.shape, 0.5, 1.5, "f64")
        return t
    return map_tensors(params, move)


def run_invariant_suite(results, seeds=5):
    rec = _Recorder("invariants", results)
    for seed in range(seeds):
        rng = DeterministicRng(9000 + seed)
        label = "seed%d" % seed
        x = rng.uniform((2, 3, 7, 5), -1.0, 1.0, "f64")
        flipped = graph.quadrant_flip(x)
        rec.check("flip-involution/" + label,
                  bit_equal(graph.quadrant_flip(flipped), x))
        stats = graph.estimate_stats(x)
        ## each node is compared with the same partner, only the operand
        ## order of the difference changes
        rec.check("stats-symmetry/" + label,
                  [s[:2] for s in stats] ==
                  [s[:2] for s in graph.estimate_stats(flipped)])
        rec.check("stats-per-image/" + label,
                  [s[:2] for s in stats] ==
                  [graph.estimate_stats(FeatureTensor(x.data[b:b + 1]))[0][:2]
                   for b in range(2)],
                  "batch statistics leak across images")
        for k in ORACLE_HOPS:
            x_final, trace = graph.dagc_aggregate(x, k, stats)
            case = "%s/k%d" % (label, k)
            rec.check("dagc-nonnegative/" + case, (x_final.data >= 0).all())
            rec.check("svga-nonnegative/" + case,
                      (graph.svga_aggregate(x, k).data >= 0).all())
            rec.check("connections-bounded/" + case,
                      trace.connections <= trace.comparisons)
            forced, _trace = graph.dagc_aggregate(x, k, stats,
                                                  threshold=float("inf"))
            rec.check("forced-mask-is-svga/" + case,
                      bit_equal(forced, graph.svga_aggregate(x, k)))
            perm = rng.random(3).argsort()
            permuted = FeatureTensor(x.data[:, perm])
            out, _trace = graph.dagc_aggregate(
                permuted, k, graph.estimate_stats(permuted))
            rec.close("channel-equivariance/" + case, out.data,
                      x_final.data[:, perm], 1e-12)
        rolled = roll(roll(x, 3, "height"), -3, "height")
        rec.check("roll-inverse/" + label, bit_equal(rolled, x))
        y = rng.uniform((2, 4, 7, 5), -1.0, 1.0, "f64")
        both = concat_channels(x, y)
        rec.check("concat-slice/" + label,
                  bit_equal(channel_slice(both, 0, 3), x) and
                  bit_equal(channel_slice(both, 3, 7), y))

    constant = full((1, 4, 6, 6), 0.25, "f64")
    stats = graph.estimate_stats(constant)
    rec.check("constant/stats", stats[0][:2] == (0.0, 0.0), repr(stats))
    x_final, trace = graph.dagc_aggregate(constant, 2, stats)
    rec.check("constant/dagc", trace.connections == 0 and
              not x_final.data.any(), repr(trace))
    rec.check("constant/svga", not graph.svga_aggregate(constant, 2).data.any())

    for h, w, c, k in oracle_grid():
        x = DeterministicRng(h * w * c * k).uniform((1, c, h, w), -1, 1, "f64")
        _x_final, trace = graph.dagc_aggregate(x, k, graph.estimate_stats(x))
        counts = graph.count_comparisons("dagc", h, w, k)
        rec.check("dagc-counter/H%dW%dC%dK%d" % (h, w, c, k),
                  trace.comparisons + trace.stats_comparisons == counts.total,
                  "%d + %d != %d" % (trace.comparisons, trace.stats_comparisons,
                                     counts.total))

    connections = set()
    for seed in range(20):
        x = DeterministicRng(seed).uniform((1, 4, 8, 8), -1.0, 1.0, "f64")
        _x_final, trace = graph.dagc_aggregate(x, 2, graph.estimate_stats(x))
        connections.add(trace.connections)
    rec.check("variable-connectivity", len(connections) >= 2,
              "single connection count %r over 20 inputs" % (connections, ))

    _block_invariants(rec)
    return results


def _block_invariants(rec):
    rng = DeterministicRng(424242)
    x = rng.uniform((1, 4, 8, 8), -1.0, 1.0, "f64")
    grapher = blocks.init_grapher(rng, 4, dtype="f64")
    ffn_params = blocks.init_ffn(rng, 4, dtype="f64")
    mb = blocks.init_mbconv(rng, 4, dtype="f64")
    rec.check("residual/grapher", bit_equal(blocks.dynamic_grapher(
        x, 2, grapher._replace(w_out=blocks.zero_conv_bn(grapher.w_out))), x))
    rec.check("residual/ffn", bit_equal(blocks.ffn(
        x, ffn_params._replace(w2=blocks.zero_conv_bn(ffn_params.w2))), x))
    rec.check("residual/mbconv", bit_equal(blocks.mbconv(
        x, mb._replace(project=blocks.zero_conv_bn(mb.project))), x))
    first = blocks.dagc_block(x, 2, grapher, ffn_params)
    rec.check("determinism/dagc-block",
              bit_equal(first, blocks.dagc_block(x, 2, grapher, ffn_params)))
    for graph_method in graph.METHODS:
        out = blocks.dagc_block(x, 2, grapher, ffn_params, graph=graph_method)
        rec.check("shape/dagc-block-%s" % graph_method, out.shape == x.shape)

    config = zoo.predefined("toy")
    model = zoo.build(config, seed=0)
    images = zoo.random_images(config, 0)
    logits, shapes = zoo.forward_stages(model, images)
    rec.check("shape/toy-pyramid",
              [s[2] for s in shapes] == config.stage_extents(),
              "stage extents %r" % ([s[2] for s in shapes], ))
    rec.check("shape/toy-logits", logits.shape == (1, config.classes))
    rec.check("determinism/toy-forward",
              bit_equal(logits, zoo.forward(model, images)))
    for name in ("S", "M", "B", "toy"):
        config = zoo.predefined(name)
        rec.check("count/%s-analytic-equals-built" % name,
                  zoo.count_params(config).params ==
                  zoo.model_param_count(zoo.build(config, seed=0)))


def run_checks(suite="all", seeds=5, tolerance=1e-12, threshold_bias=0.0):
    if suite not in SUITES + ("all", ):
        raise ConfigurationError("Unknown suite %r (expected oracle, "
                                 "invariants or all)." % (suite, ))
    suites = SUITES if suite == "all" else (suite, )
    results = []
    if "oracle" in suites:
        run_oracle_suite(results, seeds, tolerance, threshold_bias)
    if "invariants" in suites:
        run_invariant_suite(results, seeds)
    return CheckReport(suites, results)
