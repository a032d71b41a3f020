# -*- coding: utf-8 -*-
"""Micro-benchmark of the three graph constructions."""

from __future__ import print_function

import collections
import os
import time

import numpy as np

from .common import UsageError, ConfigurationError, debug
from .tensor import DeterministicRng, as_dtype
from . import graph


SCHEMA_VERSION = 1
BENCH_ORDER = ("svga", "dagc", "knn")


class RunSpec(collections.namedtuple(
        "RunSpec", "subcommand height width channels k methods repeats "
                   "warmup seed dtype output")):

    __slots__ = ()

    def __new__(cls, subcommand="bench-graph", height=56, width=56,
                channels=48, k=8, methods=BENCH_ORDER, repeats=30, warmup=5,
                seed=0, dtype="f32", output=None):
        return super(RunSpec, cls).__new__(
            cls, subcommand, height, width, channels, k, tuple(methods),
            repeats, warmup, seed, dtype, output)

    def validate(self):
        if self.repeats < 1:
            raise UsageError("--repeats must be at least 1, got %d."
                             % self.repeats)
        if self.warmup < 0:
            raise UsageError("--warmup must not be negative, got %d."
                             % self.warmup)
        if min(self.height, self.width, self.channels) < 1:
            raise UsageError("Extents and channels must be positive.")
        if not self.methods:
            raise UsageError("No graph method selected.")
        try:
            as_dtype(self.dtype)
            for method in self.methods:
                graph.GraphSpec(method, self.k).validate(self.height,
                                                         self.width)
        except ConfigurationError as e:
            raise UsageError(str(e))
        if (self.height < 2 or self.width < 2) and "dagc" in self.methods:
            raise UsageError("DAGC statistics need H and W of at least 2.")
        return self


def thread_count():
    """Worker threads granted through ``AXIALVIG_THREADS`` (default 1)."""
    threads = os.environ.get("AXIALVIG_THREADS", "1")
    try:
        value = int(threads)
    except ValueError:
        value = 0
    if value < 1:
        raise UsageError("AXIALVIG_THREADS must be a positive integer, got %r."
                         % threads)
    return value


def _construction(method, x, k):
    if method == "dagc":
        return lambda: graph.dagc_aggregate(x, k, graph.estimate_stats(x))
    if method == "svga":
        return lambda: graph.svga_aggregate(x, k)
    return lambda: graph.knn_aggregate(x, graph.knn_neighbors(x, k))


def time_call(fun, repeats, warmup=0, clock=time.perf_counter):
    """Wall times in seconds of ``repeats`` calls after ``warmup`` calls."""
    for _ in range(warmup):
        fun()
    samples = []
    for _ in range(repeats):
        start = clock()
        fun()
        samples.append(clock() - start)
    return samples


def summarize(samples):
    """Order statistics of ``samples`` (seconds) in milliseconds.

        >>> s = summarize([0.001, 0.003, 0.002])
        >>> s["median_ms"], s["min_ms"], s["max_ms"]
        (2.0, 1.0, 3.0)

    """
    ms = np.asarray(samples, dtype=np.float64) * 1e3
    q1, median, q3 = np.percentile(ms, [25, 50, 75])
    return collections.OrderedDict([
        ("median_ms", float(median)),
        ("q1_ms", float(q1)),
        ("q3_ms", float(q3)),
        ("iqr_ms", float(q3 - q1)),
        ("min_ms", float(ms.min())),
        ("max_ms", float(ms.max())),
        ("repeats", len(samples)),
    ])


def _counts(method, x, k):
    h, w = x.shape[2:]
    expected = graph.count_comparisons(method, h, w, k)
    if method == "dagc":
        _x_final, trace = graph.dagc_aggregate(x, k, graph.estimate_stats(x))
        comparisons = trace.comparisons
        stats = trace.stats_comparisons
        connections = trace.connections
    elif method == "svga":
        trace = graph.svga_trace(x, k)
        comparisons, stats = 0, 0
        connections = trace.connections
    else:
        table = graph.knn_neighbors(x, k)
        comparisons, stats = table.comparisons, 0
        connections = table.indices.size
    nodes = x.shape[0] * h * w
    per_node = comparisons // nodes
    return collections.OrderedDict([
        ("comparisons_per_node", per_node),
        ("comparisons", comparisons + stats),
        ("stats_comparisons", stats),
        ("connections", connections),
        ("expected_comparisons", expected.total * x.shape[0]),
        ("counts_match", per_node == expected.per_node and
         comparisons + stats == expected.total * x.shape[0]),
    ])


def bench_graph(spec):
    """Run the benchmark described by ``spec`` and return the report tree."""
    spec.validate()
    x = DeterministicRng(spec.seed).uniform(
        (1, spec.channels, spec.height, spec.width), -1.0, 1.0, spec.dtype)
    methods = [m for m in BENCH_ORDER if m in spec.methods]
    counts = collections.OrderedDict()
    timing = collections.OrderedDict()
    for method in methods:
        counts[method] = _counts(method, x, spec.k)
        debug("bench %s: %d timed runs after %d warmups"
              % (method, spec.repeats, spec.warmup))
        timing[method] = summarize(time_call(
            _construction(method, x, spec.k), spec.repeats, spec.warmup))
    dagc = graph.count_comparisons("dagc", spec.height, spec.width, spec.k)
    knn = graph.count_comparisons("knn", spec.height, spec.width, spec.k)
    return collections.OrderedDict([
        ("schema_version", SCHEMA_VERSION),
        ("kind", "bench-graph"),
        ("spec", collections.OrderedDict([
            ("height", spec.height), ("width", spec.width),
            ("channels", spec.channels), ("k", spec.k),
            ("methods", methods), ("repeats", spec.repeats),
            ("warmup", spec.warmup), ("seed", spec.seed),
            ("dtype", spec.dtype)])),
        ("environment", collections.OrderedDict([
            ("dtype", spec.dtype), ("threads", thread_count())])),
        ("methods", counts),
        ("dagc_knn_per_node_ratio", float(dagc.per_node) / knn.per_node),
        ("timing", timing),
    ])


def ordering(report):
    """Methods sorted by median time, fastest first."""
    timing = report["timing"]
    return sorted(timing, key=lambda m: timing[m]["median_ms"])
