# -*- coding: utf-8 -*-
"""Graph construction: axial (DAGC, SVGA) and exhaustive KNN.

All three builders work on rank-4 feature maps and return both the
aggregated ``x_final`` and the bookkeeping needed to check them: masks,
neighbour tables and comparison counters.  Nothing here keeps state
between calls.

"""

from __future__ import print_function

import collections

import numpy as np

from .common import DimensionError, ConfigurationError, TapeError, debug
from .tensor import FeatureTensor, require_rank4, roll, sub, mul, maximum, \
     zeros, quadrant_flip, gather_max_relative


METHODS = ("dagc", "svga", "knn")

## above this many pairwise terms KNN expands |a - b|^2 into a matrix product
DIRECT_DISTANCE_LIMIT = 1 << 22


class StatPair(collections.namedtuple("StatPair", "mu sigma comparisons")):
    """Mean and population deviation of one image's quadrant distances."""

    __slots__ = ()

    def __new__(cls, mu, sigma, comparisons=0):
        return super(StatPair, cls).__new__(cls, mu, sigma, comparisons)

    @property
    def threshold(self):
        return self.mu - self.sigma


class GraphSpec(collections.namedtuple("GraphSpec", "method k")):

    __slots__ = ()

    def validate(self, height=None, width=None):
        if self.method not in METHODS:
            raise ConfigurationError(
                "Unknown graph method %r (expected one of %s)."
                % (self.method, ", ".join(METHODS)))
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError("k must be a positive integer, got %r."
                                     % (self.k, ))
        if self.method == "knn":
            if height is not None and self.k >= height * width:
                raise ConfigurationError(
                    "KNN needs k < H*W, got k=%d for %dx%d."
                    % (self.k, height, width))
        elif height is not None and self.k >= max(height, width):
            raise ConfigurationError(
                "Axial hop k=%d must stay below max(H, W)=%d."
                % (self.k, max(height, width)))
        return self


class ConnectionTrace(object):
    """Masks and counters gathered by one axial aggregation.

    ``masks`` lists ``(axis, offset, mask)`` with ``mask`` a boolean
    ``(N, 1, H, W)`` array, in the order the offsets were visited.

    """

    def __init__(self, shape, masks=None, comparisons=0, stats_comparisons=0):
        self.shape = tuple(shape)
        self.masks = masks if masks is not None else []
        self.comparisons = comparisons
        self.stats_comparisons = stats_comparisons
        self.threshold_margin = None
        self.selection_margin = None

    @property
    def nodes(self):
        n, _c, h, w = self.shape
        return n * h * w

    @property
    def connections(self):
        """Links to other nodes, without the offset 0 self masks."""
        return int(sum(int(mask.sum()) for _a, offset, mask in self.masks
                       if offset))

    @property
    def per_node_comparisons(self):
        return self.comparisons // self.nodes

    def to_tensor(self):
        """Masks as a ``(N, offsets, H, W)`` 0/1 f32 tensor."""
        return FeatureTensor(
            np.concatenate([mask for _a, _o, mask in self.masks], axis=1),
            dtype="f32")

    def __repr__(self):
        return "<ConnectionTrace %d offsets, %d connections, %d comparisons>" \
            % (len(self.masks), self.connections, self.comparisons)


class NeighborTable(object):
    """``indices[b, node]`` are the ``k`` nearest other nodes of ``node``."""

    def __init__(self, indices, comparisons=0):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.comparisons = comparisons

    @property
    def k(self):
        return self.indices.shape[2]

    @property
    def nodes(self):
        return self.indices.shape[1]

    def to_tensor(self):
        return FeatureTensor(self.indices.astype(np.float32), dtype="f32")


ComparisonCount = collections.namedtuple(
    "ComparisonCount", "method per_node nodes stats total")


##
## Statistics
##

def quadrant_region(height, width):
    """Row and column indices covered by the quadrants.

        >>> [r.tolist() for r in quadrant_region(5, 4)]
        [[0, 1, 3, 4], [0, 1, 2, 3]]

    """
    qh, qw = height // 2, width // 2
    rows = np.r_[0:qh, height - qh:height]
    cols = np.r_[0:qw, width - qw:width]
    return rows, cols


def node_distances(a, b):
    """Channel-wise L2 distance per node, shape ``(N, 1, H, W)``."""
    diff = a - b
    return np.sqrt((diff * diff).sum(axis=1, keepdims=True))


def estimate_stats(x):
    require_rank4(x)
    flipped = quadrant_flip(x)
    n, _c, h, w = x.shape
    rows, cols = quadrant_region(h, w)
    distances = node_distances(x.data, flipped.data)[:, 0][:, rows][:, :, cols]
    distances = distances.reshape(n, -1)
    comparisons = (h // 2) * (w // 2)
    return [StatPair(float(d.mean()), float(d.std()), comparisons)
            for d in distances]


def degenerate_stats(batch):
    """Stats for maps too small to flip: no distance is below zero."""
    return [StatPair(0.0, 0.0, 0) for _ in range(batch)]


def axial_offsets(extent, k):
    """Hops ``0, k, 2k, ...`` strictly below ``extent``.

        >>> axial_offsets(8, 2)
        [0, 2, 4, 6]
        >>> axial_offsets(5, 8)
        [0]

    """
    if extent < 1 or k < 1:
        raise ConfigurationError("axial_offsets needs extent >= 1 and k >= 1, "
                                 "got %r and %r." % (extent, k))
    return list(range(0, extent, k))


def _axial_plan(x, k):
    _n, _c, h, w = x.shape
    for axis, extent in (("height", h), ("width", w)):
        for offset in axial_offsets(extent, k):
            yield axis, offset


##
## Axial aggregation
##

class _Margins(object):
    """Closest approach to a threshold tie and to a max tie."""

    def __init__(self, shape, dtype):
        self.best = np.zeros(shape, dtype=dtype)
        self.second = np.full(shape, -np.inf, dtype=dtype)
        self.threshold = np.inf

    def update(self, distance, thresholds, candidate, mask):
        gap = np.abs(distance - thresholds)
        if gap.size:
            self.threshold = min(self.threshold, float(gap.min()))
        value = np.where(mask, candidate, -np.inf)
        self.second = np.maximum(self.second, np.minimum(self.best, value))
        self.best = np.maximum(self.best, value)

    @property
    def selection(self):
        gap = self.best - self.second
        gap = gap[np.isfinite(gap)]
        return float(gap.min()) if gap.size else np.inf


def dagc_aggregate(x, k, stats, masks=None, threshold=None,
                   track_margins=False):
    """Threshold-masked max-relative aggregation along rows and columns.

    ``masks`` replays a previous trace's masks instead of thresholding;
    ``threshold`` overrides ``mu - sigma``, one value or one per image.

    """
    require_rank4(x)
    n, _c, h, w = x.shape
    if len(stats) != n:
        raise DimensionError(
            "Got %d stat pairs for a batch of %d (batch axis)."
            % (len(stats), n), axis="batch")
    if threshold is None:
        thresholds = np.array([s.threshold for s in stats])
    else:
        thresholds = np.broadcast_to(
            np.asarray(threshold, dtype=np.float64), (n, )).copy()
    thresholds = thresholds.reshape(n, 1, 1, 1)
    plan = list(_axial_plan(x, k))
    if masks is not None and len(masks) != len(plan):
        raise DimensionError("Replayed %d masks for %d offsets."
                             % (len(masks), len(plan)))
    trace = ConnectionTrace(x.shape,
                            stats_comparisons=sum(s.comparisons for s in stats))
    margins = _Margins(x.shape, x.dtype) if track_margins else None
    x_final = zeros(x.shape, dtype=x.dtype)
    for idx, (axis, offset) in enumerate(plan):
        rolled = roll(x, offset, axis)
        diff = sub(rolled, x)
        distance = node_distances(rolled.data, x.data)
        trace.comparisons += n * h * w
        if masks is None:
            mask = distance < thresholds
        else:
            mask = np.asarray(masks[idx], dtype=bool)
        if margins is not None and offset:
            margins.update(distance, thresholds, diff.data, mask)
        trace.masks.append((axis, offset, mask))
        x_final = maximum(x_final, mul(
            diff, FeatureTensor._wrap(mask.astype(x.dtype))))
    if margins is not None:
        trace.threshold_margin = margins.threshold
        trace.selection_margin = margins.selection
    debug("dagc_aggregate %s k=%d: %d connections over %d comparisons"
          % (x.shape, k, trace.connections, trace.comparisons))
    return x_final, trace


def svga_aggregate(x, k):
    require_rank4(x)
    x_final = zeros(x.shape, dtype=x.dtype)
    for axis, offset in _axial_plan(x, k):
        rolled = roll(x, offset, axis)
        x_final = maximum(x_final, sub(rolled, x))
    return x_final


def svga_trace(x, k):
    """All-true masks with no distance evaluated."""
    n, _c, h, w = x.shape
    return ConnectionTrace(x.shape, masks=[
        (axis, offset, np.ones((n, 1, h, w), dtype=bool))
        for axis, offset in _axial_plan(x, k)])


##
## Exhaustive KNN
##

def _squared_distances(feats):
    nodes, channels = feats.shape
    if nodes * nodes * channels <= DIRECT_DISTANCE_LIMIT:
        diff = feats[:, None, :] - feats[None, :, :]
        d = (diff * diff).sum(axis=2)
    else:
        sq = (feats * feats).sum(axis=1)
        d = sq[:, None] + sq[None, :] - 2.0 * feats.dot(feats.T)
        np.maximum(d, 0, out=d)
    np.fill_diagonal(d, np.inf)
    return d


def _nearest(d, k):
    """Row-wise ``k`` smallest, ties to the lower index."""
    nodes = d.shape[0]
    idx = np.argpartition(d, k - 1, axis=1)[:, :k]
    vals = np.take_along_axis(d, idx, axis=1)
    order = np.lexsort((idx, vals), axis=1)
    idx = np.take_along_axis(idx, order, axis=1)
    kth = vals.max(axis=1)
    ## rows whose k-th distance is shared by an unselected node
    tied = (d <= kth[:, None]).sum(axis=1) > k
    for row in np.nonzero(tied)[0]:
        idx[row] = np.argsort(d[row], kind="stable")[:k]
    return idx.reshape(nodes, k)


def knn_neighbors(x, k):
    require_rank4(x)
    n, c, h, w = x.shape
    nodes = h * w
    if k < 1 or k >= nodes:
        raise ConfigurationError("KNN needs 1 <= k < H*W, got k=%r for %dx%d."
                                 % (k, h, w))
    feats = x.data.reshape(n, c, nodes).transpose(0, 2, 1).astype(np.float64)
    indices = np.stack([_nearest(_squared_distances(f), k) for f in feats])
    return NeighborTable(indices, comparisons=n * nodes * nodes)


def knn_aggregate(x, table):
    require_rank4(x)
    n, _c, h, w = x.shape
    if table.indices.shape[:2] != (n, h * w):
        raise DimensionError(
            "Neighbour table covers %s nodes, the input has %d images of %d."
            % (table.indices.shape[:2], n, h * w), axis="node")
    return gather_max_relative(x, table.indices)


##
## Counting
##

def count_comparisons(method, height, width, k):
    """Closed-form distance evaluations for one image.

        >>> count_comparisons("dagc", 56, 56, 8).per_node
        14
        >>> count_comparisons("knn", 56, 56, 8).per_node
        3136

    """
    nodes = height * width
    if method == "dagc":
        per_node = -(-height // k) + -(-width // k)
        stats = (height // 2) * (width // 2)
    elif method == "svga":
        per_node, stats = 0, 0
    elif method == "knn":
        per_node, stats = nodes, 0
    else:
        raise ConfigurationError("Unknown graph method %r." % (method, ))
    return ComparisonCount(method, per_node, nodes, stats,
                           per_node * nodes + stats)


def build_graph(x, spec, threshold=None):
    """Run one construction; returns ``(x_final, trace or table)``."""
    spec = GraphSpec(*spec).validate(*x.shape[2:])
    if spec.method == "dagc":
        return dagc_aggregate(x, spec.k, estimate_stats(x), threshold=threshold)
    if spec.method == "svga":
        return svga_aggregate(x, spec.k), svga_trace(x, spec.k)
    table = knn_neighbors(x, spec.k)
    return knn_aggregate(x, table), table


class MaskPlan(object):
    """DAGC masks recorded by one forward pass and replayed by later ones.

    While recording, every ``dagc_aggregate`` call of the pass appends its
    trace along with how close it came to a threshold tie or a max tie.
    ``replay()`` rewinds, after which the same calls receive the recorded
    masks in order, so the graph stays fixed while the inputs move.

    """

    def __init__(self):
        self.traces = []
        self.replaying = False
        self._cursor = 0

    @property
    def recording(self):
        return not self.replaying

    def replay(self):
        self.replaying = True
        self._cursor = 0
        return self

    def observe(self, trace):
        if self.recording:
            self.traces.append(trace)

    def next_masks(self):
        if self._cursor >= len(self.traces):
            raise TapeError("Mask plan holds %d traces, the forward pass asked "
                            "for more." % len(self.traces))
        trace = self.traces[self._cursor]
        self._cursor += 1
        return [mask for _a, _o, mask in trace.masks]

    def _margin(self, attr):
        values = [getattr(t, attr) for t in self.traces
                  if getattr(t, attr) is not None]
        return min(values) if values else np.inf

    @property
    def threshold_margin(self):
        return self._margin("threshold_margin")

    @property
    def selection_margin(self):
        return self._margin("selection_margin")
