# -*- coding: utf-8 -*-
"""Tape gradients against central finite differences, block by block.

DAGC masks are recorded on the analytic pass and replayed on every
perturbed pass.  An input that sits on a threshold tie, or whose
per-channel max has two candidates closer than ``SELECTION_MARGIN``, is
redrawn and the redraw is noted in the report.

"""

from __future__ import print_function

import collections

import numpy as np

from .common import ConfigurationError, VerificationFailure, debug
from .tensor import DeterministicRng, FeatureTensor, GradTape, reduce_mean, \
     map_tensors, iter_tensors, is_buffer
from .graph import MaskPlan
from . import blocks


INPUT_SHAPE = (1, 8, 8, 8)
HOP = 2
STEP = 1e-5
TOLERANCE = 1e-4
## below this, distance and threshold are taken as equal
TIE_MARGIN = 1e-9
SELECTION_MARGIN = 1e-4
ABS_FLOOR = 1e-8

DAGCPair = collections.namedtuple("DAGCPair", "grapher ffn mbconv")
DAGCUnit = collections.namedtuple("DAGCUnit", "grapher ffn")


def _init_dagc(rng, c):
    return DAGCUnit(blocks.init_grapher(rng, c, dtype="f64"),
                    blocks.init_ffn(rng, c, dtype="f64"))


def _init_pair(rng, c):
    return DAGCPair(blocks.init_grapher(rng, c, dtype="f64"),
                    blocks.init_ffn(rng, c, dtype="f64"),
                    blocks.init_mbconv(rng, c, dtype="f64"))


BLOCKS = collections.OrderedDict([
    ("dagc", (_init_dagc,
              lambda x, p, plan: blocks.dagc_block(x, HOP, p.grapher, p.ffn,
                                                   plan=plan))),
    ("grapher", (lambda rng, c: blocks.init_grapher(rng, c, dtype="f64"),
                 lambda x, p, plan: blocks.dynamic_grapher(x, HOP, p,
                                                           plan=plan))),
    ("ffn", (lambda rng, c: blocks.init_ffn(rng, c, dtype="f64"),
             lambda x, p, plan: blocks.ffn(x, p))),
    ("mbconv", (lambda rng, c: blocks.init_mbconv(rng, c, dtype="f64"),
                lambda x, p, plan: blocks.mbconv(x, p))),
    ("pair", (_init_pair,
              lambda x, p, plan: blocks.mbconv(
                  blocks.dagc_block(x, HOP, p.grapher, p.ffn, plan=plan),
                  p.mbconv))),
])


GradEntry = collections.namedtuple(
    "GradEntry", "name shape max_rel_err max_abs_err passed")


class GradReport(collections.namedtuple(
        "GradReport", "block seed step tolerance entries notes")):

    __slots__ = ()

    @property
    def passed(self):
        return bool(self.entries) and all(e.passed for e in self.entries)

    @property
    def worst(self):
        return max(self.entries, key=lambda e: e.max_rel_err)

    def failures(self):
        return [e for e in self.entries if not e.passed]


def init_block_params(block, seed=0, channels=INPUT_SHAPE[1]):
    return _lookup(block)[0](DeterministicRng(seed), channels)


def _lookup(block):
    try:
        return BLOCKS[block]
    except KeyError:
        raise ConfigurationError("Unknown block %r (expected one of %s)."
                                 % (block, ", ".join(BLOCKS)))


def relative_error(analytic, numeric):
    """``max|a - n|`` over the larger of ``max|a|`` and ``max|n|``.

        >>> round(relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.002])), 6)
        0.000999

    """
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), ABS_FLOOR)
    return float(np.abs(analytic - numeric).max() / scale)


def _loss(fun, x, params, plan):
    if plan is not None:
        plan.replay()
    return reduce_mean(fun(x, params, plan)).item()


def numeric_gradient(fun, x, params, name, plan=None, step=STEP,
                     prefix="params"):
    """Central differences of the mean output w.r.t. one tensor."""
    if name == "input":
        base = x
    else:
        base = dict(iter_tensors(params, prefix))[name]
    flat = base.numpy().reshape(-1)
    grad = np.zeros(flat.shape)

    def evaluate(values):
        tensor = FeatureTensor(values.reshape(base.shape), dtype="f64")
        if name == "input":
            return _loss(fun, tensor, params, plan)
        moved = map_tensors(params, lambda n, t: tensor if n == name else t,
                            prefix)
        return _loss(fun, x, moved, plan)

    for idx in range(flat.size):
        saved = flat[idx]
        flat[idx] = saved + step
        plus = evaluate(flat)
        flat[idx] = saved - step
        minus = evaluate(flat)
        flat[idx] = saved
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad.reshape(base.shape)


def check_block(block, seed=0, step=STEP, tolerance=TOLERANCE, x=None,
                params=None, max_attempts=10):
    """Compare tape and finite-difference gradients for one block.

    ``x`` and ``params`` replace the seeded draws; a rejected ``x`` is
    replaced by a seeded draw.

    """
    init, fun = _lookup(block)
    rng = DeterministicRng(seed)
    if params is None:
        params = init(rng, INPUT_SHAPE[1])
    notes = []
    for attempt in range(max_attempts):
        if x is None or attempt:
            x = rng.uniform(INPUT_SHAPE, -1.0, 1.0, "f64")
        plan = MaskPlan()
        tape = GradTape()
        watched_x = tape.watch(x, "input")
        watched = tape.watch_params(params, "params")
        loss = reduce_mean(fun(watched_x, watched, plan))
        if plan.threshold_margin < TIE_MARGIN:
            notes.append("attempt %d: a node distance ties the mu - sigma "
                         "threshold (gap %.3g); input resampled"
                         % (attempt, plan.threshold_margin))
            continue
        if plan.selection_margin < SELECTION_MARGIN:
            notes.append("attempt %d: max candidates %.3g apart; input "
                         "resampled" % (attempt, plan.selection_margin))
            continue
        break
    else:
        raise VerificationFailure(
            "%s: no usable input after %d attempts." % (block, max_attempts),
            case=block)
    analytic = tape.backward(loss)
    entries = []
    for name, grad in analytic.items():
        if is_buffer(name):
            continue
        numeric = numeric_gradient(fun, x, params, name, plan, step)
        finite = np.isfinite(grad).all() and np.isfinite(numeric).all()
        if finite:
            rel = relative_error(grad, numeric)
            err = float(np.abs(grad - numeric).max())
        else:
            rel = err = float("nan")
        passed = finite and (rel < tolerance or err < ABS_FLOOR)
        debug("gradcheck %s %s: rel %.3g abs %.3g" % (block, name, rel, err))
        entries.append(GradEntry(name, grad.shape, rel, err, passed))
    return GradReport(block, seed, step, tolerance, entries, notes)
