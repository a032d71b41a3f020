# -*- coding: utf-8 -*-
"""Model assembly, predefined configurations and cost accounting."""

from __future__ import print_function

import collections
import os

import numpy as np

from .common import DimensionError, ConfigurationError, FormatError, \
     file_get_contents, file_put_contents, debug
from .tensor import DeterministicRng, as_dtype, iter_tensors, map_tensors, \
     is_buffer, require_rank4
from .graph import METHODS, count_comparisons
from . import blocks
from . import gvt


STAGES = 4

StageConfig = collections.namedtuple(
    "StageConfig", "channels mbconv_repeats dagc_repeats k")


class ModelConfig(collections.namedtuple(
        "ModelConfig",
        "name stages classes resolution graph cpe graph_stages")):

    __slots__ = ()

    def __new__(cls, name, stages, classes=1000, resolution=224,
                graph="dagc", cpe=True, graph_stages=STAGES):
        return super(ModelConfig, cls).__new__(
            cls, name, tuple(StageConfig(*s) for s in stages), classes,
            resolution, graph, cpe, graph_stages)

    def dagc_repeats(self, stage_idx):
        """DAGC blocks actually built in stage ``stage_idx`` (0-based)."""
        if stage_idx < STAGES - self.graph_stages:
            return 0
        return self.stages[stage_idx].dagc_repeats

    def stage_extents(self, resolution=None):
        resolution = resolution or self.resolution
        return [resolution // (4 * 2 ** idx) for idx in range(STAGES)]


def _stages(channels, mbconv, dagc, ks=(8, 4, 2, 1)):
    return tuple(StageConfig(*values) for values in zip(channels, mbconv, dagc, ks))


PREDEFINED = collections.OrderedDict([
    ("S", ModelConfig("S", _stages((48, 96, 192, 384), (2, 2, 6, 2),
                                   (2, 2, 2, 2)))),
    ("M", ModelConfig("M", _stages((56, 112, 224, 448), (3, 3, 9, 3),
                                   (3, 3, 3, 3)))),
    ("B", ModelConfig("B", _stages((64, 128, 256, 512), (4, 4, 12, 3),
                                   (4, 4, 4, 3)))),
    ("toy", ModelConfig("toy", _stages((8, 16, 32, 64), (1, 1, 1, 1),
                                       (1, 1, 1, 1), (2, 2, 1, 1)),
                        resolution=32)),
])

K_SCHEDULES = {
    "k16": (16, 8, 4, 2),
    "k9": (9, 6, 3, 1),
}

## Parameters (M) and GMACs at 224 reported for the reference models.
REFERENCE_COSTS = {
    "S": (12.0e6, 1.6e9),
    "M": (21.9e6, 3.2e9),
    "B": (30.9e6, 5.2e9),
}


def _apply_variant(config, variant):
    if variant in METHODS:
        return config._replace(graph=variant)
    if variant == "nocpe":
        return config._replace(cpe=False)
    if variant in K_SCHEDULES:
        return config._replace(stages=tuple(
            s._replace(k=k) for s, k in zip(config.stages,
                                            K_SCHEDULES[variant])))
    if len(variant) == 2 and variant[1] == "s" and variant[0] in "1234":
        return config._replace(graph_stages=int(variant[0]))
    raise ConfigurationError("Unknown model variant %r." % (variant, ))


def predefined(name):
    """Look up a reference configuration, optionally with a variant suffix.

        >>> predefined("S").stages[2].mbconv_repeats
        6
        >>> predefined("B-k9").stages[0].k
        9

    """
    base, _sep, variants = name.partition("-")
    if base not in PREDEFINED:
        raise ConfigurationError(
            "Unknown model %r (expected one of %s, optionally suffixed by "
            "-svga, -knn, -nocpe, -1s..-3s, -k16, -k9)."
            % (name, ", ".join(PREDEFINED)))
    config = PREDEFINED[base]
    for variant in filter(None, variants.split("-")):
        config = _apply_variant(config, variant)
    return validate_config(config._replace(name=name))


def validate_config(config):
    if len(config.stages) != STAGES:
        raise ConfigurationError("A model has %d stages, got %d."
                                 % (STAGES, len(config.stages)))
    previous = 0
    for idx, stage in enumerate(config.stages, 1):
        if stage.channels <= previous:
            raise ConfigurationError(
                "stage%d.channels=%r must be positive and above the previous "
                "stage." % (idx, stage.channels))
        previous = stage.channels
        if stage.mbconv_repeats < 1 or stage.dagc_repeats < 1 or stage.k < 1:
            raise ConfigurationError(
                "stage%d: repeats and k must be positive, got %r."
                % (idx, tuple(stage[1:])))
    if config.stages[0].channels % 2:
        raise ConfigurationError("stage1.channels must be even (stem width is "
                                 "half of it), got %d."
                                 % config.stages[0].channels)
    if config.classes < 1:
        raise ConfigurationError("classes must be at least 1, got %r."
                                 % (config.classes, ))
    if config.resolution < 32 or config.resolution % 32:
        raise ConfigurationError("resolution must be a positive multiple of "
                                 "32, got %r." % (config.resolution, ))
    if config.graph not in METHODS:
        raise ConfigurationError("graph must be one of %s, got %r."
                                 % (", ".join(METHODS), config.graph))
    if not 1 <= config.graph_stages <= STAGES:
        raise ConfigurationError("graph_stages must be in 1..%d, got %r."
                                 % (STAGES, config.graph_stages))
    return config


##
## Model assembly
##

Model = collections.namedtuple("Model", "config blocks")
Block = collections.namedtuple("Block", "kind name stage k params")
DAGCParams = collections.namedtuple("DAGCParams", "grapher ffn")


def block_layout(config):
    """``(kind, name, stage, k)`` of every unit, in execution order."""
    layout = [("stem", "stem", 0, None)]
    for idx, stage in enumerate(config.stages):
        label = "stage%d" % (idx + 1)
        for rep in range(stage.mbconv_repeats):
            layout.append(("mbconv", "%s.mbconv%d" % (label, rep), idx + 1,
                           None))
        for rep in range(config.dagc_repeats(idx)):
            layout.append(("dagc", "%s.dagc%d" % (label, rep), idx + 1,
                           stage.k))
        if idx < STAGES - 1:
            layout.append(("downsample", "down%d" % (idx + 1), idx + 1, None))
    layout.append(("head", "head", STAGES, None))
    return layout


def _init_block(rng, config, kind, stage, dtype):
    channels = [s.channels for s in config.stages]
    if kind == "stem":
        return blocks.init_stem(rng, channels[0], dtype=dtype)
    if kind == "mbconv":
        return blocks.init_mbconv(rng, channels[stage - 1], dtype=dtype)
    if kind == "dagc":
        width = channels[stage - 1]
        return DAGCParams(
            blocks.init_grapher(rng, width, cpe=config.cpe, dtype=dtype),
            blocks.init_ffn(rng, width, dtype=dtype))
    if kind == "downsample":
        return blocks.init_downsample(rng, channels[stage - 1], channels[stage],
                                      dtype=dtype)
    return blocks.init_head(rng, channels[-1], config.classes, dtype=dtype)


def build(config, seed=0, dtype=None):
    validate_config(config)
    rng = DeterministicRng(seed)
    dtype = as_dtype(dtype)
    units = tuple(
        Block(kind, name, stage, k, _init_block(rng, config, kind, stage, dtype))
        for kind, name, stage, k in block_layout(config))
    debug("built %s: %d blocks, seed %d" % (config.name, len(units), seed))
    return Model(config, units)


def named_tensors(model, buffers=True):
    for unit in model.blocks:
        for name, tensor in iter_tensors(unit.params, unit.name):
            if buffers or not is_buffer(name):
                yield name, tensor


def model_param_count(model):
    return sum(t.size for _name, t in named_tensors(model, buffers=False))


def model_dtype(model):
    return model.blocks[0].params.conv1.conv.weight.dtype


def run_block(unit, x, config, plan=None):
    if unit.kind == "stem":
        return blocks.stem(x, unit.params)
    if unit.kind == "mbconv":
        return blocks.mbconv(x, unit.params)
    if unit.kind == "dagc":
        return blocks.dagc_block(x, unit.k, unit.params.grapher,
                                 unit.params.ffn, config.graph, plan)
    if unit.kind == "downsample":
        return blocks.downsample(x, unit.params)
    return blocks.head(x, unit.params, config.classes)


def check_images(config, images):
    require_rank4(images, "images")
    expected = (3, config.resolution, config.resolution)
    if tuple(images.shape[1:]) != expected:
        raise DimensionError(
            "Model %s expects images of shape (N, %d, %d, %d), got %s."
            % ((config.name, ) + expected + (images.shape, )))


def forward_stages(model, images, plan=None):
    """Logits plus the shape of each stage's output feature map."""
    check_images(model.config, images)
    shapes = []
    x = images
    for unit in model.blocks:
        if unit.kind in ("downsample", "head"):
            shapes.append(x.shape)
        x = run_block(unit, x, model.config, plan)
    return x, shapes


def forward(model, images, plan=None):
    return forward_stages(model, images, plan)[0]


##
## Cost accounting
##

CostEntry = collections.namedtuple("CostEntry", "name params macs graph_macs")


class CostReport(collections.namedtuple(
        "CostReport", "model resolution params macs graph_macs entries")):

    __slots__ = ()

    @property
    def total_macs(self):
        return self.macs + self.graph_macs

    def reference_delta(self):
        """Relative deviation from the reference figures, if known."""
        base = self.model.split("-")[0]
        if base not in REFERENCE_COSTS or "-" in self.model:
            return None
        params, macs = REFERENCE_COSTS[base]
        return ((self.params - params) / params,
                (self.total_macs - macs) / macs)


def _conv(in_ch, out_ch, kernel, extent, groups=1, bias=True):
    """``(params, macs)`` of one convolution producing ``extent**2`` pixels."""
    taps = (in_ch // groups) * kernel * kernel
    return (out_ch * taps + (out_ch if bias else 0),
            out_ch * extent * extent * taps)


def _bn(channels):
    return 2 * channels, 0


def _sum(*costs):
    return tuple(sum(values) for values in zip(*costs))


def _mbconv_cost(c, extent):
    hidden = blocks.MBCONV_EXPANSION * c
    return _sum(_conv(c, hidden, 1, extent), _bn(hidden),
                _conv(hidden, hidden, 3, extent, groups=hidden), _bn(hidden),
                _conv(hidden, c, 1, extent), _bn(c))


def _dagc_cost(config, c, extent, k):
    hidden = blocks.FFN_EXPANSION * c
    cost = _sum(_conv(c, c, 1, extent), _bn(c),
                _conv(2 * c, c, 1, extent), _bn(c),
                _conv(c, c, 1, extent), _bn(c),
                _conv(c, hidden, 1, extent), _bn(hidden),
                _conv(hidden, c, 1, extent), _bn(c))
    if config.cpe:
        cost = _sum(cost, _conv(c, c, 3, extent, groups=c))
    method = config.graph
    counts = count_comparisons(method, extent, extent, k)
    graph = 0
    if method != "dagc" or extent >= 2:
        graph = (counts.per_node * counts.nodes + counts.stats) * c
    return cost, graph


def cost_report(config, resolution=None):
    validate_config(config)
    resolution = resolution or config.resolution
    if resolution % 32:
        raise ConfigurationError("resolution must be a multiple of 32, got %r."
                                 % (resolution, ))
    extents = config.stage_extents(resolution)
    channels = [s.channels for s in config.stages]
    mid = channels[0] // 2
    entries = [CostEntry("stem", *(_sum(
        _conv(3, mid, 3, resolution // 2), _bn(mid),
        _conv(mid, channels[0], 3, extents[0]), _bn(channels[0])) + (0, )))]
    for idx, stage in enumerate(config.stages):
        c, extent = channels[idx], extents[idx]
        cost, graph = (0, 0), 0
        if idx:
            cost = _sum(_conv(channels[idx - 1], c, 3, extent), _bn(c))
        for _rep in range(stage.mbconv_repeats):
            cost = _sum(cost, _mbconv_cost(c, extent))
        for _rep in range(config.dagc_repeats(idx)):
            block_cost, block_graph = _dagc_cost(config, c, extent, stage.k)
            cost = _sum(cost, block_cost)
            graph += block_graph
        entries.append(CostEntry("stage%d" % (idx + 1), cost[0], cost[1],
                                 graph))
    hidden = blocks.HEAD_EXPANSION * channels[-1]
    entries.append(CostEntry("head", *(_sum(
        _conv(channels[-1], hidden, 1, 1),
        _conv(hidden, config.classes, 1, 1)) + (0, ))))
    return CostReport(config.name, resolution,
                      sum(e.params for e in entries),
                      sum(e.macs for e in entries),
                      sum(e.graph_macs for e in entries),
                      entries)


def count_params(config):
    return cost_report(config)


def count_macs(config, resolution=None):
    return cost_report(config, resolution)


##
## Storage
##

def save_weights(model, path):
    gvt.save_container(path, collections.OrderedDict(named_tensors(model)))


def _block_of(name, layout):
    for _kind, block_name, _stage, _k in layout:
        if name == block_name or name.startswith(block_name + "."):
            return block_name
    return name.split(".")[0]


def load_weights(config, path):
    """Rebuild a model from stored tensors, checking every name and shape."""
    stored = gvt.load_container(path)
    if not stored:
        raise FormatError("Weights file %r holds no tensors." % (path, ))
    dtype = next(iter(stored.values())).dtype
    template = build(config, 0, dtype)
    layout = block_layout(config)
    expected = collections.OrderedDict(named_tensors(template))
    for name, tensor in expected.items():
        if name not in stored:
            block = _block_of(name, layout)
            raise FormatError("Block %s: tensor %r is missing from %r."
                              % (block, name, path), name=block)
        found = stored[name]
        if found.shape != tensor.shape or found.dtype != tensor.dtype:
            block = _block_of(name, layout)
            raise FormatError(
                "Block %s: tensor %r is %s %s, the configuration needs %s %s."
                % (block, name, found.dtype_name, found.shape,
                   tensor.dtype_name, tensor.shape), name=block)
    extra = [name for name in stored if name not in expected]
    if extra:
        block = _block_of(extra[0], layout)
        raise FormatError("Block %s: unexpected tensor %r in %r."
                          % (block, extra[0], path), name=block)
    units = tuple(
        unit._replace(params=map_tensors(
            unit.params, lambda name, _t: stored[name], unit.name))
        for unit in template.blocks)
    return Model(template.config, units)


##
## Model configuration files
##

CONFIG_KEYS = ("name", "classes", "resolution", "graph", "cpe", "graph_stages")


class _StageBag(object):

    def __init__(self, label):
        object.__setattr__(self, "_label", label)
        object.__setattr__(self, "_values", {})

    def __setattr__(self, key, value):
        if key not in StageConfig._fields:
            raise ConfigurationError("Unknown key %s.%s (expected one of %s)."
                                     % (self._label, key,
                                        ", ".join(StageConfig._fields)))
        self._values[key] = value

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key)


def dump_config(config):
    """Render ``config`` in the ``stage1.channels = 48`` grammar."""
    lines = ["## axialvig model configuration"]
    for key in CONFIG_KEYS:
        lines.append("%s = %r" % (key, getattr(config, key)))
    for idx, stage in enumerate(config.stages, 1):
        for field in StageConfig._fields:
            lines.append("stage%d.%s = %r" % (idx, field, getattr(stage, field)))
    return "\n".join(lines) + "\n"


def parse_config(text, filename="<config>"):
    stage_names = ["stage%d" % idx for idx in range(1, STAGES + 1)]
    env = dict((label, _StageBag(label)) for label in stage_names)
    try:
        code = compile(text, filename, "exec")
    except SyntaxError as e:
        raise ConfigurationError("Syntax error in model config %s, line %s: %s"
                                 % (filename, e.lineno, e.msg))
    exec(code, env)
    unknown = sorted(key for key in env
                     if not key.startswith("_") and key not in CONFIG_KEYS and
                     key not in stage_names)
    if unknown:
        raise ConfigurationError("Unknown key(s) in %s: %s."
                                 % (filename, ", ".join(unknown)))
    stages = []
    for idx in range(1, STAGES + 1):
        bag = env["stage%d" % idx]
        missing = [f for f in StageConfig._fields if f not in bag._values]
        if missing:
            raise ConfigurationError("%s: stage%d is missing %s."
                                     % (filename, idx, ", ".join(missing)))
        stages.append(StageConfig(**bag._values))
    if "name" not in env:
        env["name"] = os.path.splitext(os.path.basename(filename))[0]
    kwargs = dict((key, env[key]) for key in CONFIG_KEYS if key in env)
    return validate_config(ModelConfig(stages=stages, **kwargs))


def load_config(filename):
    if not os.path.exists(filename):
        raise ConfigurationError("Model config file %r not found." % filename)
    return parse_config(file_get_contents(filename), filename)


def save_config(filename, config):
    file_put_contents(filename, dump_config(config))


def resolve_model(spec):
    """A predefined name or the path of a model config file."""
    if os.path.exists(spec) or spec.endswith(".cfg"):
        return load_config(spec)
    return predefined(spec)


def random_images(config, seed, batch=1, dtype=None):
    rng = DeterministicRng(seed)
    return rng.uniform((batch, 3, config.resolution, config.resolution),
                       -1.0, 1.0, dtype)


def top_k(logits, k=5):
    """``[(index, value), ...]`` of the ``k`` largest logits of each row."""
    data = logits.data
    order = np.argsort(-data, axis=1, kind="stable")[:, :k]
    return [[(int(i), float(row[i])) for i in idx]
            for row, idx in zip(data, order)]
