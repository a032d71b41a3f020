# -*- coding: utf-8 -*-
"""Network blocks: CPE, DynConv, Grapher, FFN, MBConv, stem, downsample, head.

Blocks are plain functions of ``(input, params)``.  Parameters are
namedtuples of ``FeatureTensor`` so they can be walked in a stable order
(``iter_tensors``) for initialisation, counting, storage and the tape.

"""

from __future__ import print_function

import collections

import numpy as np

from .common import DimensionError, ConfigurationError
from .tensor import ConvParams, BatchNormParams, conv2d, depthwise_conv2d, \
     batch_norm, gelu, add, concat_channels, global_avg_pool, reshape, \
     require_rank4, zeros, full
from .graph import METHODS, estimate_stats, degenerate_stats, \
     dagc_aggregate, svga_aggregate, knn_neighbors, knn_aggregate


FFN_EXPANSION = 4
MBCONV_EXPANSION = 4
HEAD_EXPANSION = 4
BN_EPSILON = 1e-5


ConvBN = collections.namedtuple("ConvBN", "conv bn")
GrapherParams = collections.namedtuple("GrapherParams", "cpe w_in dyn_out w_out")
StemParams = collections.namedtuple("StemParams", "conv1 conv2")
HeadParams = collections.namedtuple("HeadParams", "fc1 fc2")


class FFNParams(collections.namedtuple("FFNParams", "w1 w2")):

    __slots__ = ()

    @property
    def expansion(self):
        return self.w1.conv.out_channels // self.w1.conv.in_channels


class MBConvParams(collections.namedtuple("MBConvParams",
                                          "expand dw project")):

    __slots__ = ()

    @property
    def expansion(self):
        return self.expand.conv.out_channels // self.expand.conv.in_channels


##
## Initialisation
##

def init_conv(rng, in_ch, out_ch, kernel=1, stride=1, groups=1, bias=True,
              dtype=None):
    """Uniform in +-1/sqrt(fan_in), weight drawn before bias."""
    fan_in = (in_ch // groups) * kernel * kernel
    bound = 1.0 / np.sqrt(fan_in)
    weight = rng.uniform((out_ch, in_ch // groups, kernel, kernel),
                         -bound, bound, dtype)
    b = rng.uniform((out_ch, ), -bound, bound, dtype) if bias else None
    return ConvParams(weight, b, stride=stride, padding=kernel // 2,
                      groups=groups)


def init_bn(channels, dtype=None, epsilon=BN_EPSILON):
    return BatchNormParams(full((channels, ), 1.0, dtype),
                           zeros((channels, ), dtype),
                           zeros((channels, ), dtype),
                           full((channels, ), 1.0, dtype),
                           epsilon)


def init_conv_bn(rng, in_ch, out_ch, kernel=1, stride=1, groups=1,
                 dtype=None):
    return ConvBN(init_conv(rng, in_ch, out_ch, kernel, stride, groups,
                            dtype=dtype),
                  init_bn(out_ch, dtype))


def init_grapher(rng, channels, cpe=True, dtype=None):
    return GrapherParams(
        cpe=(init_conv(rng, channels, channels, 3, groups=channels,
                       dtype=dtype) if cpe else None),
        w_in=init_conv_bn(rng, channels, channels, dtype=dtype),
        dyn_out=init_conv_bn(rng, 2 * channels, channels, dtype=dtype),
        w_out=init_conv_bn(rng, channels, channels, dtype=dtype))


def init_ffn(rng, channels, expansion=FFN_EXPANSION, dtype=None):
    hidden = expansion * channels
    return FFNParams(init_conv_bn(rng, channels, hidden, dtype=dtype),
                     init_conv_bn(rng, hidden, channels, dtype=dtype))


def init_mbconv(rng, channels, expansion=MBCONV_EXPANSION, dtype=None):
    hidden = expansion * channels
    return MBConvParams(
        init_conv_bn(rng, channels, hidden, dtype=dtype),
        init_conv_bn(rng, hidden, hidden, 3, groups=hidden, dtype=dtype),
        init_conv_bn(rng, hidden, channels, dtype=dtype))


def init_stem(rng, channels, in_ch=3, dtype=None):
    mid = channels // 2
    return StemParams(init_conv_bn(rng, in_ch, mid, 3, stride=2, dtype=dtype),
                      init_conv_bn(rng, mid, channels, 3, stride=2,
                                   dtype=dtype))


def init_downsample(rng, in_ch, out_ch, dtype=None):
    return init_conv_bn(rng, in_ch, out_ch, 3, stride=2, dtype=dtype)


def init_head(rng, channels, classes, expansion=HEAD_EXPANSION, dtype=None):
    if classes < 1:
        raise ConfigurationError("classes must be at least 1, got %r."
                                 % (classes, ))
    hidden = expansion * channels
    return HeadParams(init_conv(rng, channels, hidden, dtype=dtype),
                      init_conv(rng, hidden, classes, dtype=dtype))


def zero_conv_bn(p):
    """Same structure with every conv weight and bias set to zero."""
    conv = p.conv._replace(
        weight=zeros(p.conv.weight.shape, p.conv.weight.dtype),
        bias=(None if p.conv.bias is None
              else zeros(p.conv.bias.shape, p.conv.bias.dtype)))
    return p._replace(conv=conv)


##
## Blocks
##

def _require_channels(x, channels, what):
    if x.shape[1] != channels:
        raise DimensionError("%s: input has %d channels, expected %d "
                             "(channel axis)." % (what, x.shape[1], channels),
                             axis="channel")


def conv_bn(x, p):
    return batch_norm(conv2d(x, p.conv), p.bn)


def cpe(x, p):
    require_rank4(x)
    _require_channels(x, p.in_channels, "cpe")
    return add(x, depthwise_conv2d(x, p))


def graph_aggregate(x, k, graph="dagc", plan=None):
    """``x_final`` of the chosen construction, as used inside a block."""
    n, _c, h, w = x.shape
    if graph == "svga":
        return svga_aggregate(x, k)
    if graph == "knn":
        k = min(k, h * w - 1)
        if k < 1:
            return zeros(x.shape, x.dtype)
        return knn_aggregate(x, knn_neighbors(x, k))
    if graph != "dagc":
        raise ConfigurationError("Unknown graph method %r (expected one of "
                                 "%s)." % (graph, ", ".join(METHODS)))
    if h < 2 or w < 2:
        stats = degenerate_stats(n)
    else:
        stats = estimate_stats(x)
    masks = None
    if plan is not None and plan.replaying:
        masks = plan.next_masks()
    x_final, trace = dagc_aggregate(
        x, k, stats, masks=masks,
        track_margins=plan is not None and plan.recording)
    if plan is not None:
        plan.observe(trace)
    return x_final


def dyn_conv(x, k, p, graph="dagc", plan=None):
    require_rank4(x)
    _require_channels(x, p.conv.in_channels // 2, "dyn_conv")
    x_final = graph_aggregate(x, k, graph, plan)
    return conv_bn(concat_channels(x, x_final), p)


def dynamic_grapher(x, k, p, graph="dagc", plan=None):
    require_rank4(x)
    _require_channels(x, p.w_in.conv.in_channels, "dynamic_grapher")
    h = cpe(x, p.cpe) if p.cpe is not None else x
    h = conv_bn(h, p.w_in)
    h = gelu(dyn_conv(h, k, p.dyn_out, graph, plan))
    return add(conv_bn(h, p.w_out), x)


def ffn(y, p):
    require_rank4(y)
    _require_channels(y, p.w1.conv.in_channels, "ffn")
    return add(conv_bn(gelu(conv_bn(y, p.w1)), p.w2), y)


def dagc_block(x, k, grapher, ffn_params, graph="dagc", plan=None):
    return ffn(dynamic_grapher(x, k, grapher, graph, plan), ffn_params)


def mbconv(x, p):
    require_rank4(x)
    if p.expand.conv.in_channels != p.project.conv.out_channels:
        raise ConfigurationError(
            "mbconv: expand takes %d channels but project returns %d."
            % (p.expand.conv.in_channels, p.project.conv.out_channels))
    _require_channels(x, p.expand.conv.in_channels, "mbconv")
    h = gelu(conv_bn(x, p.expand))
    h = gelu(conv_bn(h, p.dw))
    return add(x, conv_bn(h, p.project))


def stem(image, p):
    require_rank4(image, "image")
    _require_channels(image, p.conv1.conv.in_channels, "stem")
    for label, extent in (("height", image.shape[2]),
                          ("width", image.shape[3])):
        if extent % 4:
            raise DimensionError("stem: %s %d is not divisible by 4."
                                 % (label, extent), axis=label)
    return gelu(conv_bn(gelu(conv_bn(image, p.conv1)), p.conv2))


def downsample(x, p):
    require_rank4(x)
    for label, extent in (("height", x.shape[2]), ("width", x.shape[3])):
        if extent % 2:
            raise DimensionError("downsample: %s %d is odd."
                                 % (label, extent), axis=label)
    return conv_bn(x, p)


def head(x, p, classes):
    require_rank4(x)
    if classes < 1:
        raise ConfigurationError("classes must be at least 1, got %r."
                                 % (classes, ))
    if p.fc2.out_channels != classes:
        raise ConfigurationError("head produces %d classes, %d requested."
                                 % (p.fc2.out_channels, classes))
    h = gelu(conv2d(global_avg_pool(x), p.fc1))
    return reshape(conv2d(h, p.fc2), (x.shape[0], classes))
