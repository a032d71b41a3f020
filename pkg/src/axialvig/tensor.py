# -*- coding: utf-8 -*-
"""Dense NCHW tensors, the primitive operations and a reverse-mode tape.

Every operation of the package is composed from the primitives registered
here.  A primitive is a forward function returning ``(output, saved)`` and
an adjoint returning one gradient per input.  When one of the operands was
produced on a ``GradTape`` the application is recorded, so that
``GradTape.backward`` can walk it back and ``GradTape.replay`` can run it
again.

"""

from __future__ import print_function

import collections

import numpy as np
from scipy import special

from .common import DimensionError, ConfigurationError, TapeError


DTYPES = collections.OrderedDict([
    ("f32", np.dtype(np.float32)),
    ("f64", np.dtype(np.float64)),
])
DEFAULT_DTYPE = "f32"

SPATIAL_AXES = {"height": 2, "width": 3}
AXIS_NAMES = ("batch", "channel", "height", "width")

ELEMENTWISE_OPS = ("max", "sub", "mul", "add")

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_dtype(dtype=None):
    if dtype is None:
        return DTYPES[DEFAULT_DTYPE]
    if isinstance(dtype, str):
        try:
            return DTYPES[dtype]
        except KeyError:
            raise ConfigurationError(
                "Unsupported dtype %r (expected one of %s)."
                % (dtype, ", ".join(DTYPES)))
    dtype = np.dtype(dtype)
    if dtype not in DTYPES.values():
        raise ConfigurationError("Unsupported dtype %r." % (dtype.name, ))
    return dtype


def dtype_name(dtype):
    dtype = np.dtype(dtype)
    for label, value in DTYPES.items():
        if value == dtype:
            return label
    raise ConfigurationError("Unsupported dtype %r." % (dtype.name, ))


def axis_name(axis, rank=4):
    if rank == 4:
        return AXIS_NAMES[axis]
    return "axis %d" % axis


##
## FeatureTensor
##

def _freeze(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_extents(shape):
    if not 1 <= len(shape) <= 4:
        raise DimensionError("Tensors have rank 1 to 4, got shape %s."
                             % (tuple(shape), ))
    for axis, extent in enumerate(shape):
        if extent < 1:
            raise DimensionError(
                "Extent of %s must be at least 1, got shape %s."
                % (axis_name(axis, len(shape)), tuple(shape)),
                axis=axis_name(axis, len(shape)))


class FeatureTensor(object):
    """Immutable row-major array of rank 1 to 4 in f32 or f64.

    Rank-4 tensors are laid out batch, channel, height, width:

        >>> t = FeatureTensor(np.arange(24).reshape(1, 2, 3, 4), dtype="f64")
        >>> t.shape, t.dtype_name
        ((1, 2, 3, 4), 'f64')
        >>> float(t.data.ravel()[((0 * 2 + 1) * 3 + 2) * 4 + 3])
        23.0

    """

    __slots__ = ("_data", "_node")

    def __init__(self, data, dtype=None):
        if dtype is None and isinstance(data, (np.ndarray, FeatureTensor)):
            source = data.data if isinstance(data, FeatureTensor) else data
            if source.dtype in DTYPES.values():
                dtype = source.dtype
        if isinstance(data, FeatureTensor):
            data = data.data
        arr = np.array(data, dtype=as_dtype(dtype), order="C")
        _check_extents(arr.shape)
        self._data = _freeze(arr)
        self._node = None

    @classmethod
    def _wrap(cls, arr, node=None):
        self = cls.__new__(cls)
        self._data = _freeze(arr)
        self._node = node
        return self

    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def rank(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    @property
    def dtype(self):
        return self._data.dtype

    @property
    def dtype_name(self):
        return dtype_name(self._data.dtype)

    @property
    def on_tape(self):
        return self._node is not None

    def numpy(self):
        return np.array(self._data)

    def item(self):
        if self.size != 1:
            raise DimensionError("item() needs a single element, got shape %s."
                                 % (self.shape, ))
        return self._data.reshape(-1)[0].item()

    def astype(self, dtype):
        return FeatureTensor(self._data, dtype=dtype)

    def __repr__(self):
        return "<FeatureTensor shape=%s dtype=%s%s>" % (
            self.shape, self.dtype_name, " taped" if self.on_tape else "")


def zeros(shape, dtype=None):
    return FeatureTensor._wrap(np.zeros(shape, dtype=as_dtype(dtype)))


def full(shape, value, dtype=None):
    return FeatureTensor._wrap(np.full(shape, value, dtype=as_dtype(dtype)))


def bit_equal(a, b):
    """True when both tensors hold the same dtype, shape and bytes."""
    a = a.data if isinstance(a, FeatureTensor) else np.asarray(a)
    b = b.data if isinstance(b, FeatureTensor) else np.asarray(b)
    return (a.dtype == b.dtype and a.shape == b.shape and
            a.tobytes() == b.tobytes())


def require_rank4(x, what="input"):
    if x.rank != 4:
        raise DimensionError("%s must be rank-4 (N, C, H, W), got shape %s."
                             % (what, x.shape))


##
## Parameter containers
##

class ConvParams(collections.namedtuple(
        "ConvParams", "weight bias stride padding groups")):
    """Weight ``(out_ch, in_ch / groups, kh, kw)`` plus optional bias."""

    __slots__ = ()

    def __new__(cls, weight, bias=None, stride=1, padding=0, groups=1):
        return super(ConvParams, cls).__new__(
            cls, weight, bias, stride, padding, groups)

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self):
        return tuple(self.weight.shape[2:])

    def validate(self):
        if self.weight.rank != 4:
            raise DimensionError("Convolution weight must be rank-4, got %s."
                                 % (self.weight.shape, ))
        if self.groups < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigurationError(
                "Invalid convolution settings: stride=%r padding=%r groups=%r."
                % (self.stride, self.padding, self.groups))
        if self.out_channels % self.groups:
            raise ConfigurationError(
                "Output channels %d are not divisible by groups %d."
                % (self.out_channels, self.groups))
        if self.bias is not None and self.bias.shape != (self.out_channels, ):
            raise DimensionError(
                "Bias length %s does not match %d output channels."
                % (self.bias.shape, self.out_channels), axis="channel")


class BatchNormParams(collections.namedtuple(
        "BatchNormParams", "gamma beta running_mean running_var epsilon")):

    __slots__ = ()

    def __new__(cls, gamma, beta, running_mean, running_var, epsilon=1e-5):
        return super(BatchNormParams, cls).__new__(
            cls, gamma, beta, running_mean, running_var, epsilon)

    @property
    def channels(self):
        return self.gamma.shape[0]

    def validate(self):
        shapes = set(t.shape for t in (self.gamma, self.beta,
                                       self.running_mean, self.running_var))
        if len(shapes) != 1 or len(shapes.pop()) != 1:
            raise DimensionError(
                "Batch norm vectors must be rank-1 of one length.",
                axis="channel")
        if (self.running_var.data < 0).any():
            raise ConfigurationError("Batch norm running_var is negative.")


BUFFER_SUFFIXES = ("running_mean", "running_var")


def is_buffer(name):
    """Non-learnable state, stored with the weights but never counted."""
    return name.rsplit(".", 1)[-1] in BUFFER_SUFFIXES


def _join(prefix, label):
    return "%s.%s" % (prefix, label) if prefix else label


def iter_tensors(tree, prefix=""):
    """Yield ``(name, tensor)`` pairs depth-first in field order.

        >>> p = ConvParams(zeros((2, 1, 3, 3)), zeros((2, )), groups=2)
        >>> [name for name, _t in iter_tensors(p, "cpe")]
        ['cpe.weight', 'cpe.bias']

    """
    if isinstance(tree, FeatureTensor):
        yield prefix, tree
    elif hasattr(tree, "_fields"):
        for field in tree._fields:
            for item in iter_tensors(getattr(tree, field), _join(prefix, field)):
                yield item
    elif isinstance(tree, (list, tuple)):
        for idx, sub in enumerate(tree):
            for item in iter_tensors(sub, _join(prefix, str(idx))):
                yield item


def map_tensors(tree, fun, prefix=""):
    """Rebuild ``tree`` with every tensor replaced by ``fun(name, tensor)``."""
    if isinstance(tree, FeatureTensor):
        return fun(prefix, tree)
    if hasattr(tree, "_fields"):
        return tree._replace(**dict(
            (field, map_tensors(getattr(tree, field), fun,
                                _join(prefix, field)))
            for field in tree._fields))
    if isinstance(tree, (list, tuple)):
        return type(tree)(map_tensors(sub, fun, _join(prefix, str(idx)))
                          for idx, sub in enumerate(tree))
    return tree


def count_elements(tree, buffers=False):
    return sum(t.size for name, t in iter_tensors(tree)
               if buffers or not is_buffer(name))


##
## Primitives
##

class Primitive(object):

    def __init__(self, name, forward):
        self.name = name
        self.forward = forward
        self.adjoint = None

    def defadjoint(self, fun):
        self.adjoint = fun
        return fun

    def __repr__(self):
        return "<Primitive %s>" % self.name


PRIMITIVES = collections.OrderedDict()


def primitive(name):
    def decorator(forward):
        prim = Primitive(name, forward)
        PRIMITIVES[name] = prim
        return prim
    return decorator


def _common_tape(inputs):
    tapes = []
    for t in inputs:
        if t._node is not None and all(t._node.tape is not o for o in tapes):
            tapes.append(t._node.tape)
    if len(tapes) > 1:
        raise TapeError("Operands were recorded on different tapes.")
    return tapes[0] if tapes else None


def _apply(prim, inputs, **attrs):
    out, saved = prim.forward(*[t._data for t in inputs], **attrs)
    tape = _common_tape(inputs)
    node = None
    if tape is not None:
        node = tape._record(prim, inputs, out, saved, attrs)
    return FeatureTensor._wrap(out, node)


def _windows(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, ho, wo, kh, kw),
        (sn, sc, stride * sh, stride * sw, sh, sw),
        writeable=False)


def _pad(x, padding):
    if not padding:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _out_extent(extent, kernel, stride, padding):
    return (extent + 2 * padding - kernel) // stride + 1


def _tap(xp, i, j, stride, ho, wo):
    return xp[:, :, i:i + stride * (ho - 1) + 1:stride,
              j:j + stride * (wo - 1) + 1:stride]


@primitive("conv2d")
def _conv2d(x, w, *bias, **attrs):
    stride, padding, groups = attrs["stride"], attrs["padding"], attrs["groups"]
    n, c, h, wd = x.shape
    out_ch, cg, kh, kw = w.shape
    ho = _out_extent(h, kh, stride, padding)
    wo = _out_extent(wd, kw, stride, padding)
    xp = _pad(x, padding)
    if groups == 1:
        win = _windows(xp, kh, kw, stride, ho, wo)
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
        out = out.transpose(0, 3, 1, 2)
    elif groups == c == out_ch:
        ## depthwise: one kernel per channel, accumulated tap by tap
        out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                out += (_tap(xp, i, j, stride, ho, wo) *
                        w[:, 0, i, j][None, :, None, None])
    else:
        win = _windows(xp, kh, kw, stride, ho, wo).reshape(
            n, groups, cg, ho, wo, kh, kw)
        wg = w.reshape(groups, out_ch // groups, cg, kh, kw)
        out = np.einsum("ngiyxkl,goikl->ngoyx", win, wg, optimize=True)
        out = out.reshape(n, out_ch, ho, wo)
    if bias:
        out = out + bias[0][None, :, None, None]
    return np.ascontiguousarray(out), (ho, wo)


@_conv2d.defadjoint
def _conv2d_adjoint(saved, g, x, w, *bias, **attrs):
    stride, padding, groups = attrs["stride"], attrs["padding"], attrs["groups"]
    ho, wo = saved
    n, c, h, wd = x.shape
    out_ch, cg, kh, kw = w.shape
    og = out_ch // groups
    xp = _pad(x, padding)
    gxp = np.zeros(xp.shape, dtype=np.result_type(g, w))
    gw = np.zeros(w.shape, dtype=np.result_type(g, x))
    g_grouped = g.reshape(n, groups, og, ho, wo)
    for i in range(kh):
        for j in range(kw):
            tap = _tap(xp, i, j, stride, ho, wo)
            tap_grouped = tap.reshape(n, groups, cg, ho, wo)
            gw[:, :, i, j] = np.einsum(
                "ngoyx,ngiyx->goi", g_grouped, tap_grouped,
                optimize=True).reshape(out_ch, cg)
            contrib = np.einsum(
                "ngoyx,goi->ngiyx", g_grouped,
                w[:, :, i, j].reshape(groups, og, cg),
                optimize=True).reshape(n, c, ho, wo)
            gxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride] += contrib
    gx = gxp[:, :, padding:padding + h, padding:padding + wd]
    grads = [np.ascontiguousarray(gx), gw]
    if bias:
        grads.append(g.sum(axis=(0, 2, 3)))
    return grads


def _bn_broadcast(v):
    return v[None, :, None, None]


@primitive("batch_norm")
def _batch_norm(x, gamma, beta, mean, var, **attrs):
    inv = 1.0 / np.sqrt(var + attrs["epsilon"])
    scale = gamma * inv
    out = (x - _bn_broadcast(mean)) * _bn_broadcast(scale) + _bn_broadcast(beta)
    return out.astype(x.dtype, copy=False), (inv, scale)


@_batch_norm.defadjoint
def _batch_norm_adjoint(saved, g, x, gamma, beta, mean, var, **attrs):
    inv, scale = saved
    centered = x - _bn_broadcast(mean)
    axes = (0, 2, 3)
    g_sum = g.sum(axis=axes)
    g_centered = (g * centered).sum(axis=axes)
    return [
        g * _bn_broadcast(scale),
        g_centered * inv,
        g_sum,
        -g_sum * scale,
        g_centered * gamma * -0.5 * inv ** 3,
    ]


@primitive("gelu")
def _gelu(x):
    cdf = 0.5 * (1.0 + special.erf(x / _SQRT_2))
    return (x * cdf).astype(x.dtype, copy=False), (cdf, )


@_gelu.defadjoint
def _gelu_adjoint(saved, g, x):
    cdf, = saved
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return [g * (cdf + x * pdf)]


@primitive("roll")
def _roll(x, **attrs):
    return np.roll(x, attrs["shift"], axis=attrs["axis"]), None


@_roll.defadjoint
def _roll_adjoint(saved, g, x, **attrs):
    return [np.roll(g, -attrs["shift"], axis=attrs["axis"])]


_ELEMENTWISE_FORWARD = {
    "max": np.maximum,
    "sub": np.subtract,
    "mul": np.multiply,
    "add": np.add,
}


@primitive("elementwise")
def _elementwise(a, b, **attrs):
    return _ELEMENTWISE_FORWARD[attrs["op"]](a, b), None


@_elementwise.defadjoint
def _elementwise_adjoint(saved, g, a, b, **attrs):
    op = attrs["op"]
    if op == "add":
        ga, gb = g, g
    elif op == "sub":
        ga, gb = g, -g
    elif op == "mul":
        ga, gb = g * b, g * a
    else:
        ## ties route the adjoint to the first operand
        first = a >= b
        ga, gb = g * first, g * ~first
    if gb.shape != b.shape:
        gb = gb.sum(axis=1, keepdims=True)
    return [ga, gb]


@primitive("concat_channels")
def _concat_channels(a, b):
    return np.concatenate([a, b], axis=1), a.shape[1]


@_concat_channels.defadjoint
def _concat_channels_adjoint(saved, g, a, b):
    return [g[:, :saved], g[:, saved:]]


@primitive("channel_slice")
def _channel_slice(x, **attrs):
    return np.array(x[:, attrs["start"]:attrs["stop"]]), None


@_channel_slice.defadjoint
def _channel_slice_adjoint(saved, g, x, **attrs):
    gx = np.zeros(x.shape, dtype=g.dtype)
    gx[:, attrs["start"]:attrs["stop"]] = g
    return [gx]


@primitive("global_avg_pool")
def _global_avg_pool(x):
    return x.mean(axis=(2, 3), keepdims=True), None


@_global_avg_pool.defadjoint
def _global_avg_pool_adjoint(saved, g, x):
    return [np.broadcast_to(g / (x.shape[2] * x.shape[3]), x.shape).copy()]


@primitive("reduce")
def _reduce(x, **attrs):
    value = x.sum() if attrs["op"] == "sum" else x.mean()
    return np.asarray(value, dtype=x.dtype).reshape(1), None


@_reduce.defadjoint
def _reduce_adjoint(saved, g, x, **attrs):
    value = g[0] if attrs["op"] == "sum" else g[0] / x.size
    return [np.full(x.shape, value, dtype=g.dtype)]


@primitive("reshape")
def _reshape(x, **attrs):
    return x.reshape(attrs["shape"]), None


@_reshape.defadjoint
def _reshape_adjoint(saved, g, x, **attrs):
    return [g.reshape(x.shape)]


def _quadrant_swap(x):
    h, w = x.shape[2], x.shape[3]
    qh, qw = h // 2, w // 2
    out = np.array(x)
    top, bottom = slice(0, qh), slice(h - qh, h)
    left, right = slice(0, qw), slice(w - qw, w)
    out[:, :, top, left] = x[:, :, bottom, right]
    out[:, :, bottom, right] = x[:, :, top, left]
    out[:, :, top, right] = x[:, :, bottom, left]
    out[:, :, bottom, left] = x[:, :, top, right]
    return out


@primitive("quadrant_flip")
def _quadrant_flip(x):
    return _quadrant_swap(x), None


@_quadrant_flip.defadjoint
def _quadrant_flip_adjoint(saved, g, x):
    ## the swap is an involution, so it is its own transpose
    return [_quadrant_swap(g)]


@primitive("gather_max_relative")
def _gather_max_relative(x, **attrs):
    table = attrs["table"]
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    batch = np.arange(n)[:, None, None]
    ## (n, c, nodes, k) neighbour features minus the node itself
    rel = flat[batch, :, table].transpose(0, 3, 1, 2) - flat[:, :, :, None]
    arg = rel.argmax(axis=3)
    out = np.take_along_axis(rel, arg[..., None], axis=3)[..., 0]
    return out.reshape(n, c, h, w), arg


@_gather_max_relative.defadjoint
def _gather_max_relative_adjoint(saved, g, x, **attrs):
    table = attrs["table"]
    n, c, h, w = x.shape
    gflat = g.reshape(n, c, h * w)
    chosen = np.take_along_axis(
        np.broadcast_to(table[:, None, :, :], (n, c) + table.shape[1:]),
        saved[..., None], axis=3)[..., 0]
    gx = -gflat.copy()
    for b in range(n):
        for ch in range(c):
            np.add.at(gx[b, ch], chosen[b, ch], gflat[b, ch])
    return [gx.reshape(x.shape)]


##
## Public operations
##

def conv2d(x, p):
    require_rank4(x)
    p.validate()
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise DimensionError(
            "conv2d: input has %d channels, weight expects %d (channel axis)."
            % (c, p.in_channels), axis="channel")
    if p.weight.dtype != x.dtype:
        raise DimensionError("conv2d: input is %s but weight is %s."
                             % (x.dtype_name, p.weight.dtype_name))
    kh, kw = p.kernel_size
    for label, extent, kernel in (("height", h, kh), ("width", w, kw)):
        if _out_extent(extent, kernel, p.stride, p.padding) < 1:
            raise DimensionError(
                "conv2d: %s %d too small for kernel %d with padding %d."
                % (label, extent, kernel, p.padding), axis=label)
    inputs = [x, p.weight] + ([p.bias] if p.bias is not None else [])
    return _apply(_conv2d, inputs, stride=p.stride, padding=p.padding,
                  groups=p.groups)


def depthwise_conv2d(x, p):
    require_rank4(x)
    if p.groups != x.shape[1] or p.weight.shape[:2] != (x.shape[1], 1):
        raise ConfigurationError(
            "depthwise_conv2d: groups=%d and weight %s do not match %d "
            "channels." % (p.groups, p.weight.shape, x.shape[1]))
    return conv2d(x, p)


def batch_norm(x, p):
    require_rank4(x)
    p.validate()
    if x.shape[1] != p.channels:
        raise DimensionError(
            "batch_norm: input has %d channels, parameters have %d "
            "(channel axis)." % (x.shape[1], p.channels), axis="channel")
    return _apply(_batch_norm, [x, p.gamma, p.beta, p.running_mean,
                                p.running_var], epsilon=p.epsilon)


def gelu(x):
    """Exact GeLU, ``x * Phi(x)``.

        >>> round(gelu(FeatureTensor([1.0], dtype="f64")).item(), 10)
        0.8413447461

    """
    return _apply(_gelu, [x])


def roll(x, shift, axis):
    """Circular shift: output index ``i`` takes input ``(i - shift) % n``.

        >>> roll(FeatureTensor(np.arange(4.).reshape(1, 1, 4, 1)), 1,
        ...      "height").data.ravel().tolist()
        [3.0, 0.0, 1.0, 2.0]

    """
    require_rank4(x)
    if axis not in SPATIAL_AXES:
        raise ConfigurationError("roll: axis must be 'height' or 'width', "
                                 "got %r." % (axis, ))
    return _apply(_roll, [x], shift=int(shift), axis=SPATIAL_AXES[axis])


def elementwise(op, a, b):
    if op not in ELEMENTWISE_OPS:
        raise ConfigurationError("Unknown elementwise op %r." % (op, ))
    if a.shape != b.shape:
        broadcast = (a.rank == 4 and b.rank == 4 and b.shape[1] == 1 and
                     (a.shape[0], a.shape[2], a.shape[3]) ==
                     (b.shape[0], b.shape[2], b.shape[3]))
        if not broadcast:
            axis = next((axis_name(i, a.rank)
                         for i, (ea, eb) in enumerate(zip(a.shape, b.shape))
                         if ea != eb), "rank")
            raise DimensionError(
                "%s: shapes %s and %s are not broadcastable (%s axis)."
                % (op, a.shape, b.shape, axis), axis=axis)
    return _apply(_elementwise, [a, b], op=op)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def maximum(a, b):
    return elementwise("max", a, b)


def concat_channels(a, b):
    require_rank4(a)
    require_rank4(b)
    for axis in (0, 2, 3):
        if a.shape[axis] != b.shape[axis]:
            raise DimensionError(
                "concat_channels: %s axis differs (%d vs %d)."
                % (AXIS_NAMES[axis], a.shape[axis], b.shape[axis]),
                axis=AXIS_NAMES[axis])
    return _apply(_concat_channels, [a, b])


def channel_slice(x, start, stop):
    require_rank4(x)
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError("channel_slice: [%d:%d] outside %d channels."
                             % (start, stop, x.shape[1]), axis="channel")
    return _apply(_channel_slice, [x], start=start, stop=stop)


def global_avg_pool(x):
    require_rank4(x)
    return _apply(_global_avg_pool, [x])


def reduce_sum(x):
    return _apply(_reduce, [x], op="sum")


def reduce_mean(x):
    return _apply(_reduce, [x], op="mean")


def reshape(x, shape):
    shape = tuple(int(e) for e in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError("reshape: cannot view %s as %s."
                             % (x.shape, shape))
    _check_extents(shape)
    return _apply(_reshape, [x], shape=shape)


def quadrant_flip(x):
    """Swap diagonally opposite quadrants.

        >>> x = FeatureTensor([[[[1., 2.], [3., 4.]]]])
        >>> quadrant_flip(x).data[0, 0].tolist()
        [[4.0, 3.0], [2.0, 1.0]]

    """
    require_rank4(x)
    for label, extent in (("height", x.shape[2]), ("width", x.shape[3])):
        if extent < 2:
            raise DimensionError(
                "quadrant_flip: %s must be at least 2, got %d."
                % (label, extent), axis=label)
    return _apply(_quadrant_flip, [x])


def gather_max_relative(x, table):
    """Per node and channel, max over ``table`` neighbours of ``x_j - x_i``."""
    require_rank4(x)
    table = np.asarray(table)
    n, _c, h, w = x.shape
    if table.ndim != 3 or table.shape[:2] != (n, h * w):
        raise DimensionError(
            "Neighbour table %s does not match %d images of %d nodes."
            % (table.shape, n, h * w), axis="node")
    return _apply(_gather_max_relative, [x], table=table)


##
## Reverse mode
##

class _TapeNode(object):

    __slots__ = ("tape", "index", "prim", "parents", "constants", "attrs",
                 "saved", "value", "name")

    def __init__(self, tape, index, prim, parents, constants, attrs, saved,
                 value, name=None):
        self.tape = tape
        self.index = index
        self.prim = prim
        self.parents = parents
        self.constants = constants
        self.attrs = attrs
        self.saved = saved
        self.value = value
        self.name = name


class GradTape(object):
    """Records primitive applications in topological order.

        >>> tape = GradTape()
        >>> x = tape.watch(FeatureTensor(np.zeros((1, 2, 2, 2)), "f64"), "x")
        >>> grads = tape.backward(reduce_sum(gelu(x)))
        >>> grads["x"].ravel().tolist()
        [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]

    """

    def __init__(self):
        self._nodes = []
        self._leaves = collections.OrderedDict()

    def __len__(self):
        return len(self._nodes)

    @property
    def watched(self):
        return list(self._leaves)

    def watch(self, tensor, name=None):
        name = name or "t%d" % len(self._leaves)
        if name in self._leaves:
            raise TapeError("%r is already watched on this tape." % (name, ))
        node = _TapeNode(self, len(self._nodes), None, [], [], {}, None,
                         tensor.data, name)
        self._nodes.append(node)
        self._leaves[name] = node
        return FeatureTensor._wrap(tensor.data, node)

    def watch_params(self, tree, prefix="", buffers=False):
        return map_tensors(
            tree,
            lambda name, t: t if (is_buffer(name) and not buffers)
            else self.watch(t, name),
            prefix)

    def _record(self, prim, inputs, out, saved, attrs):
        parents, constants = [], []
        for t in inputs:
            if t._node is not None:
                parents.append(t._node)
                constants.append(None)
            else:
                parents.append(None)
                constants.append(t._data)
        node = _TapeNode(self, len(self._nodes), prim, parents, constants,
                         attrs, saved, out)
        self._nodes.append(node)
        return node

    def backward(self, loss):
        """Return ``d(loss)/d(leaf)`` for every watched tensor, in order."""
        node = loss._node
        if node is None or node.tape is not self:
            raise TapeError("The loss was not computed on this tape.")
        if loss.size != 1:
            raise TapeError("The loss must hold a single value, got shape %s."
                            % (loss.shape, ))
        adjoints = {node.index: np.ones_like(node.value)}
        for current in reversed(self._nodes[:node.index + 1]):
            if current.prim is None:
                continue
            g = adjoints.get(current.index)
            if g is None:
                continue
            if current.prim.adjoint is None:
                raise TapeError("No adjoint rule registered for %s."
                                % current.prim.name)
            arrays = [p.value if p is not None else const
                      for p, const in zip(current.parents, current.constants)]
            grads = current.prim.adjoint(current.saved, g, *arrays,
                                         **current.attrs)
            for parent, grad in zip(current.parents, grads):
                if parent is None or grad is None:
                    continue
                if parent.index in adjoints:
                    adjoints[parent.index] = adjoints[parent.index] + grad
                else:
                    adjoints[parent.index] = grad
        grads = collections.OrderedDict()
        for name, leaf in self._leaves.items():
            g = adjoints.get(leaf.index)
            grads[name] = (np.zeros_like(leaf.value) if g is None
                           else np.asarray(g, dtype=leaf.value.dtype))
        return grads

    def replay(self):
        """Run the recorded primitives again and check every output."""
        values = []
        for node in self._nodes:
            if node.prim is None:
                value = node.value
            else:
                arrays = [values[p.index] if p is not None else const
                          for p, const in zip(node.parents, node.constants)]
                value, _saved = node.prim.forward(*arrays, **node.attrs)
                if not bit_equal(value, node.value):
                    raise TapeError(
                        "Replay of %s (node %d) diverged from the recorded "
                        "output." % (node.prim.name, node.index))
            values.append(value)
        return values


def backward(tape, loss):
    return tape.backward(loss)


##
## Deterministic random numbers
##

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class DeterministicRng(object):
    """SplitMix64 stream, vectorised over numpy ``uint64``.

        >>> hex(int(DeterministicRng(0).next_u64(1)[0]))
        '0xe220a8397b1dcdaf'

    """

    def __init__(self, seed=0):
        self.state = int(seed) & _MASK64

    def next_u64(self, count):
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        self.state = (self.state + count * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def random(self, count):
        """Uniform doubles in [0, 1) with 53 bits of resolution."""
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) \
            * (1.0 / (1 << 53))

    def uniform(self, shape, low=-1.0, high=1.0, dtype=None):
        shape = tuple(shape)
        count = int(np.prod(shape))
        values = low + (high - low) * self.random(count)
        return FeatureTensor._wrap(
            values.reshape(shape).astype(as_dtype(dtype)))

    def fork(self):
        """Independent stream seeded from this one."""
        return DeterministicRng(int(self.next_u64(1)[0]))
