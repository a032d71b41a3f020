# -*- coding: utf-8 -*-
"""GVT binary tensor files and the named-tensor container built on them.

A tensor record is::

    b"GVTF" | u32 version (1) | u8 dtype (0=f32, 1=f64) | u8 rank
           | rank x u64 extents | row-major payload

every field little-endian.  A container (weights, traces) is::

    b"GVTC" | u32 version (1) | u32 count
           | count x (u16 name length | utf-8 name | tensor record)

and the sequence of names is its manifest.

"""

from __future__ import print_function

import collections
import io
import struct

import numpy as np

from .common import FormatError
from .tensor import FeatureTensor


TENSOR_MAGIC = b"GVTF"
CONTAINER_MAGIC = b"GVTC"
VERSION = 1

DTYPE_CODES = collections.OrderedDict([
    (0, np.dtype("<f4")),
    (1, np.dtype("<f8")),
])

_HEADER = struct.Struct("<4sIBB")
_EXTENT = struct.Struct("<Q")
_CONTAINER_HEADER = struct.Struct("<4sII")
_NAME_LENGTH = struct.Struct("<H")


def _dtype_code(dtype):
    for code, value in DTYPE_CODES.items():
        if value.newbyteorder("=") == np.dtype(dtype).newbyteorder("="):
            return code
    raise FormatError("Cannot store dtype %r in GVT." % (np.dtype(dtype).name, ))


def _read_exact(stream, size, what, name=None):
    chunk = stream.read(size)
    if len(chunk) != size:
        raise FormatError(
            "Truncated GVT data while reading %s%s (wanted %d bytes, got %d)."
            % (what, " of %r" % name if name else "", size, len(chunk)),
            name=name)
    return chunk


##
## Single tensor records
##

def write_record(stream, tensor):
    data = tensor.data if isinstance(tensor, FeatureTensor) else np.asarray(tensor)
    code = _dtype_code(data.dtype)
    stream.write(_HEADER.pack(TENSOR_MAGIC, VERSION, code, data.ndim))
    for extent in data.shape:
        stream.write(_EXTENT.pack(extent))
    stream.write(np.ascontiguousarray(data, dtype=DTYPE_CODES[code]).tobytes())


def read_record(stream, name=None):
    magic, version, code, rank = _HEADER.unpack(
        _read_exact(stream, _HEADER.size, "the header", name))
    if magic != TENSOR_MAGIC:
        raise FormatError("Bad GVT magic %r%s." % (
            magic, " for %r" % name if name else ""), name=name)
    if version != VERSION:
        raise FormatError("Unsupported GVT version %d." % version, name=name)
    if code not in DTYPE_CODES:
        raise FormatError("Unknown GVT dtype code %d." % code, name=name)
    if not 1 <= rank <= 4:
        raise FormatError("GVT rank %d outside 1..4." % rank, name=name)
    shape = tuple(
        _EXTENT.unpack(_read_exact(stream, _EXTENT.size, "the extents", name))[0]
        for _ in range(rank))
    if 0 in shape:
        raise FormatError("GVT extents %r must all be at least 1." % (shape, ),
                          name=name)
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape))
    payload = _read_exact(stream, count * dtype.itemsize, "the payload", name)
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return FeatureTensor(data.astype(dtype.newbyteorder("=")))


def encode_tensor(tensor):
    """Bytes of a single tensor record.

        >>> blob = encode_tensor(FeatureTensor([1.0, 2.0], dtype="f32"))
        >>> blob[:4], len(blob)
        (b'GVTF', 26)

    """
    stream = io.BytesIO()
    write_record(stream, tensor)
    return stream.getvalue()


def decode_tensor(blob):
    stream = io.BytesIO(blob)
    tensor = read_record(stream)
    if stream.read(1):
        raise FormatError("Trailing bytes after the GVT tensor.")
    return tensor


def save_tensor(path, tensor):
    with open(path, "wb") as f:
        write_record(f, tensor)


def load_tensor(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except (IOError, OSError) as e:
        raise FormatError("Cannot read GVT file %r: %s" % (path, e.strerror))
    return decode_tensor(blob)


##
## Containers
##

def write_container(stream, named_tensors):
    items = list(named_tensors.items()
                 if hasattr(named_tensors, "items") else named_tensors)
    stream.write(_CONTAINER_HEADER.pack(CONTAINER_MAGIC, VERSION, len(items)))
    for name, tensor in items:
        encoded = name.encode("utf-8")
        stream.write(_NAME_LENGTH.pack(len(encoded)))
        stream.write(encoded)
        write_record(stream, tensor)


def read_container(stream):
    """Read a whole container into an ordered ``name -> tensor`` mapping.

    Nothing is returned unless every record decodes, so a truncated file
    never yields a partial manifest.

    """
    magic, version, count = _CONTAINER_HEADER.unpack(
        _read_exact(stream, _CONTAINER_HEADER.size, "the container header"))
    if magic != CONTAINER_MAGIC:
        raise FormatError("Bad GVT container magic %r." % (magic, ))
    if version != VERSION:
        raise FormatError("Unsupported GVT container version %d." % version)
    tensors = collections.OrderedDict()
    for idx in range(count):
        length, = _NAME_LENGTH.unpack(_read_exact(
            stream, _NAME_LENGTH.size, "the name of entry %d" % idx))
        name = _read_exact(stream, length, "the name of entry %d" % idx)
        name = name.decode("utf-8")
        if name in tensors:
            raise FormatError("Duplicate entry %r in GVT container." % name,
                              name=name)
        tensors[name] = read_record(stream, name)
    if stream.read(1):
        raise FormatError("Trailing bytes after %d container entries." % count)
    return tensors


def save_container(path, named_tensors):
    with open(path, "wb") as f:
        write_container(f, named_tensors)


def load_container(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except (IOError, OSError) as e:
        raise FormatError("Cannot read GVT container %r: %s"
                          % (path, e.strerror))
    return read_container(io.BytesIO(blob))


def manifest(named_tensors):
    """``[(name, shape, dtype name), ...]`` in storage order."""
    return [(name, t.shape, t.dtype_name)
            for name, t in named_tensors.items()]
