__author__ = 'frank'

import json
import logging
import os
import struct

import numpy as np
from attrdict import AttrDict

from .Errors import ContainerError

log = logging.getLogger(__name__)

MAGIC = b'MTGF'
VERSION = 1
SUPPORTED_TAGS = ['features', 'fake']

_HEADER = struct.Struct('<4sH')
_SHAPE = struct.Struct('<IHH')
_LENGTH = struct.Struct('<I')


def write_container(path, tag, matrices, index):
    """
    Write a stack of 2-D matrices plus a JSON metadata index to a versioned MTGF container. The file is written to a
    temporary name first and renamed into place, so readers never observe a partial file.

    Layout (little-endian): ``MTGF`` magic, u16 version, u8 tag length + ASCII tag, u32 count, u16 rows, u16 cols,
    count*rows*cols float32 values, u32 index length, UTF-8 JSON index.

    :param path: Destination file path.
    :param tag: Container tag, ``features`` or ``fake``.
    :param matrices: Array-like of shape (count, rows, cols). Stored as float32.
    :param index: JSON-serialisable dict of metadata.
    """

    if tag not in SUPPORTED_TAGS:
        raise ValueError('Unsupported Container Tag: %s' % tag)

    data = np.ascontiguousarray(matrices, dtype='<f4')
    if data.ndim != 3:
        raise ValueError('Container Matrices Must Be 3-D, Got %d-D' % data.ndim)

    tag_bytes = tag.encode('ascii')
    index_bytes = json.dumps(index, sort_keys=True).encode('utf-8')

    tmp_path = path + '.tmp'
    with open(tmp_path, 'wb') as f:
        f.write(_HEADER.pack(MAGIC, VERSION))
        f.write(struct.pack('<B', len(tag_bytes)))
        f.write(tag_bytes)
        f.write(_SHAPE.pack(data.shape[0], data.shape[1], data.shape[2]))
        f.write(data.tobytes())
        f.write(_LENGTH.pack(len(index_bytes)))
        f.write(index_bytes)

    os.replace(tmp_path, path)
    log.debug('wrote %s container %s (%d matrices)', tag, path, data.shape[0])


def _take(buf, offset, size, what):

    if offset + size > len(buf):
        raise ContainerError('Truncated Container: expected %d bytes for %s' % (size, what), offset)

    return buf[offset:offset + size], offset + size


def read_container(path):
    """
    Read an MTGF container written by write_container().

    :param path: Container file path.
    :return: AttrDict with ``tag``, ``version``, ``matrices`` (float32 array) and ``index`` (use item access for the
        raw dict). ContainerError naming the byte offset for corrupt or truncated files.
    """

    with open(path, 'rb') as f:
        buf = f.read()

    raw, offset = _take(buf, 0, _HEADER.size, 'header')
    magic, version = _HEADER.unpack(raw)

    if magic != MAGIC:
        raise ContainerError('Bad Magic %r' % magic, 0)

    if version != VERSION:
        raise ContainerError('Unsupported Container Version %d' % version, 4)

    raw, offset = _take(buf, offset, 1, 'tag length')
    tag_start = offset
    raw, offset = _take(buf, offset, struct.unpack('<B', raw)[0], 'tag')
    tag = raw.decode('ascii', 'replace')

    if tag not in SUPPORTED_TAGS:
        raise ContainerError('Unknown Container Tag %r' % tag, tag_start)

    raw, offset = _take(buf, offset, _SHAPE.size, 'shape')
    count, rows, cols = _SHAPE.unpack(raw)

    raw, offset = _take(buf, offset, count * rows * cols * 4, 'matrix data')
    matrices = np.frombuffer(raw, dtype='<f4').reshape(count, rows, cols).copy()

    raw, offset = _take(buf, offset, _LENGTH.size, 'index length')
    index_start = offset
    raw, offset = _take(buf, offset, _LENGTH.unpack(raw)[0], 'index')

    try:
        index = json.loads(raw.decode('utf-8'))
    except ValueError as e:
        raise ContainerError('Unparseable Index (%s)' % e, index_start)

    if offset != len(buf):
        raise ContainerError('Trailing Bytes After Index', offset)

    return AttrDict({'tag': tag, 'version': version, 'matrices': matrices, 'index': index})
