"""
    WLW1 weight files.

    Layout, little-endian throughout::

        b'WLW1'
        uint32 config length, config as UTF-8 JSON (sorted keys)
        uint32 blob count
        per blob: uint16 name length, name, uint8 ndim, uint32 dims...,
                  float32 values
        uint32 CRC-32 of everything above
"""
import json
import logging
import struct
import zlib

import numpy as np

from weave_lab.errors import BadMagic, ChecksumMismatch, ConfigMismatch, IoError
from weave_lab.regnet.model import ArchConfig, RegModel, BN_EPS, BN_MOMENTUM

log = logging.getLogger(__name__)

MAGIC = b'WLW1'
FORMAT_VERSION = MAGIC.decode('ascii')


def _config_header(config):
    data = config.to_dict()
    data['batchnorm_eps'] = BN_EPS
    data['batchnorm_momentum'] = BN_MOMENTUM
    return json.dumps(data, sort_keys=True, separators=(',', ':')).encode('utf-8')


def encode(model):
    """ Bytes of a weight file for `model`. """
    parts = [MAGIC]

    header = _config_header(model.config)
    parts.append(struct.pack('<I', len(header)))
    parts.append(header)

    arrays = model.named_arrays()
    parts.append(struct.pack('<I', len(arrays)))
    for name, array in arrays:
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<B', array.ndim))
        parts.append(struct.pack('<%dI' % array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array, dtype='<f4').tobytes())

    body = b''.join(parts)
    return body + struct.pack('<I', zlib.crc32(body) & 0xffffffff)


class _Reader(object):
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, count):
        if self.offset + count > len(self.data):
            raise ChecksumMismatch('Weight file ends unexpectedly')
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def decode(data, config=None, dtype=np.float32):
    """
        Model from weight-file bytes.

        `config`
            Expected `ArchConfig`; a different stored config raises
            `ConfigMismatch`.
    """
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise BadMagic('Not a %s weight file' % FORMAT_VERSION)

    if len(data) < len(MAGIC) + 4:
        raise ChecksumMismatch('Weight file is truncated')
    body, (crc,) = data[:-4], struct.unpack('<I', data[-4:])
    if zlib.crc32(body) & 0xffffffff != crc:
        raise ChecksumMismatch('CRC-32 mismatch')

    reader = _Reader(body)
    reader.take(len(MAGIC))

    (length,) = reader.unpack('<I')
    header = json.loads(reader.take(length).decode('utf-8'))
    header.pop('batchnorm_eps', None)
    header.pop('batchnorm_momentum', None)
    stored = ArchConfig.from_dict(header)

    if config is not None and config != stored:
        raise ConfigMismatch('File holds %r, expected %r' % (stored, config))

    model = RegModel(stored, dtype=dtype)
    expected = model.named_arrays()

    (count,) = reader.unpack('<I')
    if count != len(expected):
        raise ConfigMismatch('File has %d blobs, model needs %d' % (count, len(expected)))

    state = []
    for name, array in expected:
        (name_length,) = reader.unpack('<H')
        stored_name = reader.take(name_length).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack('<%dI' % ndim)

        if stored_name != name or tuple(shape) != array.shape:
            raise ConfigMismatch('Blob %s%r does not match %s%r'
                                 % (stored_name, tuple(shape), name, array.shape))

        size = int(np.prod(shape)) * 4
        values = np.frombuffer(reader.take(size), dtype='<f4').reshape(shape)
        state.append(values.astype(dtype))

    model.set_state(state)
    return model


def save_weights(model, path):
    try:
        with open(path, 'wb') as f:
            f.write(encode(model))
    except (IOError, OSError) as ex:
        raise IoError('Cannot write %s: %s' % (path, ex))
    log.debug('Saved %d parameters to %s', model.param_count(), path)


def load_weights(path, config=None, dtype=np.float32):
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except (IOError, OSError) as ex:
        raise IoError('Cannot read %s: %s' % (path, ex))
    return decode(data, config, dtype)
