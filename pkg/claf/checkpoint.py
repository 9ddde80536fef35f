'''
Binary checkpoint files.

Layout (all little-endian):

    b'CLAF'  u32 version  u32 record count
    per record:  u16 name length, name (utf-8)
                 u8 dtype length, numpy dtype string (e.g. '<f8')
                 u8 ndim, ndim x u32 dims
                 u64 byte count, raw C-order data
    u64 metadata length, metadata (utf-8 JSON)

Nothing may follow the metadata block.
'''
import json
import logging
import os
import shutil
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from claf import default_settings as settings
from claf import model as models
from claf.errors import (CheckpointShapeError, CheckpointVersionError,
                         CorruptCheckpoint, ShapeError)

log = logging.getLogger(__name__)

NETWORK_PREFIXES = ('f', 'g', 'c', 'h')


@dataclass
class Checkpoint:
    tensors: OrderedDict = field(default_factory=OrderedDict)
    metadata: dict = field(default_factory=dict)
    version: int = settings.CHECKPOINT_VERSION

    def group(self, prefix):
        '''Tensors under ``prefix/``, with the prefix stripped.'''
        start = prefix + '/'
        return OrderedDict((k[len(start):], v) for k, v in self.tensors.items()
                           if k.startswith(start))

    def network(self, prefix):
        '''Rebuilds the network stored under ``prefix``, or None.'''
        arch = self.metadata.get('arch', {}).get(prefix)
        if arch is None:
            return None
        arch = arch_from_json(arch)
        try:
            return models.init_params(arch, seed=0).replace(self.group(prefix))
        except ShapeError as e:
            raise CheckpointShapeError('network %r: %s' % (prefix, e))

    @classmethod
    def from_networks(cls, networks, optimizer_state=None, metadata=None):
        tensors = OrderedDict()
        arches = {}
        for prefix, network in networks.items():
            if network is None:
                continue
            arches[prefix] = arch_to_json(network.arch)
            for name, value in network.params.items():
                tensors['%s/%s' % (prefix, name)] = value
        for name, value in (optimizer_state or {}).items():
            tensors['opt/' + name] = value
        metadata = dict(metadata or {})
        metadata['arch'] = arches
        return cls(tensors, metadata)


def arch_to_json(arch):
    if isinstance(arch, models.EncoderArch):
        return {'kind': 'encoder',
                'layers': [[l.kind, l.in_channels, l.out_channels, l.stride]
                           for l in arch.layers],
                'mean': list(arch.mean), 'std': list(arch.std)}
    if isinstance(arch, models.ProjectionArch):
        return {'kind': 'projection',
                'dims': [arch.in_dim, arch.hidden, arch.out_dim]}
    return {'kind': 'classifier', 'dims': [arch.in_dim, arch.num_classes]}


def arch_from_json(data):
    try:
        if data['kind'] == 'encoder':
            return models.EncoderArch(tuple(tuple(l) for l in data['layers']),
                                      tuple(data['mean']), tuple(data['std']))
        if data['kind'] == 'projection':
            return models.ProjectionArch(*data['dims'])
        if data['kind'] == 'classifier':
            return models.ClassifierArch(*data['dims'])
    except (KeyError, TypeError) as e:
        raise CorruptCheckpoint('bad architecture record %r: %s' % (data, e))
    raise CorruptCheckpoint('unknown architecture kind %r' % data.get('kind'))


def encode_checkpoint(checkpoint):
    chunks = [settings.CHECKPOINT_MAGIC,
              struct.pack('<II', checkpoint.version, len(checkpoint.tensors))]
    for name, value in checkpoint.tensors.items():
        value = np.asarray(value, order='C')
        name_bytes = name.encode('utf-8')
        dtype = value.dtype.newbyteorder('<').str.encode('ascii')
        chunks.append(struct.pack('<H', len(name_bytes)) + name_bytes)
        chunks.append(struct.pack('<B', len(dtype)) + dtype)
        chunks.append(struct.pack('<B%dI' % value.ndim, value.ndim, *value.shape))
        raw = value.astype(value.dtype.newbyteorder('<'), copy=False).tobytes()
        chunks.append(struct.pack('<Q', len(raw)) + raw)
    meta = json.dumps(checkpoint.metadata, sort_keys=True).encode('utf-8')
    chunks.append(struct.pack('<Q', len(meta)) + meta)
    return b''.join(chunks)


class _Reader(object):

    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, size, what):
        end = self.offset + size
        if end > len(self.blob):
            raise CorruptCheckpoint('truncated checkpoint: %s needs %d bytes at '
                                    'offset %d, file has %d'
                                    % (what, size, self.offset, len(self.blob)))
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(blob):
    reader = _Reader(blob)
    magic = reader.take(len(settings.CHECKPOINT_MAGIC), 'magic')
    if magic != settings.CHECKPOINT_MAGIC:
        raise CorruptCheckpoint('bad magic %r, not a checkpoint' % magic)
    version, count = reader.unpack('<II', 'header')
    if version != settings.CHECKPOINT_VERSION:
        raise CheckpointVersionError('checkpoint version %d, expected %d'
                                     % (version, settings.CHECKPOINT_VERSION))
    tensors = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack('<H', 'name length')
        name = reader.take(name_len, 'name').decode('utf-8')
        (dtype_len,) = reader.unpack('<B', 'dtype length')
        try:
            dtype = np.dtype(reader.take(dtype_len, 'dtype').decode('ascii'))
        except TypeError as e:
            raise CorruptCheckpoint('record %r has a bad dtype: %s' % (name, e))
        (ndim,) = reader.unpack('<B', 'ndim')
        shape = reader.unpack('<%dI' % ndim, 'shape')
        (nbytes,) = reader.unpack('<Q', 'data length')
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise CheckpointShapeError(
                'record %r declares shape %s (%d bytes) but holds %d bytes'
                % (name, shape, expected, nbytes))
        if name in tensors:
            raise CorruptCheckpoint('record %r appears twice' % name)
        value = np.frombuffer(reader.take(nbytes, name), dtype=dtype)
        tensors[name] = value.reshape(shape).astype(dtype.newbyteorder('='))
    (meta_len,) = reader.unpack('<Q', 'metadata length')
    try:
        metadata = json.loads(reader.take(meta_len, 'metadata').decode('utf-8'))
    except ValueError as e:
        raise CorruptCheckpoint('unreadable metadata: %s' % e)
    if reader.offset != len(blob):
        raise CorruptCheckpoint('%d unexpected bytes after the metadata'
                                % (len(blob) - reader.offset))
    return Checkpoint(tensors, metadata, version)


def save_checkpoint(path, checkpoint):
    '''Writes via a temporary file so a crash never leaves half a checkpoint.'''
    blob = encode_checkpoint(checkpoint)
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.exists(directory):
        os.makedirs(directory)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix='.tmp')
    with os.fdopen(fd, 'wb') as f:
        f.write(blob)
    shutil.move(tmp_path, path)
    log.debug('Saved checkpoint %s (%d tensors, %d bytes)',
              path, len(checkpoint.tensors), len(blob))
    return path


def load_checkpoint(path):
    if not os.path.exists(path):
        raise CorruptCheckpoint('checkpoint not found: %s' % path)
    with open(path, 'rb') as f:
        checkpoint = decode_checkpoint(f.read())
    log.debug('Loaded checkpoint %s (stage %s, epoch %s)', path,
              checkpoint.metadata.get('stage'), checkpoint.metadata.get('epoch'))
    return checkpoint
