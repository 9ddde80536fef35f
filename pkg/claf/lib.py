import csv
import hashlib
import io
import logging
import zlib

import numpy as np

from claf import default_settings as settings

log = logging.getLogger(__name__)


def stream(seed, *keys):
    '''
    Independent random generator for (seed, *keys). Keys are ints or strings;
    the same arguments always give the same stream, whatever ran before.
    '''
    entropy = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode('utf-8'))
        entropy.append(int(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sample_streams(seed, purpose, epoch, indices):
    '''One generator per sample index, for per-sample reproducible noise.'''
    return [stream(seed, purpose, epoch, int(i)) for i in indices]


def array_hash(arrays):
    '''sha1 over names, shapes and raw bytes of a mapping of arrays.'''
    hasher = hashlib.sha1()
    for name in sorted(arrays):
        value = np.ascontiguousarray(arrays[name], dtype=np.float64)
        hasher.update(name.encode('utf-8'))
        hasher.update(repr(value.shape).encode('ascii'))
        hasher.update(value.tobytes())
    return str(hasher.hexdigest())


def file_hash(path):
    BLOCKSIZE = 65536
    hasher = hashlib.sha1()
    with open(path, 'rb') as afile:
        buf = afile.read(BLOCKSIZE)
        while len(buf) > 0:
            hasher.update(buf)
            buf = afile.read(BLOCKSIZE)
    return str(hasher.hexdigest())


def format_float(value):
    if value is None:
        return ''
    return '%.17g' % value


def metrics_csv(records):
    '''Renders metric records as CSV text with a fixed header.'''
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(settings.METRICS_HEADER)
    for record in records:
        writer.writerow([record.stage, record.epoch,
                         format_float(record.loss), format_float(record.lr),
                         format_float(record.clean_acc),
                         format_float(record.robust_acc_eps8),
                         format_float(record.robust_acc_eps16)])
    return out.getvalue()


def add_progress_bar(iterable, caption=None, max_value=None):
    try:
        # Add a progress bar, if it is installed
        import progressbar
        bar = progressbar.ProgressBar(max_value=max_value, widgets=[
            (caption + ' ') if caption else '',
            progressbar.Percentage(), ' ',
            progressbar.Bar(), ' ', progressbar.ETA()])
        return bar(iterable)
    except ImportError:
        return iterable
