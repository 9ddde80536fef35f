'''
CIFAR-10 binary records, stochastic augmentation and the multiview batches
consumed by the contrastive loss.

A record is 1 label byte followed by 3072 pixel bytes: the R plane, then G,
then B, each 32x32 row-major. Pixels are kept in [0, 1]; per-channel
normalization happens inside the encoder.
'''
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from claf import default_settings as settings
from claf.errors import (BatchError, ConfigError, DataFormatError,
                         DatasetMissing)
from claf.lib import stream

log = logging.getLogger(__name__)

IMAGE_SHAPE = (3, 32, 32)
PIXEL_BYTES = 3 * 32 * 32
RECORD_BYTES = PIXEL_BYTES + 1
NUM_LABELS = 10

AUG1, AUG2, ADVERSARIAL = 'aug1', 'aug2', 'adversarial'

# ITU-R 601 luma weights, as used by the usual grayscale conversions
_LUMA = np.array([0.299, 0.587, 0.114]).reshape(3, 1, 1)


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray
    label: int


@dataclass(frozen=True)
class ImageSet:
    '''A stack of images (n, 3, H, W) in [0, 1] with dense labels.'''
    images: np.ndarray
    labels: np.ndarray
    classes: tuple = tuple(range(NUM_LABELS))

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, index):
        return LabeledImage(self.images[index], int(self.labels[index]))

    @property
    def num_classes(self):
        return len(self.classes)

    def subset(self, indices):
        indices = np.asarray(indices)
        return replace(self, images=self.images[indices],
                       labels=self.labels[indices])

    def samples(self, indices=None):
        if indices is None:
            indices = range(len(self))
        return [self[i] for i in indices]


def parse_cifar10(blob):
    '''Returns the LabeledImages held in a CIFAR-10 binary blob.'''
    images, labels = parse_cifar10_arrays(blob)
    return [LabeledImage(images[i] / 255.0, int(labels[i]))
            for i in range(len(labels))]


def parse_cifar10_arrays(blob):
    '''Returns (uint8 images of shape (n, 3, 32, 32), int64 labels).'''
    blob = bytes(blob)
    whole = len(blob) // RECORD_BYTES
    if len(blob) % RECORD_BYTES:
        offset = whole * RECORD_BYTES
        raise DataFormatError(
            'Truncated CIFAR-10 record at offset %d: %d of %d bytes present'
            % (offset, len(blob) - offset, RECORD_BYTES), offset=offset)
    records = np.frombuffer(blob, dtype=np.uint8).reshape(whole, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= NUM_LABELS)
    if bad.size:
        offset = int(bad[0]) * RECORD_BYTES
        raise DataFormatError('Label byte %d > 9 at offset %d'
                              % (labels[bad[0]], offset),
                              offset=offset, label=int(labels[bad[0]]))
    images = records[:, 1:].reshape((whole,) + IMAGE_SHAPE)
    return images, labels


def serialize_cifar10(images, labels=None):
    '''
    Inverse of parse_cifar10. Takes LabeledImages, or a pixel array
    (n, 3, 32, 32) in [0, 1] together with labels.
    '''
    if labels is None:
        images = list(images)
        labels = [img.label for img in images]
        pixels = np.stack([img.pixels for img in images]) if images \
            else np.zeros((0,) + IMAGE_SHAPE)
    else:
        pixels = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if pixels.shape[1:] != IMAGE_SHAPE or len(pixels) != len(labels):
        raise BatchError('cannot serialize pixels of shape %s with %d labels'
                         % (pixels.shape, len(labels)))
    if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
        raise BatchError('pixels outside [0, 1] cannot be serialized')
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_LABELS):
        raise BatchError('labels must lie in [0, %d)' % NUM_LABELS)
    records = np.empty((len(labels), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = np.rint(pixels * 255.0).reshape(len(labels), PIXEL_BYTES)
    return records.tobytes()


def load_cifar10(root, split='train', classes=None, limit=None):
    '''
    Reads the train batches (or the test batch) under ``root``. ``classes``
    selects a subset of CIFAR-10 labels, re-indexed densely in the given
    order. ``limit`` keeps the first limit // len(classes) images of each
    class.
    '''
    names = settings.TRAIN_FILES if split == 'train' else (settings.TEST_FILE,)
    paths = [os.path.join(root, name) for name in names]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise DatasetMissing('CIFAR-10 files not found: %s'
                             % ', '.join(missing))
    chunks, label_chunks = [], []
    for path in paths:
        with open(path, 'rb') as f:
            try:
                images, labels = parse_cifar10_arrays(f.read())
            except DataFormatError as e:
                raise DataFormatError('%s: %s' % (path, e),
                                      offset=e.offset, label=e.label)
        chunks.append(images)
        label_chunks.append(labels)
    images = np.concatenate(chunks)
    labels = np.concatenate(label_chunks)

    classes = tuple(range(NUM_LABELS)) if not classes else tuple(classes)
    if len(set(classes)) != len(classes) or \
            any(c < 0 or c >= NUM_LABELS for c in classes):
        raise ConfigError('invalid class subset %r' % (classes,))
    per_class = None if not limit else max(1, limit // len(classes))
    keep = []
    for cls in classes:
        found = np.flatnonzero(labels == cls)
        keep.append(found if per_class is None else found[:per_class])
    keep = np.sort(np.concatenate(keep))
    remap = np.full(NUM_LABELS, -1, dtype=np.int64)
    remap[list(classes)] = np.arange(len(classes))
    dataset = ImageSet(images[keep] / 255.0, remap[labels[keep]], classes)
    log.info('Loaded CIFAR-10 %s split from %s: %d images, classes=%s',
             split, root, len(dataset),
             ','.join(settings.CIFAR10_CLASSES[c] for c in classes))
    return dataset


@dataclass(frozen=True)
class AugPolicy:
    crop_padding: int = 4
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    grayscale_prob: float = 0.2
    crop: bool = True
    flip: bool = True
    jitter: bool = True
    grayscale: bool = True

    def __post_init__(self):
        for name in ('flip_prob', 'jitter_prob', 'grayscale_prob'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError('%s must lie in [0, 1]' % name)
        for name in ('brightness', 'contrast', 'saturation'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError('%s strength must lie in [0, 1]' % name)
        if self.crop_padding < 0:
            raise ConfigError('crop_padding must be >= 0')

    @classmethod
    def disabled(cls):
        return cls(crop=False, flip=False, jitter=False, grayscale=False)


def _luma(pixels):
    return (pixels * _LUMA).sum(axis=0, keepdims=True)


def augment_pixels(pixels, policy, rng):
    out = pixels
    if policy.crop and policy.crop_padding:
        pad = policy.crop_padding
        canvas = np.pad(out, ((0, 0), (pad, pad), (pad, pad)))
        top, left = rng.integers(0, 2 * pad + 1, size=2)
        out = canvas[:, top:top + pixels.shape[1], left:left + pixels.shape[2]]
    if policy.flip and rng.random() < policy.flip_prob:
        out = out[:, :, ::-1]
    if policy.jitter and rng.random() < policy.jitter_prob:
        b, c, s = rng.uniform(-1.0, 1.0, size=3)
        out = np.clip(out * (1.0 + b * policy.brightness), 0.0, 1.0)
        gray = _luma(out).mean()
        out = np.clip((out - gray) * (1.0 + c * policy.contrast) + gray, 0.0, 1.0)
        gray = _luma(out)
        out = np.clip((out - gray) * (1.0 + s * policy.saturation) + gray,
                      0.0, 1.0)
    if policy.grayscale and rng.random() < policy.grayscale_prob:
        out = np.repeat(_luma(out), pixels.shape[0], axis=0)
    return np.ascontiguousarray(out)


def augment(img, policy, rng):
    return LabeledImage(augment_pixels(img.pixels, policy, rng), img.label)


@dataclass(frozen=True)
class MultiviewBatch:
    views: np.ndarray
    labels: np.ndarray
    origin: tuple
    source: np.ndarray
    n: int = field(default=0)

    def __len__(self):
        return len(self.labels)

    def positive_sets(self):
        '''P(i): every other view carrying the same label as view i.'''
        same = self.labels[:, None] == self.labels[None, :]
        np.fill_diagonal(same, False)
        return [np.flatnonzero(row) for row in same]

    def source_positive_sets(self):
        '''Other views derived from the same source sample as view i.'''
        same = self.source[:, None] == self.source[None, :]
        np.fill_diagonal(same, False)
        return [np.flatnonzero(row) for row in same]


def make_multiview_batch(samples, policy, rng):
    '''
    Two augmentations of each sample, ordered [aug1 block, aug2 block]. All
    aug1 views are drawn from ``rng`` before the aug2 views.
    '''
    samples = list(samples)
    if not samples:
        raise BatchError('cannot build a multiview batch from no samples')
    n = len(samples)
    first = [augment_pixels(s.pixels, policy, rng) for s in samples]
    second = [augment_pixels(s.pixels, policy, rng) for s in samples]
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return MultiviewBatch(
        views=np.stack(first + second),
        labels=np.concatenate([labels, labels]),
        origin=(AUG1,) * n + (AUG2,) * n,
        source=np.concatenate([np.arange(n), np.arange(n)]),
        n=n)


def append_adversarial(batch, adv):
    '''Extends a 2N-view batch with one adversarial view per source sample.'''
    adv = np.stack([getattr(a, 'pixels', a) for a in adv]) if len(adv) \
        else np.zeros((0,) + batch.views.shape[1:])
    if len(adv) != batch.n or len(batch) != 2 * batch.n:
        raise BatchError('expected %d adversarial images for a %d-view batch, '
                         'got %d' % (batch.n, len(batch), len(adv)))
    if adv.shape[1:] != batch.views.shape[1:]:
        raise BatchError('adversarial images have shape %s, views have %s'
                         % (adv.shape[1:], batch.views.shape[1:]))
    if adv.min() < 0.0 or adv.max() > 1.0:
        raise BatchError('adversarial pixels outside [0, 1]')
    return MultiviewBatch(
        views=np.concatenate([batch.views, adv]),
        labels=np.concatenate([batch.labels, batch.labels[:batch.n]]),
        origin=batch.origin + (ADVERSARIAL,) * batch.n,
        source=np.concatenate([batch.source, np.arange(batch.n)]),
        n=batch.n)


class BatchLoader(object):
    '''
    Seeded mini-batches over an ImageSet. The order of epoch ``e`` depends
    only on (seed, e), so any epoch can be replayed in isolation.
    '''

    def __init__(self, dataset, batch_size, seed, shuffle=True):
        if batch_size < 1:
            raise ConfigError('batch size must be >= 1')
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle

    def __len__(self):
        return -(-len(self.dataset) // self.batch_size)

    def order(self, epoch, purpose='shuffle'):
        if not self.shuffle:
            return np.arange(len(self.dataset))
        return stream(self.seed, purpose, epoch).permutation(len(self.dataset))

    def batches(self, epoch, fraction=1.0, purpose='shuffle'):
        '''Yields (batch index, images, labels, sample indices).'''
        order = self.order(epoch, purpose)
        count = len(self)
        if fraction < 1.0:
            wanted = int(round(count * fraction))
            if wanted < 1:
                log.warning('Fraction %s of %d batches is empty, using 1 batch',
                            fraction, count)
                wanted = 1
            count = wanted
        for index in range(count):
            chosen = order[index * self.batch_size:(index + 1) * self.batch_size]
            yield (index, self.dataset.images[chosen],
                   self.dataset.labels[chosen], chosen)
