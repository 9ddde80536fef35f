'''
Supervised contrastive loss over a multiview batch, and cross-entropy.

For anchor i, A(i) is every other view of the batch and P(i) the views of
A(i) sharing its label:

    L = sum_i  -1/|P(i)| * sum_{p in P(i)} log( exp(z_i.z_p / tau)
                                               / sum_{a in A(i)} exp(z_i.z_a / tau) )

The outer sum runs over anchors (not a mean); adversarial views are anchors
and positives like any other view.
'''
import logging
import math

import numpy as np

from claf import tensor as T
from claf.errors import ConfigError, EmptyPositiveSet, LabelError, ShapeError

log = logging.getLogger(__name__)


def positive_mask(labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return same


def scl_loss(z, labels, tau):
    '''
    ``z``: (views, p) DiffTensor of unit-norm rows; ``labels``: per view.
    Returns a scalar DiffTensor.
    '''
    z = T.as_tensor(z)
    labels = np.asarray(labels)
    if tau <= 0:
        raise ConfigError('temperature must be positive, got %r' % tau)
    if z.ndim != 2 or len(labels) != z.shape[0]:
        raise ShapeError('scl_loss', z.shape, labels.shape)
    positives = positive_mask(labels)
    counts = positives.sum(axis=1)
    if (counts == 0).any():
        raise EmptyPositiveSet('views %s have no positive in the batch'
                               % np.flatnonzero(counts == 0).tolist(),
                               anchors=np.flatnonzero(counts == 0))
    others = ~np.eye(len(labels), dtype=bool)
    logits = (z @ T.transpose(z)) / tau
    log_norm = T.logsumexp(logits, axis=1, mask=others)
    log_prob = logits - T.reshape(log_norm, (-1, 1))
    weights = positives / counts[:, None].astype(np.float64)
    return -T.sum_(log_prob * weights)


def scl_loss_reference(z, labels, tau):
    '''Direct double-loop transcription of the loss, on plain floats.'''
    z = np.asarray(z, dtype=np.float64)
    n = len(labels)
    total = 0.0
    for i in range(n):
        candidates = [a for a in range(n) if a != i]
        positives = [p for p in candidates if labels[p] == labels[i]]
        if not positives:
            raise EmptyPositiveSet('view %d has no positive' % i, anchors=[i])
        denominator = sum(math.exp(float(np.dot(z[i], z[a])) / tau)
                          for a in candidates)
        inner = 0.0
        for p in positives:
            inner += math.log(math.exp(float(np.dot(z[i], z[p])) / tau)
                              / denominator)
        total += -inner / len(positives)
    return total


def cross_entropy(logits, labels, num_classes=None):
    '''Mean over the batch of -log softmax(logits)[label].'''
    logits = T.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ShapeError('cross_entropy', logits.shape, labels.shape)
    n = logits.shape[1] if num_classes is None else num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]
                        or labels.max() >= n):
        raise LabelError('labels must lie in [0, %d), got %s'
                         % (min(n, logits.shape[1]), labels.tolist()))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = T.sum_(logits * onehot, axis=1)
    return T.mean(T.logsumexp(logits, axis=1) - picked)


def per_sample_cross_entropy(logits, labels):
    '''Plain-array cross-entropy per row, for picking attack restarts.'''
    logits = np.asarray(logits)
    peak = logits.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
    return lse - logits[np.arange(len(labels)), labels]
