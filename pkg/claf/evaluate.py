'''
Clean and robust accuracy of an encoder + linear head.

Robust accuracy counts only the prediction on the attacked input, not the
worse of clean and attacked. Attack noise comes from one stream per test
sample, so results do not depend on the evaluation batch size.
'''
import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from claf import attack as attacks
from claf import tensor as T
from claf.errors import BatchError
from claf.lib import add_progress_bar, format_float, sample_streams
from claf.running_stats import StatsCount

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 250


def eps_label(epsilon):
    '''8/255 -> 'eps8'; budgets that are not whole 255ths keep their value.'''
    scaled = epsilon * 255
    if abs(scaled - round(scaled)) < 1e-9:
        return 'eps%d' % round(scaled)
    return 'eps%s' % format_float(epsilon)


@dataclass(frozen=True)
class EvalReport:
    clean_accuracy: float
    robust: tuple = ()     # ((AttackConfig, accuracy), ...)
    samples: int = 0
    seed: int = 0
    label: str = ''
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples <= 0:
            raise BatchError('an evaluation report needs at least one sample')
        for value in [self.clean_accuracy] + [acc for _, acc in self.robust]:
            if not 0.0 <= value <= 1.0:
                raise BatchError('accuracy %r outside [0, 1]' % value)

    def robust_accuracy(self, epsilon):
        for cfg, accuracy in self.robust:
            if abs(cfg.epsilon - epsilon) < 1e-12:
                return accuracy
        return None

    def items(self):
        '''Flat (key, value) pairs, in a fixed order.'''
        items = [('label', self.label), ('samples', self.samples),
                 ('seed', self.seed),
                 ('clean_accuracy', format_float(self.clean_accuracy))]
        for cfg, accuracy in self.robust:
            name = eps_label(cfg.epsilon)
            items.append(('robust_accuracy_%s' % name, format_float(accuracy)))
            items.append(('attack_%s' % name, cfg.describe()))
        for key in sorted(self.extra):
            items.append((key, self.extra[key]))
        return items

    def to_text(self):
        return ''.join('%s = %s\n' % (key, value) for key, value in self.items()
                       if value != '')


def _check_nonempty(dataset):
    if len(dataset) == 0:
        raise BatchError('cannot evaluate on an empty dataset')


def predict(f, head, images, batch_size=DEFAULT_BATCH_SIZE):
    '''argmax of head(f(x)) per image, computed on constants.'''
    predictions = []
    for start in range(0, len(images), batch_size):
        logits = head(f(T.as_tensor(images[start:start + batch_size])))
        predictions.append(np.argmax(logits.data, axis=1))
    if not predictions:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(predictions)


def features(f, images, batch_size=DEFAULT_BATCH_SIZE):
    '''Encoder representations of a stack of images, without a tape.'''
    chunks = [f(T.as_tensor(images[start:start + batch_size])).data
              for start in range(0, len(images), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, f.arch.dim))


def clean_accuracy(f, head, dataset, batch_size=DEFAULT_BATCH_SIZE):
    _check_nonempty(dataset)
    predictions = predict(f, head, dataset.images, batch_size)
    return float(np.mean(predictions == dataset.labels))


def adversarial_images(f, head, dataset, cfg, seed, batch_size=DEFAULT_BATCH_SIZE,
                       purpose='eval_attack', progress=False):
    '''PGD images for every sample of ``dataset``, in dataset order.'''
    starts = range(0, len(dataset), batch_size)
    if progress:
        starts = add_progress_bar(starts, 'Attack %s' % eps_label(cfg.epsilon),
                                  max_value=len(starts))
    out = []
    for start in starts:
        indices = np.arange(start, min(start + batch_size, len(dataset)))
        rng = sample_streams(seed, purpose, 0, indices) if cfg.random_start \
            else None
        out.append(attacks.pgd(f, head, dataset.images[indices],
                               dataset.labels[indices], cfg, rng=rng))
    return np.concatenate(out) if out else dataset.images[:0]


def robust_accuracy(f, head, dataset, cfg, seed=0, batch_size=DEFAULT_BATCH_SIZE,
                    progress=False):
    _check_nonempty(dataset)
    adv = adversarial_images(f, head, dataset, cfg, seed, batch_size,
                             progress=progress)
    outcomes = StatsCount()
    predictions = predict(f, head, adv, batch_size)
    for correct in predictions == dataset.labels:
        outcomes.increment('correct' if correct else 'fooled')
    log.debug('%s: %s', cfg.describe(), dict(outcomes))
    return outcomes.fraction('correct')


def evaluate_model(f, head, dataset, attack_cfgs=(), seed=0,
                   batch_size=DEFAULT_BATCH_SIZE, label='', progress=False):
    '''Clean accuracy plus robust accuracy under every attack config.'''
    clean = clean_accuracy(f, head, dataset, batch_size)
    robust = tuple((cfg, robust_accuracy(f, head, dataset, cfg, seed,
                                         batch_size, progress))
                   for cfg in attack_cfgs)
    report = EvalReport(clean, robust, samples=len(dataset), seed=seed,
                        label=label)
    log.info('Evaluated %s: clean=%.4f %s', label or 'model', clean,
             ' '.join('%s=%.4f' % (eps_label(cfg.epsilon), acc)
                      for cfg, acc in robust))
    return report


def pgd_step_sweep(f, head, dataset, base_cfg, steps=(20, 40, 100), seed=0,
                   batch_size=DEFAULT_BATCH_SIZE, progress=False):
    '''One EvalReport per PGD step count, sharing the clean accuracy.'''
    clean = clean_accuracy(f, head, dataset, batch_size)
    reports = OrderedDict()
    for k in steps:
        cfg = replace(base_cfg, k=k)
        accuracy = robust_accuracy(f, head, dataset, cfg, seed, batch_size,
                                   progress)
        reports[k] = EvalReport(clean, ((cfg, accuracy),), samples=len(dataset),
                                seed=seed, label='pgd%d' % k)
        log.info('PGD-%d: robust accuracy %.4f', k, accuracy)
    return reports
