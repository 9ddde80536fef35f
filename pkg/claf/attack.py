'''
l-infinity adversarial examples against the encoder + classifier pipeline.

Attacks run on parameter constants: no parameter tensor requires a gradient
while an attack is computed, so the networks cannot be modified by it.
'''
import logging
from dataclasses import dataclass

import numpy as np

from claf import loss as losses
from claf import tensor as T
from claf.errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    eta: float = 2 / 255
    k: int = 5
    random_start: bool = True
    restarts: int = 1
    norm: str = 'linf'

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError('attack epsilon must lie in [0, 1], got %r'
                              % self.epsilon)
        if self.eta < 0:
            raise ConfigError('attack step size must be >= 0')
        if self.k < 0:
            raise ConfigError('attack step count must be >= 0')
        if self.restarts < 1:
            raise ConfigError('attack restarts must be >= 1')
        if self.norm != 'linf':
            raise ConfigError('only the linf attack norm is supported')

    def describe(self):
        return 'PGD-%d eps=%.4g (%g/255) eta=%.4g random_start=%s restarts=%d' % (
            self.k, self.epsilon, self.epsilon * 255, self.eta,
            self.random_start, self.restarts)


def project_linf(x_cand, x_orig, epsilon):
    '''Projection onto the epsilon ball around x_orig intersected with [0, 1].'''
    x_cand = np.asarray(x_cand, dtype=np.float64)
    x_orig = np.asarray(x_orig, dtype=np.float64)
    return np.clip(np.clip(x_cand, x_orig - epsilon, x_orig + epsilon), 0.0, 1.0)


def pipeline(f, c):
    '''The logits function c(f(x)) used as the attack target.'''
    return lambda x: c(f(x))


def input_gradient(model, x, y):
    '''Returns (per-sample CE, d(mean CE)/dx) for the logits function model.'''
    x_var = T.parameter(x)
    with T.Tape() as tape:
        logits = model(x_var)
        loss = losses.cross_entropy(logits, y)
    grad = tape.backward(loss).of(x_var)
    return losses.per_sample_cross_entropy(logits.data, y), grad


def fgsm(f, c, x, y, epsilon):
    '''Single signed-gradient step of size epsilon, projected.'''
    x = np.asarray(x, dtype=np.float64)
    _, grad = input_gradient(pipeline(f, c), x, y)
    return project_linf(x + epsilon * np.sign(grad), x, epsilon)


def _random_start(x, epsilon, rng):
    if isinstance(rng, (list, tuple)):
        if len(rng) != len(x):
            raise ConfigError('need one random stream per sample')
        noise = np.stack([r.uniform(-epsilon, epsilon, size=x.shape[1:])
                          for r in rng])
    else:
        noise = rng.uniform(-epsilon, epsilon, size=x.shape)
    return project_linf(x + noise, x, epsilon)


def pgd(f, c, x, y, cfg, rng=None):
    '''
    Projected sign-gradient ascent on the cross-entropy of c(f(x)). ``rng``
    is a Generator, or a list with one Generator per sample so that the
    random start of a sample does not depend on its batch.

    With several restarts the highest-loss result is kept per sample.
    '''
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    model = pipeline(f, c)
    best = x
    best_loss = None
    for restart in range(cfg.restarts):
        if cfg.random_start:
            if rng is None:
                raise ConfigError('random start needs a random stream')
            x_adv = _random_start(x, cfg.epsilon, rng)
        else:
            x_adv = x
        for _ in range(cfg.k):
            _, grad = input_gradient(model, x_adv, y)
            x_adv = project_linf(x_adv + cfg.eta * np.sign(grad), x, cfg.epsilon)
        if cfg.restarts == 1:
            return x_adv
        loss = losses.per_sample_cross_entropy(model(x_adv).data, y)
        if best_loss is None:
            best, best_loss = x_adv, loss
        else:
            better = loss > best_loss
            best = np.where(better.reshape((-1,) + (1,) * (x.ndim - 1)),
                            x_adv, best)
            best_loss = np.where(better, loss, best_loss)
        log.debug('PGD restart %d: mean CE %.6f', restart, loss.mean())
    return best
