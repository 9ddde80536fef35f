'''
Central finite-difference checks of the analytic gradients in claf.tensor,
and the named suite run by ``claf gradcheck``.
'''
import logging
from collections import OrderedDict

import numpy as np

from claf import tensor as T
from claf import loss as losses
from claf import model as models

log = logging.getLogger(__name__)

# relative errors are taken against max(|analytic|, |numeric|, REL_FLOOR)
REL_FLOOR = 1e-3
DEFAULT_TOLERANCE = 1e-4


class GradReport(object):
    def __init__(self, max_abs_error, max_rel_error, samples):
        self.max_abs_error = dict(max_abs_error)
        self.max_rel_error = dict(max_rel_error)
        self.samples = samples

    @property
    def worst_rel_error(self):
        return max(self.max_rel_error.values()) if self.max_rel_error else 0.0

    @property
    def worst_abs_error(self):
        return max(self.max_abs_error.values()) if self.max_abs_error else 0.0

    def passed(self, tolerance=DEFAULT_TOLERANCE):
        return self.worst_rel_error < tolerance

    def __repr__(self):
        return '<GradReport rel=%.3g abs=%.3g samples=%d>' % (
            self.worst_rel_error, self.worst_abs_error, self.samples)


def check_gradient(f, point, h=1e-5, samples=None, rng=None):
    '''
    Compares the tape gradient of the scalar function ``f`` with central
    differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate.

    ``point`` is a DiffTensor / array (f takes it positionally) or a mapping
    of names to arrays (f takes them as keyword arguments). ``samples`` limits
    the number of coordinates checked per input, sampled with ``rng``.
    '''
    named = isinstance(point, dict)
    if named:
        values = OrderedDict((k, np.array(T.as_tensor(v).data))
                             for k, v in point.items())
    else:
        values = OrderedDict([('x', np.array(T.as_tensor(point).data))])

    def call(arrays, requires_grad=False):
        tensors = OrderedDict((k, T.DiffTensor(v, requires_grad=requires_grad))
                              for k, v in arrays.items())
        with T.Tape() as tape:
            out = f(**tensors) if named else f(tensors['x'])
        return out, tape, tensors

    out, tape, tensors = call(values, requires_grad=True)
    analytic = tape.backward(out).named(tensors)

    rng = rng if rng is not None else np.random.default_rng(0)
    max_abs, max_rel = {}, {}
    total = 0
    for name, base in values.items():
        coords = np.arange(base.size)
        if samples is not None and samples < base.size:
            coords = np.sort(rng.choice(base.size, size=samples, replace=False))
        worst_abs = worst_rel = 0.0
        for index in coords:
            shifted = OrderedDict(values)
            plus = base.copy().reshape(-1)
            minus = base.copy().reshape(-1)
            plus[index] += h
            minus[index] -= h
            shifted[name] = plus.reshape(base.shape)
            f_plus = call(shifted)[0].item()
            shifted[name] = minus.reshape(base.shape)
            f_minus = call(shifted)[0].item()
            numeric = (f_plus - f_minus) / (2 * h)
            exact = float(analytic[name].reshape(-1)[index])
            err = abs(exact - numeric)
            worst_abs = max(worst_abs, err)
            worst_rel = max(worst_rel,
                            err / max(abs(exact), abs(numeric), REL_FLOOR))
        max_abs[name] = worst_abs
        max_rel[name] = worst_rel
        total += len(coords)
    return GradReport(max_abs, max_rel, total)


def _away_from_zero(rng, shape, margin=0.05):
    '''Uniform values in [-1, 1] with |x| >= margin, clear of relu kinks.'''
    values = rng.uniform(margin, 1.0, size=shape)
    return values * rng.choice([-1.0, 1.0], size=shape)


def _tiny_encoder(seed):
    arch = (('conv', 3, 4, 1), ('pool', 4, 4, 2), ('conv', 4, 6, 1),
            ('gap', 6, 6, 1))
    f = models.init_encoder(arch, seed)
    c = models.init_classifier(6, 3, seed + 1)
    return f, c


def gradient_suite(seed=0, samples=20):
    '''
    Returns an ordered mapping of check name to GradReport covering every
    primitive, the composed contrastive pipeline, and cross-entropy through
    the encoder as used by the attacks.
    '''
    rng = np.random.default_rng(seed)
    reports = OrderedDict()

    def run(name, f, point, **kwargs):
        kwargs.setdefault('samples', samples)
        kwargs.setdefault('rng', rng)
        reports[name] = check_gradient(f, point, **kwargs)
        log.debug('gradcheck %s: %r', name, reports[name])

    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    run('add', lambda a, b: T.sum_(T.mul(T.add(a, b), T.add(a, b))),
        {'a': a, 'b': b})
    run('subtract', lambda a, b: T.sum_(T.exp(T.sub(a, b))), {'a': a, 'b': b})
    run('multiply', lambda a, b: T.sum_(T.mul(a, b) * T.mul(a, b)),
        {'a': a, 'b': b})
    run('scalar', lambda a: T.sum_((a * 3.0 + 2.0) / 4.0 - 1.5) * 2.0, a)
    run('divide', lambda a, b: T.sum_(T.div(a, T.exp(b))), {'a': a, 'b': b})
    run('matmul', lambda a, b: T.sum_(T.exp(T.matmul(a, b) * 0.3)),
        {'a': a, 'b': rng.normal(size=(4, 5))})
    run('broadcast', lambda a, r: T.sum_(T.mul(T.add(a, r), a)),
        {'a': a, 'r': rng.normal(size=(1, 4))})
    x = rng.uniform(0.05, 1.0, size=(2, 3, 6, 6))
    run('conv2d', lambda x, w: T.sum_(T.exp(T.conv2d(x, w, 1, 1) * 0.2)),
        {'x': x, 'w': rng.normal(size=(4, 3, 3, 3))})
    run('conv2d_stride', lambda x, w: T.sum_(T.exp(T.conv2d(x, w, 2, 1) * 0.2)),
        {'x': x, 'w': rng.normal(size=(2, 3, 3, 3))})
    run('max_pool2d', lambda x: T.sum_(T.exp(T.max_pool2d(x))),
        rng.normal(size=(2, 2, 4, 4)))
    run('global_avg_pool', lambda x: T.sum_(T.exp(T.global_avg_pool(x))), x)
    run('relu', lambda x: T.sum_(T.mul(T.relu(x), T.relu(x))),
        _away_from_zero(rng, (4, 5)))
    run('exp_log', lambda x: T.sum_(T.log_(T.exp(x) + 1.0)), a)
    run('logsumexp', lambda x: T.sum_(T.logsumexp(x, axis=1) *
                                      T.logsumexp(x, axis=0).sum()), a)
    mask = rng.uniform(size=(3, 4)) < 0.6
    mask[:, 0] = True
    run('logsumexp_masked', lambda x: T.sum_(T.exp(T.logsumexp(x, 1, mask))), a)
    run('l2_normalize', lambda x, w: T.sum_(T.mul(T.l2_normalize(x, 1), w)),
        {'x': a, 'w': b})
    run('concatenate', lambda a, b: T.sum_(T.exp(T.concatenate([a, b], 0)) *
                                           np.arange(24.).reshape(6, 4)),
        {'a': a, 'b': b})
    run('sum_mean', lambda x: T.sum_(T.exp(T.mean(x, axis=0))) *
        T.sum_(x, axis=1).sum(), a)
    run('sign', lambda x: T.sum_(T.mul(T.sign(x), x * x)),
        _away_from_zero(rng, (3, 4)))
    run('clamp', lambda x: T.sum_(T.exp(T.clamp(x, -0.5, 0.5))),
        _away_from_zero(rng, (4, 4), margin=0.05) *
        np.where(rng.uniform(size=(4, 4)) < 0.5, 0.4, 1.0))
    run('reshape_transpose', lambda x, w: T.sum_(T.mul(
        T.transpose(T.reshape(x, (4, 3))), w)), {'x': a, 'w': b})

    labels = np.array([0, 1, 0, 1, 2, 2])
    run('scl_loss', lambda z: losses.scl_loss(T.l2_normalize(z, 1), labels, 0.1),
        rng.normal(size=(6, 8)))
    g = models.init_projection(6, 16, 4, seed + 2)
    # nonzero output biases keep every z row away from the origin
    g = g.replace(OrderedDict(g.params, **{
        'fc1.bias': rng.uniform(0.1, 0.5, size=16),
        'fc2.bias': _away_from_zero(rng, (4,), margin=0.5)}))
    views = rng.uniform(size=(4, 3, 8, 8))
    f, c = _tiny_encoder(seed)
    view_labels = np.array([0, 1, 0, 1])

    def scl_pipeline(**weights):
        fw = dict((k[2:], v) for k, v in weights.items() if k.startswith('f.'))
        gw = dict((k[2:], v) for k, v in weights.items() if k.startswith('g.'))
        v = models.encode(f, views, fw)
        z = models.project(g, v, gw)
        return losses.scl_loss(z, view_labels, 0.5)
    point = OrderedDict(('f.' + k, v) for k, v in f.params.items())
    point.update(('g.' + k, v) for k, v in g.params.items())
    run('scl_pipeline', scl_pipeline, point, samples=5)

    y = np.array([0, 2, 1, 1])
    run('cross_entropy', lambda l: losses.cross_entropy(l, y, 3),
        rng.normal(size=(4, 3)) * 2.0)
    run('cross_entropy_through_encoder',
        lambda x: losses.cross_entropy(models.classify(c, models.encode(f, x)), y, 3),
        views)
    return reports
