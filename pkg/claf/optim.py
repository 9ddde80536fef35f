'''
Optimizers over immutable parameter mappings. A step takes the current
parameters and gradients and returns new parameters; optimizer state is a
plain mapping of arrays so it can be checkpointed.
'''
import logging
import math
from collections import OrderedDict

import numpy as np

log = logging.getLogger(__name__)


def cosine_lr(t, total, lr0):
    '''lr0 * 0.5 * (1 + cos(pi * t / total)); lr0 when total is 0.'''
    if total <= 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


class SGD(object):
    '''SGD with momentum and L2 weight decay (the decay joins the gradient).'''

    def __init__(self, momentum=0.9, weight_decay=5e-4, state=None):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = OrderedDict(state or ())

    def step(self, params, grads, lr):
        updated = OrderedDict()
        for name, value in params.items():
            grad = grads[name] + self.weight_decay * value
            velocity = self.velocity.get(name)
            velocity = grad if velocity is None else \
                self.momentum * velocity + grad
            self.velocity[name] = velocity
            updated[name] = value - lr * velocity
        return updated

    def state(self):
        return OrderedDict(self.velocity)


class Adam(object):

    def __init__(self, betas=(0.9, 0.999), eps=1e-8, state=None, t=0):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = t
        state = state or {}
        self.m = OrderedDict((k[2:], v) for k, v in state.items()
                             if k.startswith('m.'))
        self.v = OrderedDict((k[2:], v) for k, v in state.items()
                             if k.startswith('v.'))

    def step(self, params, grads, lr):
        self.t += 1
        updated = OrderedDict()
        for name, value in params.items():
            grad = grads[name]
            m = self.m.get(name, np.zeros_like(value))
            v = self.v.get(name, np.zeros_like(value))
            m = self.beta1 * m + (1 - self.beta1) * grad
            v = self.beta2 * v + (1 - self.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated

    def state(self):
        state = OrderedDict(('m.' + k, v) for k, v in self.m.items())
        state.update(('v.' + k, v) for k, v in self.v.items())
        return state
