'''
The three networks: encoder f, projection head g and classification head c.

A network is an architecture descriptor plus an ordered mapping of named,
read-only parameter arrays. Forward passes take an optional mapping of
DiffTensors overriding those arrays, which is how training records parameter
gradients on a tape while attacks run against constants.
'''
import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from claf import default_settings as settings
from claf import tensor as T
from claf.errors import ConfigError, FreezeViolation, ShapeError
from claf.lib import array_hash, stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    stride: int = 1


LAYER_KINDS = ('conv', 'pool', 'gap', 'block')


@dataclass(frozen=True)
class EncoderArch:
    layers: tuple
    mean: tuple = settings.CIFAR10_MEAN
    std: tuple = settings.CIFAR10_STD

    def __post_init__(self):
        layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(*l)
                       for l in self.layers)
        object.__setattr__(self, 'layers', layers)
        if not layers or layers[-1].kind != 'gap':
            raise ConfigError('encoder must end with a global average pool')
        previous = layers[0].in_channels
        for layer in layers:
            if layer.kind not in LAYER_KINDS:
                raise ConfigError('unknown layer kind %r' % layer.kind)
            if layer.in_channels != previous:
                raise ConfigError('layer %r expects %d channels, gets %d'
                                  % (layer, layer.in_channels, previous))
            previous = layer.out_channels

    @classmethod
    def named(cls, name):
        try:
            return cls(settings.ENCODERS[name])
        except KeyError:
            raise ConfigError('unknown encoder %r (choose from %s)'
                              % (name, ', '.join(sorted(settings.ENCODERS))))

    @property
    def dim(self):
        return self.layers[-1].out_channels

    def param_shapes(self):
        '''name -> (shape, fan_in); fan_in is None for biases.'''
        shapes = OrderedDict()
        for i, layer in enumerate(self.layers):
            cin, cout = layer.in_channels, layer.out_channels
            if layer.kind == 'conv':
                shapes['conv%d.weight' % i] = ((cout, cin, 3, 3), cin * 9)
                shapes['conv%d.bias' % i] = ((cout,), None)
            elif layer.kind == 'block':
                shapes['block%d.conv1.weight' % i] = ((cout, cin, 3, 3), cin * 9)
                shapes['block%d.conv1.bias' % i] = ((cout,), None)
                shapes['block%d.conv2.weight' % i] = ((cout, cout, 3, 3), cout * 9)
                shapes['block%d.conv2.bias' % i] = ((cout,), None)
                if cin != cout or layer.stride != 1:
                    shapes['block%d.shortcut.weight' % i] = ((cout, cin, 1, 1), cin)
                    shapes['block%d.shortcut.bias' % i] = ((cout,), None)
        return shapes


@dataclass(frozen=True)
class ProjectionArch:
    in_dim: int
    hidden: int
    out_dim: int

    def param_shapes(self):
        return OrderedDict([
            ('fc1.weight', ((self.in_dim, self.hidden), self.in_dim)),
            ('fc1.bias', ((self.hidden,), None)),
            ('fc2.weight', ((self.hidden, self.out_dim), self.hidden)),
            ('fc2.bias', ((self.out_dim,), None)),
        ])


@dataclass(frozen=True)
class ClassifierArch:
    in_dim: int
    num_classes: int

    def param_shapes(self):
        return OrderedDict([
            ('fc.weight', ((self.in_dim, self.num_classes), self.in_dim)),
            ('fc.bias', ((self.num_classes,), None)),
        ])


class Network(object):
    '''Immutable parameter set for one architecture.'''

    def __init__(self, arch, params):
        expected = arch.param_shapes()
        if list(params) != list(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ShapeError('%s parameters' % type(self).__name__,
                             detail='missing=%s unexpected=%s'
                             % (sorted(missing), sorted(extra)))
        frozen = OrderedDict()
        for name, value in params.items():
            value = np.array(value, dtype=np.float64)
            if value.shape != expected[name][0]:
                raise ShapeError(name, value.shape, expected[name][0])
            if not np.isfinite(value).all():
                raise ShapeError(name, value.shape, detail='non-finite values')
            value.setflags(write=False)
            frozen[name] = value
        self.arch = arch
        self.params = frozen

    def __repr__(self):
        return '<%s %s %s>' % (type(self).__name__, self.hash()[:8],
                               self.arch)

    def replace(self, params):
        return type(self)(self.arch, params)

    def variables(self):
        '''Fresh gradient-requiring tensors for every parameter.'''
        return OrderedDict((k, T.parameter(v)) for k, v in self.params.items())

    def hash(self):
        return array_hash(self.params)

    def _get(self, name, weights):
        if weights is not None and name in weights:
            return weights[name]
        return T.DiffTensor._wrap(self.params[name])

    def __call__(self, x, weights=None):
        return self.forward(x, weights)


class EncoderParams(Network):

    def forward(self, x, weights=None):
        return encode(self, x, weights)


class ProjectionParams(Network):

    def forward(self, v, weights=None):
        return project(self, v, weights)


class ClassifierParams(Network):

    @property
    def num_classes(self):
        return self.arch.num_classes

    def forward(self, v, weights=None):
        return classify(self, v, weights)


_NETWORK_CLASSES = {
    EncoderArch: EncoderParams,
    ProjectionArch: ProjectionParams,
    ClassifierArch: ClassifierParams,
}


def _conv(h, network, prefix, weights, stride, padding):
    w = network._get(prefix + '.weight', weights)
    b = network._get(prefix + '.bias', weights)
    out = T.conv2d(h, w, stride=stride, padding=padding)
    return out + T.reshape(b, (1, -1, 1, 1))


def encode(f, x, weights=None):
    '''
    Maps pixel batches (B, 3, H, W) in [0, 1] to representations (B, d).
    Channel normalization is applied here, so callers stay in pixel space.
    '''
    x = T.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != f.arch.layers[0].in_channels:
        raise ShapeError('encode', x.shape,
                         detail='expected (batch, %d, H, W)'
                         % f.arch.layers[0].in_channels)
    mean = np.array(f.arch.mean).reshape(1, -1, 1, 1)
    std = np.array(f.arch.std).reshape(1, -1, 1, 1)
    h = (x - mean) / std
    for i, layer in enumerate(f.arch.layers):
        if layer.kind == 'conv':
            h = T.relu(_conv(h, f, 'conv%d' % i, weights, layer.stride, 1))
        elif layer.kind == 'pool':
            h = T.max_pool2d(h)
        elif layer.kind == 'gap':
            h = T.global_avg_pool(h)
        elif layer.kind == 'block':
            prefix = 'block%d' % i
            out = T.relu(_conv(h, f, prefix + '.conv1', weights, layer.stride, 1))
            out = _conv(out, f, prefix + '.conv2', weights, 1, 1)
            if prefix + '.shortcut.weight' in f.params:
                h = _conv(h, f, prefix + '.shortcut', weights, layer.stride, 0)
            h = T.relu(out + h)
    return h


def project(g, v, weights=None):
    '''Two-layer head with relu between; rows of the output have unit norm.'''
    v = T.as_tensor(v)
    if v.ndim != 2 or v.shape[1] != g.arch.in_dim:
        raise ShapeError('project', v.shape, (None, g.arch.in_dim))
    hidden = T.relu(v @ g._get('fc1.weight', weights) + g._get('fc1.bias', weights))
    z = hidden @ g._get('fc2.weight', weights) + g._get('fc2.bias', weights)
    return T.l2_normalize(z, axis=1)


def classify(c, v, weights=None):
    v = T.as_tensor(v)
    if v.ndim != 2 or v.shape[1] != c.arch.in_dim:
        raise ShapeError('classify', v.shape, (None, c.arch.in_dim))
    return v @ c._get('fc.weight', weights) + c._get('fc.bias', weights)


def init_params(arch, seed, scope=None):
    '''
    Kaiming-uniform weights (bound sqrt(6 / fan_in), so variance 2 / fan_in)
    and zero biases. Each tensor draws from its own (seed, scope, name)
    stream, so two heads of one architecture differ when scopes differ.
    '''
    params = OrderedDict()
    for name, (shape, fan_in) in arch.param_shapes().items():
        if fan_in is None:
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / fan_in)
            keys = ('init', name) if scope is None else ('init', scope, name)
            params[name] = stream(seed, *keys).uniform(-bound, bound, size=shape)
    return _NETWORK_CLASSES[type(arch)](arch, params)


def init_encoder(layers, seed):
    arch = layers if isinstance(layers, EncoderArch) else EncoderArch(layers)
    return init_params(arch, seed)


def init_projection(in_dim, hidden, out_dim, seed):
    return init_params(ProjectionArch(in_dim, hidden, out_dim), seed)


def init_classifier(in_dim, num_classes, seed, scope=None):
    return init_params(ClassifierArch(in_dim, num_classes), seed, scope)


def check_frozen(phase, **pairs):
    '''
    Raises FreezeViolation if any (before, after) pair differs. Either side
    may be a network or a hash recorded earlier with ``Network.hash``.
    Used at every phase boundary for networks the phase must not touch.
    '''
    for name, (before, after) in pairs.items():
        before, after = [x if isinstance(x, str) else x.hash()
                         for x in (before, after)]
        if before != after:
            raise FreezeViolation('%s changed %s parameters (%s -> %s)'
                                  % (phase, name, before[:12], after[:12]))
        log.debug('%s left %s untouched (%s)', phase, name, before[:12])
