'''
Dense float64 tensors with tape-based reverse-mode differentiation.

Operations on DiffTensor values are executed eagerly. While a Tape is active
(``with Tape() as tape:``), every operation with at least one input that
requires a gradient is appended to it, so the append order is a topological
order of the computation and ``tape.backward(loss)`` can walk it in reverse.

Tensors are immutable: their arrays are flagged read-only on creation.
'''
import inspect
import itertools
import logging
import threading

import numpy as np

from claf.errors import (BindingError, DegenerateNormalization,
                         GradientError, ShapeError)

log = logging.getLogger(__name__)

_local = threading.local()
_node_ids = itertools.count(1)


def _tape_stack():
    stack = getattr(_local, 'stack', None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class DiffTensor(object):
    '''An n-dimensional float64 value that may take part in a gradient.'''
    __slots__ = ('data', 'requires_grad', 'node_id')
    # numpy defers to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self._init(np.array(data, dtype=np.float64), requires_grad)

    def _init(self, array, requires_grad):
        array.setflags(write=False)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

    @classmethod
    def _wrap(cls, array, requires_grad=False):
        '''Adopts an array owned by the caller without copying it.'''
        out = cls.__new__(cls)
        out._init(np.asarray(array, dtype=np.float64), requires_grad)
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return DiffTensor._wrap(self.data, requires_grad=False)

    def __repr__(self):
        return '<DiffTensor shape=%s grad=%s id=%d>' % (
            self.shape, self.requires_grad, self.node_id)

    def __len__(self):
        return self.shape[0]

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # methods mirroring the module-level primitives
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log_(self)


def as_tensor(value):
    if isinstance(value, DiffTensor):
        return value
    return DiffTensor(value)


def parameter(value):
    return DiffTensor(value, requires_grad=True)


class _Node(object):
    __slots__ = ('op', 'out_id', 'parents', 'backward')

    def __init__(self, op, out_id, parents, backward):
        self.op = op
        self.out_id = out_id
        self.parents = parents
        self.backward = backward

    @property
    def input_ids(self):
        return tuple(p.node_id for p in self.parents)


class Gradients(dict):
    '''Maps node ids of gradient-requiring leaves to their gradient arrays.'''

    def of(self, tensor):
        grad = self.get(tensor.node_id)
        if grad is None:
            return np.zeros_like(tensor.data)
        return grad

    def named(self, tensors):
        return dict((name, self.of(t)) for name, t in tensors.items())


class Tape(object):
    '''
    Ordered record of the operations executed while it is active. Single
    threaded: each thread has its own stack of active tapes.
    '''

    def __init__(self):
        self.nodes = []
        self.leaves = {}
        self._outputs = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        assert stack and stack[-1] is self, 'tapes must be closed in order'
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _append(self, op, out, parents, backward):
        for parent in parents:
            if parent.requires_grad and parent.node_id not in self._outputs:
                self.leaves.setdefault(parent.node_id, parent)
        self.nodes.append(_Node(op, out.node_id, parents, backward))
        self._outputs.add(out.node_id)

    def backward(self, output):
        '''
        Returns d(output)/d(leaf) for every gradient-requiring leaf recorded
        on this tape. Contributions over fan-out are summed.
        '''
        if output.shape != ():
            raise GradientError('backward needs a scalar seed, got shape %s'
                                % (output.shape,))
        if output.node_id not in self._outputs:
            if output.requires_grad and output.node_id in self.leaves:
                return Gradients({output.node_id: np.ones(())})
            raise GradientError('output %r was not recorded on this tape'
                                % output)
        pending = {output.node_id: np.ones(())}
        for node in reversed(self.nodes):
            grad = pending.pop(node.out_id, None)
            if grad is None:
                continue
            for parent, parent_grad in zip(node.parents, node.backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.node_id in pending:
                    pending[parent.node_id] = pending[parent.node_id] + parent_grad
                else:
                    pending[parent.node_id] = parent_grad
        grads = Gradients()
        for node_id, leaf in self.leaves.items():
            grad = pending.get(node_id)
            grads[node_id] = np.zeros_like(leaf.data) if grad is None else grad
        return grads


def backward(tape, scalar_output):
    return tape.backward(scalar_output)


class Outputs(dict):
    '''Named results of ``evaluate`` plus the tape they were recorded on.'''

    def __init__(self, values, tape):
        super(Outputs, self).__init__(values)
        self.tape = tape


def evaluate(program, bindings):
    '''
    Runs ``program`` with the named ``bindings`` on a fresh tape.

    ``program`` is a callable taking the bindings as keyword arguments and
    returning a DiffTensor or a mapping of names to DiffTensors.
    '''
    try:
        inspect.signature(program).bind(**bindings)
    except TypeError as e:
        raise BindingError('cannot bind inputs %s: %s'
                           % (sorted(bindings), e))
    with Tape() as tape:
        result = program(**dict((k, as_tensor(v))
                                for k, v in bindings.items()))
    if isinstance(result, DiffTensor):
        result = {'output': result}
    return Outputs(result, tape)


def _record(op, data, parents, backward):
    requires_grad = any(p.requires_grad for p in parents)
    out = DiffTensor._wrap(data, requires_grad)
    if requires_grad:
        tape = active_tape()
        if tape is not None:
            tape._append(op, out, tuple(parents), backward)
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('add', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _record('add', a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('subtract', a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _record('subtract', a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('multiply', a, b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))
    return _record('multiply', a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check('divide', a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _record('divide', out, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)

    def backward(g):
        return g @ b.data.T, a.data.T @ g
    return _record('matmul', a.data @ b.data, (a, b), backward)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', x.shape, shape)

    def backward(g):
        return (g.reshape(x.shape),)
    return _record('reshape', out, (x,), backward)


def transpose(x, axes=None):
    x = as_tensor(x)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)
    return _record('transpose', np.transpose(x.data, axes), (x,), backward)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _record('sum', out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod(
        [x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def relu(x):
    '''Rectifier; the subgradient at 0 is 0.'''
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)
    return _record('relu', np.where(mask, x.data, 0.0), (x,), backward)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)
    return _record('exp', out, (x,), backward)


def log_(x):
    x = as_tensor(x)

    def backward(g):
        return (g / x.data,)
    return _record('log', np.log(x.data), (x,), backward)


def logsumexp(x, axis=-1, mask=None):
    '''
    Max-shifted log-sum-exp along ``axis``. ``mask`` is an optional boolean
    array (broadcastable to x) selecting which entries take part; at least
    one entry per reduced slice must be selected.
    '''
    x = as_tensor(x)
    if mask is None:
        keep = np.ones(x.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not keep.any(axis=axis).all():
        raise ShapeError('logsumexp', x.shape,
                         detail='a reduced slice has no selected entries')
    shifted_in = np.where(keep, x.data, -np.inf)
    peak = shifted_in.max(axis=axis, keepdims=True)
    weights = np.where(keep, np.exp(shifted_in - peak), 0.0)
    total = weights.sum(axis=axis, keepdims=True)
    out = np.squeeze(peak + np.log(total), axis=axis)
    softmax = weights / total

    def backward(g):
        return (np.expand_dims(g, axis) * softmax,)
    return _record('logsumexp', out, (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    lse = logsumexp(x, axis=axis)
    return exp(sub(x, reshape(lse, np.expand_dims(lse.data, axis).shape)))


def l2_normalize(x, axis=-1):
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if (norm == 0).any():
        raise DegenerateNormalization(
            'cannot L2-normalize a zero vector (axis %d of shape %s)'
            % (axis, x.shape))
    out = x.data / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)
    return _record('l2_normalize', out, (x,), backward)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError('concatenate', *[t.shape for t in tensors])
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _record('concatenate', out, tensors, backward)


def sign(x):
    '''Elementwise sign. Piecewise constant, so the result carries no gradient.'''
    x = as_tensor(x)
    return DiffTensor._wrap(np.sign(x.data))


def clamp(x, low=None, high=None):
    '''
    Elementwise clamp to [low, high]; bounds are scalars or arrays. The
    gradient passes where the input lies within the bounds.
    '''
    x = as_tensor(x)
    low_arr = -np.inf if low is None else np.asarray(low, dtype=np.float64)
    high_arr = np.inf if high is None else np.asarray(high, dtype=np.float64)
    out = np.minimum(np.maximum(x.data, low_arr), high_arr)
    inside = (x.data >= low_arr) & (x.data <= high_arr)

    def backward(g):
        return (g * inside,)
    return _record('clamp', out, (x,), backward)


def conv2d(x, weight, stride=1, padding=0):
    '''
    2-D cross-correlation of x (N, C, H, W) with weight (O, C, kh, kw),
    computed as im2col followed by a single matmul.
    '''
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError('conv2d', x.shape, weight.shape)
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError('conv2d', x.shape, weight.shape,
                         detail='kernel larger than padded input')
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        dweight = (g2.T @ cols).reshape(weight.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros((n, c, hp, wp))
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
        return dx, dweight
    return _record('conv2d', np.ascontiguousarray(out), (x, weight), backward)


def max_pool2d(x):
    '''2x2 max pooling with stride 2; H and W must be even.'''
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError('max_pool2d', x.shape,
                         detail='expects (N, C, H, W) with even H and W')
    n, c, h, w = x.shape
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2) \
        .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    winner = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, winner, axis=-1)[..., 0]

    def backward(g):
        dblocks = np.zeros_like(blocks)
        np.put_along_axis(dblocks, winner, g[..., None], axis=-1)
        dx = dblocks.reshape(n, c, h // 2, w // 2, 2, 2) \
            .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (dx,)
    return _record('max_pool2d', out, (x,), backward)


def global_avg_pool(x):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError('global_avg_pool', x.shape)
    return mean(x, axis=(2, 3))
