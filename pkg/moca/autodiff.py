"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are recorded eagerly (define-by-run): every operation on a
:class:`Value` returns a new ``Value`` remembering its parents and how to
push the output gradient back to them. Calling :meth:`Value.backward` on a
scalar loss walks the graph once in reverse topological order.

Broadcasting follows numpy; ``matmul`` follows ``numpy.matmul`` including
batched (stacked) operands, which is what the filter uses to update every
run-length hypothesis in one call.
"""
import contextlib
import threading

import numpy as np
from scipy.special import expit
from scipy.special import logsumexp as _np_logsumexp

from .exceptions import ContractViolation

__all__ = ['Value', 'as_value', 'no_grad', 'is_grad_enabled', 'backward',
           'matmul', 'tanh', 'relu', 'exp', 'log', 'softplus', 'logsumexp',
           'concatenate', 'reduce_sum', 'reduce_mean', 'clip_min',
           'diag_gaussian_logpdf', 'inverse_softplus']

LOG_2PI = np.log(2 * np.pi)

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, 'enabled', True)


@contextlib.contextmanager
def no_grad():
    """Context manager disabling graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _unbroadcast(grad, shape):
    """Sum ``grad`` over the axes numpy broadcast to reach ``shape``."""
    if grad.shape == shape:
        return grad
    n_extra = grad.ndim - len(shape)
    if n_extra > 0:
        grad = grad.sum(axis=tuple(range(n_extra)))
    axes = tuple(i for i, n in enumerate(shape)
                 if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation("operands of %s do not conform: %s and %s"
                                % (op, a.shape, b.shape))


class Value:
    """A node of the computation graph.

    Parameters
    ----------
    data : array-like
        Converted to a float64 array.
    requires_grad : bool, default=False
        Leaves with ``requires_grad=True`` accumulate gradients.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._grad = None
        self._parents = ()
        self._backward = None
        self._op = ''

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.data.shape:
            raise ContractViolation("gradient shape %s does not match data "
                                    "shape %s" % (value.shape, self.shape))
        self._grad = value

    @property
    def is_leaf(self):
        return not self._parents

    def zero_grad(self):
        self._grad = None

    def _accumulate(self, grad):
        if self._grad is None:
            self._grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self._grad += grad

    def __repr__(self):
        return "Value(shape=%s, op=%r, requires_grad=%s)" % (
            self.shape, self._op, self.requires_grad)

    def __len__(self):
        return len(self.data)

    def item(self):
        if self.size != 1:
            self._raise_not_scalar()
        return float(self.data.reshape(()))

    def _raise_not_scalar(self):
        raise ContractViolation("Value of shape %s is not a scalar"
                                % (self.shape,))

    def numpy(self):
        return self.data.copy()

    def backward(self):
        """Back-propagate from this scalar into every reachable leaf.

        The graph is consumed: interior nodes drop their parents and
        backward rules so that it can be garbage collected.
        """
        if self.size != 1:
            self._raise_not_scalar()
        order = _topological_order(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)
        for node in order:
            if node._parents:
                node._parents = ()
                node._backward = None

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return _add(self, as_value(other))

    def __radd__(self, other):
        return _add(as_value(other), self)

    def __sub__(self, other):
        return _sub(self, as_value(other))

    def __rsub__(self, other):
        return _sub(as_value(other), self)

    def __mul__(self, other):
        return _mul(self, as_value(other))

    def __rmul__(self, other):
        return _mul(as_value(other), self)

    def __truediv__(self, other):
        return _div(self, as_value(other))

    def __rtruediv__(self, other):
        return _div(as_value(other), self)

    def __neg__(self):
        return _make(-self.data, (self,), lambda g: (-g,), 'neg')

    def __pow__(self, exponent):
        if isinstance(exponent, Value):
            raise ContractViolation("only constant exponents are supported")
        p = float(exponent)
        x = self.data
        return _make(x ** p, (self,), lambda g: (g * p * x ** (p - 1),), 'pow')

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return _getitem(self, index)

    # shape manipulation -----------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ContractViolation("cannot reshape %s into %s"
                                    % (old_shape, shape))
        return _make(out, (self,), lambda g: (g.reshape(old_shape),),
                     'reshape')

    @property
    def mT(self):
        """Swap the last two axes."""
        if self.ndim < 2:
            raise ContractViolation("mT needs at least two dimensions")
        return _make(np.swapaxes(self.data, -1, -2), (self,),
                     lambda g: (np.swapaxes(g, -1, -2),), 'mT')

    @property
    def T(self):
        return _make(self.data.T, (self,), lambda g: (g.T,), 'T')

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def as_value(x):
    """Wrap constants; pass ``Value`` instances through."""
    if isinstance(x, Value):
        return x
    return Value(x)


def _make(data, parents, rule, op):
    """Create the output node of an operation.

    ``rule`` maps the output gradient to one gradient per parent, already
    shaped like the output (unbroadcasting happens here).
    """
    out = Value(data)
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents

        def _backward(grad):
            for parent, pgrad in zip(parents, rule(grad)):
                if parent.requires_grad and pgrad is not None:
                    parent._accumulate(_unbroadcast(pgrad, parent.shape))

        out._backward = _backward
    return out


def _topological_order(root):
    # iterative DFS: filter graphs are deeper than the recursion limit
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss):
    """Back-propagate a scalar loss; gradients land on the leaves (the
    parameters of a :class:`~moca.nets.ParameterStore`)."""
    loss.backward()


# binary operations ----------------------------------------------------------

def _add(a, b):
    _broadcast_shape(a, b, 'add')
    return _make(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def _sub(a, b):
    _broadcast_shape(a, b, 'sub')
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), 'sub')


def _mul(a, b):
    _broadcast_shape(a, b, 'mul')
    x, y = a.data, b.data
    return _make(x * y, (a, b), lambda g: (g * y, g * x), 'mul')


def _div(a, b):
    _broadcast_shape(a, b, 'div')
    x, y = a.data, b.data
    return _make(x / y, (a, b), lambda g: (g / y, -g * x / (y * y)), 'div')


def matmul(a, b):
    """``numpy.matmul`` with gradients, including stacked operands."""
    a, b = as_value(a), as_value(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ContractViolation("matmul does not accept scalars")
    a2 = a.data[None, :] if a.ndim == 1 else a.data
    b2 = b.data[:, None] if b.ndim == 1 else b.data
    if a2.shape[-1] != b2.shape[-2]:
        raise ContractViolation("matmul operands do not conform: %s and %s"
                                % (a.shape, b.shape))
    try:
        out2 = np.matmul(a2, b2)
    except ValueError:
        raise ContractViolation("matmul batch dimensions do not conform: "
                                "%s and %s" % (a.shape, b.shape))
    out = out2
    if a.ndim == 1:
        out = out.squeeze(-2)
    if b.ndim == 1:
        out = out.squeeze(-1)

    def rule(g):
        g2 = g.reshape(out2.shape)
        ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape)
        return ga.reshape(a.shape), gb.reshape(b.shape)

    return _make(out, (a, b), rule, 'matmul')


# unary elementwise operations -----------------------------------------------

def _tanh_grad(x, y):
    return 1.0 - y * y


def _relu_grad(x, y):
    return (x > 0).astype(np.float64)


def _exp_grad(x, y):
    return y


def _log_grad(x, y):
    return 1.0 / x


def _softplus_grad(x, y):
    return expit(x)


# derivative of each unary op as a function of its input and output
_UNARY_DERIVATIVES = {
    'tanh': _tanh_grad,
    'relu': _relu_grad,
    'exp': _exp_grad,
    'log': _log_grad,
    'softplus': _softplus_grad,
}

_UNARY_FORWARD = {
    'tanh': np.tanh,
    'relu': lambda x: np.maximum(x, 0.0),
    'exp': np.exp,
    'log': np.log,
    'softplus': lambda x: np.logaddexp(0.0, x),
}


def _unary(name, x):
    x = as_value(x)
    inp = x.data
    with np.errstate(divide='ignore'):
        out = _UNARY_FORWARD[name](inp)

    def rule(g):
        return (g * _UNARY_DERIVATIVES[name](inp, out),)

    return _make(out, (x,), rule, name)


def tanh(x):
    return _unary('tanh', x)


def relu(x):
    return _unary('relu', x)


def exp(x):
    return _unary('exp', x)


def log(x):
    return _unary('log', x)


def softplus(x):
    """``log(1 + exp(x))``, used to keep variances and precisions
    positive while optimizing unconstrained parameters."""
    return _unary('softplus', x)


def inverse_softplus(y):
    """Inverse of :func:`softplus` on plain arrays (for initialization)."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def clip_min(x, floor):
    """Clamp from below; the gradient is zero where the floor is active."""
    x = as_value(x)
    inp = x.data
    out = np.maximum(inp, floor)
    return _make(out, (x,), lambda g: (g * (inp > floor),), 'clip_min')


# reductions -----------------------------------------------------------------

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims=False):
    x = as_value(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (x,),
                 lambda g: (_expand_reduced(g, shape, axis, keepdims),),
                 'sum')


def reduce_mean(x, axis=None, keepdims=False):
    x = as_value(x)
    n = x.size if axis is None else \
        np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return reduce_sum(x, axis=axis, keepdims=keepdims) / float(n)


def logsumexp(x, axis=None, keepdims=False):
    """Numerically stable ``log(sum(exp(x)))`` along ``axis``."""
    x = as_value(x)
    inp = x.data
    shape = x.shape
    out = _np_logsumexp(inp, axis=axis, keepdims=keepdims)

    def rule(g):
        full = _expand_reduced(out, shape, axis, keepdims)
        with np.errstate(invalid='ignore'):
            soft = np.exp(inp - full)
        soft = np.where(np.isfinite(inp), soft, 0.0)
        return (_expand_reduced(g, shape, axis, keepdims) * soft,)

    return _make(out, (x,), rule, 'logsumexp')


# structural -----------------------------------------------------------------

def concatenate(values, axis=0):
    values = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError:
        raise ContractViolation("cannot concatenate shapes %s"
                                % [v.shape for v in values])
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(values), rule, 'concatenate')


def _getitem(x, index):
    if isinstance(index, Value):
        raise ContractViolation("index must be constant")
    inp_shape = x.shape
    try:
        out = x.data[index]
    except IndexError as exc:
        raise ContractViolation(str(exc))

    def rule(g):
        full = np.zeros(inp_shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), rule, 'getitem')


# densities ------------------------------------------------------------------

def diag_gaussian_logpdf(z, mean, var, axis=-1):
    """Log density of a Gaussian with diagonal covariance ``var``, summed
    over ``axis``; the remaining axes broadcast."""
    z, mean, var = as_value(z), as_value(mean), as_value(var)
    diff = z - mean
    return -0.5 * reduce_sum(log(var) + diff * diff / var + LOG_2PI,
                             axis=axis)
