"""Learner parameters and the feed-forward feature network.

A :class:`ParameterStore` owns every learned array (the meta-learned
parameters) by name. Models look their parameters up by name at call time,
so a model can be re-pointed at a private snapshot of the store when the
forward/backward pass runs in a worker.
"""
import copy
import threading
from collections import OrderedDict

import numpy as np
from sklearn.utils import check_random_state

from .autodiff import Value, as_value, relu, tanh
from .exceptions import ContractViolation

__all__ = ['ParameterStore', 'MlpFeatureNet', 'ACTIVATIONS']


class ParameterStore:
    """Ordered map name -> :class:`~moca.autodiff.Value`.

    Names are unique and shapes are fixed once a parameter is added; every
    later write goes through :meth:`assign` or in-place updates.
    """

    def __init__(self):
        self._values = OrderedDict()
        self._trainable = OrderedDict()
        self._lock = threading.Lock()

    def add(self, name, data, trainable=True):
        if name in self._values:
            raise ContractViolation("parameter %r already exists" % name)
        value = Value(np.array(data, dtype=np.float64, copy=True),
                      requires_grad=trainable)
        self._values[name] = value
        self._trainable[name] = trainable
        return value

    def __getitem__(self, name):
        return self._values[name]

    def __contains__(self, name):
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def names(self):
        return list(self._values)

    def items(self):
        return self._values.items()

    def is_trainable(self, name):
        return self._trainable[name]

    def trainable_items(self):
        return [(name, value) for name, value in self._values.items()
                if self._trainable[name]]

    @property
    def n_parameters(self):
        return int(sum(v.size for v in self._values.values()))

    def assign(self, name, data):
        value = self._values[name]
        data = np.asarray(data, dtype=np.float64)
        if data.shape != value.shape:
            raise ContractViolation("parameter %r has shape %s, got %s"
                                    % (name, value.shape, data.shape))
        value.data[...] = data

    def zero_grad(self):
        for value in self._values.values():
            value.zero_grad()

    def grads(self):
        """Copy of the accumulated gradients of trainable parameters."""
        return OrderedDict((name, value.grad.copy())
                           for name, value in self.trainable_items())

    def add_grads(self, grads):
        """Sum gradients computed elsewhere (e.g. by a worker holding a
        :meth:`snapshot`) into this store. Thread safe."""
        with self._lock:
            for name, grad in grads.items():
                value = self._values[name]
                if grad.shape != value.shape:
                    raise ContractViolation(
                        "gradient for %r has shape %s, expected %s"
                        % (name, grad.shape, value.shape))
                value._accumulate(grad)

    def snapshot(self):
        """Independent copy of the parameters (gradients are not copied)."""
        clone = ParameterStore()
        for name, value in self._values.items():
            clone.add(name, value.data, trainable=self._trainable[name])
        return clone

    def state_dict(self):
        return OrderedDict((name, value.data.copy())
                           for name, value in self._values.items())

    def load_state_dict(self, state):
        missing = set(self._values) - set(state)
        unexpected = set(state) - set(self._values)
        if missing or unexpected:
            raise ContractViolation("state does not match the store: missing "
                                    "%s, unexpected %s"
                                    % (sorted(missing), sorted(unexpected)))
        for name, data in state.items():
            self.assign(name, data)


ACTIVATIONS = {
    'relu': relu,
    'tanh': tanh,
    'identity': lambda v: v,
}


class MlpFeatureNet:
    """Multilayer perceptron mapping inputs to a feature vector.

    Parameters
    ----------
    store : ParameterStore
        Receives the weights ``<prefix>.W<i>`` and biases ``<prefix>.b<i>``.
    input_dim : int
    widths : list of int
        Output width of every layer; the last entry is the feature
        dimension.
    activations : list of {'relu', 'tanh', 'identity'}
        One per layer.
    prefix : str, default='net'
    random_state : int, RandomState instance or None
        Seeds the Glorot-uniform initialization.
    """

    def __init__(self, store, input_dim, widths, activations, prefix='net',
                 random_state=None):
        if len(widths) != len(activations):
            raise ContractViolation("need one activation per layer")
        unknown = set(activations) - set(ACTIVATIONS)
        if unknown:
            raise ContractViolation("unknown activations %s" % sorted(unknown))
        rng = check_random_state(random_state)
        self.store = store
        self.input_dim = int(input_dim)
        self.widths = [int(w) for w in widths]
        self.activations = list(activations)
        self.prefix = prefix
        fan_in = self.input_dim
        for i, fan_out in enumerate(self.widths):
            # same bound as scikit-learn's MLP initialization
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            store.add(self._name('W', i),
                      rng.uniform(-bound, bound, (fan_in, fan_out)))
            store.add(self._name('b', i),
                      rng.uniform(-bound, bound, fan_out))
            fan_in = fan_out

    def _name(self, kind, i):
        return '%s.%s%d' % (self.prefix, kind, i)

    @property
    def output_dim(self):
        return self.widths[-1]

    def parameter_names(self):
        return [self._name(kind, i) for i in range(len(self.widths))
                for kind in ('W', 'b')]

    def __call__(self, x):
        h = as_value(x)
        if h.shape[-1] != self.input_dim:
            raise ContractViolation("expected inputs of dimension %d, got %s"
                                    % (self.input_dim, h.shape))
        for i, act in enumerate(self.activations):
            h = h @ self.store[self._name('W', i)] + \
                self.store[self._name('b', i)]
            h = ACTIVATIONS[act](h)
        return h

    def with_store(self, store):
        """Shallow copy reading its weights from ``store``."""
        clone = copy.copy(self)
        clone.store = store
        return clone
