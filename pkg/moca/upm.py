"""Contract of an underlying predictive model (UPM) and its predictive
distributions.

A UPM turns a few labelled points of the current task into posterior
statistics and predicts with them. The filter keeps one set of statistics
per run-length hypothesis; all statistics of a bank are stored stacked along
a leading axis so that every hypothesis is updated by a single batched call.
"""
from abc import ABC, abstractmethod
import copy
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import (Value, as_value, concatenate, diag_gaussian_logpdf,
                       logsumexp)

__all__ = ['PosteriorStatistics', 'UnderlyingPredictiveModel',
           'GaussianPredictive', 'GaussianMixture', 'CategoricalPredictive',
           'Categorical', 'fold']


class PosteriorStatistics:
    """Mixin for dataclasses whose fields are ``Value`` arrays stacked
    along axis 0 (one row per hypothesis)."""

    def __len__(self):
        return len(getattr(self, fields(self)[0].name))

    def _map(self, fn):
        return type(self)(**{f.name: fn(getattr(self, f.name))
                             for f in fields(self)})

    def take(self, index):
        """Select hypotheses by integer index array (keeps the stacking)."""
        index = np.asarray(index, dtype=int)
        return self._map(lambda v: v[index])

    def entry(self, r):
        return self.take([r])

    def concat(self, other):
        return type(self)(**{f.name: concatenate([getattr(self, f.name),
                                                  getattr(other, f.name)])
                             for f in fields(self)})

    def detach(self):
        return self._map(lambda v: Value(v.data))

    def numpy(self):
        return {f.name: getattr(self, f.name).data for f in fields(self)}


class UnderlyingPredictiveModel(ABC):
    """Base class of the meta-learning models plugged into the filter.

    Subclasses read their parameters from ``self.store`` by name at call
    time. Methods taking ``features`` accept the already encoded input to
    avoid running the feature network several times per step.
    """

    #: whether :meth:`log_marginal_x` models the inputs
    has_x_model = False

    def __init__(self, store):
        self.store = store

    def with_store(self, store):
        """Shallow copy reading its parameters from ``store``."""
        clone = copy.copy(self)
        clone.store = store
        if getattr(self, 'net', None) is not None:
            clone.net = self.net.with_store(store)
        return clone

    @abstractmethod
    def encode(self, x):
        """Feature (embedding) vector of a single input."""

    @abstractmethod
    def prior_statistics(self):
        """Statistics of the prior, stacked as a bank of length one."""

    @abstractmethod
    def recursive_update(self, post, x, y, features=None):
        """Condition every stacked statistic on one more pair ``(x, y)``."""

    @abstractmethod
    def predictive_distribution(self, post, x, features=None):
        """Per-hypothesis predictive distribution of the label at ``x``."""

    def log_predictive_y(self, post, x, y, features=None):
        """Log predictive density of ``y`` at ``x``, one entry per
        hypothesis."""
        return self.predictive_distribution(post, x, features).log_pdf(y)

    def log_marginal_x(self, post, x, features=None):
        """Log density of the input, one entry per hypothesis; ``None`` when
        the model does not describe its inputs."""
        return None

    def parameter_names(self):
        return self.store.names()


def fold(upm, post, xs, ys):
    """Condition ``post`` on the pairs ``(xs[i], ys[i])`` one at a time."""
    for x, y in zip(xs, ys):
        post = upm.recursive_update(post, x, y)
    return post


@dataclass
class GaussianPredictive:
    """Diagonal Gaussians, one per hypothesis (``mean``/``var`` of shape
    ``(R, n_y)``)."""
    mean: Value
    var: Value

    def __len__(self):
        return len(self.mean)

    def log_pdf(self, y):
        y = as_value(np.atleast_1d(np.asarray(
            y.data if isinstance(y, Value) else y, dtype=np.float64)))
        return diag_gaussian_logpdf(y, self.mean, self.var, axis=-1)

    def mix(self, log_weights):
        return GaussianMixture(as_value(log_weights), self.mean, self.var)


@dataclass
class GaussianMixture:
    """Weighted mixture of diagonal Gaussians."""
    log_weights: Value
    mean: Value
    var: Value

    @property
    def weights(self):
        return np.exp(self.log_weights.data)

    def component_log_pdf(self, y):
        return GaussianPredictive(self.mean, self.var).log_pdf(y)

    def log_pdf(self, y):
        return logsumexp(self.log_weights + self.component_log_pdf(y))

    def predictive_mean(self):
        return self.weights @ self.mean.data

    def predictive_variance(self):
        w = self.weights[:, None]
        m = self.predictive_mean()
        second = (w * (self.var.data + self.mean.data ** 2)).sum(axis=0)
        return second - m ** 2

    def sample(self, random_state, size=1):
        w = self.weights
        w = w / w.sum()
        idx = random_state.choice(len(w), size=size, p=w)
        return random_state.normal(self.mean.data[idx],
                                   np.sqrt(self.var.data[idx]))


@dataclass
class CategoricalPredictive:
    """Class log-probabilities of shape ``(R, J)``, one row per
    hypothesis."""
    log_probs: Value

    def __len__(self):
        return len(self.log_probs)

    def log_pdf(self, y):
        return self.log_probs[:, int(y)]

    def mix(self, log_weights):
        lw = as_value(log_weights).reshape(-1, 1)
        return Categorical(logsumexp(lw + self.log_probs, axis=0))


@dataclass
class Categorical:
    """A single categorical distribution; a mixture of categoricals is
    again categorical."""
    log_probs: Value

    @property
    def probs(self):
        return np.exp(self.log_probs.data)

    def log_pdf(self, y):
        return self.log_probs[int(y)]

    def predict(self):
        return int(np.argmax(self.log_probs.data))

