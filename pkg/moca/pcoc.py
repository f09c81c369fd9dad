"""Bayesian Gaussian discriminant analysis in a learned embedding space.

Labels follow a categorical distribution with a Dirichlet prior and every
class owns a Gaussian over embeddings ``z = phi(x)`` with a Gaussian prior on
its mean. All covariances are diagonal. The model is generative in ``x``,
so :meth:`PcocUPM.log_marginal_x` lets the filter react to a task switch
before the label is revealed.

Labels are integers ``0 .. n_classes - 1``.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.utils import check_random_state

from .autodiff import (Value, as_value, diag_gaussian_logpdf, inverse_softplus,
                       log, logsumexp, softplus)
from .exceptions import ContractViolation
from .nets import MlpFeatureNet
from .upm import CategoricalPredictive, PosteriorStatistics, \
    UnderlyingPredictiveModel

__all__ = ['PcocPosterior', 'PcocUPM']


@dataclass
class PcocPosterior(PosteriorStatistics):
    """``alpha`` has shape ``(R, J)``; ``q`` (precision-weighted means) and
    ``Lambda`` (diagonal precisions) have shape ``(R, J, d)``."""
    alpha: Value
    q: Value
    Lambda: Value


class PcocUPM(UnderlyingPredictiveModel):
    """Classification UPM.

    Parameters
    ----------
    store : ParameterStore
    input_dim : int
    n_classes : int
    hidden : sequence of int, default=(64, 64)
    embedding_dim : int, default=16
    hidden_activation : str, default='relu'
    embedding_activation : str, default='identity'
    dirichlet_prior : float, default=100.0
        Prior count of every class. Fixed, never learned.
    noise_var : float, default=1.0
        Initial per-class embedding noise variance.
    prior_precision : float, default=1.0
        Initial precision of the prior over class means.
    prior_mean : array of shape (n_classes, embedding_dim) or None
        Initial prior class means; drawn from a standard normal if None.
    learn_noise, learn_prior : bool, default=True
    identity_features : bool, default=False
        Use ``z = x`` (no network).
    prefix : str, default='pcoc'
    random_state : int, RandomState instance or None
    """

    has_x_model = True

    def __init__(self, store, input_dim, n_classes, hidden=(64, 64),
                 embedding_dim=16, hidden_activation='relu',
                 embedding_activation='identity', dirichlet_prior=100.0,
                 noise_var=1.0, prior_precision=1.0, prior_mean=None,
                 learn_noise=True, learn_prior=True, identity_features=False,
                 prefix='pcoc', random_state=None):
        super().__init__(store)
        if n_classes < 1:
            raise ContractViolation("need at least one class")
        if np.any(np.asarray(dirichlet_prior) <= 0):
            raise ContractViolation("Dirichlet prior counts must be positive")
        rng = check_random_state(random_state)
        self.input_dim = int(input_dim)
        self.n_classes = int(n_classes)
        self.prefix = prefix
        if identity_features:
            self.net = None
            self.embedding_dim = self.input_dim
        else:
            widths = list(hidden) + [embedding_dim]
            activations = [hidden_activation] * len(hidden) + \
                [embedding_activation]
            self.net = MlpFeatureNet(store, input_dim, widths, activations,
                                     prefix=prefix + '.net',
                                     random_state=rng)
            self.embedding_dim = int(embedding_dim)
        J, d = self.n_classes, self.embedding_dim
        self.dirichlet_prior = np.broadcast_to(
            np.asarray(dirichlet_prior, dtype=np.float64), (J,)).copy()
        if prior_mean is None:
            prior_mean = rng.standard_normal((J, d))
        prior_mean = np.asarray(prior_mean, dtype=np.float64)
        if prior_mean.shape != (J, d):
            raise ContractViolation("prior_mean must have shape %s"
                                    % ((J, d),))
        store.add(prefix + '.prior_mean', prior_mean, trainable=learn_prior)
        store.add(prefix + '.prior_precision',
                  inverse_softplus(np.full((J, d), prior_precision,
                                           dtype=float)),
                  trainable=learn_prior)
        store.add(prefix + '.noise_var',
                  inverse_softplus(np.full((J, d), noise_var, dtype=float)),
                  trainable=learn_noise)

    @property
    def prior_mean(self):
        return self.store[self.prefix + '.prior_mean']

    def prior_precision(self):
        return softplus(self.store[self.prefix + '.prior_precision'])

    def noise_var(self):
        return softplus(self.store[self.prefix + '.noise_var'])

    def encode(self, x):
        if not isinstance(x, Value):
            x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        x = as_value(x)
        if self.net is None:
            if x.shape[-1] != self.input_dim:
                raise ContractViolation("expected inputs of dimension %d, "
                                        "got %s" % (self.input_dim, x.shape))
            return x
        return self.net(x)

    def _one_hot(self, y):
        label = int(y)
        if label != y or not 0 <= label < self.n_classes:
            raise ContractViolation("label %r outside 0..%d"
                                    % (y, self.n_classes - 1))
        mask = np.zeros(self.n_classes)
        mask[label] = 1.0
        return mask

    def prior_statistics(self):
        J, d = self.n_classes, self.embedding_dim
        Lambda0 = self.prior_precision()
        return PcocPosterior(
            alpha=Value(self.dirichlet_prior.reshape(1, J)),
            q=(Lambda0 * self.prior_mean).reshape(1, J, d),
            Lambda=Lambda0.reshape(1, J, d))

    def recursive_update(self, post, x, y, features=None):
        z = self.encode(x) if features is None else features
        mask = self._one_hot(y)
        inv_noise = 1.0 / self.noise_var()
        gate = as_value(mask[:, None])
        return PcocPosterior(alpha=post.alpha + mask,
                             q=post.q + gate * (inv_noise * z),
                             Lambda=post.Lambda + gate * inv_noise)

    def joint_log_density(self, post, x, features=None):
        """``log p(z, y | eta)`` for every hypothesis and class, shape
        ``(R, J)``."""
        z = self.encode(x) if features is None else features
        log_prior = log(post.alpha) - \
            log(post.alpha.sum(axis=1, keepdims=True))
        mean = post.q / post.Lambda
        var = 1.0 / post.Lambda + self.noise_var()
        return log_prior + diag_gaussian_logpdf(z, mean, var, axis=-1)

    def predictive_distribution(self, post, x, features=None):
        joint = self.joint_log_density(post, x, features)
        return CategoricalPredictive(
            joint - logsumexp(joint, axis=1, keepdims=True))

    def log_predictive_y(self, post, x, y, features=None):
        self._one_hot(y)
        return self.predictive_distribution(post, x, features).log_pdf(y)

    def log_marginal_x(self, post, x, features=None):
        return logsumexp(self.joint_log_density(post, x, features), axis=1)

    def class_means(self, post):
        """Posterior means of the class embeddings, as a plain array."""
        return post.q.data / post.Lambda.data
