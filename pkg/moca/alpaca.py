"""Bayesian last-layer linear regression in a learned feature space.

The label is modelled as ``y | x ~ N(K^T phi(x), Sigma_eps)`` with a
matrix-normal prior ``K ~ MN(K0, Lambda0^-1, Sigma_eps)``. Posterior
statistics are ``Q = Lambda K_bar`` (the precision-weighted mean) and
``Lambda_inv``; both admit an exact rank-one recursive update, so the
posterior after ``t`` points costs ``t`` updates with the latest point only.

The model only describes ``p(y | x)``: inputs carry no information about the
task, so :meth:`AlpacaUPM.log_marginal_x` is absent.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.utils import check_random_state

from .autodiff import Value, as_value, inverse_softplus, softplus
from .exceptions import ContractViolation, NumericalError
from .nets import MlpFeatureNet
from .upm import GaussianPredictive, PosteriorStatistics, \
    UnderlyingPredictiveModel

__all__ = ['AlpacaPosterior', 'AlpacaUPM']


@dataclass
class AlpacaPosterior(PosteriorStatistics):
    """``Q`` has shape ``(R, n_phi, n_y)``, ``Lambda_inv`` has shape
    ``(R, n_phi, n_phi)``."""
    Q: Value
    Lambda_inv: Value


class AlpacaUPM(UnderlyingPredictiveModel):
    """Regression UPM.

    Parameters
    ----------
    store : ParameterStore
    input_dim : int
    output_dim : int, default=1
    hidden : sequence of int, default=(128, 128)
        Hidden layer widths of the feature network.
    feature_dim : int, default=32
    hidden_activation : str, default='relu'
    feature_activation : str, default='tanh'
    noise_var : float, default=0.5
        Initial observation noise variance (per output).
    prior_precision : float, default=1.0
        Initial diagonal of ``Lambda0``.
    learn_noise, learn_prior : bool, default=True
        Whether the noise variance and the prior (``K0``, ``Lambda0``) are
        trainable.
    identity_features : bool, default=False
        Use ``phi(x) = x`` (no network): plain conjugate Bayesian linear
        regression.
    prefix : str, default='alpaca'
    random_state : int, RandomState instance or None
    """

    has_x_model = False

    def __init__(self, store, input_dim, output_dim=1, hidden=(128, 128),
                 feature_dim=32, hidden_activation='relu',
                 feature_activation='tanh', noise_var=0.5,
                 prior_precision=1.0, learn_noise=True, learn_prior=True,
                 identity_features=False, prefix='alpaca',
                 random_state=None):
        super().__init__(store)
        rng = check_random_state(random_state)
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.prefix = prefix
        if identity_features:
            self.net = None
            self.feature_dim = self.input_dim
        else:
            widths = list(hidden) + [feature_dim]
            activations = [hidden_activation] * len(hidden) + \
                [feature_activation]
            self.net = MlpFeatureNet(store, input_dim, widths, activations,
                                     prefix=prefix + '.net',
                                     random_state=rng)
            self.feature_dim = int(feature_dim)
        n, ny = self.feature_dim, self.output_dim
        store.add(prefix + '.K0', np.zeros((n, ny)), trainable=learn_prior)
        store.add(prefix + '.prior_precision',
                  inverse_softplus(np.full(n, prior_precision, dtype=float)),
                  trainable=learn_prior)
        store.add(prefix + '.noise_var',
                  inverse_softplus(np.full(ny, noise_var, dtype=float)),
                  trainable=learn_noise)

    # parameters -------------------------------------------------------
    @property
    def prior_mean(self):
        return self.store[self.prefix + '.K0']

    def prior_precision(self):
        return softplus(self.store[self.prefix + '.prior_precision'])

    def noise_var(self):
        return softplus(self.store[self.prefix + '.noise_var'])

    # model ------------------------------------------------------------
    def encode(self, x):
        if not isinstance(x, Value):
            x = np.asarray(x, dtype=np.float64)
            if x.ndim == 0:
                x = x.reshape(1)
        x = as_value(x)
        if self.net is None:
            if x.shape[-1] != self.input_dim:
                raise ContractViolation("expected inputs of dimension %d, "
                                        "got %s" % (self.input_dim, x.shape))
            return x
        return self.net(x)

    def _label(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if y.shape != (self.output_dim,):
            raise ContractViolation("expected a label of dimension %d, got %s"
                                    % (self.output_dim, y.shape))
        return y

    def prior_statistics(self):
        n, ny = self.feature_dim, self.output_dim
        lam0 = self.prior_precision()
        Lambda_inv = (as_value(np.eye(n)) / lam0).reshape(1, n, n)
        Q = (lam0.reshape(n, 1) * self.prior_mean).reshape(1, n, ny)
        return AlpacaPosterior(Q=Q, Lambda_inv=Lambda_inv)

    def recursive_update(self, post, x, y, features=None):
        phi = self.encode(x) if features is None else features
        n = self.feature_dim
        col = phi.reshape(n, 1)
        u = post.Lambda_inv @ col
        s = col.mT @ u
        Lambda_inv = post.Lambda_inv - (u @ u.mT) / (1.0 + s)
        Lambda_inv = 0.5 * (Lambda_inv + Lambda_inv.mT)
        yv = as_value(self._label(y).reshape(1, self.output_dim))
        Q = post.Q + col @ yv
        return AlpacaPosterior(Q=Q, Lambda_inv=Lambda_inv)

    def predictive_distribution(self, post, x, features=None):
        phi = self.encode(x) if features is None else features
        n, ny, R = self.feature_dim, self.output_dim, len(post)
        col = phi.reshape(n, 1)
        s = (col.mT @ (post.Lambda_inv @ col)).reshape(R, 1)
        K = post.Lambda_inv @ post.Q
        mean = (col.mT @ K).reshape(R, ny)
        var = (1.0 + s) * self.noise_var()
        if not np.all(np.isfinite(var.data)) or np.any(var.data <= 0):
            raise NumericalError("predictive covariance is not positive "
                                 "definite")
        return GaussianPredictive(mean=mean, var=var)

    def log_predictive_y(self, post, x, y, features=None):
        return self.predictive_distribution(post, x, features).log_pdf(
            self._label(y))

    # evaluation helpers (plain arrays) ---------------------------------
    def posterior_weights(self, post):
        """Posterior mean ``K_bar = Lambda_inv Q`` of every hypothesis."""
        return np.matmul(post.Lambda_inv.data, post.Q.data)

    def check_positive_definite(self, post):
        """Raise :class:`NumericalError` unless every ``Lambda_inv`` admits a
        Cholesky factorization."""
        for r, Linv in enumerate(post.Lambda_inv.data):
            try:
                linalg.cholesky(Linv, lower=True)
            except linalg.LinAlgError:
                raise NumericalError("Lambda_inv of hypothesis %d is not "
                                     "positive definite" % r)

    def sample_weights(self, post, r, random_state=None):
        """Draw last-layer weights from the matrix-normal posterior of
        hypothesis ``r``."""
        rng = check_random_state(random_state)
        Linv = post.Lambda_inv.data[r]
        K_bar = Linv @ post.Q.data[r]
        eigval, eigvec = np.linalg.eigh(0.5 * (Linv + Linv.T))
        row_factor = eigvec * np.sqrt(np.clip(eigval, 0.0, None))
        col_scale = np.sqrt(self.noise_var().data)
        Z = rng.standard_normal(K_bar.shape)
        return K_bar + row_factor @ Z * col_scale[None, :]

    def feature_matrix(self, X):
        """Features of a batch of inputs, as a plain array."""
        return self.encode(np.asarray(X, dtype=np.float64)).data

