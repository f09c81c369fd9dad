"""scikit-learn style wrappers around a meta-trained run-length filter.

``fit`` meta-trains the feature network on recorded streams; afterwards the
estimator is an online learner: ``partial_fit`` feeds it one labelled point
at a time and ``predict`` answers from the current run-length mixture.
``score`` is the mean log predictive probability of a sequence filtered
from a fresh belief, so higher is better as scikit-learn expects.
"""
import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .alpaca import AlpacaUPM
from .autodiff import no_grad
from .envs import EpisodeStream
from .exceptions import ContractViolation
from .filter import MocaFilter, prune
from .nets import ParameterStore
from .pcoc import PcocUPM
from .trainer import fit_on_streams

__all__ = ['MocaRegressor', 'MocaClassifier']

logger = logging.getLogger(__name__)


def _as_streams(X, y):
    if y is not None:
        return [EpisodeStream.from_arrays(X, y)]
    if isinstance(X, EpisodeStream):
        return [X]
    streams = list(X)
    if not streams or not all(isinstance(s, EpisodeStream) for s in streams):
        raise ContractViolation("fit expects (X, y) arrays or a list of "
                                "EpisodeStream")
    return streams


def _rows(X):
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


class _MocaEstimator(BaseEstimator):

    def __init__(self, hazard=0.1, hidden=(128, 128), feature_dim=32,
                 hidden_activation='relu', feature_activation='tanh',
                 noise_var=0.5, learning_rate=0.02, batch_size=10,
                 batch_length=None, iterations=1000, decay_interval=1000,
                 decay_factor=0.5, min_weight=1e-6, max_hypotheses=512,
                 n_jobs=1, verbose=False, random_state=None):
        self.hazard = hazard
        self.hidden = hidden
        self.feature_dim = feature_dim
        self.hidden_activation = hidden_activation
        self.feature_activation = feature_activation
        self.noise_var = noise_var
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.batch_length = batch_length
        self.iterations = iterations
        self.decay_interval = decay_interval
        self.decay_factor = decay_factor
        self.min_weight = min_weight
        self.max_hypotheses = max_hypotheses
        self.n_jobs = n_jobs
        self.verbose = verbose
        self.random_state = random_state

    def _build_upm(self, store, streams, rng):
        raise NotImplementedError

    def fit(self, X, y=None):
        """Meta-train on recorded data.

        Parameters
        ----------
        X : array of shape (n_steps, n_features), EpisodeStream or list of
            EpisodeStream
        y : array of shape (n_steps,) or (n_steps, n_outputs), optional
            Labels when ``X`` is a single array.
        """
        if not 0.0 < self.hazard < 1.0:
            raise ContractViolation("hazard must lie in (0, 1)")
        streams = _as_streams(X, y)
        rng = check_random_state(self.random_state)
        length = self.batch_length or max(2, int(round(1.0 / self.hazard)))
        length = min(length, max(len(s) for s in streams))
        self.store_ = ParameterStore()
        self.upm_ = self._build_upm(self.store_, streams, rng)
        self.n_features_in_ = streams[0].x.shape[1]
        self.curve_ = fit_on_streams(
            self.store_, self.upm_, streams, self.hazard, length,
            batch_size=self.batch_size, iterations=self.iterations,
            learning_rate=self.learning_rate,
            decay_interval=self.decay_interval,
            decay_factor=self.decay_factor, random_state=rng,
            threads=self.n_jobs, progress=self.verbose)
        logger.info("fitted %s: final training nll %.4f",
                    type(self).__name__, self.curve_['mean_nll'].iloc[-1])
        return self.reset()

    def reset(self):
        """Forget the online data; the belief restarts at run length 0."""
        check_is_fitted(self, 'upm_')
        self.filter_ = MocaFilter(self.upm_, self.hazard)
        self.belief_, self.bank_ = self.filter_.init_belief()
        return self

    def partial_fit(self, X, y):
        """Condition the filter on labelled points, in order."""
        check_is_fitted(self, 'upm_')
        X = _rows(X)
        y = np.asarray(y)
        with no_grad():
            for x, label in zip(X, y):
                _, belief, bank, _ = self.filter_.step(self.belief_,
                                                       self.bank_, x, label)
                if self.max_hypotheses is not None:
                    belief, bank = prune(belief, bank, self.min_weight,
                                         self.max_hypotheses)
                self.belief_, self.bank_ = belief, bank
        return self

    def _predictive(self, x):
        with no_grad():
            features = self.upm_.encode(x)
            belief = self.filter_.update_on_x(self.belief_, self.bank_, x,
                                              features)
            return self.filter_.predict(belief, self.bank_, x, features)

    @property
    def map_run_length_(self):
        check_is_fitted(self, 'upm_')
        return self.belief_.map_run_length

    def _mean_log_likelihood(self, X, y):
        """Mean log predictive probability of a sequence filtered from a
        fresh belief; the online state is left untouched."""
        check_is_fitted(self, 'upm_')
        with no_grad():
            nlls, _ = self.filter_.filter(_rows(X), np.asarray(y))
        return -float(np.mean([n.item() for n in nlls]))


class MocaRegressor(RegressorMixin, _MocaEstimator):
    """Online regressor: ALPaCA posteriors mixed over run lengths.

    Attributes
    ----------
    store_ : ParameterStore
    upm_ : AlpacaUPM
    curve_ : DataFrame
        Meta-training curve.
    belief_, bank_ : current run-length belief and posterior bank.
    """

    def _build_upm(self, store, streams, rng):
        y = np.asarray(streams[0].y)
        output_dim = 1 if y.ndim == 1 else y.shape[1]
        return AlpacaUPM(store, streams[0].x.shape[1], output_dim=output_dim,
                         hidden=self.hidden, feature_dim=self.feature_dim,
                         hidden_activation=self.hidden_activation,
                         feature_activation=self.feature_activation,
                         noise_var=self.noise_var, random_state=rng)

    def predict(self, X):
        """Predictive mean at every row of ``X`` from the current belief."""
        check_is_fitted(self, 'upm_')
        means = np.stack([self._predictive(x).predictive_mean()
                          for x in _rows(X)])
        return means[:, 0] if self.upm_.output_dim == 1 else means

    def predict_variance(self, X):
        check_is_fitted(self, 'upm_')
        var = np.stack([self._predictive(x).predictive_variance()
                        for x in _rows(X)])
        return var[:, 0] if self.upm_.output_dim == 1 else var

    def score(self, X, y, sample_weight=None):
        return self._mean_log_likelihood(X, y)


class MocaClassifier(ClassifierMixin, _MocaEstimator):
    """Online classifier: PCOC posteriors mixed over run lengths.

    ``n_classes=None`` infers the number of classes from the training
    labels, which must be ``0, ..., n_classes - 1``.
    """

    def __init__(self, hazard=0.1, n_classes=None, hidden=(64, 64),
                 feature_dim=16, hidden_activation='relu',
                 feature_activation='identity', noise_var=1.0,
                 dirichlet_prior=100.0, learning_rate=0.02, batch_size=10,
                 batch_length=None, iterations=1000, decay_interval=1000,
                 decay_factor=0.5, min_weight=1e-6, max_hypotheses=512,
                 n_jobs=1, verbose=False, random_state=None):
        super().__init__(
            hazard=hazard, hidden=hidden, feature_dim=feature_dim,
            hidden_activation=hidden_activation,
            feature_activation=feature_activation, noise_var=noise_var,
            learning_rate=learning_rate, batch_size=batch_size,
            batch_length=batch_length, iterations=iterations,
            decay_interval=decay_interval, decay_factor=decay_factor,
            min_weight=min_weight, max_hypotheses=max_hypotheses,
            n_jobs=n_jobs, verbose=verbose, random_state=random_state)
        self.n_classes = n_classes
        self.dirichlet_prior = dirichlet_prior

    def _build_upm(self, store, streams, rng):
        n_classes = self.n_classes
        if n_classes is None:
            n_classes = int(max(np.max(s.y) for s in streams)) + 1
        self.classes_ = np.arange(n_classes)
        return PcocUPM(store, streams[0].x.shape[1], n_classes,
                       hidden=self.hidden, embedding_dim=self.feature_dim,
                       hidden_activation=self.hidden_activation,
                       embedding_activation=self.feature_activation,
                       dirichlet_prior=self.dirichlet_prior,
                       noise_var=self.noise_var, random_state=rng)

    def predict_proba(self, X):
        check_is_fitted(self, 'upm_')
        return np.stack([self._predictive(x).probs for x in _rows(X)])

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def score(self, X, y, sample_weight=None):
        return self._mean_log_likelihood(X, y)
