"""Online predictors built on a UPM: the run-length filter and the
baselines conditioning on a fixed choice of past points.

All agents share the same UPM and parameters and only differ in which
past points they condition on. An agent exposes its current conditioning
as a ``(belief, bank)`` pair so that prediction, scoring and action
selection are written once.
"""
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass

import numpy as np
from sklearn.utils import check_random_state

from .autodiff import Value, no_grad
from .exceptions import ContractViolation
from .filter import (CHANGEPOINT_NOW, LIKELIHOOD_FLOOR, MocaFilter,
                     PosteriorBank, RunLengthBelief, apply_supervision, prune)
from .upm import fold

__all__ = ['sliding_window_predict', 'oracle_predict',
           'condition_on_everything_predict', 'AgentStep', 'Agent',
           'ConditioningAgent',
           'MocaAgent', 'SlidingWindowAgent', 'OracleAgent',
           'ConditionOnEverythingAgent', 'TrainOnEverythingAgent',
           'make_agent', 'parse_agent_kind', 'training_mode_for']


def _point_mass():
    return RunLengthBelief(log_weights=Value(np.zeros(1)),
                           run_lengths=np.zeros(1, dtype=int))


def _single_predictive(upm, post, x):
    return upm.predictive_distribution(post, x).mix(Value(np.zeros(1)))


def sliding_window_predict(upm, history, n, x):
    """Predictive at ``x`` after conditioning on the ``n`` most recent
    pairs of ``history = (xs, ys)``."""
    xs, ys = history
    start = max(len(xs) - n, 0) if n > 0 else len(xs)
    post = fold(upm, upm.prior_statistics(), xs[start:], ys[start:])
    return _single_predictive(upm, post, x)


def oracle_predict(upm, history, segmentation, x):
    """Predictive at ``x`` conditioned on the pairs since the last true
    changepoint.

    ``segmentation`` holds the changepoint flags of every past step and of
    the current one (length ``len(history) + 1``).
    """
    xs, ys = history
    flags = np.asarray(segmentation, dtype=bool)
    if len(flags) != len(xs) + 1:
        raise ContractViolation("segmentation must cover the history and the "
                                "current step")
    starts = np.flatnonzero(flags)
    start = int(starts[-1]) if starts.size else 0
    post = fold(upm, upm.prior_statistics(), xs[start:], ys[start:])
    return _single_predictive(upm, post, x)


def condition_on_everything_predict(upm, history, x):
    xs, ys = history
    post = fold(upm, upm.prior_statistics(), xs, ys)
    return _single_predictive(upm, post, x)


@dataclass
class AgentStep:
    """Outcome of one prediction: the NLL of the revealed label, the
    predictive it was scored with and the MAP run length before
    (``map_run_length_x``) and after seeing the label. Baselines report
    the size of their conditioning set as run length."""
    nll: float
    predictive: object
    map_run_length: int
    map_run_length_x: int
    support_size: int
    belief_entropy: float = 0.0


class Agent(ABC):
    """Single-stream online predictor."""

    name = 'agent'

    def __init__(self, upm):
        self.upm = upm
        self._prepared = False
        self.reset()

    @abstractmethod
    def reset(self):
        """Forget the stream."""

    @abstractmethod
    def state(self):
        """Current ``(belief, bank)`` used for prediction."""

    def _on_step_start(self, changepoint):
        """Act on the segmentation flag of the coming step."""

    def prepare(self, changepoint=False):
        """Apply the current step's changepoint flag before anything reads
        :meth:`state`. Done at most once per step; :meth:`step` calls it if
        the caller did not."""
        if not self._prepared:
            self._on_step_start(changepoint)
            self._prepared = True

    def _finish_step(self):
        self._prepared = False

    @abstractmethod
    def step(self, x, y, changepoint=False):
        """Predict ``y`` at ``x``, score it, then condition on the pair.
        ``changepoint`` is the true segmentation flag of this step, only
        used by segmentation-aware agents."""

    def predict(self, x):
        belief, bank = self.state()
        with no_grad():
            return self.upm.predictive_distribution(bank.statistics, x) \
                .mix(belief.log_weights)


class ConditioningAgent(Agent):
    """Baseline holding a single posterior; subclasses choose which pairs
    it is conditioned on."""

    @property
    @abstractmethod
    def n_conditioned(self):
        """Number of pairs the posterior is conditioned on."""

    @abstractmethod
    def posterior(self):
        """Posterior statistics (a bank of one)."""

    @abstractmethod
    def observe(self, x, y):
        """Condition on a revealed pair."""

    def on_changepoint(self):
        pass

    def state(self):
        return _point_mass(), PosteriorBank(self.posterior())

    def _on_step_start(self, changepoint):
        if changepoint:
            self.on_changepoint()

    def step(self, x, y, changepoint=False):
        self.prepare(changepoint)
        with no_grad():
            post = self.posterior()
            features = self.upm.encode(x)
            predictive = _single_predictive(self.upm, post, x)
            log_py = self.upm.log_predictive_y(post, x, y, features).data
            nll = -float(max(log_py[0], LIKELIHOOD_FLOOR))
            size = self.n_conditioned
            self.observe(x, y)
        self._finish_step()
        return AgentStep(nll, predictive, size, size, 1)


class SlidingWindowAgent(ConditioningAgent):
    """Conditions on the ``n`` most recent pairs."""

    def __init__(self, upm, n):
        if n < 0:
            raise ContractViolation("window size must be >= 0")
        self.n = int(n)
        self.name = 'sliding_window_%d' % self.n
        super().__init__(upm)

    def reset(self):
        self.window = deque(maxlen=self.n)

    @property
    def n_conditioned(self):
        return len(self.window)

    def posterior(self):
        xs = [p[0] for p in self.window]
        ys = [p[1] for p in self.window]
        return fold(self.upm, self.upm.prior_statistics(), xs, ys)

    def observe(self, x, y):
        self.window.append((x, y))


class ConditionOnEverythingAgent(ConditioningAgent):
    """Conditions on every pair of the stream, updating one posterior
    incrementally."""

    name = 'condition_on_everything'

    def reset(self):
        self.post = None
        self.count = 0

    @property
    def n_conditioned(self):
        return self.count

    def posterior(self):
        if self.post is None:
            self.post = self.upm.prior_statistics()
        return self.post

    def observe(self, x, y):
        self.post = self.upm.recursive_update(self.posterior(), x, y)
        self.count += 1


class OracleAgent(ConditionOnEverythingAgent):
    """Conditions on the pairs since the last true changepoint."""

    name = 'oracle'

    def on_changepoint(self):
        self.reset()


class TrainOnEverythingAgent(ConditioningAgent):
    """Always predicts with the prior."""

    name = 'train_on_everything'

    def reset(self):
        pass

    @property
    def n_conditioned(self):
        return 0

    def posterior(self):
        return self.upm.prior_statistics()

    def observe(self, x, y):
        pass


class MocaAgent(Agent):
    """Run-length filter with evaluation-time pruning.

    Parameters
    ----------
    upm : UnderlyingPredictiveModel
    hazard : float
    min_weight, max_hypotheses : pruning settings; ``max_hypotheses=None``
        disables pruning.
    supervision_rate : float, default=0.0
        Probability that a true changepoint is revealed to the filter.
    random_state : int, RandomState instance or None
        Draws the supervision coin flips.
    """

    name = 'moca'

    def __init__(self, upm, hazard, min_weight=1e-6, max_hypotheses=512,
                 supervision_rate=0.0, random_state=None):
        self.filter = MocaFilter(upm, hazard)
        self.min_weight = min_weight
        self.max_hypotheses = max_hypotheses
        self.supervision_rate = supervision_rate
        self.rng = check_random_state(random_state)
        super().__init__(upm)

    def reset(self):
        self.belief, self.bank = self.filter.init_belief()

    def state(self):
        return self.belief, self.bank

    def _on_step_start(self, changepoint):
        if changepoint and self.supervision_rate > 0 and \
                self.rng.uniform() < self.supervision_rate:
            self.belief = apply_supervision(self.belief, CHANGEPOINT_NOW)

    def predict(self, x):
        """Mixture predictive at ``x`` with the belief conditioned on
        ``x`` first."""
        with no_grad():
            features = self.upm.encode(x)
            belief = self.filter.update_on_x(self.belief, self.bank, x,
                                             features)
            return self.filter.predict(belief, self.bank, x, features)

    def step(self, x, y, changepoint=False):
        self.prepare(changepoint)
        with no_grad():
            nll, belief, bank, diag = self.filter.step(self.belief, self.bank,
                                                       x, y)
            if self.max_hypotheses is not None:
                belief, bank = prune(belief, bank, self.min_weight,
                                     self.max_hypotheses)
        self.belief, self.bank = belief, bank
        self._finish_step()
        return AgentStep(float(nll.data), diag.predictive,
                         diag.map_run_length, diag.map_run_length_x,
                         diag.support_size, diag.belief_entropy)


#: agent kinds accepted by :func:`make_agent`, besides ``sliding_window_<n>``
AGENT_KINDS = ('moca', 'oracle', 'train_on_everything',
               'condition_on_everything')


def parse_agent_kind(kind):
    """Split an agent name into its kind and window size (or None)."""
    if kind.startswith('sliding_window_'):
        try:
            return 'sliding_window', int(kind[len('sliding_window_'):])
        except ValueError:
            pass
    elif kind in AGENT_KINDS:
        return kind, None
    raise ContractViolation("unknown agent %r" % kind)


def training_mode_for(kind):
    """Training mode whose parameters an agent is evaluated with."""
    base, _ = parse_agent_kind(kind)
    if base in ('oracle', 'train_on_everything'):
        return base
    return 'moca'


def make_agent(kind, upm, hazard, min_weight=1e-6, max_hypotheses=512,
               supervision_rate=0.0, random_state=None):
    base, n = parse_agent_kind(kind)
    if base == 'moca':
        return MocaAgent(upm, hazard, min_weight=min_weight,
                         max_hypotheses=max_hypotheses,
                         supervision_rate=supervision_rate,
                         random_state=random_state)
    if base == 'sliding_window':
        return SlidingWindowAgent(upm, n)
    if base == 'oracle':
        return OracleAgent(upm)
    if base == 'condition_on_everything':
        return ConditionOnEverythingAgent(upm)
    return TrainOnEverythingAgent(upm)
