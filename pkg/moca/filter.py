"""Run-length filtering over the posteriors of an underlying predictive model.

The filter keeps a belief over the run length (steps since the last task
switch) together with one set of UPM posterior statistics per run-length
hypothesis. One call to :meth:`MocaFilter.step` processes a labelled point:

1. condition the belief on the input (models describing ``x`` only),
2. predict the label with the belief-weighted mixture and score it,
3. grow the posterior bank by one hypothesis,
4. condition the belief on the label,
5. propagate the belief through the hazard (switch) model.

All belief arithmetic happens in log space and every operation is
differentiable, so the negative log-likelihood of a stream can be
back-propagated into the model parameters. :func:`prune` is the exception
and is only allowed outside of gradient recording.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp as np_logsumexp

from .autodiff import (Value, as_value, clip_min, concatenate,
                       is_grad_enabled, logsumexp)
from .exceptions import ContractViolation, DegenerateBeliefError

__all__ = ['HazardModel', 'RunLengthBelief', 'PosteriorBank',
           'StepDiagnostics', 'MocaFilter', 'propagate_hazard',
           'apply_supervision', 'prune', 'LIKELIHOOD_FLOOR', 'CHANGEPOINT_NOW',
           'NO_CHANGE_NEXT']

logger = logging.getLogger(__name__)

# per-hypothesis log-likelihoods are clamped from below at this value
LIKELIHOOD_FLOOR = -1e10

CHANGEPOINT_NOW = 'changepoint-now'
NO_CHANGE_NEXT = 'no-change-next'

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class HazardModel:
    """Constant probability ``hazard`` that the task switches at a step."""
    hazard: float

    def __post_init__(self):
        if not 0.0 < self.hazard < 1.0:
            raise ContractViolation("hazard must lie in (0, 1), got %r"
                                    % (self.hazard,))


def _hazard_value(hazard):
    return hazard.hazard if isinstance(hazard, HazardModel) else float(hazard)


@dataclass
class RunLengthBelief:
    """Distribution over run lengths.

    Attributes
    ----------
    log_weights : Value of shape (R,)
        Normalized log probabilities.
    run_lengths : ndarray of int, shape (R,)
        Run length of every hypothesis, ascending.
    t : int
        Time step of the next observation (starts at 1).
    hazard_override : float or None
        Hazard used by the next :func:`propagate_hazard` instead of the
        configured one (set by the no-change-next supervision signal).
    """
    log_weights: Value
    run_lengths: np.ndarray
    t: int = 1
    hazard_override: float = None

    def __len__(self):
        return len(self.run_lengths)

    @property
    def weights(self):
        return np.exp(self.log_weights.data)

    @property
    def map_run_length(self):
        # run lengths are ascending, so ties go to the shortest one
        return int(self.run_lengths[np.argmax(self.log_weights.data)])

    @property
    def entropy(self):
        lw = self.log_weights.data
        finite = np.isfinite(lw)
        return float(-np.sum(np.exp(lw[finite]) * lw[finite]))

    def is_normalized(self, tol=NORMALIZATION_TOL):
        return abs(np_logsumexp(self.log_weights.data)) <= tol


@dataclass
class PosteriorBank:
    """Stacked UPM posterior statistics aligned with a belief; entry ``i``
    is the posterior of hypothesis ``i``."""
    statistics: object

    def __len__(self):
        return len(self.statistics)

    def __getitem__(self, index):
        return self.statistics.entry(index)

    def entries(self):
        return [self[i] for i in range(len(self))]

    def take(self, index):
        return PosteriorBank(self.statistics.take(index))


@dataclass
class StepDiagnostics:
    """Per-step record of :meth:`MocaFilter.step`.

    ``map_run_length_x`` is taken after the input update, before the label
    is seen; ``map_run_length`` after the label update. ``predictive`` is
    the mixture predictive the label was scored with.
    """
    t: int
    nll: float
    map_run_length: int
    map_run_length_x: int
    belief_entropy: float
    support_size: int
    predictive: object = None


def _normalize(log_weights):
    norm = logsumexp(log_weights)
    if not np.isfinite(norm.data):
        raise DegenerateBeliefError("run-length belief cannot be normalized "
                                    "(log normalizer %r)" % float(norm.data))
    return log_weights - norm


def _check_aligned(belief, bank):
    if len(belief) != len(bank):
        raise ContractViolation("belief has %d hypotheses but the bank has %d"
                                % (len(belief), len(bank)))


def propagate_hazard(belief, hazard):
    """Push the belief one step forward through the switch model.

    The new support is ``[0] + (run_lengths + 1)``: with probability
    ``hazard`` a new task starts, otherwise every run length grows by one.
    """
    lam = belief.hazard_override
    if lam is None:
        lam = _hazard_value(hazard)
    with np.errstate(divide='ignore'):
        log_change = np.log(lam)
        log_stay = np.log1p(-lam)
    log_weights = concatenate([as_value(np.array([log_change])),
                               belief.log_weights + log_stay])
    return RunLengthBelief(
        log_weights=log_weights,
        run_lengths=np.concatenate([[0], belief.run_lengths + 1]),
        t=belief.t, hazard_override=None)


def apply_supervision(belief, signal):
    """Override the belief with external task-segmentation knowledge.

    ``signal`` is :data:`CHANGEPOINT_NOW` (all mass on run length zero),
    :data:`NO_CHANGE_NEXT` (the next propagation uses a zero hazard) or a
    probability vector replacing the belief.
    """
    if isinstance(signal, str):
        if signal == CHANGEPOINT_NOW:
            zero = np.flatnonzero(belief.run_lengths == 0)
            if zero.size == 0:
                raise ContractViolation("belief has no run-length-zero "
                                        "hypothesis to supervise")
            log_weights = np.full(len(belief), -np.inf)
            log_weights[zero[0]] = 0.0
            return replace(belief, log_weights=Value(log_weights))
        if signal == NO_CHANGE_NEXT:
            return replace(belief, hazard_override=0.0)
        raise ContractViolation("unknown supervision signal %r" % signal)
    probs = np.asarray(signal, dtype=np.float64)
    if probs.shape != (len(belief),):
        raise ContractViolation("soft belief has shape %s, expected (%d,)"
                                % (probs.shape, len(belief)))
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > NORMALIZATION_TOL:
        raise ContractViolation("soft belief must be a probability vector")
    with np.errstate(divide='ignore'):
        return replace(belief, log_weights=Value(np.log(probs)))


def prune(belief, bank, min_weight=1e-6, max_hypotheses=512):
    """Drop unlikely hypotheses (evaluation only).

    Hypotheses lighter than ``min_weight`` are removed, then only the
    ``max_hypotheses`` heaviest are kept. The survivors keep their order and
    are renormalized; the bank stays aligned.
    """
    if is_grad_enabled() and belief.log_weights.requires_grad:
        raise ContractViolation("pruning is not differentiable; call it "
                                "under no_grad()")
    _check_aligned(belief, bank)
    lw = belief.log_weights.data
    keep = np.flatnonzero(np.exp(lw) >= min_weight)
    if keep.size > max_hypotheses:
        heaviest = np.argsort(-lw[keep], kind='stable')[:max_hypotheses]
        keep = np.sort(keep[heaviest])
    if keep.size == 0:
        raise DegenerateBeliefError("pruning removed every hypothesis")
    if keep.size == len(belief):
        return belief, bank
    kept = lw[keep]
    pruned = replace(belief,
                     log_weights=Value(kept - np_logsumexp(kept)),
                     run_lengths=belief.run_lengths[keep])
    return pruned, bank.take(keep)


class MocaFilter:
    """Run-length filter around an underlying predictive model.

    Parameters
    ----------
    upm : UnderlyingPredictiveModel
    hazard : float or HazardModel
        Probability of a task switch at every step.
    """

    def __init__(self, upm, hazard):
        self.upm = upm
        self.hazard = hazard if isinstance(hazard, HazardModel) \
            else HazardModel(float(hazard))

    def init_belief(self):
        """Belief with all mass on run length zero and a bank holding the
        prior statistics."""
        belief = RunLengthBelief(log_weights=Value(np.zeros(1)),
                                 run_lengths=np.zeros(1, dtype=int))
        return belief, PosteriorBank(self.upm.prior_statistics())

    def update_on_x(self, belief, bank, x, features=None):
        """Condition the belief on the input; the identity for models that
        do not describe their inputs."""
        _check_aligned(belief, bank)
        log_px = self.upm.log_marginal_x(bank.statistics, x, features)
        if log_px is None:
            return belief
        log_px = clip_min(log_px, LIKELIHOOD_FLOOR)
        return replace(belief,
                       log_weights=_normalize(belief.log_weights + log_px))

    def predict(self, belief, bank, x, features=None):
        """Belief-weighted mixture of the per-hypothesis predictives."""
        _check_aligned(belief, bank)
        predictive = self.upm.predictive_distribution(bank.statistics, x,
                                                      features)
        return predictive.mix(belief.log_weights)

    def log_likelihood_y(self, bank, x, y, features=None):
        log_py = self.upm.log_predictive_y(bank.statistics, x, y, features)
        return clip_min(log_py, LIKELIHOOD_FLOOR)

    def update_on_y(self, belief, bank, x, y, features=None, log_py=None):
        """Condition the belief on the label."""
        _check_aligned(belief, bank)
        if log_py is None:
            log_py = self.log_likelihood_y(bank, x, y, features)
        return replace(belief,
                       log_weights=_normalize(belief.log_weights + log_py))

    def grow_posteriors(self, bank, x, y, features=None):
        """New bank: the prior, then every old entry conditioned on
        ``(x, y)``."""
        updated = self.upm.recursive_update(bank.statistics, x, y, features)
        return PosteriorBank(self.upm.prior_statistics().concat(updated))

    def step(self, belief, bank, x, y):
        """Process one labelled point.

        Returns
        -------
        nll : Value
            Negative log predictive probability of ``y``.
        belief, bank : RunLengthBelief, PosteriorBank
            State for the next step.
        diagnostics : StepDiagnostics
        """
        features = self.upm.encode(x)
        belief_x = self.update_on_x(belief, bank, x, features)
        predictive = self.predict(belief_x, bank, x, features)
        log_py = self.log_likelihood_y(bank, x, y, features)
        nll = -logsumexp(belief_x.log_weights + log_py)
        new_bank = self.grow_posteriors(bank, x, y, features)
        belief_y = self.update_on_y(belief_x, bank, x, y, log_py=log_py)
        diagnostics = StepDiagnostics(
            t=belief.t, nll=float(nll.data),
            map_run_length=belief_y.map_run_length,
            map_run_length_x=belief_x.map_run_length,
            belief_entropy=belief_y.entropy, support_size=len(belief_y),
            predictive=predictive)
        new_belief = propagate_hazard(belief_y, self.hazard)
        new_belief.t = belief.t + 1
        return nll, new_belief, new_bank, diagnostics

    def filter(self, xs, ys, supervision=None):
        """Run a whole stream from a fresh belief.

        ``supervision`` optionally maps a 0-based step index to a
        supervision signal applied before that step. Returns the per-step
        NLL values and diagnostics.
        """
        belief, bank = self.init_belief()
        nlls, records = [], []
        for i, (x, y) in enumerate(zip(xs, ys)):
            if supervision and i in supervision:
                belief = apply_supervision(belief, supervision[i])
            nll, belief, bank, diagnostics = self.step(belief, bank, x, y)
            nlls.append(nll)
            records.append(diagnostics)
        logger.debug("filtered %d steps, final support %d", len(nlls),
                     len(belief))
        return nlls, records
