from functools import lru_cache
import itertools

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from moca.autodiff import Value, no_grad
from moca.autodiff import logsumexp as autodiff_logsumexp
from moca.exceptions import ContractViolation, DegenerateBeliefError
from moca.filter import (CHANGEPOINT_NOW, LIKELIHOOD_FLOOR, NO_CHANGE_NEXT,
                         HazardModel, MocaFilter, PosteriorBank,
                         RunLengthBelief, apply_supervision, propagate_hazard,
                         prune)
from moca.upm import CategoricalPredictive


# exhaustive enumeration over changepoint patterns --------------------------

def enumerate_log_evidence(segment_loglik, t, hazard):
    """log of the marginal likelihood of the first ``t`` steps, summing over
    all 2^(t-1) switch patterns; ``segment_loglik(a, b)`` scores steps
    ``a..b-1`` as one task."""
    terms = []
    for pattern in itertools.product((0, 1), repeat=t - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(pattern) if c] + [t]
        lp = sum(np.log(hazard) if c else np.log1p(-hazard) for c in pattern)
        lp += sum(segment_loglik(a, b) for a, b in zip(bounds[:-1],
                                                       bounds[1:]))
        terms.append(lp)
    return logsumexp(terms)


def linear_regression_evidence(upm, xs, ys):
    K0 = upm.prior_mean.data[:, 0]
    lam0 = upm.prior_precision().data
    s2 = upm.noise_var().data[0]

    @lru_cache(maxsize=None)
    def segment(a, b):
        Phi = xs[a:b]
        cov = s2 * (np.eye(b - a) + Phi @ np.diag(1.0 / lam0) @ Phi.T)
        return multivariate_normal.logpdf(ys[a:b, 0], Phi @ K0, cov)
    return segment


def class_cluster_evidence(upm, xs, ys):
    alpha0 = upm.dirichlet_prior
    m = upm.prior_mean.data
    lam0 = upm.prior_precision().data
    s2 = upm.noise_var().data
    J, d = m.shape

    def joint(zs, labels):
        lp, counts = 0.0, np.zeros(J)
        for y in labels:
            lp += np.log((alpha0[y] + counts[y]) / (alpha0.sum() +
                                                    counts.sum()))
            counts[y] += 1
        labels = np.asarray(labels, dtype=int)
        zs = np.asarray(zs).reshape(-1, d)
        for j in range(J):
            Z = zs[labels == j]
            if not len(Z):
                continue
            for k in range(d):
                n = len(Z)
                cov = s2[j, k] * np.eye(n) + np.ones((n, n)) / lam0[j, k]
                lp += multivariate_normal.logpdf(Z[:, k],
                                                 np.full(n, m[j, k]), cov)
        return lp

    @lru_cache(maxsize=None)
    def segment(a, b, last_unlabelled=False):
        if not last_unlabelled:
            return joint(xs[a:b], list(ys[a:b]))
        zs = list(xs[a:b])
        return logsumexp([joint(zs, list(ys[a:b - 1]) + [j])
                          for j in range(J)])
    return segment


def filtered_log_predictive(upm, hazard, xs, ys):
    with no_grad():
        nlls, _ = MocaFilter(upm, hazard).filter(xs, ys)
    return -np.array([n.item() for n in nlls])


@pytest.mark.parametrize('hazard', [0.1, 0.5])
def test_regression_filter_matches_enumeration(linear_upm, hazard):
    rng = np.random.RandomState(7)
    T = 12
    xs = rng.standard_normal((T, 2))
    ys = 2.0 * rng.standard_normal((T, 1))
    segment = linear_regression_evidence(linear_upm, xs, ys)
    evidence = [0.0] + [enumerate_log_evidence(segment, t, hazard)
                        for t in range(1, T + 1)]
    expected = np.diff(evidence)
    got = filtered_log_predictive(linear_upm, hazard, xs, ys)
    assert_allclose(np.exp(got), np.exp(expected), rtol=1e-8)


@pytest.mark.parametrize('hazard', [0.1, 0.5])
def test_classification_filter_matches_enumeration(gaussian_class_upm,
                                                   hazard):
    rng = np.random.RandomState(11)
    T = 9
    ys = rng.randint(3, size=T)
    xs = gaussian_class_upm.prior_mean.data[ys] + \
        0.7 * rng.standard_normal((T, 2))
    segment = class_cluster_evidence(gaussian_class_upm, xs, ys)
    expected = []
    for t in range(1, T + 1):
        labelled = enumerate_log_evidence(segment, t, hazard)
        unlabelled = enumerate_log_evidence(
            lambda a, b: segment(a, b, b == t), t, hazard)
        expected.append(labelled - unlabelled)
    got = filtered_log_predictive(gaussian_class_upm, hazard, xs, ys)
    assert_allclose(np.exp(got), np.exp(expected), rtol=1e-8)


# belief mechanics -----------------------------------------------------------

def _belief(probs, run_lengths=None):
    probs = np.asarray(probs, dtype=float)
    if run_lengths is None:
        run_lengths = np.arange(len(probs))
    with np.errstate(divide='ignore'):
        return RunLengthBelief(log_weights=Value(np.log(probs)),
                               run_lengths=np.asarray(run_lengths))


def test_propagate_from_point_mass():
    belief = propagate_hazard(_belief([1.0]), 0.3)
    assert_allclose(belief.weights, [0.3, 0.7])
    assert list(belief.run_lengths) == [0, 1]


def test_propagate_keeps_normalization():
    belief = propagate_hazard(_belief([0.2, 0.5, 0.3]), HazardModel(0.1))
    assert belief.is_normalized()
    assert list(belief.run_lengths) == [0, 1, 2, 3]
    assert_allclose(belief.weights, [0.1, 0.18, 0.45, 0.27])


def test_hazard_must_be_a_probability():
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ContractViolation):
            HazardModel(bad)


def test_changepoint_now_puts_all_mass_on_zero():
    belief = apply_supervision(_belief([0.4, 0.6]), CHANGEPOINT_NOW)
    assert_allclose(belief.weights, [1.0, 0.0])
    assert belief.map_run_length == 0


def test_changepoint_now_needs_a_zero_hypothesis():
    with pytest.raises(ContractViolation):
        apply_supervision(_belief([0.4, 0.6], [1, 2]), CHANGEPOINT_NOW)


def test_no_change_next_zeroes_the_next_switch():
    belief = apply_supervision(_belief([0.4, 0.6]), NO_CHANGE_NEXT)
    belief = propagate_hazard(belief, 0.5)
    assert_allclose(belief.weights, [0.0, 0.4, 0.6])
    assert belief.hazard_override is None
    # the override lasts one step only
    assert_allclose(propagate_hazard(belief, 0.5).weights[0], 0.5)


def test_soft_supervision_replaces_the_belief():
    belief = apply_supervision(_belief([0.4, 0.6]), [0.9, 0.1])
    assert_allclose(belief.weights, [0.9, 0.1])
    with pytest.raises(ContractViolation):
        apply_supervision(_belief([0.4, 0.6]), [0.9, 0.2])
    with pytest.raises(ContractViolation):
        apply_supervision(_belief([0.4, 0.6]), [1.0])
    with pytest.raises(ContractViolation):
        apply_supervision(_belief([0.4, 0.6]), 'sometimes')


def test_map_ties_go_to_the_shortest_run_length():
    assert _belief([0.25, 0.25, 0.5]).map_run_length == 2
    assert _belief([0.4, 0.4, 0.2]).map_run_length == 0


def test_entropy():
    assert_allclose(_belief([0.5, 0.5]).entropy, np.log(2))
    assert_allclose(_belief([1.0, 0.0]).entropy, 0.0)


# filter steps ---------------------------------------------------------------

def test_step_grows_support_and_time(linear_upm, rng):
    moca = MocaFilter(linear_upm, 0.2)
    belief, bank = moca.init_belief()
    for t in range(1, 6):
        nll, belief, bank, diag = moca.step(belief, bank,
                                            rng.standard_normal(2),
                                            rng.standard_normal(1))
        assert diag.t == t
        assert len(belief) == len(bank) == t + 1
        assert belief.t == t + 1
        assert belief.is_normalized()
        assert np.isfinite(nll.item())
        assert diag.support_size == t
        assert 0 <= diag.map_run_length < t


def test_bank_entry_zero_is_the_prior(linear_upm, rng):
    moca = MocaFilter(linear_upm, 0.2)
    belief, bank = moca.init_belief()
    _, belief, bank, _ = moca.step(belief, bank, rng.standard_normal(2),
                                   rng.standard_normal(1))
    prior = linear_upm.prior_statistics()
    assert_allclose(bank[0].Q.data, prior.Q.data)
    assert_allclose(bank[0].Lambda_inv.data, prior.Lambda_inv.data)


def test_likelihood_floor_keeps_nll_finite(linear_upm):
    moca = MocaFilter(linear_upm, 0.2)
    belief, bank = moca.init_belief()
    with no_grad():
        nll, belief, _, _ = moca.step(belief, bank, np.ones(2),
                                      np.array([1e7]))
    assert np.isfinite(nll.item())
    assert nll.item() <= -LIKELIHOOD_FLOOR + 1e-6
    assert belief.is_normalized()


def test_degenerate_belief_raises(linear_upm):
    moca = MocaFilter(linear_upm, 0.2)
    belief, bank = moca.init_belief()
    with pytest.raises(DegenerateBeliefError):
        moca.update_on_y(belief, bank, np.ones(2), np.zeros(1),
                         log_py=Value(np.array([np.nan])))


def test_misaligned_bank_raises(linear_upm):
    moca = MocaFilter(linear_upm, 0.2)
    belief, bank = moca.init_belief()
    belief = propagate_hazard(belief, 0.2)
    with pytest.raises(ContractViolation):
        moca.predict(belief, bank, np.ones(2))


def test_input_update_is_identity_without_input_model(linear_upm):
    moca = MocaFilter(linear_upm, 0.2)
    belief, bank = moca.init_belief()
    assert moca.update_on_x(belief, bank, np.ones(2)) is belief


def test_supervision_map_in_filter(linear_upm, rng):
    xs = rng.standard_normal((6, 2))
    ys = rng.standard_normal((6, 1))
    moca = MocaFilter(linear_upm, 0.3)
    _, records = moca.filter(xs, ys, supervision={3: CHANGEPOINT_NOW})
    assert records[3].map_run_length_x == 0


def test_filtered_nll_is_differentiable(sinusoid_upm, sinusoid_stream):
    store = sinusoid_upm.store
    nlls, _ = MocaFilter(sinusoid_upm, 0.2).filter(sinusoid_stream.x[:10],
                                                   sinusoid_stream.y[:10])
    total = nlls[0]
    for nll in nlls[1:]:
        total = total + nll
    total.backward()
    for name, value in store.trainable_items():
        assert np.all(np.isfinite(value.grad)), name
    assert np.any(store['alpaca.net.W0'].grad != 0)


# pruning --------------------------------------------------------------------

def _state(linear_upm, n_steps, rng, hazard=0.2):
    moca = MocaFilter(linear_upm, hazard)
    belief, bank = moca.init_belief()
    with no_grad():
        for _ in range(n_steps):
            _, belief, bank, _ = moca.step(belief, bank,
                                           rng.standard_normal(2),
                                           rng.standard_normal(1))
    return belief, bank


def test_prune_caps_support_and_keeps_alignment(linear_upm, rng):
    belief, bank = _state(linear_upm, 20, rng)
    with no_grad():
        pruned, pruned_bank = prune(belief, bank, min_weight=0.0,
                                    max_hypotheses=5)
    assert len(pruned) == len(pruned_bank) == 5
    assert pruned.is_normalized()
    assert np.all(np.diff(pruned.run_lengths) > 0)
    heaviest = np.sort(np.argsort(-belief.weights)[:5])
    assert_allclose(pruned_bank.statistics.Q.data,
                    bank.statistics.Q.data[heaviest])
    assert pruned.map_run_length == belief.map_run_length


def test_prune_drops_light_hypotheses(rng, linear_upm):
    belief, bank = _state(linear_upm, 15, rng)
    with no_grad():
        pruned, _ = prune(belief, bank, min_weight=1e-3, max_hypotheses=512)
    kept = set(pruned.run_lengths)
    for r, w in zip(belief.run_lengths, belief.weights):
        assert (r in kept) == (w >= 1e-3)


def test_prune_everything_raises(rng, linear_upm):
    belief, bank = _state(linear_upm, 3, rng)
    with no_grad(), pytest.raises(DegenerateBeliefError):
        prune(belief, bank, min_weight=2.0)


def test_prune_refuses_recorded_graph(sinusoid_upm, sinusoid_stream):
    moca = MocaFilter(sinusoid_upm, 0.2)
    belief, bank = moca.init_belief()
    _, belief, bank, _ = moca.step(belief, bank, sinusoid_stream.x[0],
                                   sinusoid_stream.y[0])
    with pytest.raises(ContractViolation):
        prune(belief, bank)


def test_posterior_bank_take(linear_upm, rng):
    _, bank = _state(linear_upm, 4, rng)
    taken = bank.take([0, 2])
    assert isinstance(taken, PosteriorBank)
    assert len(taken) == 2
    assert len(bank.entries()) == 5


# step composition ---------------------------------------------------------

class _FixedModel:
    """Stand-in model with fixed per-hypothesis input densities and class
    probabilities."""

    def __init__(self, px=None, class_probs=None):
        self.px = px
        self.class_probs = class_probs

    def log_marginal_x(self, post, x, features=None):
        return Value(np.log(self.px))

    def predictive_distribution(self, post, x, features=None):
        return CategoricalPredictive(Value(np.log(self.class_probs)))


def test_propagate_two_hypotheses():
    belief = propagate_hazard(_belief([0.25, 0.75]), 0.2)
    assert_allclose(belief.weights, [0.2, 0.2, 0.6])
    assert list(belief.run_lengths) == [0, 1, 2]


def test_input_update_reweights_by_input_density():
    moca = MocaFilter(_FixedModel(px=[0.2, 0.6]), 0.1)
    belief = moca.update_on_x(_belief([0.5, 0.5]), PosteriorBank(np.zeros(2)),
                              np.zeros(2))
    assert_allclose(belief.weights, [0.25, 0.75])
    assert belief.map_run_length == 1


def test_class_predictive_is_the_belief_mixture():
    model = _FixedModel(class_probs=[[0.9, 0.1], [0.5, 0.5]])
    mixture = MocaFilter(model, 0.1).predict(
        _belief([0.5, 0.5]), PosteriorBank(np.zeros(2)), np.zeros(2))
    assert_allclose(mixture.probs, [0.7, 0.3])


def test_map_is_invariant_to_rescaled_likelihoods(linear_upm, rng):
    belief, bank = _state(linear_upm, 8, rng)
    moca = MocaFilter(linear_upm, 0.2)
    x, y = rng.standard_normal(2), rng.standard_normal(1)
    with no_grad():
        log_py = moca.log_likelihood_y(bank, x, y)
        base = moca.update_on_y(belief, bank, x, y, log_py=log_py)
        for scale in (1e-3, 0.5, 7.5, 1e4):
            scaled = moca.update_on_y(belief, bank, x, y,
                                      log_py=log_py + np.log(scale))
            assert scaled.map_run_length == base.map_run_length
            assert_allclose(scaled.weights, base.weights, rtol=1e-10)


def test_step_is_the_composition_of_its_stages(gaussian_class_upm, rng):
    upm = gaussian_class_upm
    moca = MocaFilter(upm, 0.2)
    belief, bank = moca.init_belief()
    ys = rng.randint(3, size=10)
    xs = upm.prior_mean.data[ys] + 0.5 * rng.standard_normal((10, 2))
    with no_grad():
        for x, y in zip(xs, ys):
            features = upm.encode(x)
            belief_x = moca.update_on_x(belief, bank, x, features)
            predictive = moca.predict(belief_x, bank, x, features)
            log_py = moca.log_likelihood_y(bank, x, y, features)
            nll = -autodiff_logsumexp(belief_x.log_weights + log_py)
            belief_y = moca.update_on_y(belief_x, bank, x, y, log_py=log_py)
            grown = moca.grow_posteriors(bank, x, y, features)
            composed = propagate_hazard(belief_y, moca.hazard)

            step_nll, belief, bank, diag = moca.step(belief, bank, x, y)
            assert_array_equal(step_nll.data, nll.data)
            assert_array_equal(diag.predictive.log_probs.data,
                               predictive.log_probs.data)
            assert_array_equal(belief.log_weights.data,
                               composed.log_weights.data)
            assert_array_equal(belief.run_lengths, composed.run_lengths)
            for name, data in bank.statistics.numpy().items():
                assert_array_equal(data, grown.statistics.numpy()[name])


def _grow_before_scoring(moca, belief, bank, x, y):
    belief = propagate_hazard(belief, moca.hazard)
    bank = moca.grow_posteriors(bank, x, y)
    log_py = moca.log_likelihood_y(bank, x, y)
    nll = -logsumexp(belief.log_weights.data + log_py.data)
    return nll, moca.update_on_y(belief, bank, x, y, log_py=log_py), bank


def _score_after_label_update(moca, belief, bank, x, y):
    log_py = moca.log_likelihood_y(bank, x, y)
    belief_y = moca.update_on_y(belief, bank, x, y, log_py=log_py)
    nll = -logsumexp(belief_y.log_weights.data + log_py.data)
    return (nll, propagate_hazard(belief_y, moca.hazard),
            moca.grow_posteriors(bank, x, y))


@pytest.mark.parametrize('reordered', [_grow_before_scoring,
                                       _score_after_label_update])
def test_reordered_stages_break_exactness(linear_upm, reordered):
    rng = np.random.RandomState(7)
    T, hazard = 8, 0.3
    xs = rng.standard_normal((T, 2))
    ys = 2.0 * rng.standard_normal((T, 1))
    segment = linear_regression_evidence(linear_upm, xs, ys)
    evidence = [0.0] + [enumerate_log_evidence(segment, t, hazard)
                        for t in range(1, T + 1)]
    expected = np.diff(evidence)
    assert_allclose(filtered_log_predictive(linear_upm, hazard, xs, ys),
                    expected, rtol=1e-8)

    moca = MocaFilter(linear_upm, hazard)
    belief, bank = moca.init_belief()
    got = []
    with no_grad():
        for x, y in zip(xs, ys):
            nll, belief, bank = reordered(moca, belief, bank, x, y)
            got.append(-nll)
    assert not np.allclose(np.exp(got), np.exp(expected), rtol=1e-8)
