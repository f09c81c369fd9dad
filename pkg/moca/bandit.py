"""Action selection and regret accounting on the switching wheel bandit.

Reward models are ALPaCA posteriors over the reward of a (state, one-hot
action) input. An action is chosen by sampling reward functions from the
agent's posterior mixture: a run-length hypothesis from the belief, then
last-layer weights from that hypothesis.
"""
from dataclasses import dataclass
import logging

import numpy as np
import pandas as pd
from sklearn.utils import check_random_state

from .autodiff import no_grad
from .envs import (N_WHEEL_ACTIONS, RANDOM_AGENT_REGRET, TaskProcess,
                   WheelEnvironment, sample_unit_ball, wheel_input,
                   wheel_mean_reward, wheel_step)
from .exceptions import ContractViolation

__all__ = ['sample_reward_function', 'thompson_select', 'optimistic_select',
           'PosteriorSamplingPolicy', 'RandomPolicy', 'OmniscientPolicy',
           'BanditMetrics', 'run_bandit_trial', 'action_inputs',
           'TRIAL_COLUMNS']

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ['t', 'state_0', 'state_1', 'action', 'reward',
                 'optimal_mean', 'regret', 'map_runlength']


def _argmax_random_ties(values, rng):
    values = np.asarray(values)
    best = np.flatnonzero(values == values.max())
    return int(best[0]) if best.size == 1 else int(rng.choice(best))


def action_inputs(s):
    return np.stack([wheel_input(s, a) for a in range(N_WHEEL_ACTIONS)])


def sample_reward_function(upm, belief, bank, rng):
    """Sample last-layer weights from the mixture posterior."""
    weights = belief.weights
    r = rng.choice(len(weights), p=weights / weights.sum())
    return upm.sample_weights(bank.statistics, r, rng)


def thompson_select(upm, belief, bank, s, random_state=None):
    """Greedy action under one reward function sampled from the
    posterior."""
    return optimistic_select(upm, belief, bank, s, k=1,
                             random_state=random_state)


def optimistic_select(upm, belief, bank, s, k=1, random_state=None):
    """Best action over ``k`` reward functions sampled from the
    posterior."""
    if k < 1:
        raise ContractViolation("need at least one sampled reward function")
    rng = check_random_state(random_state)
    with no_grad():
        features = upm.feature_matrix(action_inputs(s))
    values = np.stack([
        (features @ sample_reward_function(upm, belief, bank, rng))[:, 0]
        for _ in range(k)])
    return _argmax_random_ties(values.max(axis=0), rng)


class PosteriorSamplingPolicy:
    """Acts by sampling from an agent's posterior and feeds the agent the
    observed (state, action, reward) triples. The step's changepoint flag
    reaches the agent before the action is chosen."""

    def __init__(self, agent, k=1):
        self.agent = agent
        self.k = k
        self.name = agent.name

    def reset(self):
        self.agent.reset()

    def choose(self, s, task, rng, changepoint=False):
        self.agent.prepare(changepoint)
        belief, bank = self.agent.state()
        return optimistic_select(self.agent.upm, belief, bank, s, k=self.k,
                                 random_state=rng)

    def observe(self, s, a, reward, changepoint):
        step = self.agent.step(wheel_input(s, a), np.array([reward]),
                               changepoint=changepoint)
        return step.map_run_length


class RandomPolicy:
    name = 'random'

    def reset(self):
        pass

    def choose(self, s, task, rng, changepoint=False):
        return int(rng.randint(N_WHEEL_ACTIONS))

    def observe(self, s, a, reward, changepoint):
        return -1


class OmniscientPolicy(RandomPolicy):
    """Knows the current radius and always takes the best action."""

    name = 'omniscient'

    def choose(self, s, task, rng, changepoint=False):
        return _argmax_random_ties(
            [wheel_mean_reward(task, s, a) for a in range(N_WHEEL_ACTIONS)],
            rng)


@dataclass
class BanditMetrics:
    """Regret of one trial.

    ``percent_of_random`` normalizes the cumulative regret by the analytic
    expected regret of uniformly random actions over the same horizon.
    """
    policy: str
    cumulative_regret: float
    per_step_regret: np.ndarray
    percent_of_random: float
    trace: pd.DataFrame

    @property
    def cumulative(self):
        return np.cumsum(self.per_step_regret)


def run_bandit_trial(policy, hazard, horizon, random_state=None, env=None,
                     policy_random_state=None):
    """Play ``horizon`` rounds of the switching wheel bandit.

    ``random_state`` drives the radii, states and reward noise;
    ``policy_random_state`` the action selection (derived from
    ``random_state`` when None). Policies facing the same ``random_state``
    thus see the same states and radii.
    """
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    rng = check_random_state(random_state)
    if policy_random_state is None:
        policy_rng = np.random.RandomState(rng.randint(2 ** 31 - 1))
    else:
        policy_rng = check_random_state(policy_random_state)
    env = WheelEnvironment() if env is None else env
    process = TaskProcess(env, hazard, rng)
    policy.reset()
    rows = []
    for t in range(1, horizon + 1):
        task, _, changed = process.advance()
        s = sample_unit_ball(rng)
        a = policy.choose(s, task, policy_rng, changed)
        reward, optimal = wheel_step(task, s, a, rng)
        regret = optimal - wheel_mean_reward(task, s, a)
        map_rl = policy.observe(s, a, reward, changed)
        rows.append((t, s[0], s[1], a, reward, optimal, regret, map_rl))
    trace = pd.DataFrame(rows, columns=TRIAL_COLUMNS)
    total = float(trace['regret'].sum())
    percent = 100.0 * total / (RANDOM_AGENT_REGRET * horizon)
    logger.debug("%s: regret %.2f (%.1f%% of random) over %d steps",
                 policy.name, total, percent, horizon)
    return BanditMetrics(policy=policy.name, cumulative_regret=total,
                         per_step_regret=trace['regret'].to_numpy(),
                         percent_of_random=percent, trace=trace)
