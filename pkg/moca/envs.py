"""Switching benchmark streams.

Every environment samples a task, then labelled points from the current
task; a :class:`TaskProcess` resamples the task with probability ``hazard``
at every step. :func:`generate` turns an environment into an
:class:`EpisodeStream`.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.utils import check_random_state

from .exceptions import ContractViolation

__all__ = ['SinusoidTask', 'WheelTask', 'ClassificationTask',
           'SinusoidEnvironment', 'WheelEnvironment',
           'ClassificationEnvironment', 'TaskProcess', 'EpisodeStream',
           'generate', 'make_environment', 'sample_unit_ball',
           'quadrant_action', 'wheel_input', 'wheel_mean_reward',
           'wheel_step', 'N_WHEEL_ACTIONS', 'WHEEL_REWARD_MEANS',
           'WHEEL_REWARD_STD', 'RANDOM_AGENT_REGRET']

N_WHEEL_ACTIONS = 5
# mean of the low, medium and high rewards
WHEEL_REWARD_MEANS = (0.0, 1.0, 2.0)
WHEEL_REWARD_STD = 0.5
# expected per-step regret of uniformly random actions, averaged over the
# state and the radius: P(|s| > delta) = 2/3 with regret 1.4, else 0.8
RANDOM_AGENT_REGRET = 1.2


@dataclass(frozen=True)
class SinusoidTask:
    amplitude: float
    phase: float

    def mean(self, x):
        return self.amplitude * np.sin(np.asarray(x) + self.phase)


@dataclass(frozen=True)
class WheelTask:
    radius: float


@dataclass(frozen=True)
class ClassificationTask:
    means: np.ndarray = field(repr=False)


class SwitchingEnvironment(ABC):
    """A distribution over tasks and, given a task, over labelled points."""

    #: dimension of a single input
    input_dim = 1
    #: dimension of a single label (0 for integer class labels)
    output_dim = 1

    @abstractmethod
    def sample_task(self, rng):
        """Draw a task."""

    @abstractmethod
    def sample(self, task, rng):
        """Draw one ``(x, y)`` pair from ``task``."""

    def task_label(self, task):
        return repr(task)


class SinusoidEnvironment(SwitchingEnvironment):
    """``y = A sin(x + phase) + noise`` with ``x ~ U[x_min, x_max]``.

    Parameters
    ----------
    amplitude_range : tuple, default=(0.1, 5.0)
    phase_range : tuple, default=(0, pi)
    input_range : tuple, default=(-5.0, 5.0)
    noise_var : float, default=0.05
    """

    def __init__(self, amplitude_range=(0.1, 5.0), phase_range=(0.0, np.pi),
                 input_range=(-5.0, 5.0), noise_var=0.05):
        self.amplitude_range = amplitude_range
        self.phase_range = phase_range
        self.input_range = input_range
        self.noise_var = noise_var

    def sample_task(self, rng):
        return SinusoidTask(amplitude=rng.uniform(*self.amplitude_range),
                            phase=rng.uniform(*self.phase_range))

    def sample(self, task, rng):
        x = rng.uniform(*self.input_range)
        y = task.mean(x) + np.sqrt(self.noise_var) * rng.standard_normal()
        return np.array([x]), np.array([y])


def sample_unit_ball(rng, size=None):
    """Uniform samples from the 2-D unit ball (polar method)."""
    angle = rng.uniform(0.0, 2 * np.pi, size)
    radius = np.sqrt(rng.uniform(0.0, 1.0, size))
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def quadrant_action(s):
    """Action associated with the quadrant of ``s`` (1 to 4,
    counter-clockwise from the positive orthant)."""
    if s[0] >= 0:
        return 1 if s[1] >= 0 else 4
    return 2 if s[1] >= 0 else 3


def wheel_input(s, a):
    """Model input of a state/action pair: the state and a one-hot
    action."""
    one_hot = np.zeros(N_WHEEL_ACTIONS)
    one_hot[a] = 1.0
    return np.concatenate([np.asarray(s, dtype=np.float64), one_hot])


def wheel_mean_reward(task, s, a):
    low, medium, high = WHEEL_REWARD_MEANS
    if a == 0:
        return medium
    if np.linalg.norm(s) > task.radius and a == quadrant_action(s):
        return high
    return low


def wheel_step(task, s, a, rng):
    """Reward of action ``a`` in state ``s`` and the best achievable mean
    reward in that state."""
    if np.linalg.norm(s) > 1.0 + 1e-12:
        raise ContractViolation("state %s lies outside the unit ball" % (s,))
    if not 0 <= a < N_WHEEL_ACTIONS:
        raise ContractViolation("action %r outside 0..%d"
                                % (a, N_WHEEL_ACTIONS - 1))
    reward = wheel_mean_reward(task, s, a) + \
        WHEEL_REWARD_STD * rng.standard_normal()
    optimal = WHEEL_REWARD_MEANS[2] if np.linalg.norm(s) > task.radius \
        else WHEEL_REWARD_MEANS[1]
    return reward, optimal


class WheelEnvironment(SwitchingEnvironment):
    """Wheel bandit whose radius is resampled at task switches.

    Offline training points pick a uniformly random action with probability
    ``random_action_prob`` and the quadrant action otherwise.
    """

    input_dim = 2 + N_WHEEL_ACTIONS

    def __init__(self, random_action_prob=0.5):
        self.random_action_prob = random_action_prob

    def sample_task(self, rng):
        return WheelTask(radius=rng.uniform(0.0, 1.0))

    def sample_state(self, rng):
        return sample_unit_ball(rng)

    def sample(self, task, rng):
        s = self.sample_state(rng)
        if rng.uniform() < self.random_action_prob:
            a = rng.randint(N_WHEEL_ACTIONS)
        else:
            a = quadrant_action(s)
        reward, _ = wheel_step(task, s, a, rng)
        return wheel_input(s, a), np.array([reward])


class ClassificationEnvironment(SwitchingEnvironment):
    """Gaussian class clusters whose means move at task switches.

    Parameters
    ----------
    n_classes : int, default=5
    input_dim : int, default=2
    mean_range : float, default=3.0
        Class means are drawn from ``U[-mean_range, mean_range]``.
    noise_std : float, default=0.5
    """

    output_dim = 0

    def __init__(self, n_classes=5, input_dim=2, mean_range=3.0,
                 noise_std=0.5):
        self.n_classes = n_classes
        self.input_dim = input_dim
        self.mean_range = mean_range
        self.noise_std = noise_std

    def sample_task(self, rng):
        means = rng.uniform(-self.mean_range, self.mean_range,
                            (self.n_classes, self.input_dim))
        return ClassificationTask(means=means)

    def sample(self, task, rng):
        y = rng.randint(self.n_classes)
        x = task.means[y] + self.noise_std * \
            rng.standard_normal(self.input_dim)
        return x, y


ENVIRONMENTS = {
    'sinusoid': SinusoidEnvironment,
    'wheel': WheelEnvironment,
    'classification': ClassificationEnvironment,
}


def make_environment(kind, **params):
    try:
        return ENVIRONMENTS[kind](**params)
    except KeyError:
        raise ContractViolation("unknown environment %r, expected one of %s"
                                % (kind, sorted(ENVIRONMENTS)))


class TaskProcess:
    """Current task of a stream, resampled with probability ``hazard`` at
    every step after the first."""

    def __init__(self, env, hazard, random_state=None):
        if not 0.0 <= hazard <= 1.0:
            raise ContractViolation("hazard must lie in [0, 1], got %r"
                                    % (hazard,))
        self.env = env
        self.hazard = hazard
        self.rng = check_random_state(random_state)
        self.task = None
        self.task_id = -1

    def advance(self):
        """Move to the next step; returns ``(task, task_id, changed)``."""
        if self.task is None:
            self.task = self.env.sample_task(self.rng)
            self.task_id = 0
            return self.task, self.task_id, False
        changed = self.rng.uniform() < self.hazard
        if changed:
            self.task = self.env.sample_task(self.rng)
            self.task_id += 1
        return self.task, self.task_id, changed


@dataclass
class EpisodeStream:
    """A generated stream; ``changepoints[t]`` is True iff the task of step
    ``t`` differs from the task of step ``t - 1``."""
    x: np.ndarray
    y: np.ndarray
    task_ids: np.ndarray
    changepoints: np.ndarray
    tasks: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_arrays(cls, x, y, changepoints=None):
        """Wrap recorded data; task ids are derived from ``changepoints``
        (all False when unknown)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y)
        if len(x) != len(y):
            raise ContractViolation("x and y lengths differ: %d != %d"
                                    % (len(x), len(y)))
        if changepoints is None:
            changepoints = np.zeros(len(x), dtype=bool)
        changepoints = np.asarray(changepoints, dtype=bool).copy()
        if len(changepoints):
            changepoints[0] = False
        return cls(x=x, y=y, task_ids=np.cumsum(changepoints),
                   changepoints=changepoints)

    def window(self, start, length):
        """Sub-stream of ``length`` steps from ``start``; its first step
        never carries a changepoint flag."""
        stop = start + length
        if start < 0 or stop > len(self):
            raise ContractViolation("window [%d, %d) outside a stream of "
                                    "length %d" % (start, stop, len(self)))
        flags = self.changepoints[start:stop].copy()
        flags[0] = False
        ids = self.task_ids[start:stop]
        return EpisodeStream(x=self.x[start:stop], y=self.y[start:stop],
                             task_ids=ids - ids[0], changepoints=flags)

    def segment_starts(self):
        """Step indices where a task begins (always includes 0)."""
        return np.flatnonzero(np.r_[True, self.changepoints[1:]])

    def to_frame(self):
        columns = {'t': np.arange(1, len(self) + 1)}
        for i in range(self.x.shape[1]):
            columns['x%d' % i] = self.x[:, i]
        y = self.y.reshape(len(self), -1)
        for i in range(y.shape[1]):
            columns['y%d' % i] = y[:, i]
        columns['task_id'] = self.task_ids
        columns['changepoint'] = self.changepoints.astype(int)
        return pd.DataFrame(columns)


def generate(env, hazard, horizon, random_state=None):
    """Sample a stream of ``horizon`` labelled points.

    Parameters
    ----------
    env : SwitchingEnvironment
    hazard : float
        Task switch probability per step, in ``[0, 1]``.
    horizon : int
        Stream length, at least 1.
    random_state : int, RandomState instance or None
    """
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1, got %r" % (horizon,))
    rng = check_random_state(random_state)
    process = TaskProcess(env, hazard, rng)
    xs, ys, ids, flags, tasks = [], [], [], [], []
    for _ in range(horizon):
        task, task_id, changed = process.advance()
        if not tasks or changed:
            tasks.append(task)
        x, y = env.sample(task, rng)
        xs.append(x)
        ys.append(y)
        ids.append(task_id)
        flags.append(changed)
    y = np.asarray(ys)
    if env.output_dim == 0:
        y = y.astype(int)
    return EpisodeStream(x=np.asarray(xs, dtype=np.float64), y=y,
                         task_ids=np.asarray(ids),
                         changepoints=np.asarray(flags, dtype=bool),
                         tasks=tasks)
