"""Per-step evaluation cost of the filter versus belief support size."""
import logging
import time

import numpy as np
import pandas as pd
from sklearn.linear_model import LinearRegression
from sklearn.utils import check_random_state

from .agents import MocaAgent
from .autodiff import Value, no_grad
from .envs import SinusoidEnvironment, generate
from .filter import MocaFilter, PosteriorBank, RunLengthBelief

__all__ = ['uniform_state', 'time_step_vs_support', 'linear_fit_r2',
           'pruned_step_times', 'TIMING_COLUMNS']

logger = logging.getLogger(__name__)

TIMING_COLUMNS = ['support_size', 'seconds']


def uniform_state(upm, support_size):
    """Belief spread uniformly over ``support_size`` hypotheses, each
    holding the prior statistics."""
    belief = RunLengthBelief(
        log_weights=Value(np.full(support_size, -np.log(support_size))),
        run_lengths=np.arange(support_size), t=support_size)
    bank = PosteriorBank(upm.prior_statistics().take(
        np.zeros(support_size, dtype=int)))
    return belief, bank


def time_step_vs_support(upm, sizes, hazard=0.01, repeats=3,
                         random_state=None):
    """Wall time of one :meth:`MocaFilter.step` for every support size
    (best of ``repeats``)."""
    rng = check_random_state(random_state)
    moca = MocaFilter(upm, hazard)
    env = SinusoidEnvironment()
    task = env.sample_task(rng)
    rows = []
    with no_grad():
        for size in sizes:
            belief, bank = uniform_state(upm, int(size))
            best = np.inf
            for _ in range(repeats):
                x, y = env.sample(task, rng)
                start = time.perf_counter()
                moca.step(belief, bank, x, y)
                best = min(best, time.perf_counter() - start)
            rows.append((int(size), best))
            logger.debug("support %d: %.2f ms", size, 1e3 * best)
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def linear_fit_r2(timings, upper_fraction=0.5):
    """R^2 of a linear fit of time on support size over the largest
    ``upper_fraction`` of the measured sizes."""
    timings = timings.sort_values('support_size')
    upper = timings.iloc[int(len(timings) * (1 - upper_fraction)):]
    X = upper[['support_size']].to_numpy(dtype=float)
    y = upper['seconds'].to_numpy()
    return float(LinearRegression().fit(X, y).score(X, y))


def pruned_step_times(upm, hazard=0.01, steps=2000, max_hypotheses=512,
                      min_weight=0.0, random_state=None):
    """Per-step wall times of a pruned filter along one sinusoid stream.

    ``min_weight=0`` leaves the cap as the only pruning rule so the
    support saturates at ``max_hypotheses``.
    """
    rng = check_random_state(random_state)
    stream = generate(SinusoidEnvironment(), hazard, steps, rng)
    agent = MocaAgent(upm, hazard, min_weight=min_weight,
                      max_hypotheses=max_hypotheses)
    times = np.empty(steps)
    for i, (x, y) in enumerate(zip(stream.x, stream.y)):
        start = time.perf_counter()
        agent.step(x, y)
        times[i] = time.perf_counter() - start
    return times
