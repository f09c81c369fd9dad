"""Evaluation protocols: paired agent comparison on generated streams,
changepoint detection delays, bandit regret and hazard sweeps.

Every table is a ``pandas.DataFrame`` with one row per (agent, metric):
the mean over trials and the half-width of its 95% confidence interval,
``1.96 * sd / sqrt(n_trials)``.
"""
from dataclasses import dataclass
import logging

from joblib import Parallel, delayed
import numpy as np
import pandas as pd
from sklearn.utils import check_random_state
from tqdm.auto import tqdm

from .agents import make_agent, training_mode_for
from .bandit import (OmniscientPolicy, PosteriorSamplingPolicy, RandomPolicy,
                     run_bandit_trial)
from .config import PruneConfig
from .envs import generate
from .exceptions import ContractViolation
from .trainer import required_modes, train_modes

__all__ = ['confidence_interval', 'summarize', 'run_agent', 'evaluate',
           'DetectionStats', 'detection_delays', 'changepoint_detection_stats',
           'evaluate_bandit', 'hazard_sweep', 'SWEEP_COLUMNS',
           'METRIC_COLUMNS', 'DIAGNOSTIC_COLUMNS']

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['agent', 'metric', 'mean', 'ci', 'n_trials']
DIAGNOSTIC_COLUMNS = ['trial', 'agent', 't', 'nll', 'map_runlength',
                      'belief_entropy', 'true_task_id', 'changepoint_flag']
Z_95 = 1.96


def confidence_interval(values):
    """Half-width of the normal 95% confidence interval of the mean."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(Z_95 * values.std(ddof=1) / np.sqrt(values.size))


def summarize(per_trial):
    """Reduce a long frame ``(trial, agent, metric, value)`` to
    :data:`METRIC_COLUMNS`."""
    rows = []
    for (agent, metric), group in per_trial.groupby(['agent', 'metric'],
                                                    sort=False):
        values = group['value'].to_numpy()
        rows.append((agent, metric, float(values.mean()),
                     confidence_interval(values), len(values)))
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def _model_for(models, kind):
    """UPM trained in the mode matching ``kind``, else the ``moca`` one."""
    mode = training_mode_for(kind)
    if mode in models:
        return models[mode]
    if 'moca' not in models:
        raise ContractViolation("no parameters for agent %r" % kind)
    return models['moca']


def run_agent(agent, stream):
    """Run an agent over a stream; returns its per-step records."""
    agent.reset()
    return [agent.step(x, y, changepoint=flag)
            for x, y, flag in zip(stream.x, stream.y, stream.changepoints)]


def _accuracy(steps, stream):
    predictions = [s.predictive.predict() for s in steps]
    return float(np.mean(np.asarray(predictions) == stream.y))


def _diagnostics(trial, kind, steps, stream):
    return pd.DataFrame({
        'trial': trial, 'agent': kind,
        't': np.arange(1, len(steps) + 1),
        'nll': [s.nll for s in steps],
        'map_runlength': [s.map_run_length for s in steps],
        'belief_entropy': [s.belief_entropy for s in steps],
        'true_task_id': stream.task_ids,
        'changepoint_flag': stream.changepoints.astype(int),
    }, columns=DIAGNOSTIC_COLUMNS)


def _evaluate_trial(models, env, hazard, horizon, agents, prune, supervision,
                    trial, seed):
    rng = np.random.RandomState(seed)
    stream = generate(env, hazard, horizon, rng)
    rows, diagnostics = [], []
    for kind in agents:
        agent = make_agent(kind, _model_for(models, kind), hazard,
                           min_weight=prune.min_weight,
                           max_hypotheses=prune.max_hypotheses,
                           supervision_rate=supervision, random_state=rng)
        steps = run_agent(agent, stream)
        rows.append((trial, kind, 'nll', float(np.mean([s.nll
                                                         for s in steps]))))
        if env.output_dim == 0:
            rows.append((trial, kind, 'accuracy', _accuracy(steps, stream)))
        diagnostics.append(_diagnostics(trial, kind, steps, stream))
    return rows, pd.concat(diagnostics, ignore_index=True)


def evaluate(models, env, hazard, horizon, n_trials, agents, prune=None,
             supervision_rate=0.0, seed=0, threads=1, progress=False,
             return_diagnostics=False):
    """Paired comparison of agents on ``n_trials`` seeded streams.

    Parameters
    ----------
    models : dict
        Training mode -> trained UPM. Agents use the parameters of their
        matching mode and fall back to ``models['moca']``.
    env : SwitchingEnvironment
    hazard : float
    horizon : int
    n_trials : int
    agents : list of str
    prune : PruneConfig or None
    supervision_rate : float, default=0.0
        Probability that a test changepoint is revealed to MOCA.
    seed : int
    threads : int, default=1
    progress : bool, default=False
    return_diagnostics : bool, default=False
        Also return the per-step diagnostics frame.

    Returns
    -------
    metrics : DataFrame
        Columns :data:`METRIC_COLUMNS`; ``nll`` for every agent plus
        ``accuracy`` on classification streams.
    """
    prune = PruneConfig() if prune is None else prune
    seeds = check_random_state(seed).randint(2 ** 31 - 1, size=n_trials)
    trials = tqdm(list(enumerate(seeds)), disable=not progress, desc='eval')
    results = Parallel(n_jobs=threads, backend='threading')(
        delayed(_evaluate_trial)(models, env, hazard, horizon, agents, prune,
                                 supervision_rate, trial, trial_seed)
        for trial, trial_seed in trials)
    per_trial = pd.DataFrame([row for rows, _ in results for row in rows],
                             columns=['trial', 'agent', 'metric', 'value'])
    metrics = summarize(per_trial)
    logger.info("evaluated %d agents on %d streams at hazard %g",
                len(agents), n_trials, hazard)
    if return_diagnostics:
        return metrics, pd.concat([d for _, d in results], ignore_index=True)
    return metrics


@dataclass
class DetectionStats:
    """Detection delay of every true changepoint (NaN when the MAP run
    length never dropped below the threshold before the next one)."""
    delays: np.ndarray
    threshold: int

    @property
    def n_changepoints(self):
        return len(self.delays)

    def fraction_within(self, d):
        if self.n_changepoints == 0:
            return float('nan')
        return float(np.mean(self.delays <= d))

    def histogram(self):
        detected = self.delays[np.isfinite(self.delays)].astype(int)
        counts = pd.Series(detected).value_counts().sort_index()
        frame = pd.DataFrame({'delay': counts.index.astype(int),
                              'count': counts.to_numpy()})
        missed = int(np.sum(~np.isfinite(self.delays)))
        return frame, missed


def detection_delays(map_run_lengths, changepoints, threshold=5):
    """Steps from every true changepoint until the MAP run length falls
    below ``threshold``, searched up to the next changepoint."""
    changepoints = np.asarray(changepoints, dtype=bool)
    starts = np.flatnonzero(changepoints)
    ends = list(starts[1:]) + [len(changepoints)]
    delays = []
    for start, end in zip(starts, ends):
        below = np.flatnonzero(np.asarray(map_run_lengths[start:end])
                               < threshold)
        delays.append(float(below[0]) if below.size else np.nan)
    return np.asarray(delays)


def changepoint_detection_stats(upm, env, hazard, horizon, n_trials,
                                threshold=5, prune=None, supervision_rate=0.0,
                                before_label=False, seed=0):
    """Detection delays of the run-length filter over seeded streams.

    With ``before_label=True`` the MAP run length is read right after the
    input update, before the label of the step is seen.
    """
    prune = PruneConfig() if prune is None else prune
    seeds = check_random_state(seed).randint(2 ** 31 - 1, size=n_trials)
    delays = []
    for trial_seed in seeds:
        rng = np.random.RandomState(trial_seed)
        stream = generate(env, hazard, horizon, rng)
        agent = make_agent('moca', upm, hazard, min_weight=prune.min_weight,
                           max_hypotheses=prune.max_hypotheses,
                           supervision_rate=supervision_rate,
                           random_state=rng)
        steps = run_agent(agent, stream)
        maps = [s.map_run_length_x if before_label else s.map_run_length
                for s in steps]
        delays.append(detection_delays(maps, stream.changepoints, threshold))
    return DetectionStats(delays=np.concatenate(delays) if delays
                          else np.empty(0), threshold=threshold)


def _bandit_policy(kind, models, hazard, prune, samples):
    if kind == 'random':
        return RandomPolicy()
    if kind == 'omniscient':
        return OmniscientPolicy()
    agent = make_agent(kind, _model_for(models, kind), hazard,
                       min_weight=prune.min_weight,
                       max_hypotheses=prune.max_hypotheses)
    return PosteriorSamplingPolicy(agent, k=samples)


def _bandit_trial(models, hazard, horizon, agents, prune, samples, trial,
                  seed):
    rows, traces = [], []
    for kind in agents:
        policy = _bandit_policy(kind, models, hazard, prune, samples)
        # same seed: every agent faces the same states, radii and noise
        metrics = run_bandit_trial(policy, hazard, horizon,
                                   np.random.RandomState(seed))
        rows.append((trial, kind, 'regret', metrics.cumulative_regret))
        rows.append((trial, kind, 'percent_of_random',
                     metrics.percent_of_random))
        traces.append(metrics.trace.assign(trial=trial, agent=kind))
    return rows, pd.concat(traces, ignore_index=True)


def evaluate_bandit(models, hazard, horizon, n_trials, agents, prune=None,
                    samples=1, seed=0, threads=1, include_random=True):
    """Regret of bandit agents; ``samples > 1`` selects actions
    optimistically over that many sampled reward functions.

    Returns the metrics table and the concatenated per-step traces. The
    simulated random policy is added next to the analytic normalization
    when ``include_random`` is set.
    """
    prune = PruneConfig() if prune is None else prune
    agents = list(agents)
    if include_random and 'random' not in agents:
        agents.append('random')
    seeds = check_random_state(seed).randint(2 ** 31 - 1, size=n_trials)
    results = Parallel(n_jobs=threads, backend='threading')(
        delayed(_bandit_trial)(models, hazard, horizon, agents, prune,
                               samples, trial, trial_seed)
        for trial, trial_seed in enumerate(seeds))
    per_trial = pd.DataFrame([row for rows, _ in results for row in rows],
                             columns=['trial', 'agent', 'metric', 'value'])
    traces = pd.concat([t for _, t in results], ignore_index=True)
    return summarize(per_trial), traces


SWEEP_COLUMNS = ['hazard'] + METRIC_COLUMNS


def hazard_sweep(exp, hazards=None, threads=1, progress=False):
    """Train and evaluate an experiment at every hazard.

    Regression and classification experiments report
    :func:`evaluate` metrics, the wheel bandit :func:`evaluate_bandit`
    regret. Returns one row per (hazard, agent, metric).
    """
    hazards = exp.eval.hazards if hazards is None else hazards
    samples = exp.eval.samples if exp.eval.selection == 'optimistic' else 1
    tables = []
    for hazard in hazards:
        results = train_modes(exp, required_modes(exp.eval.agents),
                              hazard=hazard, threads=threads,
                              progress=progress)
        models = {mode: result.upm for mode, result in results.items()}
        if exp.train.env == 'wheel':
            metrics, _ = evaluate_bandit(
                models, hazard, exp.eval.horizon, exp.eval.trials,
                exp.eval.agents, prune=exp.prune, samples=samples,
                seed=exp.eval.seed, threads=threads)
        else:
            env = results['moca'].env
            metrics = evaluate(models, env, hazard, exp.eval.horizon,
                               exp.eval.trials, exp.eval.agents,
                               prune=exp.prune,
                               supervision_rate=exp.supervision.test_rate,
                               seed=exp.eval.seed, threads=threads,
                               progress=progress)
        tables.append(metrics.assign(hazard=hazard)[SWEEP_COLUMNS])
        logger.info("hazard %g done", hazard)
    return pd.concat(tables, ignore_index=True)
