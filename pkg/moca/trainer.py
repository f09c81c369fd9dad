"""Meta-training: fit the UPM parameters by back-propagating the filtered
negative log-likelihood of short generated streams.

Every iteration draws ``batch_size`` fresh streams of ``horizon`` steps, runs
each one from a fresh belief, averages the per-step NLL and takes one Adam
step. Three training modes share the loop:

``moca``
    unsegmented streams through the run-length filter (optionally with a
    fraction of the changepoints revealed);
``oracle``
    every changepoint is revealed and the hazard is zero elsewhere, so the
    filter tracks the true segmentation;
``train_on_everything``
    no conditioning at all: the loss is the prior predictive NLL.
"""
from dataclasses import dataclass, replace
import logging
import time

from joblib import Parallel, delayed
import numpy as np
import pandas as pd
from sklearn.utils import check_random_state
from tqdm.auto import tqdm

from .agents import training_mode_for
from .alpaca import AlpacaUPM
from .autodiff import concatenate, no_grad, reduce_mean
from .config import ModelConfig
from .envs import generate, make_environment
from .exceptions import (ContractViolation, DegenerateBeliefError,
                         NumericalError)
from .filter import (CHANGEPOINT_NOW, NO_CHANGE_NEXT, MocaFilter,
                     apply_supervision)
from .nets import ParameterStore
from .optim import AdamState, adam_step
from .pcoc import PcocUPM

__all__ = ['build_environment', 'build_upm', 'stream_nll', 'stream_loss',
           'batch_gradients', 'validation_nll', 'train', 'TrainingResult',
           'required_modes', 'train_modes', 'sample_windows',
           'fit_on_streams', 'CURVE_COLUMNS', 'MAX_SEED']

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['iteration', 'mean_nll', 'lr', 'wall_time_ms']
VALIDATION_COLUMNS = ['iteration', 'validation_nll']
MAX_SEED = 2 ** 31 - 1


def build_environment(cfg, model=None):
    model = ModelConfig() if model is None else model
    if cfg.env == 'classification':
        return make_environment('classification', n_classes=model.n_classes)
    return make_environment(cfg.env)


def build_upm(cfg, env, model=None, store=None, random_state=None):
    """UPM of kind ``cfg.upm`` sized for ``env``; returns ``(store, upm)``."""
    model = ModelConfig() if model is None else model
    store = ParameterStore() if store is None else store
    rng = check_random_state(random_state)
    if cfg.upm == 'alpaca':
        if env.output_dim == 0:
            raise ContractViolation("alpaca needs a regression environment")
        upm = AlpacaUPM(store, env.input_dim, output_dim=env.output_dim,
                        hidden=model.hidden, feature_dim=model.feature_dim,
                        hidden_activation=model.hidden_activation,
                        feature_activation=model.feature_activation,
                        noise_var=model.noise_var,
                        prior_precision=model.prior_precision,
                        learn_noise=model.learn_noise,
                        learn_prior=model.learn_prior,
                        identity_features=model.identity_features,
                        random_state=rng)
    else:
        if env.output_dim != 0:
            raise ContractViolation("pcoc needs a classification environment")
        upm = PcocUPM(store, env.input_dim, model.n_classes,
                      hidden=model.hidden, embedding_dim=model.feature_dim,
                      hidden_activation=model.hidden_activation,
                      embedding_activation=model.feature_activation,
                      dirichlet_prior=model.dirichlet_prior,
                      noise_var=model.noise_var,
                      prior_precision=model.prior_precision,
                      learn_noise=model.learn_noise,
                      learn_prior=model.learn_prior,
                      identity_features=model.identity_features,
                      random_state=rng)
    return store, upm


def stream_nll(upm, hazard, stream, mode='moca', supervision_rate=0.0,
               random_state=None):
    """Per-step NLL values of one stream, recorded for back-propagation."""
    if mode == 'train_on_everything':
        prior = upm.prior_statistics()
        return [-upm.log_predictive_y(prior, x, y)[0]
                for x, y in zip(stream.x, stream.y)]
    if mode not in ('moca', 'oracle'):
        raise ContractViolation("unknown training mode %r" % mode)
    rng = check_random_state(random_state)
    moca = MocaFilter(upm, hazard)
    belief, bank = moca.init_belief()
    nlls = []
    for x, y, changed in zip(stream.x, stream.y, stream.changepoints):
        if mode == 'oracle':
            if changed:
                belief = apply_supervision(belief, CHANGEPOINT_NOW)
            belief = apply_supervision(belief, NO_CHANGE_NEXT)
        elif changed and supervision_rate > 0 and \
                rng.uniform() < supervision_rate:
            belief = apply_supervision(belief, CHANGEPOINT_NOW)
        nll, belief, bank, _ = moca.step(belief, bank, x, y)
        nlls.append(nll)
    return nlls


def stream_loss(upm, hazard, stream, mode='moca', supervision_rate=0.0,
                random_state=None):
    """Mean per-step NLL of a stream as a scalar ``Value``."""
    nlls = stream_nll(upm, hazard, stream, mode, supervision_rate,
                      random_state)
    return reduce_mean(concatenate([n.reshape(1) for n in nlls]))


def _seeded_stream(env, hazard, horizon, seed):
    rng = np.random.RandomState(seed)
    return generate(env, hazard, horizon, rng), rng


def _stream_gradient(store, upm, stream, hazard, mode, supervision_rate,
                     seed):
    worker_store = store.snapshot()
    worker_upm = upm.with_store(worker_store)
    try:
        loss = stream_loss(worker_upm, hazard, stream, mode,
                           supervision_rate, np.random.RandomState(seed))
    except DegenerateBeliefError:
        return float('nan'), None
    value = loss.item()
    if not np.isfinite(value):
        return value, None
    loss.backward()
    return value, worker_store.grads()


def batch_gradients(store, upm, streams, hazard, mode='moca', seeds=None,
                    supervision_rate=0.0, threads=1, iteration=None):
    """Mean loss over ``streams``; the gradient of the mean is accumulated
    into ``store``.

    Streams run in joblib threads on private snapshots of ``store``;
    gradients are summed back in stream order. ``seeds`` drive the
    supervision draws and identify the failing stream in errors.
    """
    seeds = list(range(len(streams))) if seeds is None else list(seeds)
    results = Parallel(n_jobs=threads, backend='threading')(
        delayed(_stream_gradient)(store, upm, stream, hazard, mode,
                                  supervision_rate, seed)
        for stream, seed in zip(streams, seeds))
    scale = 1.0 / len(streams)
    for seed, (value, grads) in zip(seeds, results):
        if grads is None:
            raise NumericalError("non-finite training loss %r at iteration "
                                 "%s (stream seed %d)"
                                 % (value, iteration, seed),
                                 iteration=iteration, seed=seed)
        store.add_grads({name: scale * g for name, g in grads.items()})
    return float(np.mean([value for value, _ in results]))


def validation_nll(upm, env, cfg, seeds, supervision_rate=0.0):
    """Mean per-step NLL on fixed validation streams (no gradients)."""
    values = []
    with no_grad():
        for seed in seeds:
            stream, rng = _seeded_stream(env, cfg.hazard,
                                         cfg.validation_length, seed)
            values.append(stream_loss(upm, cfg.hazard, stream, cfg.mode,
                                      supervision_rate, rng).item())
    return float(np.mean(values))


@dataclass
class TrainingResult:
    store: ParameterStore
    upm: object
    env: object
    curve: pd.DataFrame
    validation: pd.DataFrame
    best_iteration: int


def train(cfg, model=None, supervision_rate=0.0, threads=1, progress=False):
    """Meta-train a UPM.

    Parameters
    ----------
    cfg : TrainConfig
    model : ModelConfig or None
    supervision_rate : float, default=0.0
        Probability that a training changepoint is revealed (``moca`` mode).
    threads : int, default=1
        Worker threads for the streams of a batch.
    progress : bool, default=False
        Show a tqdm progress bar.

    Returns
    -------
    TrainingResult
        Parameters of the best validation round, the per-iteration training
        curve and the validation curve.
    """
    cfg.validate()
    rng = check_random_state(cfg.seed)
    env = build_environment(cfg, model)
    store, upm = build_upm(cfg, env, model, random_state=rng)
    state = AdamState(learning_rate=cfg.learning_rate,
                      decay_interval=cfg.decay_interval,
                      decay_factor=cfg.decay_factor)
    validation_seeds = rng.randint(MAX_SEED, size=cfg.validation_streams)
    logger.info("training %s/%s in %s mode: %d parameters, horizon %d",
                cfg.upm, cfg.env, cfg.mode, store.n_parameters, cfg.horizon)

    rows, validation_rows = [], []
    best_nll, best_state, best_iteration = np.inf, store.state_dict(), 0
    start = time.perf_counter()
    for iteration in tqdm(range(1, cfg.iterations + 1), disable=not progress,
                          desc='train'):
        seeds = rng.randint(MAX_SEED, size=cfg.batch_size)
        lr = state.learning_rate
        streams = [generate(env, cfg.hazard, cfg.horizon, seed)
                   for seed in seeds]
        loss = batch_gradients(store, upm, streams, cfg.hazard, cfg.mode,
                               seeds, supervision_rate, threads=threads,
                               iteration=iteration)
        adam_step(store, state)
        elapsed = 1e3 * (time.perf_counter() - start)
        rows.append((iteration, loss, lr, elapsed))
        logger.debug("iteration %d: mean nll %.4f", iteration, loss)
        if iteration % cfg.validation_interval == 0 or \
                iteration == cfg.iterations:
            score = validation_nll(upm, env, cfg, validation_seeds,
                                   supervision_rate)
            validation_rows.append((iteration, score))
            logger.info("iteration %d: train nll %.4f, validation nll %.4f, "
                        "lr %.3g", iteration, loss, score, lr)
            if score < best_nll:
                best_nll, best_iteration = score, iteration
                best_state = store.state_dict()
    store.load_state_dict(best_state)
    return TrainingResult(
        store=store, upm=upm, env=env,
        curve=pd.DataFrame(rows, columns=CURVE_COLUMNS),
        validation=pd.DataFrame(validation_rows, columns=VALIDATION_COLUMNS),
        best_iteration=best_iteration)


def required_modes(agents):
    """Training modes needed to evaluate ``agents`` (always ``moca``)."""
    modes = ['moca']
    for kind in agents:
        if kind in ('random', 'omniscient'):
            continue
        mode = training_mode_for(kind)
        if mode not in modes:
            modes.append(mode)
    return modes


def train_modes(exp, modes, hazard=None, threads=1, progress=False):
    """Train one model per training mode of an experiment.

    Returns a dict mode -> :class:`TrainingResult`; ``hazard`` overrides
    the training hazard (and with it the default horizon).
    """
    results = {}
    for mode in modes:
        cfg = replace(exp.train, mode=mode)
        if hazard is not None:
            cfg = replace(cfg, hazard=hazard)
        results[mode] = train(cfg, exp.model,
                              supervision_rate=exp.supervision.train_rate,
                              threads=threads, progress=progress)
    return results


def sample_windows(streams, length, n, random_state=None):
    """``n`` random windows of ``length`` steps from recorded streams."""
    rng = check_random_state(random_state)
    counts = np.array([max(len(s) - length + 1, 0) for s in streams])
    if counts.sum() == 0:
        raise ContractViolation("no stream has %d steps" % length)
    picks = rng.choice(len(streams), size=n, p=counts / counts.sum())
    return [streams[i].window(int(rng.randint(counts[i])), length)
            for i in picks]


def fit_on_streams(store, upm, streams, hazard, length, batch_size=10,
                   iterations=1000, learning_rate=0.02, decay_interval=1000,
                   decay_factor=0.5, random_state=None, threads=1,
                   progress=False):
    """Meta-train on windows of recorded streams instead of generated ones.

    Returns the training curve (:data:`CURVE_COLUMNS`).
    """
    rng = check_random_state(random_state)
    state = AdamState(learning_rate=learning_rate,
                      decay_interval=decay_interval, decay_factor=decay_factor)
    rows = []
    start = time.perf_counter()
    for iteration in tqdm(range(1, iterations + 1), disable=not progress,
                          desc='fit'):
        windows = sample_windows(streams, length, batch_size, rng)
        lr = state.learning_rate
        loss = batch_gradients(store, upm, windows, hazard,
                               seeds=rng.randint(MAX_SEED, size=batch_size),
                               threads=threads, iteration=iteration)
        adam_step(store, state)
        rows.append((iteration, loss, lr,
                     1e3 * (time.perf_counter() - start)))
        logger.debug("iteration %d: mean nll %.4f", iteration, loss)
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)
