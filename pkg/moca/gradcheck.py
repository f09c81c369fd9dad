"""End-to-end gradient check of the filtered NLL against central finite
differences, for both UPMs."""
import logging

import numpy as np
import pandas as pd

from .alpaca import AlpacaUPM
from .autodiff import no_grad
from .envs import ClassificationEnvironment, SinusoidEnvironment, generate
from .nets import ParameterStore
from .pcoc import PcocUPM
from .trainer import stream_nll

__all__ = ['build_check_problem', 'filtered_nll', 'check_gradients',
           'run_gradcheck', 'REPORT_COLUMNS']

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['upm', 'seed', 'parameter', 'n_checked', 'max_abs_err',
                  'max_rel_err', 'passed']


def build_check_problem(kind, seed, steps=10, hazard=0.3):
    """A small smooth (tanh) model and a short seeded stream."""
    rng = np.random.RandomState(seed)
    store = ParameterStore()
    if kind == 'alpaca':
        upm = AlpacaUPM(store, 1, hidden=(8,), feature_dim=4,
                        hidden_activation='tanh', feature_activation='tanh',
                        random_state=rng)
        # a non-zero prior mean so its gradient is exercised away from 0
        store.assign('alpaca.K0', 0.1 * rng.standard_normal((4, 1)))
        env = SinusoidEnvironment()
    else:
        upm = PcocUPM(store, 2, 3, hidden=(8,), embedding_dim=3,
                      hidden_activation='tanh', dirichlet_prior=2.0,
                      random_state=rng)
        env = ClassificationEnvironment(n_classes=3)
    stream = generate(env, hazard, steps, rng)
    return store, upm, stream, hazard


def filtered_nll(upm, stream, hazard):
    total = None
    for nll in stream_nll(upm, hazard, stream):
        total = nll if total is None else total + nll
    return total


def check_gradients(kind, seed, steps=10, h=1e-5, tol=1e-6,
                    max_entries=None):
    """Compare analytic and numerical gradients of the summed filtered NLL.

    Parameters
    ----------
    kind : {'alpaca', 'pcoc'}
    seed : int
    steps : int, default=10
    h : float, default=1e-5
        Central difference step.
    tol : float, default=1e-6
        Largest accepted relative error.
    max_entries : int or None
        Check at most that many randomly chosen entries per parameter.

    Returns
    -------
    DataFrame with columns :data:`REPORT_COLUMNS`, one row per parameter.
    """
    store, upm, stream, hazard = build_check_problem(kind, seed, steps)
    store.zero_grad()
    filtered_nll(upm, stream, hazard).backward()
    analytic = store.grads()
    rng = np.random.RandomState(seed)

    rows = []
    for name, value in store.trainable_items():
        flat = value.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, max_entries, replace=False)
        abs_errs, rel_errs = [], []
        for i in entries:
            original = flat[i]
            with no_grad():
                flat[i] = original + h
                plus = filtered_nll(upm, stream, hazard).item()
                flat[i] = original - h
                minus = filtered_nll(upm, stream, hazard).item()
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            exact = analytic[name].reshape(-1)[i]
            err = abs(exact - numeric)
            abs_errs.append(err)
            rel_errs.append(err / max(abs(exact), abs(numeric), 1e-4))
        max_rel = float(np.max(rel_errs))
        rows.append((kind, seed, name, len(entries), float(np.max(abs_errs)),
                     max_rel, max_rel < tol))
        logger.debug("%s seed %d %s: max relative error %.2e", kind, seed,
                     name, max_rel)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def run_gradcheck(seeds=(0, 1, 2, 3, 4), kinds=('alpaca', 'pcoc'), **kwargs):
    """Gradient check report over several seeds and both UPMs."""
    report = pd.concat([check_gradients(kind, seed, **kwargs)
                        for kind in kinds for seed in seeds],
                       ignore_index=True)
    n_failed = int((~report['passed']).sum())
    if n_failed:
        logger.warning("%d of %d gradient checks failed", n_failed,
                       len(report))
    return report
