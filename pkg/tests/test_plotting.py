import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from numpy.testing import assert_allclose  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402

from moca.autodiff import no_grad  # noqa: E402
from moca.filter import MocaFilter  # noqa: E402
from moca.plotting import (belief_matrix, plot_hazard_sweep,  # noqa: E402
                           plot_run_length_belief, plot_stream,
                           plot_training_curve)


@pytest.fixture
def beliefs(linear_upm, rng):
    moca = MocaFilter(linear_upm, 0.2)
    belief, bank = moca.init_belief()
    history = [belief]
    with no_grad():
        for _ in range(6):
            _, belief, bank, _ = moca.step(belief, bank,
                                           rng.standard_normal(2),
                                           rng.standard_normal(1))
            history.append(belief)
    return history


@pytest.fixture(autouse=True)
def close_figures():
    yield
    plt.close('all')


def test_belief_matrix(beliefs):
    matrix = belief_matrix(beliefs)
    assert matrix.shape == (7, 7)
    assert_allclose(matrix.sum(axis=0), 1.0)
    assert np.all(matrix[1:, 0] == 0)
    assert belief_matrix(beliefs, max_run_length=2).shape == (3, 7)


def test_plot_run_length_belief(beliefs):
    flags = np.zeros(7, dtype=bool)
    flags[3] = True
    ax = plot_run_length_belief(beliefs, changepoints=flags)
    assert ax.get_xlabel() == "time step"
    assert len(ax.images) == 1


def test_plot_stream(sinusoid_stream):
    _, ax = plt.subplots()
    plot_stream(sinusoid_stream, np.zeros(len(sinusoid_stream)), ax=ax)
    assert len(ax.lines) >= 1


def test_plot_training_curve():
    curve = pd.DataFrame({'iteration': [1, 2, 3], 'mean_nll': [3., 2., 1.]})
    validation = pd.DataFrame({'iteration': [2], 'validation_nll': [1.5]})
    ax = plot_training_curve(curve, validation)
    assert len(ax.lines) == 2


def test_plot_hazard_sweep():
    sweep = pd.DataFrame({
        'hazard': [0.1, 0.2, 0.1, 0.2], 'agent': ['moca', 'moca', 'a', 'a'],
        'metric': 'nll', 'mean': [1.0, 1.2, 1.5, 1.6],
        'ci': [0.1, 0.1, 0.2, 0.2], 'n_trials': 10})
    ax = plot_hazard_sweep(sweep)
    assert ax.get_xscale() == 'log'
    labels = [t.get_text() for t in ax.get_legend().get_texts()]
    assert labels == ['moca', 'a']
