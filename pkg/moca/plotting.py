"""Figures for filter diagnostics, training curves and hazard sweeps."""
import matplotlib.pyplot as plt
from matplotlib.colors import ListedColormap
import numpy as np

__all__ = ['plot_run_length_belief', 'plot_training_curve',
           'plot_hazard_sweep', 'plot_stream', 'belief_matrix', 'cm_agents']

cm_agents = ListedColormap(['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728',
                            '#9467bd', '#8c564b'])


def belief_matrix(beliefs, max_run_length=None):
    """Stack run-length beliefs into a ``(max_run_length + 1, T)`` array of
    probabilities, one column per step."""
    if max_run_length is None:
        max_run_length = max(int(b.run_lengths.max()) for b in beliefs)
    matrix = np.zeros((max_run_length + 1, len(beliefs)))
    for t, belief in enumerate(beliefs):
        keep = belief.run_lengths <= max_run_length
        matrix[belief.run_lengths[keep], t] = belief.weights[keep]
    return matrix


def plot_run_length_belief(beliefs, changepoints=None, ax=None,
                           max_run_length=None):
    """Heat map of the belief over run lengths; true changepoints are
    marked with dashed lines."""
    if ax is None:
        ax = plt.gca()
    matrix = belief_matrix(beliefs, max_run_length)
    ax.imshow(np.log10(matrix + 1e-12), origin='lower', aspect='auto',
              cmap='Greys_r', vmin=-6, vmax=0)
    maps = [b.map_run_length for b in beliefs]
    ax.plot(np.arange(len(beliefs)), maps, color='tab:orange', lw=1,
            label='MAP run length')
    if changepoints is not None:
        for t in np.flatnonzero(changepoints):
            ax.axvline(t, color='tab:red', ls='--', lw=0.8)
    ax.set_xlabel("time step")
    ax.set_ylabel("run length")
    return ax


def plot_stream(stream, predictions=None, ax=None):
    """Labels of a one-dimensional regression stream against time, with
    optional predicted means."""
    if ax is None:
        ax = plt.gca()
    t = np.arange(len(stream))
    ax.scatter(t, stream.y[:, 0], c=stream.task_ids % cm_agents.N,
               cmap=cm_agents, s=10)
    if predictions is not None:
        ax.plot(t, predictions, color='black', lw=1)
    for start in stream.segment_starts()[1:]:
        ax.axvline(start, color='grey', ls=':', lw=0.8)
    ax.set_xlabel("time step")
    ax.set_ylabel("y")
    return ax


def plot_training_curve(curve, validation=None, ax=None):
    if ax is None:
        ax = plt.gca()
    ax.plot(curve['iteration'], curve['mean_nll'], lw=0.8, label='train')
    if validation is not None and len(validation):
        ax.plot(validation['iteration'], validation['validation_nll'], 'o-',
                label='validation')
    ax.set_xlabel("iteration")
    ax.set_ylabel("NLL")
    ax.legend()
    return ax


def plot_hazard_sweep(sweep, metric='nll', ax=None):
    """Metric against hazard rate, one line per agent, with confidence
    intervals as error bars."""
    if ax is None:
        ax = plt.gca()
    rows = sweep[sweep['metric'] == metric]
    for i, (agent, group) in enumerate(rows.groupby('agent', sort=False)):
        group = group.sort_values('hazard')
        ax.errorbar(group['hazard'], group['mean'], yerr=group['ci'],
                    label=agent, color=cm_agents(i % cm_agents.N),
                    capsize=3)
    ax.set_xscale('log')
    ax.set_xlabel("hazard")
    ax.set_ylabel(metric)
    ax.legend()
    return ax
