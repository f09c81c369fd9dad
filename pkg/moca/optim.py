"""Adam with a step-wise learning-rate decay schedule."""
from dataclasses import dataclass, field

import numpy as np

__all__ = ['AdamState', 'adam_step']


@dataclass
class AdamState:
    """Optimizer state.

    The learning rate is multiplied by ``decay_factor`` every
    ``decay_interval`` steps (``decay_interval=None`` disables decay).
    """
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_interval: int = None
    decay_factor: float = 0.5
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(store, state):
    """Apply one Adam update to every trainable parameter of ``store``
    from its accumulated gradient, then zero the gradients."""
    state.step += 1
    t = state.step
    for name, value in store.trainable_items():
        grad = value.grad
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(value.data)
            state.second_moment[name] = np.zeros_like(value.data)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1 - state.beta1) * grad
        v *= state.beta2
        v += (1 - state.beta2) * grad * grad
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        value.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) +
                                                     state.epsilon)
    store.zero_grad()
    if state.decay_interval and t % state.decay_interval == 0:
        state.learning_rate *= state.decay_factor
    return store, state
