import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
import pytest

from moca.envs import (N_WHEEL_ACTIONS, RANDOM_AGENT_REGRET,
                       ClassificationEnvironment, EpisodeStream,
                       SinusoidEnvironment, WheelEnvironment, WheelTask,
                       generate, make_environment, quadrant_action,
                       sample_unit_ball, wheel_input, wheel_mean_reward,
                       wheel_step)
from moca.exceptions import ContractViolation


def test_changepoint_rate_matches_hazard():
    stream = generate(SinusoidEnvironment(), 0.2, 20000, random_state=0)
    assert not stream.changepoints[0]
    rate = stream.changepoints[1:].mean()
    assert abs(rate - 0.2) < 0.01


def test_task_ids_follow_changepoints():
    stream = generate(SinusoidEnvironment(), 0.3, 200, random_state=1)
    assert_array_equal(stream.task_ids, np.cumsum(stream.changepoints))
    assert len(stream.tasks) == stream.task_ids[-1] + 1
    assert_array_equal(stream.segment_starts(),
                       np.r_[0, np.flatnonzero(stream.changepoints)])


def test_zero_hazard_keeps_one_task():
    stream = generate(ClassificationEnvironment(), 0.0, 50, random_state=2)
    assert not stream.changepoints.any()
    assert len(stream.tasks) == 1


def test_generation_is_seeded():
    a = generate(SinusoidEnvironment(), 0.1, 30, random_state=4)
    b = generate(SinusoidEnvironment(), 0.1, 30, random_state=4)
    assert_array_equal(a.x, b.x)
    assert_array_equal(a.y, b.y)


def test_generate_validates_arguments():
    with pytest.raises(ContractViolation):
        generate(SinusoidEnvironment(), 0.1, 0)
    with pytest.raises(ContractViolation):
        generate(SinusoidEnvironment(), 1.5, 10)
    with pytest.raises(ContractViolation):
        make_environment('maze')


def test_sinusoid_samples_lie_in_range():
    env = SinusoidEnvironment()
    stream = generate(env, 0.2, 500, random_state=3)
    assert stream.x.shape == (500, 1)
    assert stream.y.shape == (500, 1)
    assert np.all(np.abs(stream.x) <= 5.0)
    for task in stream.tasks:
        assert 0.1 <= task.amplitude <= 5.0
        assert 0.0 <= task.phase <= np.pi


def test_classification_labels():
    stream = generate(ClassificationEnvironment(n_classes=4, input_dim=3),
                      0.1, 200, random_state=0)
    assert stream.x.shape == (200, 3)
    assert stream.y.dtype.kind == 'i'
    assert set(np.unique(stream.y)) <= set(range(4))


def test_unit_ball_samples():
    s = sample_unit_ball(np.random.RandomState(0), size=10000)
    radius = np.linalg.norm(s, axis=1)
    assert np.all(radius <= 1.0)
    # uniform over the disk: P(|s| < 0.5) = 0.25
    assert abs(np.mean(radius < 0.5) - 0.25) < 0.02


def test_quadrant_actions():
    assert quadrant_action([0.5, 0.5]) == 1
    assert quadrant_action([-0.5, 0.5]) == 2
    assert quadrant_action([-0.5, -0.5]) == 3
    assert quadrant_action([0.5, -0.5]) == 4


def test_wheel_rewards():
    task = WheelTask(radius=0.5)
    inside, outside = np.array([0.1, 0.1]), np.array([0.6, 0.6])
    assert wheel_mean_reward(task, inside, 0) == 1.0
    assert wheel_mean_reward(task, inside, 1) == 0.0
    assert wheel_mean_reward(task, outside, 0) == 1.0
    assert wheel_mean_reward(task, outside, 1) == 2.0
    assert wheel_mean_reward(task, outside, 2) == 0.0
    _, optimal = wheel_step(task, outside, 3, np.random.RandomState(0))
    assert optimal == 2.0
    with pytest.raises(ContractViolation):
        wheel_step(task, np.array([1.0, 1.0]), 0, np.random.RandomState(0))
    with pytest.raises(ContractViolation):
        wheel_step(task, inside, N_WHEEL_ACTIONS, np.random.RandomState(0))


def test_random_action_regret_constant():
    rng = np.random.RandomState(0)
    regrets = []
    for _ in range(40000):
        task = WheelTask(radius=rng.uniform())
        s = sample_unit_ball(rng)
        _, optimal = wheel_step(task, s, 0, rng)
        a = rng.randint(N_WHEEL_ACTIONS)
        regrets.append(optimal - wheel_mean_reward(task, s, a))
    assert abs(np.mean(regrets) - RANDOM_AGENT_REGRET) < 0.02


def test_wheel_inputs():
    x = wheel_input([0.2, -0.3], 3)
    assert_allclose(x, [0.2, -0.3, 0, 0, 0, 1, 0])
    stream = generate(WheelEnvironment(), 0.05, 100, random_state=0)
    assert stream.x.shape == (100, WheelEnvironment.input_dim)
    assert_allclose(stream.x[:, 2:].sum(axis=1), 1.0)


def test_from_arrays():
    stream = EpisodeStream.from_arrays(np.arange(5.0), np.zeros(5),
                                       changepoints=[1, 0, 1, 0, 1])
    assert stream.x.shape == (5, 1)
    assert_array_equal(stream.changepoints, [0, 0, 1, 0, 1])
    assert_array_equal(stream.task_ids, [0, 0, 1, 1, 2])
    with pytest.raises(ContractViolation):
        EpisodeStream.from_arrays(np.zeros(3), np.zeros(4))


def test_window():
    stream = EpisodeStream.from_arrays(np.arange(6.0), np.zeros(6),
                                       changepoints=[0, 0, 1, 0, 1, 0])
    window = stream.window(2, 3)
    assert len(window) == 3
    assert_array_equal(window.x[:, 0], [2.0, 3.0, 4.0])
    assert_array_equal(window.changepoints, [0, 0, 1])
    assert_array_equal(window.task_ids, [0, 0, 1])
    with pytest.raises(ContractViolation):
        stream.window(4, 3)


def test_to_frame(sinusoid_stream):
    frame = sinusoid_stream.to_frame()
    assert list(frame.columns) == ['t', 'x0', 'y0', 'task_id', 'changepoint']
    assert len(frame) == len(sinusoid_stream)
    assert frame['t'].iloc[0] == 1
