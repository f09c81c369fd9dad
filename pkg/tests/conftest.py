import numpy as np
import pytest

from moca.alpaca import AlpacaUPM
from moca.envs import ClassificationEnvironment, SinusoidEnvironment, generate
from moca.nets import ParameterStore
from moca.pcoc import PcocUPM


@pytest.fixture
def rng():
    return np.random.RandomState(42)


@pytest.fixture
def linear_upm():
    """Conjugate Bayesian linear regression on 2-D inputs (no network)."""
    store = ParameterStore()
    upm = AlpacaUPM(store, 2, identity_features=True, noise_var=0.3,
                    prior_precision=2.0, learn_prior=False, learn_noise=False)
    store.assign('alpaca.K0', np.array([[0.5], [-1.0]]))
    return upm


@pytest.fixture
def gaussian_class_upm():
    """Gaussian class clusters with conjugate priors on 2-D inputs."""
    store = ParameterStore()
    means = np.array([[-1.0, 0.0], [1.0, 0.5], [0.0, -1.5]])
    return PcocUPM(store, 2, 3, identity_features=True, dirichlet_prior=2.0,
                   noise_var=0.4, prior_precision=0.8, prior_mean=means,
                   learn_prior=False, learn_noise=False)


@pytest.fixture
def sinusoid_upm():
    store = ParameterStore()
    return AlpacaUPM(store, 1, hidden=(16,), feature_dim=8,
                     hidden_activation='tanh', random_state=0)


@pytest.fixture
def sinusoid_stream():
    return generate(SinusoidEnvironment(), 0.2, 40, random_state=0)


@pytest.fixture
def classification_stream():
    return generate(ClassificationEnvironment(n_classes=3), 0.1, 40,
                    random_state=0)


@pytest.fixture
def tiny_config(tmp_path):
    """A sinusoid experiment small enough to train in a few seconds."""
    path = tmp_path / 'tiny.toml'
    path.write_text("""
[train]
env = "sinusoid"
hazard = 0.2
batch_size = 2
batch_length = 10
iterations = 3
validation_interval = 2
validation_streams = 2
validation_length = 10
seed = 3

[model]
hidden = [8]
feature_dim = 4

[eval]
agents = ["moca", "oracle", "sliding_window_5"]
horizon = 15
trials = 3
hazards = [0.1, 0.2]

[output]
directory = "%s"
""" % (tmp_path / 'out').as_posix())
    return path
