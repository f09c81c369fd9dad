"""Bayesian run-length filtering over the posteriors of meta-learning
models, for online prediction on streams with unobserved task switches."""
__version__ = '0.1.0'

from .alpaca import AlpacaUPM
from .agents import make_agent
from .config import ExperimentConfig, TrainConfig, dump_config, load_config
from .envs import (ClassificationEnvironment, EpisodeStream,
                   SinusoidEnvironment, WheelEnvironment, generate,
                   make_environment)
from .estimators import MocaClassifier, MocaRegressor
from .evaluation import evaluate, evaluate_bandit, hazard_sweep
from .exceptions import (ConfigError, ContractViolation,
                         DegenerateBeliefError, NumericalError)
from .filter import (CHANGEPOINT_NOW, NO_CHANGE_NEXT, HazardModel,
                     MocaFilter, RunLengthBelief, apply_supervision, prune)
from .nets import ParameterStore
from .pcoc import PcocUPM
from .trainer import train

__all__ = ['AlpacaUPM', 'PcocUPM', 'ParameterStore', 'MocaFilter',
           'HazardModel', 'RunLengthBelief', 'apply_supervision', 'prune',
           'CHANGEPOINT_NOW', 'NO_CHANGE_NEXT', 'make_agent',
           'SinusoidEnvironment', 'WheelEnvironment',
           'ClassificationEnvironment', 'EpisodeStream', 'generate',
           'make_environment', 'train', 'evaluate', 'evaluate_bandit',
           'hazard_sweep', 'ExperimentConfig', 'TrainConfig', 'load_config',
           'dump_config', 'MocaRegressor', 'MocaClassifier',
           'ContractViolation', 'DegenerateBeliefError', 'NumericalError',
           'ConfigError', '__version__']
