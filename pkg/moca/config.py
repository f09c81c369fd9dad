"""Experiment configuration.

An experiment is described by a TOML file with the sections ``[train]``,
``[model]``, ``[eval]``, ``[prune]``, ``[supervision]`` and ``[output]``;
each maps onto one dataclass below. Fields left out of the file take their
default; ``train.env`` and ``train.hazard`` are required.
"""
from dataclasses import MISSING, asdict, dataclass, field, fields
import typing

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .exceptions import ConfigError

__all__ = ['TrainConfig', 'ModelConfig', 'EvalConfig', 'PruneConfig',
           'SupervisionConfig', 'OutputConfig', 'ExperimentConfig',
           'load_config', 'dump_config', 'config_from_dict',
           'config_to_dict', 'default_batch_length']

ENV_KINDS = ('sinusoid', 'wheel', 'classification')
UPM_KINDS = ('alpaca', 'pcoc')
TRAINING_MODES = ('moca', 'oracle', 'train_on_everything')
SELECTION_RULES = ('thompson', 'optimistic')


def default_batch_length(hazard):
    """Training horizon rule of thumb: about one task per batch."""
    return max(2, int(round(1.0 / hazard)))


@dataclass
class TrainConfig:
    env: str
    hazard: float
    upm: str = 'alpaca'
    mode: str = 'moca'
    learning_rate: float = 0.02
    batch_size: int = 10
    #: steps per training stream; ``round(1 / hazard)`` when omitted
    batch_length: typing.Optional[int] = None
    iterations: int = 2000
    decay_interval: typing.Optional[int] = 1000
    decay_factor: float = 0.5
    seed: int = 0
    validation_interval: int = 250
    validation_streams: int = 10
    validation_length: int = 100

    @property
    def horizon(self):
        if self.batch_length is None:
            return default_batch_length(self.hazard)
        return self.batch_length

    def validate(self):
        _choice('train', 'env', self.env, ENV_KINDS)
        _choice('train', 'upm', self.upm, UPM_KINDS)
        _choice('train', 'mode', self.mode, TRAINING_MODES)
        if not 0.0 < self.hazard < 1.0:
            raise ConfigError("[train] hazard: must lie in (0, 1), got %r"
                              % self.hazard)
        if self.horizon < 2:
            raise ConfigError("[train] batch_length: must be >= 2")
        if self.iterations < 1:
            raise ConfigError("[train] iterations: must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("[train] batch_size: must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("[train] learning_rate: must be >= 0")


@dataclass
class ModelConfig:
    hidden: typing.List[int] = field(default_factory=lambda: [128, 128])
    feature_dim: int = 32
    hidden_activation: str = 'relu'
    feature_activation: str = 'tanh'
    noise_var: float = 0.5
    prior_precision: float = 1.0
    learn_noise: bool = True
    learn_prior: bool = True
    identity_features: bool = False
    #: classification only
    n_classes: int = 5
    dirichlet_prior: float = 100.0


@dataclass
class EvalConfig:
    agents: typing.List[str] = field(default_factory=lambda: [
        'moca', 'oracle', 'train_on_everything', 'condition_on_everything',
        'sliding_window_5', 'sliding_window_10', 'sliding_window_50'])
    horizon: int = 400
    trials: int = 200
    seed: int = 1000
    hazards: typing.List[float] = field(
        default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2])
    selection: str = 'thompson'
    samples: int = 1
    detection_threshold: int = 5

    def validate(self):
        _choice('eval', 'selection', self.selection, SELECTION_RULES)
        if self.horizon < 1:
            raise ConfigError("[eval] horizon: must be >= 1")
        if self.trials < 1:
            raise ConfigError("[eval] trials: must be >= 1")
        if self.samples < 1:
            raise ConfigError("[eval] samples: must be >= 1")


@dataclass
class PruneConfig:
    min_weight: float = 1e-6
    max_hypotheses: int = 512


@dataclass
class SupervisionConfig:
    train_rate: float = 0.0
    test_rate: float = 0.0

    def validate(self):
        for name in ('train_rate', 'test_rate'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError("[supervision] %s: must lie in [0, 1]"
                                  % name)


@dataclass
class OutputConfig:
    directory: str = 'results'


@dataclass
class ExperimentConfig:
    train: TrainConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    prune: PruneConfig = field(default_factory=PruneConfig)
    supervision: SupervisionConfig = field(default_factory=SupervisionConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self):
        for f in fields(self):
            section = getattr(self, f.name)
            if hasattr(section, 'validate'):
                section.validate()
        return self


def _choice(section, name, value, allowed):
    if value not in allowed:
        raise ConfigError("[%s] %s: expected one of %s, got %r"
                          % (section, name, list(allowed), value))


def _check_type(section, name, value, annotation):
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        options = [a for a in typing.get_args(annotation)
                   if a is not type(None)]
        if value is None:
            return None
        return _check_type(section, name, value, options[0])
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError("[%s] %s: expected a list, got %r"
                              % (section, name, value))
        (item,) = typing.get_args(annotation)
        return [_check_type(section, name, v, item) for v in value]
    if annotation is float and isinstance(value, int) and \
            not isinstance(value, bool):
        return float(value)
    if (annotation is int and isinstance(value, bool)) or \
            not isinstance(value, annotation):
        raise ConfigError("[%s] %s: expected %s, got %r"
                          % (section, name, annotation.__name__, value))
    return value


def _section_from_dict(cls, section, values):
    if not isinstance(values, dict):
        raise ConfigError("[%s]: expected a table" % section)
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError("[%s] %s: unknown field"
                          % (section, sorted(unknown)[0]))
    kwargs = {}
    for name, f in known.items():
        if name in values:
            kwargs[name] = _check_type(section, name, values[name],
                                       hints[name])
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError("[%s] %s: missing required field"
                              % (section, name))
    return cls(**kwargs)


def config_from_dict(document):
    """Build and validate an :class:`ExperimentConfig` from parsed TOML."""
    sections = {f.name: f for f in fields(ExperimentConfig)}
    unknown = set(document) - set(sections)
    if unknown:
        raise ConfigError("[%s]: unknown section" % sorted(unknown)[0])
    if 'train' not in document:
        raise ConfigError("[train]: missing required section")
    hints = typing.get_type_hints(ExperimentConfig)
    kwargs = {name: _section_from_dict(hints[name], name, values)
              for name, values in document.items()}
    return ExperimentConfig(**kwargs).validate()


def _drop_none(mapping):
    return {k: v for k, v in mapping.items() if v is not None}


def config_to_dict(cfg):
    return {name: _drop_none(section) for name, section in asdict(cfg).items()}


def load_config(path):
    """Read an experiment configuration from a TOML file."""
    try:
        with open(path, 'rb') as f:
            document = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("%s: %s" % (path, exc))
    except OSError as exc:
        raise ConfigError("cannot read %s: %s" % (path, exc.strerror))
    return config_from_dict(document)


def dump_config(cfg, path):
    with open(path, 'wb') as f:
        tomli_w.dump(config_to_dict(cfg), f)
    return path
