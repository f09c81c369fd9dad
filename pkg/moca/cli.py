"""Command line experiment runner.

Every subcommand reads an experiment TOML file (``--config``), applies the
command line overrides, writes its tables as CSV into the output directory
and records a JSON manifest next to them: the effective configuration, the
seeds, the package version and the sha256 of every parameter checkpoint
involved.

Exit codes: 0 on success, 1 on usage, configuration or file errors, 2 on
numerical failures (including failed gradient checks).
"""
import argparse
from dataclasses import replace
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from . import __version__
from .alpaca import AlpacaUPM
from .benchmark import linear_fit_r2, pruned_step_times, time_step_vs_support
from .checkpoint import load_checkpoint, parameter_hash, save_checkpoint
from .config import (ENV_KINDS, ExperimentConfig, TrainConfig,
                     config_to_dict, load_config)
from .evaluation import (changepoint_detection_stats, evaluate,
                         evaluate_bandit, hazard_sweep)
from .envs import generate
from .exceptions import (ConfigError, ContractViolation,
                         DegenerateBeliefError, NumericalError)
from .gradcheck import run_gradcheck
from .nets import ParameterStore
from .trainer import build_environment, build_upm, required_modes, train_modes

__all__ = ['main', 'build_parser', 'EXIT_OK', 'EXIT_USAGE', 'EXIT_NUMERICAL']

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, '%s: error: %s\n' % (self.prog, message))


def _comma_list(text):
    return [item.strip() for item in text.split(',') if item.strip()]


def _float_list(text):
    try:
        return [float(item) for item in _comma_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers, "
                                         "got %r" % text)


def _int_list(text):
    try:
        return [int(item) for item in _comma_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated integers, "
                                         "got %r" % text)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', metavar='DIR',
                        help="output directory (default: [output] directory)")
    common.add_argument('--seed', type=int, metavar='N',
                        help="override the training and evaluation seeds")
    common.add_argument('--threads', type=int, metavar='N',
                        help="worker threads (default: $MOCA_THREADS or 1)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')

    experiment = argparse.ArgumentParser(add_help=False, parents=[common])
    experiment.add_argument('--config', required=True, metavar='PATH')
    experiment.add_argument('--hazard', type=float, metavar='F',
                            help="override the hazard rate")
    experiment.add_argument('--agents', type=_comma_list, metavar='LIST',
                            help="comma separated agent names")
    experiment.add_argument('--trials', type=int, metavar='N')
    experiment.add_argument('--horizon', type=int, metavar='N',
                            help="evaluation stream length")

    parser = _ArgumentParser(prog='moca', description=__doc__.split('\n')[0])
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    commands = parser.add_subparsers(dest='command', metavar='COMMAND',
                                     parser_class=_ArgumentParser)
    commands.required = True

    commands.add_parser('train', parents=[experiment],
                        help="meta-train the models the agents need")
    evaluate_cmd = commands.add_parser(
        'eval', parents=[experiment],
        help="evaluate trained agents on generated streams")
    bandit_cmd = commands.add_parser(
        'bandit', parents=[experiment],
        help="regret of trained agents on the wheel bandit")
    for sub in (evaluate_cmd, bandit_cmd):
        sub.add_argument('--checkpoints', metavar='DIR',
                         help="directory of the train run (default: --out)")
    sweep = commands.add_parser('sweep', parents=[experiment],
                                help="train and evaluate at several hazards")
    sweep.add_argument('--hazards', type=_float_list, metavar='LIST')

    gradcheck = commands.add_parser(
        'gradcheck', parents=[common],
        help="finite-difference check of the filtered NLL gradients")
    gradcheck.add_argument('--seeds', type=int, default=5, metavar='N',
                           help="number of seeds (default: 5)")
    gradcheck.add_argument('--steps', type=int, default=10, metavar='N')
    gradcheck.add_argument('--tol', type=float, default=1e-6)

    gen = commands.add_parser('gen', parents=[common],
                              help="export a generated stream as CSV")
    source = gen.add_mutually_exclusive_group(required=True)
    source.add_argument('--config', metavar='PATH')
    source.add_argument('--env', choices=ENV_KINDS)
    gen.add_argument('--hazard', type=float, default=0.2, metavar='F')
    gen.add_argument('--horizon', type=int, default=400, metavar='N')

    bench = commands.add_parser(
        'benchmark', parents=[common],
        help="per-step time against belief support size")
    bench.add_argument('--sizes', type=_int_list, metavar='LIST',
                       default=[100, 1000, 2500, 5000, 10000, 15000, 20000,
                                25000])
    bench.add_argument('--steps', type=int, default=2000, metavar='N',
                       help="length of the pruned run")
    bench.add_argument('--max-hypotheses', type=int, default=512)
    return parser


def _configure_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format='%(asctime)s %(name)s %(levelname)s %(message)s')


def _threads(args):
    if args.threads is not None:
        source, value = '--threads', args.threads
    else:
        source = 'MOCA_THREADS'
        value = os.environ.get('MOCA_THREADS', '1')
        try:
            value = int(value)
        except ValueError:
            raise ConfigError("MOCA_THREADS: expected an integer, got %r"
                              % value)
    if value < 1:
        raise ConfigError("%s: expected at least one thread, got %d"
                          % (source, value))
    return value


def _progress(args):
    return not args.quiet and sys.stderr.isatty()


def _experiment(args):
    """Configuration with the command line overrides applied."""
    exp = load_config(args.config)
    train_cfg, eval_cfg = exp.train, exp.eval
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
        eval_cfg = replace(eval_cfg, seed=args.seed)
    if args.hazard is not None:
        train_cfg = replace(train_cfg, hazard=args.hazard)
    if args.agents is not None:
        eval_cfg = replace(eval_cfg, agents=args.agents)
    if args.trials is not None:
        eval_cfg = replace(eval_cfg, trials=args.trials)
    if args.horizon is not None:
        eval_cfg = replace(eval_cfg, horizon=args.horizon)
    exp = replace(exp, train=train_cfg, eval=eval_cfg)
    if args.out is not None:
        exp = replace(exp, output=replace(exp.output, directory=args.out))
    try:
        return exp.validate()
    except ContractViolation as exc:
        raise ConfigError(str(exc))


def _out_dir(args, exp=None):
    directory = args.out
    if directory is None:
        directory = exp.output.directory if exp is not None else 'results'
    os.makedirs(directory, exist_ok=True)
    return directory


def _write_csv(frame, directory, name):
    path = os.path.join(directory, name)
    frame.to_csv(path, index=False)
    logger.info("wrote %s (%d rows)", path, len(frame))
    return name


def _write_manifest(directory, command, files, exp=None, seeds=None,
                    hashes=None, extra=None):
    manifest = {
        'command': command,
        'version': __version__,
        'config': config_to_dict(exp) if exp is not None else None,
        'seeds': seeds or {},
        'parameter_hash': hashes or {},
        'files': sorted(files),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(directory, 'manifest_%s.json' % command)
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def _checkpoint_name(mode):
    return 'checkpoint_%s.json' % mode


def _load_models(exp, directory):
    """Rebuild the UPMs of every needed training mode from the checkpoints
    of a train run."""
    env = build_environment(exp.train, exp.model)
    models, hashes = {}, {}
    for mode in required_modes(exp.eval.agents):
        path = os.path.join(directory, _checkpoint_name(mode))
        if not os.path.exists(path):
            if mode == 'moca':
                raise FileNotFoundError("missing checkpoint %s; run "
                                        "'moca train' first" % path)
            logger.warning("no %s checkpoint, using the moca parameters",
                           mode)
            continue
        store, upm = build_upm(exp.train, env, exp.model)
        load_checkpoint(path, store)
        models[mode] = upm
        hashes[mode] = parameter_hash(store)
    return env, models, hashes


def cmd_train(args):
    exp = _experiment(args)
    directory = _out_dir(args, exp)
    modes = required_modes(exp.eval.agents)
    results = train_modes(exp, modes, threads=_threads(args),
                          progress=_progress(args))
    files, hashes = [], {}
    for mode, result in results.items():
        save_checkpoint(result.store,
                        os.path.join(directory, _checkpoint_name(mode)))
        files.append(_checkpoint_name(mode))
        files.append(_write_csv(result.curve, directory,
                                'curve_%s.csv' % mode))
        files.append(_write_csv(result.validation, directory,
                                'validation_%s.csv' % mode))
        hashes[mode] = parameter_hash(result.store)
    _write_manifest(directory, 'train', files, exp,
                    seeds={'train': exp.train.seed}, hashes=hashes,
                    extra={'best_iteration': {
                        mode: r.best_iteration
                        for mode, r in results.items()}})
    return EXIT_OK


def cmd_eval(args):
    exp = _experiment(args)
    directory = _out_dir(args, exp)
    env, models, hashes = _load_models(exp, args.checkpoints or directory)
    threads = _threads(args)
    metrics, diagnostics = evaluate(
        models, env, exp.train.hazard, exp.eval.horizon, exp.eval.trials,
        exp.eval.agents, prune=exp.prune,
        supervision_rate=exp.supervision.test_rate, seed=exp.eval.seed,
        threads=threads, progress=_progress(args), return_diagnostics=True)
    files = [_write_csv(metrics, directory, 'metrics.csv'),
             _write_csv(diagnostics, directory, 'diagnostics.csv')]

    summary = {}
    for before_label in ([False, True] if env.output_dim == 0 else [False]):
        stats = changepoint_detection_stats(
            models['moca'], env, exp.train.hazard, exp.eval.horizon,
            exp.eval.trials, threshold=exp.eval.detection_threshold,
            prune=exp.prune, supervision_rate=exp.supervision.test_rate,
            before_label=before_label, seed=exp.eval.seed)
        histogram, missed = stats.histogram()
        name = 'detection_x.csv' if before_label else 'detection.csv'
        files.append(_write_csv(histogram, directory, name))
        summary[name] = {'changepoints': stats.n_changepoints,
                         'missed': missed,
                         'within_2': stats.fraction_within(2)}
    _write_manifest(directory, 'eval', files, exp,
                    seeds={'eval': exp.eval.seed}, hashes=hashes,
                    extra={'detection': summary})
    print(metrics.to_string(index=False))
    return EXIT_OK


def cmd_bandit(args):
    exp = _experiment(args)
    if exp.train.env != 'wheel':
        raise ConfigError("[train] env: the bandit command needs 'wheel', "
                          "got %r" % exp.train.env)
    directory = _out_dir(args, exp)
    _, models, hashes = _load_models(exp, args.checkpoints or directory)
    samples = exp.eval.samples if exp.eval.selection == 'optimistic' else 1
    metrics, traces = evaluate_bandit(
        models, exp.train.hazard, exp.eval.horizon, exp.eval.trials,
        exp.eval.agents, prune=exp.prune, samples=samples,
        seed=exp.eval.seed, threads=_threads(args))
    files = [_write_csv(metrics, directory, 'bandit_metrics.csv'),
             _write_csv(traces, directory, 'bandit_trials.csv')]
    _write_manifest(directory, 'bandit', files, exp,
                    seeds={'eval': exp.eval.seed}, hashes=hashes)
    print(metrics.to_string(index=False))
    return EXIT_OK


def cmd_sweep(args):
    exp = _experiment(args)
    directory = _out_dir(args, exp)
    hazards = args.hazards or exp.eval.hazards
    if args.hazard is not None and not args.hazards:
        hazards = [args.hazard]
    table = hazard_sweep(exp, hazards, threads=_threads(args),
                         progress=_progress(args))
    files = [_write_csv(table, directory, 'sweep.csv')]
    _write_manifest(directory, 'sweep', files, exp,
                    seeds={'train': exp.train.seed, 'eval': exp.eval.seed},
                    extra={'hazards': list(hazards)})
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_gradcheck(args):
    directory = _out_dir(args)
    first = 0 if args.seed is None else args.seed
    seeds = list(range(first, first + args.seeds))
    report = run_gradcheck(seeds, steps=args.steps, tol=args.tol)
    files = [_write_csv(report, directory, 'gradcheck.csv')]
    passed = bool(report['passed'].all())
    _write_manifest(directory, 'gradcheck', files,
                    seeds={'gradcheck': seeds}, extra={'passed': passed})
    print(report.to_string(index=False))
    if not passed:
        logger.error("gradient check failed for %d parameters",
                     int((~report['passed']).sum()))
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_gen(args):
    if args.config is not None:
        exp = load_config(args.config)
        env = build_environment(exp.train, exp.model)
        hazard = exp.train.hazard
    else:
        exp = ExperimentConfig(train=TrainConfig(env=args.env,
                                                 hazard=args.hazard))
        env = build_environment(exp.train)
        hazard = args.hazard
    directory = _out_dir(args, exp if args.config else None)
    seed = 0 if args.seed is None else args.seed
    stream = generate(env, hazard, args.horizon, seed)
    files = [_write_csv(stream.to_frame(), directory, 'stream.csv')]
    _write_manifest(directory, 'gen', files, exp, seeds={'stream': seed},
                    extra={'hazard': hazard, 'horizon': args.horizon})
    return EXIT_OK


def cmd_benchmark(args):
    directory = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    rng = np.random.RandomState(seed)
    store = ParameterStore()
    upm = AlpacaUPM(store, 1, hidden=(32, 32), feature_dim=8,
                    random_state=rng)
    timings = time_step_vs_support(upm, args.sizes, random_state=rng)
    r2 = linear_fit_r2(timings)
    times = pruned_step_times(upm, steps=args.steps,
                              max_hypotheses=args.max_hypotheses,
                              random_state=rng)
    settled = times[2 * args.max_hypotheses:] \
        if len(times) > 2 * args.max_hypotheses else times
    ratio = float(settled.max() / np.median(settled))
    files = [_write_csv(timings, directory, 'timing.csv'),
             _write_csv(pd.DataFrame({'t': np.arange(1, len(times) + 1),
                                      'seconds': times}),
                        directory, 'timing_pruned.csv')]
    _write_manifest(directory, 'benchmark', files, seeds={'benchmark': seed},
                    hashes={'benchmark': parameter_hash(store)},
                    extra={'linear_fit_r2': r2, 'pruned_max_over_median':
                           ratio})
    logger.info("linear fit R^2 %.3f, pruned max/median %.2f", r2, ratio)
    return EXIT_OK


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'bandit': cmd_bandit,
    'sweep': cmd_sweep,
    'gradcheck': cmd_gradcheck,
    'gen': cmd_gen,
    'benchmark': cmd_benchmark,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractViolation) as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except (NumericalError, DegenerateBeliefError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
