# -*- coding: utf-8 -*-
"""
   surveypost.cli
   ~~~~~~~~~~~~~~

   The ``surveypost`` command::

      surveypost fit --data survey.csv --seed 1 -o fit/
      surveypost adjust --data survey.csv --draws fit/draws.csv --seed 1 \\
                        --variants all -o adjust/
      surveypost simulate --design pps --reps 100 --seed 1 -o pps/
      surveypost sample --design pps --seed 1 -o demo/
      surveypost oracle --data survey.csv --replicates 20 --seed 1 -o oracle/

   Settings come from a JSON file (``--config``) overridden by flags.  A run
   manifest can be passed as ``--config`` to repeat the run.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
import argparse
import dataclasses
import json
import logging
import os
import sys

from numpy.linalg import LinAlgError
import pandas as pd

from surveypost.__about__ import __version__
from surveypost.errors import ConfigError, NumericError, SurveyPostError
from surveypost.io import (
    read_dataset, read_draws, write_draws, write_frame, write_json,
    write_manifest)
from surveypost.model import PriorSpec
from surveypost.replication import ReplicationConfig, make_design
from surveypost.sampler import sample_pseudo_posterior, SamplerConfig
from surveypost.sandwich import adjust_draws, AdjustConfig
from surveypost.simulation import (
    brute_force_replication_fit, draw_study_sample, render_table, run_study,
    StudyConfig)
from surveypost.utils import derive_seed
from surveypost.variants import ALL_VARIANTS, parse_variants


__all__ = ['RunConfig', 'build_config', 'build_parser', 'cmd_adjust',
           'cmd_fit', 'cmd_oracle', 'cmd_sample', 'cmd_simulate',
           'compare_intervals', 'main']


logger = logging.getLogger(__name__)


COMMANDS = ('fit', 'adjust', 'simulate', 'sample', 'oracle')

# Commands configured by study settings:
STUDY_COMMANDS = ('simulate', 'sample')

# Input files each command reads:
INPUTS = {'fit': ('data',), 'adjust': ('data', 'draws'), 'simulate': (),
          'sample': (), 'oracle': ('data',)}


@dataclasses.dataclass(frozen=True)
class RunConfig(object):
    """The resolved settings of one command."""

    command: str
    seed: int
    output: str = '.'
    data: str = None
    draws: str = None
    variants: tuple = ALL_VARIANTS
    sampler: SamplerConfig = None
    replication: ReplicationConfig = None
    adjust: AdjustConfig = AdjustConfig()
    prior: dict = None
    study: StudyConfig = None
    write_raw: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError('Unknown command: %r' % self.command)
        if self.seed is None:
            raise ConfigError('A seed is required (--seed or "seed" in the '
                              'config file)')
        for name in INPUTS[self.command]:
            path = getattr(self, name)
            if path is None:
                raise ConfigError('%s needs --%s' % (self.command, name))
            if not os.path.isfile(path):
                raise ConfigError('No such file: %s' % path)
        object.__setattr__(self, 'variants', parse_variants(self.variants))
        if self.sampler is None:
            object.__setattr__(self, 'sampler', SamplerConfig(seed=self.seed))
        if self.replication is None:
            object.__setattr__(self, 'replication', ReplicationConfig(
                seed=derive_seed(self.seed, 1)))
        if self.command in STUDY_COMMANDS and self.study is None:
            raise ConfigError('%s needs study settings' % self.command)

    @property
    def prior_spec(self):
        return PriorSpec.from_dict(self.prior)

    def to_dict(self):
        return {'command': self.command, 'seed': self.seed,
                'output': self.output, 'data': self.data,
                'draws': self.draws, 'variants': list(self.variants),
                'sampler': self.sampler.to_dict(),
                'replication': self.replication.to_dict(),
                'adjust': self.adjust.to_dict(),
                'prior': self.prior_spec.to_dict(),
                'study': None if self.study is None else self.study.to_dict(),
                'write_raw': self.write_raw}


def load_config(path):
    """Reads a JSON config file.  A run manifest yields the configuration
    embedded in it.
    """
    if path is None:
        return {}
    try:
        with open(path) as f:
            config = json.load(f)
    except (OSError, ValueError) as exc:
        raise ConfigError('Cannot read config %s: %s' % (path, exc))
    if not isinstance(config, dict):
        raise ConfigError('Config should be a JSON object')
    if 'config' in config and 'outputs' in config:
        config = config['config']
    return config


def _set(config, key, value):
    if value is not None:
        config[key] = value


def build_config(args):
    """Merges the config file with command-line overrides."""
    config = load_config(args.config)
    config['command'] = args.command
    for key in ('seed', 'output', 'data', 'draws', 'variants'):
        _set(config, key, getattr(args, key, None))
    seed = config.get('seed')
    if seed is None:
        raise ConfigError('A seed is required (--seed or "seed" in the '
                          'config file)')
    sampler = dict(config.get('sampler') or {})
    for key, flag in [('n_chains', 'chains'), ('n_warmup', 'warmup'),
                      ('n_keep', 'keep'), ('proposal', 'proposal'),
                      ('adaptation', 'adaptation'),
                      ('parameterization', 'parameterization'),
                      ('n_workers', 'workers')]:
        _set(sampler, key, getattr(args, flag, None))
    sampler.setdefault('seed', seed)
    sampler.setdefault('n_workers', os.cpu_count() or 1)
    replication = dict(config.get('replication') or {})
    _set(replication, 'kind', getattr(args, 'replication', None))
    _set(replication, 'n_replicates', getattr(args, 'replicates', None))
    replication.setdefault('seed', derive_seed(seed, 1))
    adjust = dict(config.get('adjust') or {})
    _set(adjust, 'h_mode', getattr(args, 'h_mode', None))
    _set(adjust, 'h0_space', getattr(args, 'h0_space', None))
    study = None
    if args.command in STUDY_COMMANDS:
        study = dict(config.get('study') or {})
        _set(study, 'design', args.design)
        _set(study, 'n_reps', getattr(args, 'reps', None))
        study['seed'] = seed
        study['variants'] = config.get('variants', ALL_VARIANTS)
        study['n_workers'] = sampler.pop('n_workers')
        study['sampler'] = sampler
        study['replication'] = replication
        study['adjust'] = adjust
        study['prior'] = config.get('prior')
        study = StudyConfig.from_dict(study)
    else:
        config.pop('study', None)
    try:
        return RunConfig(
            command=args.command, seed=seed,
            output=config.get('output', '.'), data=config.get('data'),
            draws=config.get('draws'),
            variants=config.get('variants', ALL_VARIANTS),
            sampler=SamplerConfig.from_dict(sampler),
            replication=ReplicationConfig.from_dict(replication),
            adjust=AdjustConfig.from_dict(adjust), prior=config.get('prior'),
            study=study,
            write_raw=bool(getattr(args, 'raw', False) or
                           config.get('write_raw')))
    except TypeError as exc:
        raise ConfigError('Invalid settings: %s' % exc)


def _output(config, name):
    os.makedirs(config.output, exist_ok=True)
    return os.path.join(config.output, name)


def _manifest(config, outputs, **extra):
    data = config.to_dict()
    data.update(extra)
    return write_manifest(_output(config, 'manifest.json'), config.command,
                          data, outputs)


def _load_data(config):
    return read_dataset(config.data).normalized()


def summarize(draws):
    """Posterior summaries with convergence diagnostics per parameter."""
    matrix = draws.draws
    lower, median, upper = draws.quantiles([0.025, 0.5, 0.975])
    frame = pd.DataFrame({'mean': matrix.mean(axis=0),
                          'sd': matrix.std(axis=0, ddof=1),
                          'q2.5': lower, 'median': median, 'q97.5': upper},
                         index=pd.Index(draws.param_names, name='param'))
    if draws.rhat is not None:
        frame['rhat'] = draws.rhat
    if draws.ess is not None:
        frame['ess'] = draws.ess
    return frame


def compare_intervals(results, level=0.95):
    """Equal-tailed intervals of several adjustments side by side: a row per
    parameter and ``<variant>_lower``, ``_upper`` and ``_length`` columns.
    """
    frame = pd.concat({v: r.intervals(level) for v, r in results.items()},
                      axis=1)
    frame.columns = ['%s_%s' % column for column in frame.columns]
    frame.index.name = 'param'
    return frame


def cmd_fit(config):
    """Samples the pseudo-posterior of a dataset CSV."""
    data = _load_data(config)
    draws = sample_pseudo_posterior(data, config.prior_spec, config.sampler)
    outputs = [write_draws(draws, _output(config, 'draws.csv')),
               write_frame(summarize(draws), _output(config, 'summary.csv'),
                           index=True)]
    _manifest(config, outputs, weight_scale=data.weight_scale,
              accept_rate=draws.accept_rate, warnings=draws.warnings)
    logger.info('wrote %d draws to %s', draws.n_draws, outputs[0])
    return outputs


def cmd_adjust(config):
    """Adjusts draws of a dataset by every selected variant."""
    data = _load_data(config)
    draws = read_draws(config.draws, data.layout)
    design = make_design(data, config.replication)
    prior = config.prior_spec
    outputs, results = [], {}
    for variant in config.variants:
        result = adjust_draws(variant, draws, data, prior, design,
                              config.adjust)
        results[variant] = result
        outputs.extend([
            write_draws(result.adjusted_draws,
                        _output(config, 'adjusted_%s.csv' % variant)),
            write_json(result.to_dict(),
                       _output(config, 'curvature_%s.json' % variant)),
            write_frame(result.intervals(0.95),
                        _output(config, 'intervals_%s.csv' % variant),
                        index=True)])
    table = pd.DataFrame({v: r.design_effect for v, r in results.items()},
                         index=pd.Index(draws.param_names, name='param'))
    outputs.append(write_frame(table, _output(config, 'design_effects.csv'),
                               index=True))
    outputs.append(write_frame(compare_intervals(results),
                               _output(config, 'intervals.csv'), index=True))
    _manifest(config, outputs, weight_scale=data.weight_scale)
    return outputs


def cmd_simulate(config):
    """Runs a coverage study."""
    report = run_study(config.study)
    csv_path = _output(config, 'coverage.csv')
    txt_path = _output(config, 'coverage.txt')
    report.to_csv(csv_path)
    with open(txt_path, 'w') as f:
        f.write(render_table(report) + '\n')
    outputs = [csv_path, txt_path]
    if config.write_raw:
        outputs.append(write_frame(report.raw, _output(config, 'raw.csv')))
    _manifest(config, outputs, n_failed=report.n_failed,
              variant_failures=report.variant_failures, errors=report.errors)
    print(render_table(report))
    return outputs


def cmd_sample(config):
    """Writes one sample of a study design as a dataset CSV, e.g. the
    informative PPS demonstration, with the true parameters of its
    population.  Groups missing from the sample are left out of the CSV.
    """
    population, data = draw_study_sample(config.study)
    truth = pd.DataFrame({'truth': population.truth},
                         index=pd.Index(population.layout.names,
                                        name='param'))
    outputs = [write_frame(data.to_frame(), _output(config, 'sample.csv')),
               write_frame(truth, _output(config, 'truth.csv'), index=True)]
    _manifest(config, outputs, n_units=data.n,
              weight_cv=float(data.w.std() / data.w.mean()))
    logger.info('wrote a %s sample of %d units to %s', config.study.design,
                data.n, outputs[0])
    return outputs


def cmd_oracle(config):
    """Compares replicate refits with the adjusted posterior variances."""
    data = _load_data(config)
    prior = config.prior_spec
    design = make_design(data, config.replication)
    brute = brute_force_replication_fit(data, design, config.sampler, prior)
    if config.draws is not None:
        draws = read_draws(config.draws, data.layout)
    else:
        draws = sample_pseudo_posterior(data, prior, config.sampler)
    table = pd.DataFrame({'brute_force': brute})
    for variant in config.variants:
        result = adjust_draws(variant, draws, data, prior, design,
                              config.adjust)
        table[variant] = result.adjusted_draws.draws.var(axis=0, ddof=1)
    table.index.name = 'param'
    outputs = [write_frame(table, _output(config, 'oracle.csv'), index=True)]
    _manifest(config, outputs)
    return outputs


HANDLERS = {'fit': cmd_fit, 'adjust': cmd_adjust, 'simulate': cmd_simulate,
            'sample': cmd_sample, 'oracle': cmd_oracle}


def build_parser():
    parser = argparse.ArgumentParser(
        prog='surveypost',
        description='Survey-weighted pseudo-posteriors with sandwich '
                    'adjusted draws.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON settings or a run manifest')
    common.add_argument('--seed', type=int, help='master seed (required)')
    common.add_argument('-o', '--output', help='output directory')
    common.add_argument('-v', '--verbose', action='count', default=0)
    common.add_argument('-q', '--quiet', action='count', default=0)
    common.add_argument('--workers', type=int,
                        help='worker processes (default: all CPUs)')
    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument('--chains', type=int)
    sampling.add_argument('--warmup', type=int)
    sampling.add_argument('--keep', type=int, help='kept draws per chain')
    sampling.add_argument('--proposal', choices=['random_walk', 'mala'])
    sampling.add_argument('--adaptation', choices=['dense', 'diagonal'])
    sampling.add_argument('--parameterization',
                          choices=['non_centered', 'centered'])
    adjusting = argparse.ArgumentParser(add_help=False)
    adjusting.add_argument('--variants', help='comma separated or "all"')
    adjusting.add_argument('--replication',
                           choices=['bootstrap', 'jackknife'])
    adjusting.add_argument('--replicates', type=int)
    adjusting.add_argument('--h-mode', dest='h_mode',
                           choices=['at_mean', 'averaged'])
    adjusting.add_argument('--h0-space', dest='h0_space',
                           choices=['theta', 'eta'])
    commands = parser.add_subparsers(dest='command', required=True)
    fit = commands.add_parser('fit', parents=[common, sampling],
                              help='sample the pseudo-posterior')
    fit.add_argument('--data', help='dataset CSV')
    adjust = commands.add_parser('adjust', parents=[common, adjusting],
                                 help='adjust draws')
    adjust.add_argument('--data', help='dataset CSV')
    adjust.add_argument('--draws', help='draws CSV')
    simulate = commands.add_parser(
        'simulate', parents=[common, sampling, adjusting],
        help='run a coverage study')
    simulate.add_argument('--design', choices=['srs', 'pps'])
    simulate.add_argument('--reps', type=int, help='replications')
    simulate.add_argument('--raw', action='store_true',
                          help='also write per-replication results')
    sample = commands.add_parser('sample', parents=[common],
                                 help='write one sample of a study design')
    sample.add_argument('--design', choices=['srs', 'pps'])
    oracle = commands.add_parser(
        'oracle', parents=[common, sampling, adjusting],
        help='refit every replicate')
    oracle.add_argument('--data', help='dataset CSV')
    oracle.add_argument('--draws', help='draws CSV (default: sample)')
    return parser


def configure_logging(verbosity):
    level = {-1: logging.ERROR, 0: logging.WARNING, 1: logging.INFO}.get(
        max(-1, min(verbosity, 2)), logging.DEBUG)
    logging.basicConfig(level=level,
                        format='%(asctime)s %(levelname)s %(name)s: '
                               '%(message)s')


def main(argv=None):
    """Runs a command and returns the exit code: 0 on success, 2 on a
    configuration error, 3 on a data error and 4 on a numeric failure.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose - args.quiet)
    try:
        config = build_config(args)
        HANDLERS[config.command](config)
    except SurveyPostError as exc:
        logger.debug('%s failed', args.command, exc_info=True)
        print('surveypost %s: %s' % (args.command, exc), file=sys.stderr)
        return exc.exit_code
    except LinAlgError as exc:
        logger.debug('%s failed', args.command, exc_info=True)
        print('surveypost %s: linear algebra failed: %s'
              '' % (args.command, exc), file=sys.stderr)
        return NumericError.exit_code
    return 0
