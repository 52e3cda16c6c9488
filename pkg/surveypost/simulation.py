# -*- coding: utf-8 -*-
"""
   surveypost.simulation
   ~~~~~~~~~~~~~~~~~~~~~

   Coverage studies under simple random and informative PPS sampling.

   A synthetic population with grouped binary outcomes is generated once.
   Every replication draws a sample, fits the pseudo-posterior, adjusts the
   draws by each variant and scores equal-tailed intervals against the true
   parameters.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
from concurrent.futures import ProcessPoolExecutor
import dataclasses
from functools import partial
import logging
import warnings

import numpy as np
from numpy.linalg import LinAlgError
import pandas as pd
from scipy.special import expit

from surveypost.errors import ConfigError, DesignWarning, SurveyPostError
from surveypost.model import ParamLayout, PriorSpec, SurveyDataset
from surveypost.replication import (
    make_design, ReplicationConfig, ReplicateDesign)
from surveypost.sampler import (
    posterior_mean, sample_pseudo_posterior, SamplerConfig)
from surveypost.sandwich import adjust_draws, AdjustConfig
from surveypost.utils import spawn_generators
from surveypost.variants import ALL_VARIANTS, parse_variants


__all__ = ['CoverageReport', 'Population', 'PopulationSpec',
           'ReplicationResult', 'StudyConfig', 'brute_force_replication_fit',
           'draw_pps_sample', 'draw_srs_sample', 'draw_study_sample',
           'generate_population', 'pps_inclusion_probabilities',
           'pps_size_measure', 'render_table', 'run_study']


logger = logging.getLogger(__name__)


# Sample designs:
SRS = 'srs'
PPS = 'pps'

# Parameter classes of the report:
FIXED = 'fixed'
RANDOM = 'random'
SIGMA = 'sigma_alpha'

#: Report rows are ordered by these classes.
PARAM_CLASSES = (FIXED, RANDOM, SIGMA)

#: The share of certainty units above which a PPS sample warns.
CERTAINTY_WARNING_SHARE = 0.05


@dataclasses.dataclass(frozen=True)
class PopulationSpec(object):
    """A synthetic population.  Group sizes fall geometrically from
    `largest` to `smallest` and are rescaled to sum to `N`.

    `sigma_alpha_sq` is read as the random-effect variance by default.  With
    ``sigma_alpha_reading='sd'`` it is the standard deviation itself.
    """

    N: int = 100000
    G: int = 20
    largest: int = 2000
    smallest: int = 100
    beta0: float = -2.0
    beta1: float = 1.0
    sigma_alpha_sq: float = 0.25
    sigma_alpha_reading: str = 'variance'
    seed: int = None

    def __post_init__(self):
        if self.G < 1 or self.N < self.G:
            raise ConfigError('A population needs 1 <= G <= N')
        if not 0 < self.smallest <= self.largest:
            raise ConfigError('Group size endpoints should be positive')
        if not self.sigma_alpha_sq > 0:
            raise ConfigError('sigma_alpha_sq should be positive')
        if self.sigma_alpha_reading not in ('variance', 'sd'):
            raise ConfigError('sigma_alpha_reading should be variance or sd')

    @property
    def sigma_alpha(self):
        """The random-effect standard deviation."""
        if self.sigma_alpha_reading == 'variance':
            return float(np.sqrt(self.sigma_alpha_sq))
        return float(self.sigma_alpha_sq)

    @property
    def group_sizes(self):
        """Group sizes summing to `N` exactly, by largest remainder."""
        if self.G == 1:
            return np.array([self.N])
        steps = np.arange(self.G) / (self.G - 1.0)
        raw = self.largest * (self.smallest / float(self.largest)) ** steps
        scaled = raw * self.N / raw.sum()
        sizes = np.floor(scaled).astype(int)
        short = self.N - sizes.sum()
        sizes[np.argsort(sizes - scaled)[:short]] += 1
        if np.any(sizes < 1):
            raise ConfigError('N is too small for %d groups' % self.G)
        return sizes

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


class Population(object):
    """Units of a generated population.

    :attr:`mu` is the linear predictor, :attr:`alpha` the realized random
    intercepts.

    """

    __slots__ = ('x', 'y', 'group', 'alpha', 'mu', 'spec')

    def __init__(self, x, y, group, alpha, mu, spec):
        self.x = x
        self.y = y
        self.group = group
        self.alpha = alpha
        self.mu = mu
        self.spec = spec

    @property
    def N(self):
        return self.y.size

    @property
    def p(self):
        return expit(self.mu)

    @property
    def layout(self):
        return ParamLayout(2, self.spec.G, ('Intercept', 'x'),
                           [str(j + 1) for j in range(self.spec.G)])

    @property
    def truth(self):
        """The true parameters in the packed layout."""
        return self.layout.pack([self.spec.beta0, self.spec.beta1],
                                self.alpha, np.log(self.spec.sigma_alpha))

    def sample(self, units, w, psu):
        """A :class:`~surveypost.model.SurveyDataset` of the given units."""
        units = np.asarray(units)
        X = np.column_stack([np.ones(units.size), self.x[units]])
        layout = self.layout
        return SurveyDataset(self.y[units], X, self.group[units], psu, w,
                             n_groups=self.spec.G,
                             covariate_names=layout.covariate_names,
                             group_labels=layout.group_labels, unit_id=units)

    def __repr__(self):
        return '<Population: N=%d, G=%d>' % (self.N, self.spec.G)


def generate_population(spec, seed=None):
    """Draws ``alpha_j ~ N(0, sigma_alpha^2)``, ``x ~ N(0, 1)`` and
    ``y ~ Bernoulli(expit(beta0 + beta1 x + alpha_j))``.

    :param seed: overrides ``spec.seed``.  A generator is used as it is.

    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    sizes = spec.group_sizes
    alpha = rng.normal(0.0, spec.sigma_alpha, size=spec.G)
    group = np.repeat(np.arange(spec.G), sizes)
    x = rng.standard_normal(spec.N)
    mu = spec.beta0 + spec.beta1 * x + alpha[group]
    y = (rng.uniform(size=spec.N) < expit(mu)).astype(float)
    logger.info('generated a population of %d units in %d groups '
                '(mean y %.4f)', spec.N, spec.G, y.mean())
    return Population(x, y, group, alpha, mu, spec)


def _cluster_labels(n, cluster_size):
    return np.arange(n) // cluster_size


def _sample_size(population, n_clusters, cluster_size):
    n = n_clusters * cluster_size
    if n_clusters < 2 or cluster_size < 1:
        raise ConfigError('A sample needs at least 2 clusters')
    if n > population.N:
        raise ConfigError('Sample of %d from a population of %d'
                          '' % (n, population.N))
    return n


def draw_srs_sample(population, n_clusters=100, cluster_size=10, seed=None):
    """Simple random sampling without replacement.  Units are partitioned
    into clusters at random.  Every weight is ``N / n``.
    """
    rng = np.random.default_rng(seed)
    n = _sample_size(population, n_clusters, cluster_size)
    units = rng.choice(population.N, size=n, replace=False)
    w = np.full(n, population.N / float(n))
    return population.sample(units, w, _cluster_labels(n, cluster_size))


def pps_size_measure(population):
    """``max(0.1, (mu - min mu) + 5 alpha_j)``.  Units with larger linear
    predictors are more likely selected, so the design is informative.
    """
    mu = population.mu
    return np.maximum(0.1, (mu - mu.min()) + 5.0 * population.alpha[
        population.group])


def pps_inclusion_probabilities(size, n):
    """``n s_i / sum(s)``, not truncated.  They sum to `n`."""
    size = np.asarray(size, dtype=float)
    if np.any(size <= 0) or not np.all(np.isfinite(size)):
        raise ConfigError('Size measures should be positive and finite')
    return n * size / size.sum()


def _capped_probabilities(size, n):
    """Inclusion probabilities capped at 1 with the excess spread over the
    other units until none exceeds 1.
    """
    pi = pps_inclusion_probabilities(size, n)
    certain = np.zeros(pi.size, dtype=bool)
    while np.any(pi[~certain] >= 1.0):
        certain |= pi >= 1.0
        rest = size[~certain]
        pi = np.ones_like(pi)
        pi[~certain] = (n - certain.sum()) * rest / rest.sum()
    return pi


def draw_pps_sample(population, n_clusters=100, cluster_size=10, seed=None,
                    size=None):
    """Systematic PPS sampling of randomly ordered units.

    Clusters follow the selection order.  Weights are ``1 / pi`` rescaled
    to sum to n.

    :param size: size measures.  (default: :func:`pps_size_measure`)

    """
    rng = np.random.default_rng(seed)
    n = _sample_size(population, n_clusters, cluster_size)
    if size is None:
        size = pps_size_measure(population)
    size = np.asarray(size, dtype=float)
    raw = pps_inclusion_probabilities(size, n)
    pi = _capped_probabilities(size, n)
    order = rng.permutation(population.N)
    cumulative = np.cumsum(pi[order])
    cumulative *= n / cumulative[-1]
    points = rng.uniform() + np.arange(n)
    positions = np.searchsorted(cumulative, points, side='right')
    units = order[np.minimum(positions, population.N - 1)]
    certain = np.mean(raw[units] >= 1.0)
    if certain > CERTAINTY_WARNING_SHARE:
        message = ('%.1f%% of sampled units have inclusion probability >= 1'
                   '' % (100 * certain))
        logger.warning(message)
        warnings.warn(message, DesignWarning)
    w = 1.0 / pi[units]
    w *= n / w.sum()
    return population.sample(units, w, _cluster_labels(n, cluster_size))


@dataclasses.dataclass(frozen=True)
class StudyConfig(object):
    """Settings of :func:`run_study`.  `seed` is the master seed."""

    seed: int
    design: str = SRS
    n_reps: int = 100
    variants: tuple = ALL_VARIANTS
    n_clusters: int = 100
    cluster_size: int = 10
    level: float = 0.95
    n_workers: int = 1
    population: PopulationSpec = PopulationSpec()
    sampler: SamplerConfig = None
    replication: ReplicationConfig = ReplicationConfig()
    adjust: AdjustConfig = AdjustConfig()
    prior: dict = None

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError('A study seed is required')
        if self.design not in (SRS, PPS):
            raise ConfigError('Unknown sample design: %r' % self.design)
        if self.n_reps < 1 or self.n_workers < 1:
            raise ConfigError('n_reps and n_workers should be at least 1')
        if not 0 < self.level < 1:
            raise ConfigError('level should be in (0, 1)')
        object.__setattr__(self, 'variants', parse_variants(self.variants))
        if self.sampler is None:
            object.__setattr__(self, 'sampler', SamplerConfig(seed=self.seed))

    @property
    def prior_spec(self):
        return PriorSpec.from_dict(self.prior)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {'seed': self.seed, 'design': self.design,
                'n_reps': self.n_reps, 'variants': list(self.variants),
                'n_clusters': self.n_clusters,
                'cluster_size': self.cluster_size, 'level': self.level,
                'n_workers': self.n_workers,
                'population': self.population.to_dict(),
                'sampler': self.sampler.to_dict(),
                'replication': self.replication.to_dict(),
                'adjust': self.adjust.to_dict(),
                'prior': self.prior_spec.to_dict()}

    @classmethod
    def from_dict(cls, config, **overrides):
        config = dict(config or {}, **overrides)
        if config.get('seed') is None:
            raise ConfigError('A study seed is required')
        try:
            config['population'] = PopulationSpec(
                **(config.get('population') or {}))
            sampler = dict(config.get('sampler') or {})
            sampler.setdefault('seed', config['seed'])
            config['sampler'] = SamplerConfig.from_dict(sampler)
            config['replication'] = ReplicationConfig.from_dict(
                config.get('replication'))
            config['adjust'] = AdjustConfig.from_dict(config.get('adjust'))
            return cls(**config)
        except TypeError as exc:
            raise ConfigError('Invalid study settings: %s' % exc)


@dataclasses.dataclass
class ReplicationResult(object):
    """One replication: a row per variant and parameter, or the error which
    excluded it.  Variants which failed alone are kept in `variant_errors`.
    """

    rep: int
    frame: pd.DataFrame = None
    error: str = None
    variant_errors: dict = dataclasses.field(default_factory=dict)

    @property
    def failed(self):
        return self.error is not None


def _param_classes(layout):
    classes = np.empty(layout.size, dtype=object)
    classes[layout.beta] = FIXED
    classes[layout.alpha] = RANDOM
    classes[layout.log_sigma] = SIGMA
    return classes


def score_intervals(result, truth, layout, level=0.95):
    """Containment and length of each interval.  The interval of
    ``sigma_alpha`` is scored on the log scale and measured on the natural
    scale.
    """
    intervals = result.intervals(level)
    lower = intervals['lower'].to_numpy()
    upper = intervals['upper'].to_numpy()
    length = upper - lower
    s = layout.log_sigma
    length[s] = np.exp(upper[s]) - np.exp(lower[s])
    return pd.DataFrame({'variant': result.variant,
                         'param': list(layout.names),
                         'cls': _param_classes(layout), 'truth': truth,
                         'lower': lower, 'upper': upper, 'length': length,
                         'covered': (lower <= truth) & (truth <= upper)})


def _draw_sample(population, config, rng):
    draw = draw_pps_sample if config.design == PPS else draw_srs_sample
    return draw(population, config.n_clusters, config.cluster_size, rng)


def _describe(exc):
    return '%s: %s' % (type(exc).__name__, exc)


def _study_population(config):
    seed = config.population.seed
    if seed is None:
        seed, = spawn_generators(config.seed, 1, 0)
    return generate_population(config.population, seed)


def _replication_streams(config, rep):
    return spawn_generators(config.seed, 3, 1, rep)


def draw_study_sample(config, rep=0):
    """The population of a study and the sample of one replication, e.g.
    an informative PPS demonstration dataset.  It is the sample
    :func:`run_study` fits in replication `rep`.

    :returns: ``(population, data)`` with normalized weights.

    """
    population = _study_population(config)
    sample_rng = _replication_streams(config, rep)[0]
    data = _draw_sample(population, config, sample_rng).normalized()
    return population, data


def _run_replication(population, config, rep):
    sample_rng, sampler_rng, design_rng = _replication_streams(config, rep)
    prior = config.prior_spec
    try:
        data = _draw_sample(population, config, sample_rng).normalized()
        sampler = config.sampler.replace(
            seed=int(sampler_rng.integers(2 ** 63 - 1)))
        if config.n_workers > 1:
            sampler = sampler.replace(n_workers=1)
        draws = sample_pseudo_posterior(data, prior, sampler)
        design = make_design(data, config.replication.replace(
            seed=int(design_rng.integers(2 ** 63 - 1))))
    except (SurveyPostError, LinAlgError) as exc:
        logger.warning('replication %d failed: %s', rep, exc)
        return ReplicationResult(rep, error=_describe(exc))
    frames, variant_errors = [], {}
    for variant in config.variants:
        try:
            result = adjust_draws(variant, draws, data, prior, design,
                                  config.adjust)
        except (SurveyPostError, LinAlgError) as exc:
            logger.warning('replication %d: %s failed: %s', rep, variant,
                           exc)
            variant_errors[variant] = _describe(exc)
            continue
        frames.append(score_intervals(result, population.truth,
                                      data.layout, config.level))
    if not frames:
        return ReplicationResult(rep, error='every variant failed',
                                 variant_errors=variant_errors)
    frame = pd.concat(frames, ignore_index=True)
    frame.insert(0, 'rep', rep)
    logger.info('replication %d done', rep)
    return ReplicationResult(rep, frame, variant_errors=variant_errors)


class CoverageReport(object):
    """Mean interval length and coverage (%) per variant and parameter
    class, with Monte-Carlo standard errors.

    Coverage standard errors are binomial over replications.  Length
    standard errors are the spread of per-replication class means.

    """

    COLUMNS = ['variant', 'cls', 'length', 'length_se', 'coverage',
               'coverage_se']

    def __init__(self, table, n_replications, n_failed=0, design=SRS,
                 raw=None, config=None, errors=(), variant_failures=None):
        self.table = table
        self.n_replications = n_replications
        self.n_failed = n_failed
        self.design = design
        self.raw = raw
        self.config = config
        self.errors = list(errors)
        #: Replications in which a variant failed while others succeeded.
        self.variant_failures = dict(variant_failures or {})

    @classmethod
    def from_raw(cls, raw, variants, n_failed=0, **kwargs):
        """Aggregates per-replication rows of :func:`score_intervals`."""
        per_rep = raw.groupby(['variant', 'cls', 'rep']).agg(
            length=('length', 'mean'), covered=('covered', 'mean'))
        cells = per_rep.groupby(['variant', 'cls'])
        table = pd.DataFrame({
            'length': cells['length'].mean(),
            'length_se': cells['length'].std(ddof=1) /
            np.sqrt(cells['length'].count()),
            'coverage': 100.0 * cells['covered'].mean(),
            'n': cells['covered'].count()})
        p = table['coverage'] / 100.0
        table['coverage_se'] = 100.0 * np.sqrt(p * (1.0 - p) / table['n'])
        order = pd.MultiIndex.from_product([list(variants), PARAM_CLASSES],
                                           names=['variant', 'cls'])
        table = table.reindex(order).reset_index()[cls.COLUMNS]
        n_replications = raw['rep'].nunique()
        return cls(table, n_replications, n_failed, raw=raw, **kwargs)

    def cell(self, variant, cls):
        rows = self.table[(self.table['variant'] == variant) &
                          (self.table['cls'] == cls)]
        if rows.empty:
            raise KeyError((variant, cls))
        return rows.iloc[0]

    def coverage(self, variant, cls):
        return float(self.cell(variant, cls)['coverage'])

    def length(self, variant, cls):
        return float(self.cell(variant, cls)['length'])

    def to_csv(self, path=None):
        return self.table.to_csv(path, index=False, float_format='%.6g')

    def to_dict(self):
        return {'design': self.design, 'n_replications': self.n_replications,
                'n_failed': self.n_failed, 'errors': self.errors,
                'variant_failures': self.variant_failures,
                'table': self.table.to_dict(orient='records'),
                'config': self.config}

    def __repr__(self):
        return '<CoverageReport: %s, %d replications>' % (self.design,
                                                          self.n_replications)


def render_table(report):
    """A plain text table of lengths then coverages by variant::

       Results for 100 SRS samples
                       Interval length              Coverage (%)
       variant         fixed  random  sigma_alpha  fixed  random  sigma_alpha
       unadjusted      ...

    """
    lengths = report.table.pivot(index='variant', columns='cls',
                                 values='length')
    coverage = report.table.pivot(index='variant', columns='cls',
                                  values='coverage')
    variants = list(dict.fromkeys(report.table['variant']))
    head = '%-16s' % 'variant' + ''.join('%13s' % c for c in PARAM_CLASSES)
    lines = ['Results for %d %s samples' % (report.n_replications,
                                            report.design.upper())]
    for title, values, fmt in [('Interval length', lengths, '%13.3f'),
                               ('Coverage (%)', coverage, '%13.1f')]:
        lines.extend(['', title, head])
        for variant in variants:
            lines.append('%-16s' % variant + ''.join(
                fmt % values.loc[variant, c] for c in PARAM_CLASSES))
    if report.n_failed:
        lines.extend(['', '%d replications failed' % report.n_failed])
    for variant, count in sorted(report.variant_failures.items()):
        if count:
            lines.append('%s failed in %d replications' % (variant, count))
    return '\n'.join(lines)


def run_study(config):
    """Runs the replications of a coverage study.

    Every replication owns random streams keyed by the master seed and its
    index, so results do not depend on `n_workers`.  Failed replications are
    logged, excluded and counted.  A variant failing alone, e.g. with a
    :class:`~surveypost.errors.ConditioningError`, loses only its own rows
    and is counted in :attr:`CoverageReport.variant_failures`.

    """
    population = _study_population(config)
    job = partial(_run_replication, population, config)
    reps = range(config.n_reps)
    if config.n_workers > 1:
        with ProcessPoolExecutor(config.n_workers) as executor:
            results = list(executor.map(job, reps))
    else:
        results = [job(rep) for rep in reps]
    failed = [r for r in results if r.failed]
    done = [r.frame for r in results if not r.failed]
    if not done:
        raise SurveyPostError('All %d replications failed' % config.n_reps)
    if failed:
        logger.warning('%d of %d replications failed', len(failed),
                       config.n_reps)
    variant_failures = {v: sum(v in r.variant_errors for r in results
                               if not r.failed) for v in config.variants}
    for variant, count in variant_failures.items():
        if count:
            logger.warning('%s failed in %d of %d replications', variant,
                           count, config.n_reps)
    errors = ['%d: %s' % (r.rep, r.error) for r in failed]
    errors.extend('%d %s: %s' % (r.rep, v, e) for r in results
                  for v, e in sorted(r.variant_errors.items()))
    raw = pd.concat(done, ignore_index=True)
    return CoverageReport.from_raw(
        raw, config.variants, n_failed=len(failed), design=config.design,
        config=config.to_dict(), errors=errors,
        variant_failures=variant_failures)


def brute_force_replication_fit(data, design, config, prior=None):
    """Refits the pseudo-posterior under every replicate weight set and
    returns the replicate variance of the posterior means,
    ``sum_r c_r (m_r - m_bar)^2`` per parameter.

    Every refit uses ``config.seed``, so replicates share random numbers and
    identical weights give exactly zero variance.

    """
    if not isinstance(design, ReplicateDesign):
        raise ConfigError('A replicate design is required')
    prior = prior or PriorSpec()
    means = []
    for r in range(design.n_replicates):
        replicate = data.with_weights(design.multipliers[r] * data.w)
        draws = sample_pseudo_posterior(replicate, prior, config)
        means.append(np.asarray(posterior_mean(draws)))
        logger.info('replicate %d of %d refitted', r + 1,
                    design.n_replicates)
    means = np.asarray(means)
    dev = np.empty_like(means)
    for block in np.unique(design.blocks):
        rows = design.blocks == block
        dev[rows] = means[rows] - means[rows].mean(axis=0)
    variance = (design.scale[:, np.newaxis] * dev ** 2).sum(axis=0)
    return pd.Series(variance, index=list(data.layout.names),
                     name='replicate_variance')
