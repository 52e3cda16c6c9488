# -*- coding: utf-8 -*-
"""
   surveypost.sampler
   ~~~~~~~~~~~~~~~~~~

   Adaptive Metropolis sampling of the survey-weighted pseudo-posterior.

   Every chain adapts a global step scale toward the target acceptance rate
   with a Robbins-Monro recursion and re-estimates the proposal covariance
   from warmup draws in windows of doubling length.  Warmup draws are
   discarded.  The kept draws of all chains are merged in chain order.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
from concurrent.futures import ProcessPoolExecutor
import dataclasses
from functools import partial
import logging
import warnings

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.special import expit

from surveypost.errors import (
    ConfigError, ConvergenceWarning, DataError, DivergenceError, NumericError)
from surveypost.model import (
    grad_log_pseudo_posterior, initial_point, log_density, ParamLayout,
    prior_curvature)
from surveypost.utils import spawn_generators, symmetrize


__all__ = ['NonCentered', 'PosteriorDraws', 'RHAT_THRESHOLD', 'SamplerConfig',
           'effective_sample_size', 'posterior_cov', 'posterior_mean',
           'run_chains', 'sample_pseudo_posterior', 'split_rhat']


logger = logging.getLogger(__name__)


#: Chains with a split R-hat above this value are reported.
RHAT_THRESHOLD = 1.05

#: Proposal kinds.
RANDOM_WALK = 'random_walk'
MALA = 'mala'

#: Covariance adaptation schemes.
DIAGONAL = 'diagonal'
DENSE = 'dense'

#: Coordinates the random intercepts are sampled in.
CENTERED = 'centered'
NON_CENTERED = 'non_centered'

#: Default target acceptance rates by proposal kind.
DEFAULT_TARGETS = {RANDOM_WALK: 0.25, MALA: 0.57}


@dataclasses.dataclass(frozen=True)
class SamplerConfig(object):
    """Settings of :func:`sample_pseudo_posterior`.  `seed` is required."""

    seed: int
    n_chains: int = 4
    n_warmup: int = 2000
    n_keep: int = 1000
    target_accept: float = None
    adaptation: str = DENSE
    proposal: str = RANDOM_WALK
    parameterization: str = NON_CENTERED
    thin: int = 1
    init_jitter: float = 0.1
    n_workers: int = 1

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError('A sampler seed is required')
        if self.n_chains < 1:
            raise ConfigError('n_chains should be at least 1')
        if self.n_warmup < 100 or self.n_keep < 100:
            raise ConfigError('n_warmup and n_keep should be at least 100')
        if self.target_accept is not None and \
           not 0 < self.target_accept < 1:
            raise ConfigError('target_accept should be in (0, 1)')
        if self.adaptation not in (DIAGONAL, DENSE):
            raise ConfigError('Unknown adaptation: %r' % self.adaptation)
        if self.proposal not in (RANDOM_WALK, MALA):
            raise ConfigError('Unknown proposal: %r' % self.proposal)
        if self.parameterization not in (CENTERED, NON_CENTERED):
            raise ConfigError('Unknown parameterization: %r'
                              '' % self.parameterization)
        if self.thin < 1 or self.n_workers < 1:
            raise ConfigError('thin and n_workers should be at least 1')

    @property
    def target(self):
        if self.target_accept is None:
            return DEFAULT_TARGETS[self.proposal]
        return self.target_accept

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, config, **overrides):
        config = dict(config or {}, **overrides)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(config) - names
        if unknown:
            raise ConfigError('Unknown sampler settings: %s'
                              '' % ', '.join(sorted(unknown)))
        if config.get('seed') is None:
            raise ConfigError('A sampler seed is required')
        return cls(**config)


class PosteriorDraws(object):
    """``M x K`` draws in the unconstrained space with their log-densities
    and chain labels.  Columns follow the parameter packing.
    """

    def __init__(self, draws, lp, param_names, chain_id, layout=None,
                 rhat=None, ess=None, accept_rate=None, warnings=()):
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        lp = np.asarray(lp, dtype=float).ravel()
        chain_id = np.asarray(chain_id, dtype=int).ravel()
        param_names = tuple(param_names)
        if draws.shape[1] != len(param_names):
            raise DataError('%d draw columns for %d parameter names'
                            '' % (draws.shape[1], len(param_names)))
        if lp.size != draws.shape[0] or chain_id.size != draws.shape[0]:
            raise DataError('lp and chain labels should have one entry per '
                            'draw')
        if not (np.all(np.isfinite(draws)) and np.all(np.isfinite(lp))):
            raise NumericError('Draws include non-finite values',
                               term='draws')
        if layout is not None and layout.names != param_names:
            raise DataError('Parameter names do not match the layout')
        self.draws = draws
        self.lp = lp
        self.param_names = param_names
        self.chain_id = chain_id
        self.layout = layout
        self.rhat = rhat
        self.ess = ess
        self.accept_rate = accept_rate
        self.warnings = list(warnings)

    @property
    def n_draws(self):
        """M, the number of draws of all chains."""
        return self.draws.shape[0]

    @property
    def n_params(self):
        return self.draws.shape[1]

    @property
    def n_chains(self):
        return np.unique(self.chain_id).size

    def by_chain(self):
        """Draws as a ``chains x draws x K`` array.  Chains should have the
        same length.
        """
        chains = [self.draws[self.chain_id == c]
                  for c in np.unique(self.chain_id)]
        if len({len(c) for c in chains}) != 1:
            raise DataError('Chains have different lengths')
        return np.stack(chains)

    def with_draws(self, draws):
        """A copy holding other draws of the same shape, e.g. adjusted ones.
        """
        draws = np.asarray(draws, dtype=float)
        if draws.shape != self.draws.shape:
            raise DataError('Draws of shape %r do not match %r'
                            '' % (draws.shape, self.draws.shape))
        return type(self)(draws, self.lp, self.param_names, self.chain_id,
                          layout=self.layout)

    def subset(self, indices):
        """The selected draws, e.g. an evenly thinned set."""
        indices = np.asarray(indices)
        return type(self)(self.draws[indices], self.lp[indices],
                          self.param_names, self.chain_id[indices],
                          layout=self.layout)

    def quantiles(self, q):
        return np.quantile(self.draws, q, axis=0)

    def to_frame(self):
        frame = pd.DataFrame(self.draws, columns=list(self.param_names))
        frame['lp'] = self.lp
        frame['chain'] = self.chain_id
        return frame

    @classmethod
    def from_frame(cls, frame, layout=None):
        """Reads draws from a frame with parameter columns, ``lp`` and
        ``chain``.  Other programs may produce such frames.
        """
        missing = [c for c in ('lp', 'chain') if c not in frame.columns]
        if missing:
            raise DataError('Draws lack column %r' % missing[0],
                            column=missing[0])
        names = [c for c in frame.columns if c not in ('lp', 'chain')]
        if layout is None:
            layout = ParamLayout.from_names(names)
        return cls(frame[names].to_numpy(dtype=float),
                   frame['lp'].to_numpy(dtype=float), names,
                   frame['chain'].to_numpy(), layout=layout)

    def __repr__(self):
        return '<PosteriorDraws: M=%d, K=%d, chains=%d>' % (
            self.n_draws, self.n_params, self.n_chains)


def _as_matrix(draws):
    if isinstance(draws, PosteriorDraws):
        return draws.draws
    return np.atleast_2d(np.asarray(draws, dtype=float))


def posterior_mean(draws):
    """Column means of the draws, unpacked as a
    :class:`~surveypost.model.ParamVector` when the layout is known.
    """
    matrix = _as_matrix(draws)
    mean = matrix.mean(axis=0)
    layout = getattr(draws, 'layout', None)
    return mean if layout is None else layout.unpack(mean)


def posterior_cov(draws):
    """The sample covariance (divisor ``M - 1``) of the draws."""
    matrix = _as_matrix(draws)
    if matrix.shape[0] < 2:
        raise DataError('Covariance needs at least two draws')
    return symmetrize(np.atleast_2d(np.cov(matrix, rowvar=False, ddof=1)))


def split_rhat(chains):
    """Split-chain potential scale reduction per coordinate.

    :param chains: a ``chains x draws x K`` array.

    """
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    if half < 2:
        return np.full(chains.shape[2], np.nan)
    split = np.concatenate([chains[:, :half], chains[:, -half:]], axis=0)
    within = split.var(axis=1, ddof=1).mean(axis=0)
    between = split.mean(axis=1).var(axis=0, ddof=1)
    pooled = (half - 1.0) / half * within + between
    with np.errstate(divide='ignore', invalid='ignore'):
        rhat = np.sqrt(pooled / within)
    rhat[(within == 0) & (between == 0)] = 1.0
    return rhat


def effective_sample_size(chains):
    """Effective sample size per coordinate from chain-averaged
    autocorrelations truncated by Geyer's initial positive sequence.

    :param chains: a ``chains x draws x K`` array.

    """
    chains = np.asarray(chains, dtype=float)
    n_chains, n, size = chains.shape
    centered = chains - chains.mean(axis=1, keepdims=True)
    spectrum = np.fft.rfft(centered, n=2 * n, axis=1)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), axis=1)[:, :n] / n
    within = acov[:, 0].mean(axis=0)
    ess = np.empty(size)
    for k in range(size):
        if within[k] <= 0:
            ess[k] = n_chains * n
            continue
        rho = acov[:, :, k].mean(axis=0) / within[k]
        total = 0.0
        for t in range(0, n - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair <= 0:
                break
            total += pair
        ess[k] = n_chains * n / max(2.0 * total - 1.0, 1e-12)
    return ess


def _adaptation_windows(n_warmup):
    """Windows of doubling length between a 15% initial and a 10% final
    buffer.  The proposal covariance is re-estimated at the end of each.
    """
    start, end = int(0.15 * n_warmup), int(0.9 * n_warmup)
    windows, size, lo = [], 25, start
    while lo < end:
        hi = min(lo + size, end)
        if end - hi < 2 * size:
            hi = end
        windows.append((lo, hi))
        lo, size = hi, size * 2
    return windows


def _regularize(cov, previous, n, dense):
    """Shrinks a window covariance toward the previous proposal covariance.
    Short windows lean on the previous estimate.
    """
    if not dense:
        cov = np.diag(np.diag(cov))
    weight = n / (n + 2.0 * cov.shape[0])
    return weight * cov + (1.0 - weight) * previous


class _Proposal(object):
    """A Gaussian proposal ``x + step * L z`` with ``L L' = cov``, shifted by
    a preconditioned half gradient step for MALA.
    """

    def __init__(self, cov, grad=None):
        self.chol = linalg.cholesky(cov, lower=True)
        self.cov = cov
        self.grad = grad

    def mean(self, x, g, step):
        if self.grad is None:
            return x
        return x + 0.5 * step ** 2 * self.cov.dot(g)

    def log_q(self, to, frm, g, step):
        if self.grad is None:
            return 0.0
        dev = linalg.solve_triangular(self.chol, to - self.mean(frm, g, step),
                                      lower=True)
        return -0.5 * dev.dot(dev) / step ** 2


def _evaluate(log_density, grad, x):
    lp = log_density(x)
    if grad is None or not np.isfinite(lp):
        return lp, None
    try:
        return lp, np.asarray(grad(x), dtype=float)
    except NumericError:
        return -np.inf, None


def _run_chain(log_density, grad, init, scale, config, rng, chain):
    size = init.size
    x = init + config.init_jitter * scale * rng.standard_normal(size)
    lp, g = _evaluate(log_density, grad, x)
    if not np.isfinite(lp):
        x = init.copy()
        lp, g = _evaluate(log_density, grad, x)
    if not np.isfinite(lp):
        raise DivergenceError('Chain %d starts at a non-finite log density'
                              '' % chain, iterate=x, chain=chain,
                              iteration=0)
    dense = config.adaptation == DENSE
    target = config.target
    default_step = 2.38 / np.sqrt(size) if grad is None else \
        1.65 / size ** (1.0 / 6)
    try:
        proposal = _Proposal(np.diag(scale ** 2), grad)
    except linalg.LinAlgError:
        raise NumericError('Initial proposal scales should be positive',
                           term='proposal')
    log_step, rm_index = np.log(default_step), 0
    windows = dict(_adaptation_windows(config.n_warmup))
    window_start, window_draws = None, []
    n_total = config.n_warmup + config.n_keep * config.thin
    kept_draws, kept_lp = [], []
    accepted = 0
    for it in range(n_total):
        step = np.exp(log_step)
        mean = proposal.mean(x, g, step)
        y = mean + step * proposal.chol.dot(rng.standard_normal(size))
        lp_y, g_y = _evaluate(log_density, grad, y)
        if np.isnan(lp_y) or lp_y == np.inf:
            raise DivergenceError('Log density %r at iteration %d of chain %d'
                                  '' % (lp_y, it, chain), iterate=y,
                                  chain=chain, iteration=it)
        if np.isfinite(lp_y):
            log_ratio = (lp_y - lp + proposal.log_q(x, y, g_y, step) -
                         proposal.log_q(y, x, g, step))
            accept_prob = float(np.exp(min(0.0, log_ratio)))
        else:
            accept_prob = 0.0
        if rng.uniform() < accept_prob:
            x, lp, g = y, lp_y, g_y
            if it >= config.n_warmup:
                accepted += 1
        if it < config.n_warmup:
            rm_index += 1
            log_step += rm_index ** -0.6 * (accept_prob - target)
            if it in windows:
                window_start, window_draws = it, []
            if window_start is not None:
                window_draws.append(x)
            if window_start is not None and \
               it + 1 == windows.get(window_start):
                drawn = np.asarray(window_draws)
                cov = np.atleast_2d(np.cov(drawn, rowvar=False))
                try:
                    proposal = _Proposal(_regularize(
                        cov, proposal.cov, len(drawn), dense), grad)
                except linalg.LinAlgError:
                    logger.debug('chain %d keeps its proposal at %d', chain,
                                 it)
                log_step, rm_index = np.log(default_step), 0
                window_start = None
        elif (it - config.n_warmup) % config.thin == 0:
            kept_draws.append(x)
            kept_lp.append(lp)
    accept_rate = accepted / float(config.n_keep * config.thin)
    logger.info('chain %d: acceptance %.3f, step %.4g', chain, accept_rate,
                np.exp(log_step))
    return np.asarray(kept_draws), np.asarray(kept_lp), accept_rate


def run_chains(log_density, init, config, grad=None, scale=None,
               names=None, layout=None, transform=None):
    """Runs ``config.n_chains`` adaptive chains on any log density.

    :param log_density: a function from a flat vector to a log density.
                        ``-inf`` rejects a proposal.
    :param init: the start point shared by the chains before jitter.
    :param grad: the gradient of `log_density`, required by MALA.
    :param scale: initial per-coordinate proposal scales.  (default: 1)
    :param transform: maps kept draws, stacked as ``chains x draws x K``,
                      to the reported coordinates.  Diagnostics are
                      computed after it.
    :raises DivergenceError: a chain met a ``nan`` or ``+inf`` density.

    """
    init = np.asarray(init, dtype=float).ravel()
    if config.proposal == MALA and grad is None:
        raise ConfigError('MALA proposals need a gradient')
    if config.proposal == RANDOM_WALK:
        grad = None
    scale = np.ones(init.size) if scale is None else \
        np.asarray(scale, dtype=float)
    if names is None:
        names = layout.names if layout is not None else \
            ['x%d' % k for k in range(init.size)]
    rngs = spawn_generators(config.seed, config.n_chains)
    job = partial(_run_chain, log_density, grad, init, scale, config)
    chains = range(config.n_chains)
    if config.n_workers > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(min(config.n_workers,
                                     config.n_chains)) as executor:
            results = list(executor.map(job, rngs, chains))
    else:
        results = [job(rng, c) for rng, c in zip(rngs, chains)]
    stacked = np.stack([r[0] for r in results])
    if transform is not None:
        stacked = transform(stacked)
    rhat = split_rhat(stacked)
    ess = effective_sample_size(stacked)
    notes = []
    bad = np.flatnonzero(rhat > RHAT_THRESHOLD)
    if bad.size:
        message = ('split R-hat above %.2f for %s'
                   '' % (RHAT_THRESHOLD, ', '.join(names[k] for k in bad)))
        notes.append(message)
        logger.warning(message)
        warnings.warn(message, ConvergenceWarning)
    return PosteriorDraws(
        stacked.reshape(-1, stacked.shape[-1]),
        np.concatenate([r[1] for r in results]), names,
        np.repeat(np.arange(config.n_chains), config.n_keep),
        layout=layout, rhat=rhat, ess=ess,
        accept_rate=np.array([r[2] for r in results]), warnings=notes)


class NonCentered(object):
    """A log density over ``theta`` seen in the coordinates where each
    random intercept is ``alpha_g = sigma_alpha z_g``.

    Only the random intercepts change; ``z`` takes their place in the flat
    vector.  The density carries the log Jacobian ``G log sigma_alpha`` so
    that mapped draws follow the original target.
    """

    def __init__(self, layout, log_density, grad=None):
        self.layout = layout
        self._log_density = log_density
        self._grad = grad

    def to_theta(self, phi):
        """Maps ``z`` to ``alpha``.  Accepts any stack of flat vectors."""
        phi = np.asarray(phi, dtype=float)
        theta = phi.copy()
        a, s = self.layout.alpha, self.layout.log_sigma
        with np.errstate(over='ignore', invalid='ignore'):
            theta[..., a] = phi[..., a] * np.exp(phi[..., s])[..., np.newaxis]
        return theta

    def from_theta(self, theta):
        theta = np.asarray(theta, dtype=float)
        phi = theta.copy()
        a, s = self.layout.alpha, self.layout.log_sigma
        phi[..., a] = theta[..., a] * np.exp(-theta[..., s])[..., np.newaxis]
        return phi

    def log_jacobian(self, phi):
        log_sigma = np.asarray(phi)[..., self.layout.log_sigma]
        return self.layout.n_groups * log_sigma

    def log_density(self, phi):
        theta = self.to_theta(phi)
        if not np.all(np.isfinite(theta)):
            return -np.inf
        return self._log_density(theta) + float(self.log_jacobian(phi))

    def grad(self, phi):
        theta = self.to_theta(phi)
        g = np.array(self._grad(theta), dtype=float)
        a, s = self.layout.alpha, self.layout.log_sigma
        g_alpha = g[a].copy()
        g[s] += theta[a].dot(g_alpha) + self.layout.n_groups
        g[a] = g_alpha * np.exp(phi[s])
        return g


def initial_scale(theta, data, prior):
    """Per-coordinate proposal scales from the diagonal of the likelihood
    information plus the prior curvature at `theta`.
    """
    layout = data.layout
    flat = layout.check(theta)
    eta = data.X.dot(flat[layout.beta]) + flat[layout.alpha][data.group]
    p = expit(eta)
    v = data.w * p * (1.0 - p)
    info = np.diag(prior_curvature(flat, prior, layout)).copy()
    info[layout.beta] += (data.X ** 2).T.dot(v)
    info[layout.alpha] += np.bincount(data.group, weights=v,
                                      minlength=layout.n_groups)
    with np.errstate(divide='ignore'):
        scale = 1.0 / np.sqrt(np.maximum(info, 1e-12))
    return np.clip(scale, 1e-3, 2.0)


def sample_pseudo_posterior(data, prior, config, init=None):
    """Draws from the survey-weighted pseudo-posterior of `data`.

    The result is deterministic given ``config.seed``.  Chains with split
    R-hat above :data:`RHAT_THRESHOLD` raise a
    :class:`~surveypost.errors.ConvergenceWarning`; the notes are also kept
    in :attr:`PosteriorDraws.warnings`.

    With ``config.parameterization == 'non_centered'`` the chains move in
    the coordinates of :class:`NonCentered`.  Draws, log-densities and
    diagnostics are reported for ``theta`` either way.

    """
    layout = data.layout
    if init is None:
        init = initial_point(data)
    flat = layout.check(init)
    density = partial(log_density, data=data, prior=prior)
    grad = partial(grad_log_pseudo_posterior, data=data, prior=prior)
    scale = initial_scale(flat, data, prior)
    if config.parameterization == CENTERED:
        draws = run_chains(density, flat, config, grad=grad, scale=scale,
                           layout=layout)
    else:
        target = NonCentered(layout, density, grad)
        phi = target.from_theta(flat)
        scale[layout.alpha] *= np.exp(-flat[layout.log_sigma])
        draws = run_chains(target.log_density, phi, config,
                           grad=target.grad, scale=scale, layout=layout,
                           transform=target.to_theta)
        draws.lp = draws.lp - target.log_jacobian(draws.draws)
    logger.info('sampled %d draws of %d parameters (max R-hat %.3f)',
                draws.n_draws, draws.n_params, np.nanmax(draws.rhat))
    return draws
