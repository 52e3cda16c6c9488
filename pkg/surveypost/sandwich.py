# -*- coding: utf-8 -*-
"""
   surveypost.sandwich
   ~~~~~~~~~~~~~~~~~~~

   Sandwich curvature adjustment of pseudo-posterior draws.

   Draws are rows.  With ``R1' R1 = H^-1 J H^-1`` and ``R2' R2 = H^-1``,
   each centered draw is mapped by ``T = R2^-1 R1``::

      theta_a = (theta - theta_bar) T + theta_bar

   so the adjusted draws spread like the sandwich ``H^-1 J H^-1`` instead of
   ``H^-1``.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
import dataclasses
from functools import partial
import logging

import numpy as np
import pandas as pd
from scipy import linalg

from surveypost.errors import ConditioningError, ConfigError, DataError
from surveypost.model import (
    DEFAULT_FD_STEP, grad_log_pseudo_posterior, grad_weighted_loglik,
    hessian_fd, prior_curvature)
from surveypost.replication import estimate_J
from surveypost.sampler import posterior_mean, PosteriorDraws
from surveypost.utils import check_square, symmetrize
from surveypost.variants import (
    NAIVE, parse_variant, PRIOR_CURVATURE, UNADJUSTED, YEO_JOHNSON)


__all__ = ['AT_MEAN', 'AVERAGED', 'AdjustConfig', 'AdjustmentResult',
           'CurvatureSet', 'adjust_draws', 'apply_adjustment',
           'build_curvature', 'condition_psd', 'estimate_H', 'sqrt_matrix']


logger = logging.getLogger(__name__)


# Where the likelihood curvature is evaluated:
AT_MEAN = 'at_mean'  # at the posterior mean
AVERAGED = 'averaged'  # averaged over evenly thinned draws

#: Eigenvalues are lifted to this fraction of the trace before Cholesky.
CONDITIONING_TOLERANCE = 1e-10

#: A curvature to invert fails when an eigenvalue is below ``-floor * trace``.
DEFAULT_FLOOR = 1e-8


def _eigenvalues(a):
    try:
        return linalg.eigvalsh(a)
    except linalg.LinAlgError:
        raise ConditioningError('Eigenvalues did not converge')


def _check_floor(a, eigenvalues, floor, name='matrix'):
    trace = np.trace(a)
    if floor is not None and eigenvalues[0] < -floor * abs(trace):
        raise ConditioningError(
            '%s has eigenvalue %.3g below -%g * trace (%.3g)'
            '' % (name, eigenvalues[0], floor, trace),
            eigenvalues=eigenvalues)


def condition_psd(a):
    """Symmetrizes `a` and adds ``lambda I`` with
    ``lambda = max(0, 1e-10 trace - smallest eigenvalue)``.

    A lift beyond round-off, i.e. of a clearly negative eigenvalue, is
    logged as a warning.

    :returns: ``(conditioned, lambda)``.

    """
    a = symmetrize(check_square(a))
    eigenvalues = _eigenvalues(a)
    trace = np.trace(a)
    target = CONDITIONING_TOLERANCE * trace if trace > 0 else \
        np.finfo(float).tiny
    shift = max(0.0, target - eigenvalues[0])
    if shift:
        log = logger.warning if eigenvalues[0] < -target else logger.debug
        log('conditioning shift %.3g (min eigenvalue %.3g, trace %.3g)',
            shift, eigenvalues[0], trace)
        a = a + shift * np.eye(a.shape[0])
    return a, shift


def sqrt_matrix(a, floor=None):
    """The upper triangular ``R`` with ``R' R = A`` after
    :func:`condition_psd`.

    :param floor: when given, an eigenvalue below ``-floor * trace`` fails
                  instead of being lifted.
    :raises ConditioningError: conditioning failed.  The error reports the
                               eigenvalues.

    """
    a = symmetrize(check_square(a))
    if floor is not None:
        _check_floor(a, _eigenvalues(a), floor)
    conditioned, __ = condition_psd(a)
    try:
        return linalg.cholesky(conditioned, lower=False)
    except linalg.LinAlgError:
        raise ConditioningError('Cholesky failed after conditioning',
                                eigenvalues=_eigenvalues(a))


def inverse_psd(a, floor=DEFAULT_FLOOR, name='curvature'):
    """The inverse of `a` after :func:`condition_psd`.

    :param floor: an eigenvalue below ``-floor * trace`` fails instead of
                  being lifted.  ``None`` lifts any eigenvalue.
    :raises ConditioningError: `a` is indefinite beyond the floor or cannot
                               be factored.

    """
    a = symmetrize(check_square(a, name=name))
    if floor is not None:
        _check_floor(a, _eigenvalues(a), floor, name)
    conditioned, __ = condition_psd(a)
    try:
        factor = linalg.cho_factor(conditioned)
    except linalg.LinAlgError:
        raise ConditioningError('Cannot invert the %s' % name,
                                eigenvalues=_eigenvalues(conditioned))
    return symmetrize(linalg.cho_solve(factor, np.eye(a.shape[0])))


def _negative_hessian(grad_fn, points, step):
    total = sum(-hessian_fd(grad_fn, x, step) for x in points)
    return symmetrize(total / len(points))


def _curvature_points(draws, mode, n_points):
    if mode == AT_MEAN:
        return [np.asarray(posterior_mean(draws.draws))]
    if mode == AVERAGED:
        n_points = max(1, min(n_points, draws.n_draws))
        rows = np.linspace(0, draws.n_draws - 1, n_points).round().astype(int)
        return list(draws.draws[rows])
    raise ConfigError('Unknown curvature mode: %r' % mode)


def estimate_H(draws, data, prior=None, mode=AT_MEAN, n_points=20,
               step=DEFAULT_FD_STEP):
    """The negative finite-difference Hessian of the weighted
    log-likelihood.  The prior is left out; it enters through ``H0``.

    :param mode: :data:`AT_MEAN` evaluates at the posterior mean,
                 :data:`AVERAGED` averages over `n_points` evenly thinned
                 draws.
    :raises NumericError: the Hessian is not finite.

    """
    draws = as_draws(draws)
    if draws.n_draws < 1:
        raise DataError('No draws')
    points = _curvature_points(draws, mode, n_points)
    return _negative_hessian(partial(grad_weighted_loglik, data=data), points,
                             step)


class CurvatureSet(object):
    """The matrices entering one adjustment.

    :param H_used: the curvature whose inverse the draws currently spread
                   like.
    :param J_used: the score variance paired with `H_used`.
    :param H: the likelihood curvature.
    :param H0: the prior curvature.
    :param J: the replicate estimate of the score variance.

    """

    def __init__(self, H_used, J_used, variant=NAIVE, H=None, H0=None,
                 J=None, center=None, J_rank=None):
        H_used = symmetrize(check_square(H_used, name='H_used'))
        J_used = symmetrize(check_square(J_used, H_used.shape[0], 'J_used'))
        self.H_used = H_used
        self.J_used = J_used
        self.variant = variant
        self.H = H
        self.H0 = H0
        self.J = J
        self.center = None if center is None else \
            np.asarray(center, dtype=float)
        self.J_rank = J_rank

    @property
    def size(self):
        return self.H_used.shape[0]

    def to_dict(self):
        def dump(a):
            return None if a is None else np.asarray(a).tolist()
        return {'variant': self.variant, 'H_used': dump(self.H_used),
                'J_used': dump(self.J_used), 'H': dump(self.H),
                'H0': dump(self.H0), 'J': dump(self.J),
                'center': dump(self.center), 'J_rank': self.J_rank}

    def __repr__(self):
        return '<CurvatureSet: %s, K=%d>' % (self.variant, self.size)


class AdjustmentResult(object):
    """Adjusted draws with the matrices which produced them.

    :attr:`design_effect` is the per-parameter ratio of adjusted to
    unadjusted marginal variance.

    """

    def __init__(self, adjusted_draws, R1, R2, T, design_effect, center,
                 variant, curvature=None, lambdas=None, clamp_count=0):
        self.adjusted_draws = adjusted_draws
        self.R1 = R1
        self.R2 = R2
        self.T = T
        self.design_effect = design_effect
        self.center = center
        self.variant = variant
        self.curvature = curvature
        self.lambdas = lambdas
        self.clamp_count = clamp_count

    @property
    def param_names(self):
        return self.adjusted_draws.param_names

    def intervals(self, level=0.95):
        """Equal-tailed intervals of the adjusted draws."""
        if not 0 < level < 1:
            raise ValueError('level should be in (0, 1)')
        tail = (1.0 - level) / 2.0
        lower, upper = self.adjusted_draws.quantiles([tail, 1.0 - tail])
        return pd.DataFrame({'lower': lower, 'upper': upper,
                             'length': upper - lower},
                            index=pd.Index(self.param_names, name='param'))

    def to_dict(self):
        data = {'variant': self.variant,
                'param_names': list(self.param_names),
                'center': np.asarray(self.center).tolist(),
                'R1': self.R1.tolist(), 'R2': self.R2.tolist(),
                'T': self.T.tolist(),
                'design_effect': self.design_effect.tolist(),
                'clamp_count': int(self.clamp_count)}
        if self.lambdas is not None:
            data['lambdas'] = np.asarray(self.lambdas).tolist()
        if self.curvature is not None:
            data['curvature'] = self.curvature.to_dict()
        return data

    def __repr__(self):
        return '<AdjustmentResult: %s, M=%d>' % (self.variant,
                                                 self.adjusted_draws.n_draws)


def as_draws(draws):
    if isinstance(draws, PosteriorDraws):
        return draws
    matrix = np.atleast_2d(np.asarray(draws, dtype=float))
    size = matrix.shape[0]
    return PosteriorDraws(matrix, np.zeros(size),
                          ['x%d' % k for k in range(matrix.shape[1])],
                          np.zeros(size, dtype=int))


def variance_ratio(before, after):
    """Column variance of `after` over that of `before`."""
    with np.errstate(divide='ignore', invalid='ignore'):
        return after.var(axis=0, ddof=1) / before.var(axis=0, ddof=1)


def build_curvature(variant, draws, data, prior, design, mode=AT_MEAN,
                    n_points=20, step=DEFAULT_FD_STEP):
    """Assembles the matrices of the naive or prior-curvature variant at the
    posterior mean.

    naive
       ``H_used`` is the curvature of the full log pseudo-posterior,
       ``J_used = J``.
    prior_curvature
       ``H_used = H + H0`` and ``J_used = J + H0``.

    """
    variant = parse_variant(variant)
    if variant not in (NAIVE, PRIOR_CURVATURE):
        raise ConfigError('%s has no direct curvature set' % variant)
    draws = as_draws(draws)
    if draws.n_params != data.layout.size:
        raise DataError('Draws have %d parameters, the model %d'
                        '' % (draws.n_params, data.layout.size))
    center = np.asarray(posterior_mean(draws.draws))
    H = estimate_H(draws, data, mode=mode, n_points=n_points, step=step)
    H0 = prior_curvature(center, prior, data.layout)
    J, rank = estimate_J(center, data, design)
    if variant == NAIVE:
        grad = partial(grad_log_pseudo_posterior, data=data, prior=prior)
        H_used = _negative_hessian(
            grad, _curvature_points(draws, mode, n_points), step)
        J_used = J
    else:
        H_used, J_used = H + H0, J + H0
    return CurvatureSet(H_used, J_used, variant, H=H, H0=H0, J=J,
                        center=center, J_rank=rank)


def apply_adjustment(draws, curv, floor=DEFAULT_FLOOR):
    """Maps centered draws by ``T = R2^-1 R1``.

    The center is ``curv.center`` or, when unset, the draw mean.

    :param floor: ``H_used`` fails when an eigenvalue is below
                  ``-floor * trace``.  ``None`` lifts any eigenvalue.  An
                  indefinite ``J_used`` is always lifted and logged.
    :raises ConditioningError: ``H_used`` is indefinite beyond the floor or
                               ``R2`` is singular.

    """
    draws = as_draws(draws)
    if curv.size != draws.n_params:
        raise DataError('Curvature of size %d for %d parameters'
                        '' % (curv.size, draws.n_params))
    h_inv = inverse_psd(curv.H_used, floor, name='H_used')
    R1 = sqrt_matrix(h_inv.dot(curv.J_used).dot(h_inv))
    R2 = sqrt_matrix(h_inv)
    diagonal = np.abs(np.diag(R2))
    if not np.all(diagonal > np.finfo(float).eps * diagonal.max()):
        raise ConditioningError('R2 is singular',
                                eigenvalues=_eigenvalues(h_inv))
    try:
        T = linalg.solve_triangular(R2, R1, lower=False)
    except linalg.LinAlgError:
        raise ConditioningError('R2 is singular',
                                eigenvalues=_eigenvalues(h_inv))
    center = curv.center
    if center is None:
        center = draws.draws.mean(axis=0)
    adjusted = (draws.draws - center).dot(T) + center
    logger.info('%s adjustment: max |T - I| = %.3g', curv.variant,
                np.abs(T - np.eye(T.shape[0])).max())
    return AdjustmentResult(draws.with_draws(adjusted), R1, R2, T,
                            variance_ratio(draws.draws, adjusted), center,
                            curv.variant, curvature=curv)


def unadjusted(draws):
    """The draws as they are, with ``T = I``."""
    draws = as_draws(draws)
    eye = np.eye(draws.n_params)
    return AdjustmentResult(draws.with_draws(draws.draws.copy()), eye, eye,
                            eye, np.ones(draws.n_params),
                            draws.draws.mean(axis=0), UNADJUSTED)


@dataclasses.dataclass(frozen=True)
class AdjustConfig(object):
    """Settings of :func:`adjust_draws`."""

    h_mode: str = AT_MEAN
    n_points: int = 20
    fd_step: float = DEFAULT_FD_STEP
    #: ``'theta'`` adds the prior curvature before the Yeo-Johnson chain
    #: rule, ``'eta'`` after it.
    h0_space: str = 'theta'
    lambdas: tuple = None
    #: ``H_used`` fails below ``-floor * trace``; ``None`` lifts it instead.
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.h_mode not in (AT_MEAN, AVERAGED):
            raise ConfigError('Unknown curvature mode: %r' % self.h_mode)
        if self.h0_space not in ('theta', 'eta'):
            raise ConfigError('h0_space should be theta or eta')
        if self.n_points < 1 or not self.fd_step > 0:
            raise ConfigError('n_points and fd_step should be positive')
        if self.floor is not None and not self.floor >= 0:
            raise ConfigError('floor should be non-negative or null')
        if self.lambdas is not None:
            object.__setattr__(self, 'lambdas',
                               tuple(float(x) for x in self.lambdas))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        data = dataclasses.asdict(self)
        if self.lambdas is not None:
            data['lambdas'] = list(self.lambdas)
        return data

    @classmethod
    def from_dict(cls, config, **overrides):
        config = dict(config or {}, **overrides)
        try:
            return cls(**config)
        except TypeError as exc:
            raise ConfigError('Invalid adjustment settings: %s' % exc)


def adjust_draws(variant, draws, data, prior, design, config=None):
    """Adjusts draws by one variant.

    :param variant: a name accepted by
                    :func:`~surveypost.variants.parse_variant`.
    :param design: a :class:`~surveypost.replication.ReplicateDesign` over
                   the units of `data`.

    """
    variant = parse_variant(variant)
    config = config or AdjustConfig()
    if variant == UNADJUSTED:
        return unadjusted(draws)
    if variant == YEO_JOHNSON:
        from surveypost.transform import yj_adjust
        return yj_adjust(draws, data, prior, design, lambdas=config.lambdas,
                         h0_space=config.h0_space, floor=config.floor)
    curv = build_curvature(variant, draws, data, prior, design,
                           mode=config.h_mode, n_points=config.n_points,
                           step=config.fd_step)
    return apply_adjustment(draws, curv, floor=config.floor)
