# -*- coding: utf-8 -*-
"""
   surveypost.transform
   ~~~~~~~~~~~~~~~~~~~~

   Yeo-Johnson transforms of posterior marginals and the adjustment of
   draws in the transformed space.

   The transform of one coordinate is::

      psi(lam, x) = ((x + 1)^lam - 1) / lam                 x >= 0, lam != 0
                    log(x + 1)                              x >= 0, lam == 0
                    -((1 - x)^(2 - lam) - 1) / (2 - lam)    x < 0, lam != 2
                    -log(1 - x)                             x < 0, lam == 2

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
import logging
import warnings

import numpy as np
from scipy import optimize

from surveypost.errors import (
    ClampWarning, ConfigError, DataError, DomainError, NumericError)
from surveypost.model import prior_curvature
from surveypost.replication import estimate_J
from surveypost.sampler import posterior_cov
from surveypost.sandwich import (
    AdjustmentResult, apply_adjustment, as_draws, CurvatureSet,
    DEFAULT_FLOOR, inverse_psd, variance_ratio)
from surveypost.utils import fingerprint
from surveypost.variants import YEO_JOHNSON


__all__ = ['LAMBDA_BOUNDS', 'YJTransform', 'build_G', 'fit_lambda',
           'fit_lambdas', 'yj_adjust', 'yj_forward', 'yj_inverse',
           'yj_inverse_deriv', 'yj_range']


logger = logging.getLogger(__name__)


#: The search interval of the exponent.
LAMBDA_BOUNDS = (-3.0, 5.0)

#: Adjusted values beyond the range of the inverse are pulled this far
#: inside.
CLAMP_MARGIN = 1e-8

#: The fewest values :func:`fit_lambda` accepts.
MIN_FIT_SIZE = 50

# Exponents closer than this to a branch point take the log branch.
_BRANCH_EPS = 1e-12


def yj_forward(lam, x):
    """``psi(lam, x)`` for a scalar or an array `x`.

    :raises NumericError: the result overflows.

    """
    lam = float(lam)
    x = np.asarray(x, dtype=float)
    pos = x >= 0
    with np.errstate(over='ignore', invalid='ignore'):
        up = np.log1p(np.where(pos, x, 0.0))
        down = np.log1p(np.where(pos, 0.0, -x))
        if abs(lam) < _BRANCH_EPS:
            upper = up
        else:
            upper = np.expm1(lam * up) / lam
        if abs(lam - 2.0) < _BRANCH_EPS:
            lower = -down
        else:
            lower = -np.expm1((2.0 - lam) * down) / (2.0 - lam)
        eta = np.where(pos, upper, lower)
    if not np.all(np.isfinite(eta)):
        raise NumericError('Yeo-Johnson transform overflows at lambda=%g'
                           '' % lam, term='yj_forward')
    return eta[()] if eta.ndim == 0 else eta


def yj_range(lam):
    """The open interval ``(lo, hi)`` of values ``psi(lam, .)`` takes."""
    lam = float(lam)
    lo = -1.0 / (lam - 2.0) if lam > 2.0 + _BRANCH_EPS else -np.inf
    hi = -1.0 / lam if lam < -_BRANCH_EPS else np.inf
    return lo, hi


def _inverse_unchecked(lam, eta):
    pos = eta >= 0
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        up = np.where(pos, eta, 0.0)
        down = np.where(pos, 0.0, eta)
        if abs(lam) < _BRANCH_EPS:
            upper = np.expm1(up)
        else:
            upper = np.expm1(np.log1p(lam * up) / lam)
        if abs(lam - 2.0) < _BRANCH_EPS:
            lower = -np.expm1(-down)
        else:
            lower = -np.expm1(np.log1p(-(2.0 - lam) * down) / (2.0 - lam))
    return np.where(pos, upper, lower)


def yj_inverse(lam, eta):
    """The exact inverse of :func:`yj_forward`.

    :raises DomainError: a value lies outside :func:`yj_range`.

    """
    lam = float(lam)
    eta = np.asarray(eta, dtype=float)
    lo, hi = yj_range(lam)
    if np.any(eta <= lo) or np.any(eta >= hi) or \
       not np.all(np.isfinite(eta)):
        raise DomainError('Value outside (%g, %g), the range of the '
                          'transform at lambda=%g' % (lo, hi, lam),
                          term='yj_inverse')
    x = _inverse_unchecked(lam, eta)
    if not np.all(np.isfinite(x)):
        raise NumericError('Inverse transform overflows at lambda=%g' % lam,
                           term='yj_inverse')
    return x[()] if x.ndim == 0 else x


def yj_inverse_deriv(lam, eta, step=1e-6):
    """``d psi^-1 / d eta`` by a central difference with step
    ``step * (1 + |eta|)``.

    :raises DomainError: the stencil leaves the range.

    """
    eta = np.asarray(eta, dtype=float)
    h = step * (1.0 + np.abs(eta))
    lo, hi = yj_range(lam)
    if np.any(eta - h <= lo) or np.any(eta + h >= hi):
        raise DomainError('Too close to the boundary of the range to '
                          'differentiate at lambda=%g' % lam,
                          term='yj_inverse_deriv')
    return (yj_inverse(lam, eta + h) - yj_inverse(lam, eta - h)) / (2.0 * h)


def profile_loglik(lam, x):
    """The normal profile log-likelihood of transformed values, up to a
    constant.
    """
    x = np.asarray(x, dtype=float)
    variance = np.var(yj_forward(lam, x))
    if not variance > 0:
        return -np.inf
    return (-0.5 * x.size * np.log(variance) +
            (lam - 1.0) * np.sum(np.sign(x) * np.log1p(np.abs(x))))


def fit_lambda(column, bounds=LAMBDA_BOUNDS, xatol=1e-4):
    """The exponent which makes `column` look most normal.

    :raises DataError: `column` is too short or constant.

    """
    x = np.asarray(column, dtype=float).ravel()
    if x.size < MIN_FIT_SIZE:
        raise DataError('%d values; fitting lambda needs %d'
                        '' % (x.size, MIN_FIT_SIZE))
    if np.ptp(x) == 0:
        raise DataError('Cannot fit lambda on a constant column')

    def objective(lam):
        try:
            value = profile_loglik(lam, x)
        except NumericError:
            return np.finfo(float).max
        return -value if np.isfinite(value) else np.finfo(float).max

    result = optimize.minimize_scalar(objective, bounds=bounds,
                                      method='bounded',
                                      options={'xatol': xatol})
    return float(result.x)


def fit_lambdas(draws, bounds=LAMBDA_BOUNDS):
    """One exponent per column of an ``M x K`` matrix."""
    matrix = np.atleast_2d(np.asarray(draws, dtype=float))
    return np.array([fit_lambda(matrix[:, k], bounds)
                     for k in range(matrix.shape[1])])


class YJTransform(object):
    """Per-coordinate Yeo-Johnson exponents.

    :param lambdas: one exponent per parameter.
    :param fitted_on: the fingerprint of the draws the exponents were fitted
                      on.

    """

    __slots__ = ('lambdas', 'fitted_on')

    def __init__(self, lambdas, fitted_on=None):
        lambdas = np.asarray(lambdas, dtype=float).ravel()
        if not np.all(np.isfinite(lambdas)):
            raise ConfigError('Transform exponents should be finite')
        self.lambdas = lambdas
        self.fitted_on = fitted_on

    @classmethod
    def fit(cls, draws, bounds=LAMBDA_BOUNDS):
        matrix = np.atleast_2d(np.asarray(draws, dtype=float))
        return cls(fit_lambdas(matrix, bounds), fingerprint(matrix))

    @property
    def size(self):
        return self.lambdas.size

    def _check(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.size:
            raise DataError('%d columns for %d exponents'
                            '' % (values.shape[-1], self.size))
        return values

    def _columns(self, fn, values):
        values = self._check(values)
        out = np.empty_like(values)
        for k, lam in enumerate(self.lambdas):
            out[..., k] = fn(lam, values[..., k])
        return out

    def forward(self, values):
        return self._columns(yj_forward, values)

    def inverse(self, values):
        return self._columns(yj_inverse, values)

    def deriv(self, eta):
        """``d psi^-1 / d eta`` per coordinate."""
        return self._columns(yj_inverse_deriv, eta)

    def clamp(self, values):
        """Pulls values outside the ranges of the inverses just inside.

        :returns: ``(clamped, count)``.

        """
        values = self._check(values).copy()
        count = 0
        for k, lam in enumerate(self.lambdas):
            lo, hi = yj_range(lam)
            column = values[..., k]
            outside = (column <= lo) | (column >= hi)
            count += int(outside.sum())
            values[..., k] = np.clip(column, lo + CLAMP_MARGIN,
                                     hi - CLAMP_MARGIN)
        return values, count

    def to_dict(self):
        return {'lambdas': self.lambdas.tolist(),
                'fitted_on': self.fitted_on}

    def __repr__(self):
        return '<YJTransform: K=%d>' % self.size


def build_G(eta_bar, lambdas):
    """The chain-rule matrix ``d d'`` with ``d_k = d psi^-1 / d eta`` at
    ``eta_bar_k``.
    """
    d = YJTransform(lambdas).deriv(np.asarray(eta_bar, dtype=float))
    return np.outer(d, d)


def yj_adjust(draws, data, prior, design, lambdas=None, h0_space='theta',
              floor=DEFAULT_FLOOR):
    """The Yeo-Johnson variant.

    Draws are moved to ``eta = psi(theta)``.  The curvature there is the
    inverse covariance of the transformed draws.  ``J`` and the prior
    curvature are evaluated at ``theta_bar = psi^-1(eta_bar)`` and carried
    to ``eta`` by the chain rule matrix from :func:`build_G`.  Adjusted
    draws go back through the inverse, clamped into its range.

    :param lambdas: fixed exponents.  (default: fitted per column)
    :param h0_space: ``'theta'`` maps ``J + H0`` by the chain rule;
                     ``'eta'`` maps ``J`` and adds ``H0`` after.

    """
    if h0_space not in ('theta', 'eta'):
        raise ConfigError('h0_space should be theta or eta')
    draws = as_draws(draws)
    layout = data.layout
    if draws.n_params != layout.size:
        raise DataError('Draws have %d parameters, the model %d'
                        '' % (draws.n_params, layout.size))
    if lambdas is None:
        transform = YJTransform.fit(draws.draws)
    else:
        transform = YJTransform(lambdas)
        if transform.size != layout.size:
            raise ConfigError('%d exponents for %d parameters'
                              '' % (transform.size, layout.size))
    eta = transform.forward(draws.draws)
    eta_bar = eta.mean(axis=0)
    H_eta = inverse_psd(posterior_cov(eta))
    theta_bar = transform.inverse(eta_bar)
    J, rank = estimate_J(theta_bar, data, design)
    H0 = prior_curvature(theta_bar, prior, layout)
    G = build_G(eta_bar, transform.lambdas)
    if h0_space == 'theta':
        J_eta = (J + H0) * G
    else:
        J_eta = J * G + H0
    curv = CurvatureSet(H_eta, J_eta, YEO_JOHNSON, H=H_eta, H0=H0, J=J,
                        center=eta_bar, J_rank=rank)
    in_eta = apply_adjustment(draws.with_draws(eta), curv, floor=floor)
    clamped, count = transform.clamp(in_eta.adjusted_draws.draws)
    if count:
        message = ('%d adjusted values were clamped into the range of the '
                   'inverse transform' % count)
        logger.warning(message)
        warnings.warn(message, ClampWarning)
    adjusted = transform.inverse(clamped)
    logger.debug('lambdas: %s', np.array2string(transform.lambdas,
                                                precision=3))
    return AdjustmentResult(draws.with_draws(adjusted), in_eta.R1, in_eta.R2,
                            in_eta.T, variance_ratio(draws.draws, adjusted),
                            theta_bar, YEO_JOHNSON, curvature=curv,
                            lambdas=transform.lambdas, clamp_count=count)
