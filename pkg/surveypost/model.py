# -*- coding: utf-8 -*-
"""
   surveypost.model
   ~~~~~~~~~~~~~~~~

   The survey-weighted random-intercept logistic model.

   Parameters live in one unconstrained vector ``theta = (beta, alpha_1..G,
   log sigma_alpha)``.  The log pseudo-posterior raises every unit's
   Bernoulli-logit likelihood to the power of its survey weight::

      xi(theta) = sum_i w_i l_i(theta) + log pi(theta)

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
from functools import cached_property
import logging
import re

from bidict import bidict, BidictException
import numpy as np
import pandas as pd
from scipy import linalg, optimize, stats
from scipy.special import expit

from surveypost.errors import (
    ConfigError, ConvergenceError, DataError, NumericError)


__all__ = ['DEFAULT_FD_STEP', 'ParamLayout', 'ParamVector', 'PriorSpec',
           'SurveyDataset', 'find_mode', 'grad_log_prior',
           'grad_log_pseudo_posterior', 'grad_weighted_loglik', 'hessian_fd',
           'initial_point', 'log_prior', 'log_pseudo_posterior',
           'prior_curvature', 'unit_scores', 'weighted_loglik']


logger = logging.getLogger(__name__)


#: The default relative step of finite differences.  The step for the k-th
#: coordinate is ``DEFAULT_FD_STEP * (1 + |theta_k|)``.
DEFAULT_FD_STEP = 1e-5

#: The name of the packed log random-effect standard deviation.
LOG_SIGMA_NAME = 'log_sigma_alpha'

#: Matches to packed parameter names like ``beta[x1]`` or ``alpha[3]``.
NAME_PATTERN = re.compile(r'^(beta|alpha)\[(.*)\]$')


class ParamLayout(object):
    """The fixed ordering between a flat length-K vector and the model
    parameters: ``p`` coefficients, ``G`` random intercepts and one log
    standard deviation, ``K = p + G + 1``.
    """

    __slots__ = ('covariate_names', 'group_labels', 'index')

    def __init__(self, n_covariates, n_groups, covariate_names=None,
                 group_labels=None):
        if n_covariates < 1 or n_groups < 1:
            raise DataError('A model needs at least one covariate and one '
                            'group, got p=%r, G=%r' % (n_covariates, n_groups))
        if covariate_names is None:
            covariate_names = ['x%d' % k for k in range(n_covariates)]
        if group_labels is None:
            group_labels = [str(j + 1) for j in range(n_groups)]
        self.covariate_names = tuple(str(x) for x in covariate_names)
        self.group_labels = tuple(str(x) for x in group_labels)
        if len(self.covariate_names) != n_covariates:
            raise DataError('%d covariate names for %d covariates'
                            '' % (len(self.covariate_names), n_covariates))
        if len(self.group_labels) != n_groups:
            raise DataError('%d group labels for %d groups'
                            '' % (len(self.group_labels), n_groups))
        names = (['beta[%s]' % x for x in self.covariate_names] +
                 ['alpha[%s]' % x for x in self.group_labels] +
                 [LOG_SIGMA_NAME])
        try:
            self.index = bidict((name, k) for k, name in enumerate(names))
        except BidictException:
            raise DataError('Parameter names are not unique: %r' % names)

    @classmethod
    def from_names(cls, names):
        """Rebuilds a layout from packed parameter names, e.g. the header of
        a draws file.
        """
        covariates, groups = [], []
        names = list(names)
        if not names or names[-1] != LOG_SIGMA_NAME:
            raise DataError('The last parameter should be %r' % LOG_SIGMA_NAME)
        for name in names[:-1]:
            m = NAME_PATTERN.match(name)
            if m is None:
                raise DataError('Unknown parameter name: %r' % name,
                                column=name)
            kind, label = m.groups()
            if kind == 'beta':
                if groups:
                    raise DataError('Coefficients should precede random '
                                    'intercepts: %r' % name, column=name)
                covariates.append(label)
            else:
                groups.append(label)
        return cls(len(covariates), len(groups), covariates, groups)

    @property
    def n_covariates(self):
        return len(self.covariate_names)

    @property
    def n_groups(self):
        return len(self.group_labels)

    @property
    def size(self):
        """K, the length of the packed vector."""
        return self.n_covariates + self.n_groups + 1

    @property
    def beta(self):
        return slice(0, self.n_covariates)

    @property
    def alpha(self):
        return slice(self.n_covariates, self.n_covariates + self.n_groups)

    @property
    def log_sigma(self):
        """The position of ``log sigma_alpha``."""
        return self.size - 1

    @property
    def names(self):
        return tuple(self.index.inverse[k] for k in range(self.size))

    def pack(self, beta, alpha, log_sigma_alpha):
        beta = np.asarray(beta, dtype=float).ravel()
        alpha = np.asarray(alpha, dtype=float).ravel()
        if beta.size != self.n_covariates or alpha.size != self.n_groups:
            raise DataError('Expected %d coefficients and %d random '
                            'intercepts, got %d and %d'
                            '' % (self.n_covariates, self.n_groups,
                                  beta.size, alpha.size))
        return np.concatenate([beta, alpha, [float(log_sigma_alpha)]])

    def unpack(self, flat):
        flat = self.check(flat)
        return ParamVector(flat[self.beta].copy(), flat[self.alpha].copy(),
                           flat[self.log_sigma], layout=self)

    def check(self, theta):
        """Converts `theta` to a flat float array of length K.

        :raises DataError: the length does not match.

        """
        flat = np.asarray(theta, dtype=float)
        if flat.ndim != 1 or flat.size != self.size:
            raise DataError('Parameter vector of shape %r does not match '
                            'p=%d, G=%d (K=%d)'
                            '' % (flat.shape, self.n_covariates,
                                  self.n_groups, self.size))
        return flat

    def to_dict(self):
        return {'covariate_names': list(self.covariate_names),
                'group_labels': list(self.group_labels)}

    def __eq__(self, other):
        return (isinstance(other, ParamLayout) and
                self.covariate_names == other.covariate_names and
                self.group_labels == other.group_labels)

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash((self.covariate_names, self.group_labels))

    def __repr__(self):
        return '<ParamLayout: p=%d, G=%d>' % (self.n_covariates, self.n_groups)


class ParamVector(object):
    """Model parameters in the unconstrained space.  Acts as a flat array
    through :func:`numpy.asarray`.
    """

    __slots__ = ('beta', 'alpha', 'log_sigma_alpha', 'layout')

    def __init__(self, beta, alpha, log_sigma_alpha, layout=None):
        beta = np.asarray(beta, dtype=float).ravel()
        alpha = np.asarray(alpha, dtype=float).ravel()
        if layout is None:
            layout = ParamLayout(beta.size, alpha.size)
        if not np.isfinite(log_sigma_alpha):
            raise NumericError('log_sigma_alpha is not finite',
                               term=LOG_SIGMA_NAME)
        self.beta = beta
        self.alpha = alpha
        self.log_sigma_alpha = float(log_sigma_alpha)
        self.layout = layout

    @property
    def sigma_alpha(self):
        return float(np.exp(self.log_sigma_alpha))

    @property
    def flat(self):
        return self.layout.pack(self.beta, self.alpha, self.log_sigma_alpha)

    def __array__(self, dtype=None, copy=None):
        flat = self.flat
        return flat if dtype is None else flat.astype(dtype)

    def __getitem__(self, name):
        return self.flat[self.layout.index[name]]

    def __len__(self):
        return self.layout.size

    def __repr__(self):
        return '<ParamVector: K=%d, sigma_alpha=%.4g>' % (len(self),
                                                         self.sigma_alpha)


class PriorSpec(object):
    """Priors of the model::

       beta_k ~ N(0, beta_prior_sd_k^2)
       alpha_j | sigma_alpha ~ N(0, sigma_alpha^2)
       sigma_alpha ~ half_normal(scale) or half_cauchy(scale)

    :param beta_prior_sd: a scalar or one standard deviation per coefficient.
                          (default: 2.5)
    :param sigma_alpha_prior: ``(family, scale)`` of the hyperprior.
                              (default: ``('half_normal', 1.0)``)

    """

    __slots__ = ('beta_prior_sd', 'sigma_alpha_family', 'sigma_alpha_scale')

    #: The supported hyperprior families.
    FAMILIES = {'half_normal': stats.halfnorm, 'half_cauchy': stats.halfcauchy}

    def __init__(self, beta_prior_sd=2.5, sigma_alpha_prior=('half_normal',
                                                             1.0)):
        family, scale = sigma_alpha_prior
        beta_prior_sd = np.asarray(beta_prior_sd, dtype=float)
        if family not in self.FAMILIES:
            raise ConfigError('Unknown sigma_alpha hyperprior: %r' % family)
        if not (np.all(beta_prior_sd > 0) and np.all(np.isfinite(
                beta_prior_sd)) and 0 < scale < np.inf):
            raise ConfigError('Prior scales should be positive and finite')
        self.beta_prior_sd = beta_prior_sd
        self.sigma_alpha_family = family
        self.sigma_alpha_scale = float(scale)

    @classmethod
    def from_dict(cls, config):
        """Reads the ``prior`` block of a JSON config::

           {"beta_prior_sd": 2.5,
            "sigma_alpha_prior": {"family": "half_normal", "scale": 1.0}}

        """
        config = dict(config or {})
        hyper = dict(config.get('sigma_alpha_prior') or {})
        return cls(config.get('beta_prior_sd', 2.5),
                   (hyper.get('family', 'half_normal'),
                    float(hyper.get('scale', 1.0))))

    def to_dict(self):
        sd = self.beta_prior_sd
        return {'beta_prior_sd': sd.tolist() if sd.ndim else float(sd),
                'sigma_alpha_prior': {'family': self.sigma_alpha_family,
                                      'scale': self.sigma_alpha_scale}}

    def beta_sd(self, n_covariates):
        """Prior standard deviations broadcast to ``n_covariates``."""
        sd = self.beta_prior_sd
        if sd.ndim == 0:
            return np.full(n_covariates, float(sd))
        if sd.size != n_covariates:
            raise ConfigError('%d prior standard deviations for %d '
                              'coefficients' % (sd.size, n_covariates))
        return sd.astype(float)

    def hyper_logpdf(self, log_sigma):
        """The hyperprior density of ``log sigma_alpha`` including the
        Jacobian of the log parameterization.
        """
        dist = self.FAMILIES[self.sigma_alpha_family]
        sigma = np.exp(log_sigma)
        return dist.logpdf(sigma, scale=self.sigma_alpha_scale) + log_sigma

    def hyper_grad(self, log_sigma):
        """d/d(log sigma) of :meth:`hyper_logpdf`."""
        sigma2 = np.exp(2 * log_sigma)
        scale2 = self.sigma_alpha_scale ** 2
        if self.sigma_alpha_family == 'half_normal':
            return 1.0 - sigma2 / scale2
        return 1.0 - 2.0 * sigma2 / (scale2 + sigma2)

    def __repr__(self):
        return '<PriorSpec: beta_sd=%s, sigma_alpha~%s(%g)>' % (
            self.beta_prior_sd, self.sigma_alpha_family,
            self.sigma_alpha_scale)


class SurveyDataset(object):
    """Binary outcomes of a survey sample with their design.

    :param y: 0/1 outcome per unit.
    :param X: the ``n x p`` covariate matrix including the intercept column.
    :param group: 0-based group code per unit, ``0 <= group < n_groups``.
    :param psu: primary sampling unit label per unit.
    :param w: survey weight per unit.
    :param stratum: stratum label per unit.  (default: a single stratum)
    :param n_groups: the number of groups G.  (default: ``max(group) + 1``)
    :param unit_id: an identifier per unit, e.g. its population index.
                    (default: ``0..n-1``)

    Weights should be positive for observed samples.  Derived datasets from
    :meth:`with_weights` may carry zeros, e.g. replicate or prior-only fits.

    """

    def __init__(self, y, X, group, psu, w, stratum=None, n_groups=None,
                 covariate_names=None, group_labels=None, weight_scale=1.0,
                 unit_id=None):
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, np.newaxis]
        group = np.asarray(group).ravel()
        psu = np.asarray(psu).ravel()
        w = np.asarray(w, dtype=float).ravel()
        n = y.size
        if n < 1:
            raise DataError('A dataset needs at least one unit')
        if stratum is None:
            stratum = np.zeros(n, dtype=int)
        stratum = np.asarray(stratum).ravel()
        for name, column in [('X', X), ('group', group), ('psu', psu),
                             ('weight', w), ('stratum', stratum)]:
            if column.shape[0] != n:
                raise DataError('%s has %d rows for %d units'
                                '' % (name, column.shape[0], n), column=name)
        if not np.all((y == 0) | (y == 1)):
            raise DataError('y should be binary', column='y')
        if not np.all(np.isfinite(X)):
            raise DataError('Covariates should be finite', column='X')
        if np.any(np.all(X == 0, axis=0)):
            raise DataError('A covariate column is all zero', column='X')
        if not (np.all(np.isfinite(w)) and np.all(w >= 0)):
            raise DataError('Weights should be finite and non-negative',
                            column='weight')
        if not np.issubdtype(group.dtype, np.integer):
            if not np.all(np.mod(group.astype(float), 1) == 0):
                raise DataError('Group codes should be integers',
                                column='group')
            group = group.astype(int)
        if n_groups is None:
            n_groups = int(group.max()) + 1
        if np.any(group < 0) or np.any(group >= n_groups):
            raise DataError('Group codes should be in 0..%d' % (n_groups - 1),
                            column='group')
        if any(str(x) == '' for x in psu):
            raise DataError('Every unit needs a PSU label', column='psu')
        self.y = y
        self.X = X
        self.group = group.astype(int)
        self.psu = psu
        self.stratum = stratum
        self.w = w
        self.n_groups = int(n_groups)
        self.covariate_names = covariate_names
        self.group_labels = group_labels
        #: The factor which rescaled the original weights.
        self.weight_scale = float(weight_scale)
        if unit_id is None:
            unit_id = np.arange(n)
        self.unit_id = np.asarray(unit_id).ravel()
        if self.unit_id.size != n:
            raise DataError('unit_id has %d rows for %d units'
                            '' % (self.unit_id.size, n), column='unit_id')

    @property
    def n(self):
        return self.y.size

    @property
    def n_covariates(self):
        return self.X.shape[1]

    @cached_property
    def layout(self):
        return ParamLayout(self.n_covariates, self.n_groups,
                           self.covariate_names, self.group_labels)

    @cached_property
    def psu_codes(self):
        """Integer codes of PSUs, unique across strata."""
        frame = pd.DataFrame({'stratum': self.stratum, 'psu': self.psu})
        return frame.groupby(['stratum', 'psu'], sort=True).ngroup().to_numpy()

    @cached_property
    def stratum_codes(self):
        codes, __ = pd.factorize(pd.Series(self.stratum), sort=True)
        return codes

    @property
    def n_psu(self):
        return int(self.psu_codes.max()) + 1

    def _replace(self, **kwargs):
        attrs = dict(y=self.y, X=self.X, group=self.group, psu=self.psu,
                     w=self.w, stratum=self.stratum, n_groups=self.n_groups,
                     covariate_names=self.covariate_names,
                     group_labels=self.group_labels,
                     weight_scale=self.weight_scale, unit_id=self.unit_id)
        attrs.update(kwargs)
        return type(self)(**attrs)

    def with_weights(self, w):
        """A copy with other weights, e.g. one replicate weight set."""
        return self._replace(w=w)

    def normalized(self):
        """A copy whose weights sum to n.  :attr:`weight_scale` accumulates
        the applied factor.
        """
        total = self.w.sum()
        if total <= 0:
            raise DataError('Cannot normalize weights summing to %r' % total,
                            column='weight')
        factor = self.n / total
        return self._replace(w=self.w * factor,
                             weight_scale=self.weight_scale * factor)

    def take(self, indices):
        """A dataset of the selected units."""
        indices = np.asarray(indices)
        return self._replace(y=self.y[indices], X=self.X[indices],
                             group=self.group[indices],
                             psu=self.psu[indices], w=self.w[indices],
                             stratum=self.stratum[indices],
                             unit_id=self.unit_id[indices])

    def to_frame(self):
        """The dataset in the CSV layout read by
        :func:`surveypost.io.read_dataset`.
        """
        labels = self.layout.group_labels
        frame = pd.DataFrame({'y': self.y.astype(int), 'weight': self.w,
                              'group': [labels[g] for g in self.group],
                              'psu': self.psu, 'stratum': self.stratum})
        for k, name in enumerate(self.layout.covariate_names):
            column = self.X[:, k]
            if name.lower() == 'intercept' and np.all(column == 1):
                continue
            frame[name] = column
        return frame

    def __repr__(self):
        return '<SurveyDataset: n=%d, p=%d, G=%d>' % (
            self.n, self.n_covariates, self.n_groups)


def _check(theta, data):
    return data.layout.check(theta)


def _layout_of(shape):
    return shape if isinstance(shape, ParamLayout) else shape.layout


def _linear_predictor(flat, data):
    layout = data.layout
    return data.X.dot(flat[layout.beta]) + flat[layout.alpha][data.group]


def _loglik_terms(flat, data):
    eta = _linear_predictor(flat, data)
    return data.y * eta - np.logaddexp(0.0, eta)


def weighted_loglik(theta, data):
    """``sum_i w_i l_i(theta)``, the likelihood part of the density."""
    flat = _check(theta, data)
    return float(data.w.dot(_loglik_terms(flat, data)))


def _log_prior_terms(flat, prior, layout):
    beta, alpha = flat[layout.beta], flat[layout.alpha]
    log_sigma = flat[layout.log_sigma]
    with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
        beta_term = stats.norm.logpdf(
            beta, scale=prior.beta_sd(layout.n_covariates)).sum()
        sigma = np.exp(log_sigma)
        if 0 < sigma < np.inf:
            alpha_term = stats.norm.logpdf(alpha, scale=sigma).sum()
        else:
            alpha_term = -np.inf
        hyper_term = prior.hyper_logpdf(log_sigma)
    return [('beta_prior', beta_term), ('alpha_prior', alpha_term),
            ('sigma_alpha_prior', hyper_term)]


def log_prior(theta, prior, shape):
    """``log pi(theta)`` on the unconstrained scale (with Jacobian)."""
    layout = _layout_of(shape)
    flat = layout.check(theta)
    return float(sum(x for __, x in _log_prior_terms(flat, prior, layout)))


def log_density(flat, data, prior):
    """The log pseudo-posterior without validation.  Non-finite values are
    returned as they are; :func:`log_pseudo_posterior` is the checked
    version.
    """
    with np.errstate(over='ignore', invalid='ignore'):
        lik = data.w.dot(_loglik_terms(flat, data))
    terms = _log_prior_terms(flat, prior, data.layout)
    return float(lik + sum(x for __, x in terms))


def log_pseudo_posterior(theta, data, prior):
    """``sum_i w_i l_i(theta) + log pi(theta)``.

    :raises DataError: the dimensions of `theta` do not match `data`.
    :raises NumericError: a term is not finite.  :attr:`NumericError.term`
                          names it.

    """
    flat = _check(theta, data)
    with np.errstate(over='ignore', invalid='ignore'):
        terms = [('likelihood', data.w.dot(_loglik_terms(flat, data)))]
    terms.extend(_log_prior_terms(flat, prior, data.layout))
    for term, value in terms:
        if not np.isfinite(value):
            raise NumericError('%s is not finite: %r' % (term, value),
                               term=term)
    return float(sum(x for __, x in terms))


def unit_scores(theta, data):
    """Per-unit likelihood scores ``d l_i / d theta`` as an ``n x K``
    matrix, without weights or prior.  Row i has ``(y_i - p_i) X_i`` in the
    coefficient block, ``y_i - p_i`` at its own group's intercept and zero
    for ``log sigma_alpha``.
    """
    flat = _check(theta, data)
    layout = data.layout
    resid = data.y - expit(_linear_predictor(flat, data))
    scores = np.zeros((data.n, layout.size))
    scores[:, layout.beta] = resid[:, np.newaxis] * data.X
    scores[np.arange(data.n), layout.alpha.start + data.group] = resid
    return scores


def grad_weighted_loglik(theta, data):
    """The weighted column sum of :func:`unit_scores`."""
    flat = _check(theta, data)
    layout = data.layout
    resid = data.w * (data.y - expit(_linear_predictor(flat, data)))
    grad = np.zeros(layout.size)
    grad[layout.beta] = data.X.T.dot(resid)
    grad[layout.alpha] = np.bincount(data.group, weights=resid,
                                     minlength=layout.n_groups)
    return grad


def grad_log_prior(theta, prior, shape):
    layout = _layout_of(shape)
    flat = layout.check(theta)
    beta, alpha = flat[layout.beta], flat[layout.alpha]
    log_sigma = flat[layout.log_sigma]
    precision = np.exp(-2.0 * log_sigma)
    grad = np.empty(layout.size)
    grad[layout.beta] = -beta / prior.beta_sd(layout.n_covariates) ** 2
    grad[layout.alpha] = -alpha * precision
    grad[layout.log_sigma] = (-layout.n_groups + alpha.dot(alpha) * precision +
                              prior.hyper_grad(log_sigma))
    return grad


def grad_log_pseudo_posterior(theta, data, prior):
    """The analytic gradient of :func:`log_pseudo_posterior`.

    :raises NumericError: the gradient is not finite.

    """
    grad = grad_weighted_loglik(theta, data)
    grad += grad_log_prior(theta, prior, data.layout)
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        name = data.layout.names[bad[0]]
        raise NumericError('Gradient is not finite at %s' % name,
                           term='gradient', coordinate=name)
    return grad


def fd_steps(theta, step=DEFAULT_FD_STEP):
    """Per-coordinate finite-difference steps ``step * (1 + |theta_k|)``."""
    if not step > 0:
        raise ValueError('Finite-difference step should be positive')
    return step * (1.0 + np.abs(np.asarray(theta, dtype=float)))


def hessian_fd(grad_fn, theta, step=DEFAULT_FD_STEP):
    """Central differences of a gradient, symmetrized as ``(A + A') / 2``.

    :param grad_fn: a function from a flat vector to its gradient.
    :param theta: the point, a flat vector or a :class:`ParamVector`.
    :param step: the relative step.  (default: :data:`DEFAULT_FD_STEP`)
    :raises NumericError: an entry is not finite.  The error names the
                          coordinate.

    """
    x = np.array(theta, dtype=float)
    steps = fd_steps(x, step)
    size = x.size
    hess = np.empty((size, size))
    for k in range(size):
        hi, lo = x.copy(), x.copy()
        hi[k] += steps[k]
        lo[k] -= steps[k]
        column = (np.asarray(grad_fn(hi)) - np.asarray(grad_fn(lo)))
        hess[:, k] = column / (2.0 * steps[k])
        if not np.all(np.isfinite(hess[:, k])):
            raise NumericError('Hessian is not finite along coordinate %d'
                               '' % k, term='hessian', coordinate=k)
    return (hess + hess.T) / 2.0


def second_difference(f, x, step=1e-4):
    """The central second difference of a scalar function."""
    h = step * (1.0 + abs(x))
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def prior_curvature(theta, prior, shape):
    """``H0 = -d^2 log pi / d theta^2`` at `theta`.

    The normal blocks are exact.  The hyperprior term of ``log sigma_alpha``
    is a second difference.

    :param shape: a :class:`ParamLayout` or anything with a ``layout``.

    """
    layout = _layout_of(shape)
    flat = layout.check(theta)
    alpha = flat[layout.alpha]
    log_sigma = flat[layout.log_sigma]
    precision = np.exp(-2.0 * log_sigma)
    h0 = np.zeros((layout.size, layout.size))
    beta_sd = prior.beta_sd(layout.n_covariates)
    h0[layout.beta, layout.beta] = np.diag(1.0 / beta_sd ** 2)
    h0[layout.alpha, layout.alpha] = np.eye(layout.n_groups) * precision
    s = layout.log_sigma
    h0[layout.alpha, s] = h0[s, layout.alpha] = -2.0 * alpha * precision
    h0[s, s] = (2.0 * alpha.dot(alpha) * precision -
                second_difference(prior.hyper_logpdf, log_sigma))
    return h0


def initial_point(data):
    """A start point: the intercept at the logit of the weighted mean outcome
    and zero elsewhere.
    """
    layout = data.layout
    flat = np.zeros(layout.size)
    intercepts = np.flatnonzero(np.all(data.X == 1, axis=0))
    if intercepts.size and data.w.sum() > 0:
        ybar = np.clip(np.average(data.y, weights=data.w), 0.01, 0.99)
        flat[intercepts[0]] = np.log(ybar / (1.0 - ybar))
    return layout.unpack(flat)


def _free_mask(free, size):
    if free is None:
        return np.ones(size, dtype=bool)
    mask = np.zeros(size, dtype=bool)
    mask[free] = True
    if not mask.any():
        raise ValueError('No free coordinate')
    return mask


def find_mode(data, prior, init=None, free=None, tol=None, max_iter=200):
    """Maximizes :func:`log_pseudo_posterior` by BFGS followed by Newton
    steps with a backtracking line search.

    The joint mode of a random-intercept model does not exist in general
    (the density grows without bound as ``sigma_alpha`` shrinks with the
    intercepts).  Use `free` to optimize only some coordinates while the
    others stay at `init`.

    :param init: the start point.  (default: :func:`initial_point`)
    :param free: a slice, index array or boolean mask of free coordinates.
    :param tol: the gradient norm to reach.  (default: ``1e-6 * K``)
    :raises ConvergenceError: the tolerance was not reached.  The error
                              carries the best iterate.

    """
    layout = data.layout
    if init is None:
        init = initial_point(data)
    base = layout.check(init).copy()
    mask = _free_mask(free, layout.size)
    if tol is None:
        tol = 1e-6 * layout.size

    def expand(z):
        full = base.copy()
        full[mask] = z
        return full

    def value(z):
        return log_density(expand(z), data, prior)

    def gradient(z):
        return grad_log_pseudo_posterior(expand(z), data, prior)[mask]

    def objective(z):
        lp = value(z)
        if not np.isfinite(lp):
            return np.inf, np.zeros_like(z)
        return -lp, -gradient(z)

    result = optimize.minimize(objective, base[mask], jac=True,
                               method='BFGS',
                               options={'gtol': tol, 'norm': 2,
                                        'maxiter': max_iter})
    z = result.x
    lp, grad = value(z), gradient(z)
    for __ in range(max_iter):
        grad_norm = np.linalg.norm(grad)
        if grad_norm <= tol:
            break
        neg_hess = -hessian_fd(gradient, z)
        try:
            direction = linalg.cho_solve(linalg.cho_factor(neg_hess), grad)
        except linalg.LinAlgError:
            direction = grad / max(1.0, grad_norm)
        slope = grad.dot(direction)
        t = 1.0
        while t > 1e-10:
            z_new = z + t * direction
            lp_new = value(z_new)
            if np.isfinite(lp_new):
                grad_new = gradient(z_new)
                if (lp_new >= lp + 1e-4 * t * slope or
                        np.linalg.norm(grad_new) < grad_norm):
                    break
            t /= 2.0
        else:
            break
        z, lp, grad = z_new, lp_new, grad_new
    grad_norm = np.linalg.norm(grad)
    best = layout.unpack(expand(z))
    if not grad_norm <= tol:
        raise ConvergenceError('Mode search stopped at gradient norm %.3g > '
                               '%.3g' % (grad_norm, tol), best=best,
                               grad_norm=grad_norm)
    logger.debug('mode found: log density %.6f, gradient norm %.3g',
                 lp, grad_norm)
    return best
