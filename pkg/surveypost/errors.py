# -*- coding: utf-8 -*-
"""
   surveypost.errors
   ~~~~~~~~~~~~~~~~~

   Exceptions and warnings raised by Surveypost.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""


__all__ = ['ClampWarning', 'ConditioningError', 'ConfigError',
           'ConvergenceError', 'ConvergenceWarning', 'DataError',
           'DesignWarning', 'DivergenceError', 'DomainError', 'NumericError',
           'RankWarning', 'SurveyPostError']


class SurveyPostError(ValueError):
    """The base class for all errors in Surveypost."""

    #: The process exit code used by the command-line interface.
    exit_code = 1


class ConfigError(SurveyPostError):
    """Invalid or incomplete configuration."""

    exit_code = 2


class DataError(SurveyPostError):
    """Malformed input data.

    :param line: the 1-based line number of the offending CSV row.
    :param column: the name of the offending column.

    """

    exit_code = 3

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = 'line %d: %s' % (line, message)
        super(DataError, self).__init__(message)
        self.line = line
        self.column = column


class NumericError(SurveyPostError):
    """A non-finite or otherwise unusable numerical result.

    :param term: the name of the offending term, e.g. ``'likelihood'``.
    :param coordinate: the offending parameter coordinate.

    """

    exit_code = 4

    def __init__(self, message, term=None, coordinate=None):
        super(NumericError, self).__init__(message)
        self.term = term
        self.coordinate = coordinate


class DivergenceError(NumericError):
    """The sampler reached a state with a non-finite log-density."""

    def __init__(self, message, iterate=None, chain=None, iteration=None):
        super(DivergenceError, self).__init__(message, term='log_density')
        self.iterate = iterate
        self.chain = chain
        self.iteration = iteration


class ConvergenceError(NumericError):
    """The optimizer did not converge.  :attr:`best` keeps the best iterate.
    """

    def __init__(self, message, best=None, grad_norm=None):
        super(ConvergenceError, self).__init__(message, term='mode')
        self.best = best
        self.grad_norm = grad_norm


class ConditioningError(NumericError):
    """A matrix could not be conditioned into a positive definite one."""

    def __init__(self, message, eigenvalues=None):
        super(ConditioningError, self).__init__(message, term='sqrt_matrix')
        self.eigenvalues = eigenvalues


class DomainError(NumericError):
    """A value lies outside the domain of an inverse transform."""


class ConvergenceWarning(UserWarning):
    """Chains did not mix well enough (split R-hat above threshold)."""


class RankWarning(UserWarning):
    """A replicate information matrix is rank deficient."""


class ClampWarning(UserWarning):
    """Adjusted draws were clamped into the domain of an inverse transform.
    """


class DesignWarning(UserWarning):
    """A sample design is close to degenerate, e.g. many certainty units."""
