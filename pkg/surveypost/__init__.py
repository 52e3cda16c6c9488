# -*- coding: utf-8 -*-
"""
   surveypost
   ~~~~~~~~~~

   Survey-weighted pseudo-posteriors of random-intercept logistic models
   with sandwich adjusted draws.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
from surveypost.errors import (
    ClampWarning, ConditioningError, ConfigError, ConvergenceError,
    ConvergenceWarning, DataError, DesignWarning, DivergenceError,
    DomainError, NumericError, RankWarning, SurveyPostError)
from surveypost.model import (
    find_mode, grad_log_pseudo_posterior, hessian_fd, log_pseudo_posterior,
    ParamLayout, ParamVector, prior_curvature, PriorSpec, SurveyDataset,
    unit_scores)
from surveypost.replication import (
    estimate_J, make_delete_a_group_jackknife, make_design,
    make_half_sample_bootstrap, ReplicateDesign, ReplicationConfig)
from surveypost.sampler import (
    posterior_cov, posterior_mean, PosteriorDraws, sample_pseudo_posterior,
    SamplerConfig)
from surveypost.sandwich import (
    adjust_draws, AdjustConfig, AdjustmentResult, apply_adjustment,
    build_curvature, CurvatureSet, estimate_H, sqrt_matrix)
from surveypost.transform import (
    build_G, fit_lambda, yj_adjust, yj_forward, yj_inverse, yj_inverse_deriv,
    YJTransform)
from surveypost.variants import (
    ALL_VARIANTS, NAIVE, parse_variant, parse_variants, PRIOR_CURVATURE,
    UNADJUSTED, YEO_JOHNSON)


__all__ = ['ALL_VARIANTS', 'AdjustConfig', 'AdjustmentResult',
           'ClampWarning', 'ConditioningError', 'ConfigError',
           'ConvergenceError', 'ConvergenceWarning', 'CurvatureSet',
           'DataError', 'DesignWarning', 'DivergenceError', 'DomainError',
           'NAIVE', 'NumericError', 'PRIOR_CURVATURE', 'ParamLayout',
           'ParamVector', 'PosteriorDraws', 'PriorSpec', 'RankWarning',
           'ReplicateDesign', 'ReplicationConfig', 'SamplerConfig',
           'SurveyDataset', 'SurveyPostError', 'UNADJUSTED', 'YEO_JOHNSON',
           'YJTransform', 'adjust', 'adjust_draws', 'apply_adjustment',
           'build_G', 'build_curvature', 'estimate_H', 'estimate_J', 'fit',
           'find_mode', 'fit_lambda', 'grad_log_pseudo_posterior',
           'hessian_fd', 'log_pseudo_posterior',
           'make_delete_a_group_jackknife', 'make_design',
           'make_half_sample_bootstrap', 'parse_variant', 'parse_variants',
           'posterior_cov', 'posterior_mean', 'prior_curvature',
           'sample_pseudo_posterior', 'sqrt_matrix', 'unit_scores',
           'yj_adjust', 'yj_forward', 'yj_inverse', 'yj_inverse_deriv']


def fit(data, seed, prior=None, **kwargs):
    """Shortcut for :func:`sample_pseudo_posterior` on the normalized
    weights of `data`.  Keyword arguments are :class:`SamplerConfig` fields.
    """
    return sample_pseudo_posterior(data.normalized(), prior or PriorSpec(),
                                   SamplerConfig(seed=seed, **kwargs))


def adjust(draws, data, seed, variants=ALL_VARIANTS, prior=None,
           replication=None, config=None):
    """Shortcut for :func:`adjust_draws` of every variant under one
    replicate design.  `draws` should come from :func:`fit` on the same
    `data`.

    :returns: a dictionary of :class:`AdjustmentResult` by variant.

    """
    data = data.normalized()
    prior = prior or PriorSpec()
    replication = (replication or ReplicationConfig()).replace(seed=seed)
    design = make_design(data, replication)
    return {v: adjust_draws(v, draws, data, prior, design, config)
            for v in parse_variants(variants)}
