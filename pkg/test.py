# -*- coding: utf-8 -*-
import functools
import json
import logging
import math
import os

import numpy as np
from numpy.linalg import LinAlgError
from numpy.testing import assert_allclose
import pandas as pd
import pytest
from scipy.special import digamma, expit, logit

import surveypost
from surveypost import (
    adjust_draws, AdjustConfig, ALL_VARIANTS, apply_adjustment, build_G,
    build_curvature, ClampWarning, ConditioningError, ConfigError,
    ConvergenceError, CurvatureSet, DataError, DesignWarning, DivergenceError,
    DomainError, estimate_H, estimate_J, find_mode, fit_lambda,
    grad_log_pseudo_posterior, hessian_fd, log_pseudo_posterior, NAIVE,
    NumericError, ParamLayout, ParamVector, parse_variant, parse_variants,
    posterior_cov, posterior_mean, PosteriorDraws, PRIOR_CURVATURE,
    prior_curvature, PriorSpec, RankWarning, ReplicationConfig, SamplerConfig,
    sqrt_matrix, SurveyDataset, SurveyPostError, UNADJUSTED, unit_scores,
    yj_adjust, yj_forward, yj_inverse, yj_inverse_deriv, YEO_JOHNSON,
    YJTransform)
from surveypost import simulation
from surveypost.cli import compare_intervals, main
from surveypost.io import (
    file_digest, read_dataset, read_draws, write_draws, write_manifest)
from surveypost.model import (
    grad_log_prior, initial_point, log_density, log_prior, weighted_loglik)
from surveypost.replication import (
    HALF_SAMPLE_BOOTSTRAP, JACKKNIFE, make_delete_a_group_jackknife,
    make_design, make_half_sample_bootstrap, ReplicateDesign)
from surveypost.sampler import (
    CENTERED, effective_sample_size, NonCentered, run_chains,
    sample_pseudo_posterior, split_rhat)
from surveypost.sandwich import (
    AVERAGED, condition_psd, inverse_psd, unadjusted)
from surveypost.simulation import (
    brute_force_replication_fit, CoverageReport, draw_pps_sample,
    draw_srs_sample, draw_study_sample, FIXED, generate_population,
    PARAM_CLASSES, pps_inclusion_probabilities, pps_size_measure,
    PopulationSpec, PPS, RANDOM, render_table, run_study, score_intervals,
    SIGMA, SRS, StudyConfig)
from surveypost.transform import profile_loglik, yj_range
from surveypost.utils import derive_seed, spawn_generators


TINY = os.path.join(os.path.dirname(os.path.abspath(surveypost.__file__)),
                    'data', 'tiny.csv')

FAST_SAMPLER = dict(n_chains=2, n_warmup=200, n_keep=200)


def make_data(n=200, G=4, n_psu=20, seed=1, strata=1, w=None,
              beta=(-0.5, 1.0), sigma=0.5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    group = np.arange(n) % G
    alpha = rng.normal(0.0, sigma, size=G)
    eta = beta[0] + beta[1] * x + alpha[group]
    y = (rng.uniform(size=n) < expit(eta)).astype(float)
    psu = np.arange(n) % n_psu
    if w is None:
        w = rng.uniform(0.5, 2.0, size=n)
    return SurveyDataset(y, np.column_stack([np.ones(n), x]), group, psu,
                         np.broadcast_to(w, (n,)), psu % strata)


def make_draws(layout, M=400, seed=2, scale=0.1, center=None):
    rng = np.random.default_rng(seed)
    if center is None:
        center = np.zeros(layout.size)
    draws = center + scale * rng.standard_normal((M, layout.size))
    return PosteriorDraws(draws, np.zeros(M), layout.names,
                          np.repeat([0, 1], M // 2), layout=layout)


def random_spd(size, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((size, size))
    return a.dot(a.T) + size * np.eye(size)


def test_about():
    __import__('surveypost.__about__')


def test_errors():
    assert issubclass(SurveyPostError, ValueError)
    assert ConfigError.exit_code == 2
    assert DataError.exit_code == 3
    assert NumericError.exit_code == 4
    assert DomainError.exit_code == 4
    exc = DataError('y should be 0 or 1', line=4, column='y')
    assert str(exc) == 'line 4: y should be 0 or 1'
    assert exc.column == 'y'


def test_variants():
    assert parse_variant('yj') == YEO_JOHNSON
    assert parse_variant(' Naive ') == NAIVE
    assert parse_variant('prior-curvature') == PRIOR_CURVATURE
    assert parse_variants('all') == ALL_VARIANTS
    assert parse_variants('naive, pc,naive') == (NAIVE, PRIOR_CURVATURE)
    assert parse_variants(['raw', 'yj']) == (UNADJUSTED, YEO_JOHNSON)
    with pytest.raises(ConfigError):
        parse_variant('bayes')
    with pytest.raises(ConfigError):
        parse_variants('')


def test_seeds():
    a, b = spawn_generators(1, 2)
    c, __ = spawn_generators(1, 2)
    assert a.integers(1 << 30) == c.integers(1 << 30)
    assert derive_seed(1, 1) == derive_seed(1, 1)
    assert derive_seed(1, 1) != derive_seed(1, 2)


def test_param_layout():
    layout = ParamLayout(2, 3, ['Intercept', 'x'], ['a', 'b', 'c'])
    assert layout.size == 6
    assert layout.names == ('beta[Intercept]', 'beta[x]', 'alpha[a]',
                            'alpha[b]', 'alpha[c]', 'log_sigma_alpha')
    assert ParamLayout.from_names(layout.names) == layout
    flat = np.random.default_rng(0).standard_normal(6)
    v = layout.unpack(flat)
    assert isinstance(v, ParamVector)
    assert np.array_equal(np.asarray(v), flat)
    assert np.array_equal(layout.pack(v.beta, v.alpha, v.log_sigma_alpha),
                          flat)
    assert v['alpha[b]'] == flat[3]
    assert v.sigma_alpha == pytest.approx(math.exp(flat[5]))
    with pytest.raises(DataError):
        layout.check(np.zeros(5))
    with pytest.raises(DataError):
        ParamLayout.from_names(['beta[x]', 'alpha[1]'])
    with pytest.raises(DataError):
        ParamLayout(2, 1, ['x', 'x'])


def test_dataset_validation():
    X = np.ones((2, 1))
    with pytest.raises(DataError):
        SurveyDataset([0, 2], X, [0, 0], [1, 1], [1, 1])
    with pytest.raises(DataError):
        SurveyDataset([0, 1], X, [0, 0], [1, 1], [1, -1])
    with pytest.raises(DataError):
        SurveyDataset([0, 1], np.zeros((2, 1)), [0, 0], [1, 1], [1, 1])
    with pytest.raises(DataError):
        SurveyDataset([0, 1], X, [0, 3], [1, 1], [1, 1], n_groups=2)
    with pytest.raises(DataError):
        SurveyDataset([0, 1], X, [0, 0], [1, ''], [1, 1])
    data = SurveyDataset([0, 1, 1], np.ones((3, 1)), [0, 1, 1], [1, 1, 2],
                         [1.0, 2.0, 3.0])
    normalized = data.normalized()
    assert normalized.w.sum() == pytest.approx(3.0)
    assert normalized.weight_scale == pytest.approx(0.5)
    assert np.array_equal(data.take([2, 0]).unit_id, [2, 0])


def test_prior_spec():
    prior = PriorSpec.from_dict({'beta_prior_sd': 2.0,
                                 'sigma_alpha_prior': {'family': 'half_cauchy',
                                                       'scale': 0.5}})
    assert prior.sigma_alpha_family == 'half_cauchy'
    assert PriorSpec.from_dict(prior.to_dict()).to_dict() == prior.to_dict()
    assert np.array_equal(prior.beta_sd(3), [2.0, 2.0, 2.0])
    with pytest.raises(ConfigError):
        PriorSpec(sigma_alpha_prior=('gamma', 1.0))
    with pytest.raises(ConfigError):
        PriorSpec(beta_prior_sd=0.0)
    with pytest.raises(ConfigError):
        PriorSpec(beta_prior_sd=[1.0, 2.0]).beta_sd(3)


def test_log_pseudo_posterior_single_unit():
    data = SurveyDataset([1], [[1.0]], [0], ['a'], [1.0])
    for log_sigma in [-1.0, 0.0, 2.0]:
        theta = [0.0, 0.0, log_sigma]
        assert weighted_loglik(theta, data) == pytest.approx(math.log(0.5))
        lp = log_pseudo_posterior(theta, data, PriorSpec())
        assert lp - log_prior(theta, PriorSpec(), data) == \
            pytest.approx(-0.6931471805599453)


def test_log_pseudo_posterior_weight_linearity():
    data = make_data()
    prior = PriorSpec()
    theta = np.random.default_rng(3).normal(scale=0.5,
                                            size=data.layout.size)
    base = log_pseudo_posterior(theta, data, prior) - \
        log_prior(theta, prior, data)
    for c in [0.5, 2.0, 7.0]:
        scaled = data.with_weights(c * data.w)
        lik = log_pseudo_posterior(theta, scaled, prior) - \
            log_prior(theta, prior, scaled)
        assert lik == pytest.approx(c * base, rel=1e-12)


def _loop_log_posterior(theta, data, beta_sd=2.5):
    p, G = data.n_covariates, data.n_groups
    beta, alpha, s = theta[:p], theta[p:p + G], theta[-1]
    sigma = math.exp(s)
    total = 0.0
    for i in range(data.n):
        eta = sum(data.X[i, k] * beta[k] for k in range(p))
        eta += alpha[data.group[i]]
        total += data.w[i] * (data.y[i] * eta - math.log(1 + math.exp(eta)))
    for b in beta:
        total -= 0.5 * math.log(2 * math.pi * beta_sd ** 2)
        total -= b * b / (2 * beta_sd ** 2)
    for a in alpha:
        total -= 0.5 * math.log(2 * math.pi) + s + a * a / (2 * sigma ** 2)
    # Half-normal(1) of sigma with the Jacobian of log sigma.
    total += 0.5 * math.log(2 / math.pi) - sigma ** 2 / 2 + s
    return total


def test_log_pseudo_posterior_loop_oracle():
    data = make_data(n=10, G=2, n_psu=5, seed=1)
    theta = np.array([-0.3, 0.8, 0.2, -0.4, -0.7])
    expected = _loop_log_posterior(theta, data)
    assert log_pseudo_posterior(theta, data, PriorSpec()) == \
        pytest.approx(expected, rel=1e-10)


def test_log_pseudo_posterior_errors():
    data = make_data()
    with pytest.raises(DataError):
        log_pseudo_posterior(np.zeros(3), data, PriorSpec())
    theta = np.zeros(data.layout.size)
    theta[0] = 1e308
    theta[1] = 1e308
    with pytest.raises(NumericError) as exc_info:
        log_pseudo_posterior(theta, data, PriorSpec())
    assert exc_info.value.term is not None


def test_unit_scores():
    data = SurveyDataset([1], [[1.0, 2.0]], [0], ['a'], [1.0],
                         covariate_names=['Intercept', 'x'])
    scores = unit_scores(np.zeros(4), data)
    assert_allclose(scores[0, :2], [0.5, 1.0])
    assert scores[0, 3] == 0
    data = make_data()
    layout = data.layout
    theta = np.random.default_rng(4).normal(scale=0.5, size=layout.size)
    scores = unit_scores(theta, data)
    assert scores.shape == (data.n, layout.size)
    assert np.all((scores[:, layout.alpha] != 0).sum(axis=1) == 1)
    assert np.all(scores[:, layout.log_sigma] == 0)


def _fd_gradient(f, x, step=1e-5):
    grad = np.empty(x.size)
    for k in range(x.size):
        h = step * (1 + abs(x[k]))
        hi, lo = x.copy(), x.copy()
        hi[k] += h
        lo[k] -= h
        grad[k] = (f(hi) - f(lo)) / (2 * h)
    return grad


def test_gradient_matches_finite_differences():
    data = make_data()
    prior = PriorSpec()
    rng = np.random.default_rng(5)
    f = functools.partial(log_pseudo_posterior, data=data, prior=prior)
    for __ in range(5):
        theta = rng.normal(scale=0.5, size=data.layout.size)
        grad = grad_log_pseudo_posterior(theta, data, prior)
        assert_allclose(grad, _fd_gradient(f, theta), rtol=1e-5, atol=1e-5)


def test_gradient_symmetry():
    data = SurveyDataset([0, 1, 0, 1], np.ones((4, 1)), [0, 0, 0, 0],
                         [1, 2, 3, 4], [1.0, 1.0, 1.0, 1.0])
    grad = grad_log_pseudo_posterior(np.zeros(3), data, PriorSpec())
    assert grad[0] == 0
    # Prior only: the random intercepts sit at the mode of their density.
    data = make_data().with_weights(np.zeros(200))
    theta = np.zeros(data.layout.size)
    theta[:2] = [0.3, -0.2]
    theta[-1] = 0.4
    grad = grad_log_pseudo_posterior(theta, data, PriorSpec())
    assert np.all(grad[data.layout.alpha] == 0)


def test_hessian_fd():
    Q = random_spd(3, seed=6)
    theta = np.random.default_rng(6).standard_normal(3)
    H = hessian_fd(lambda x: Q.dot(x), theta)
    assert_allclose(H, Q, atol=1e-6)
    assert np.array_equal(H, H.T)
    assert np.array_equal(hessian_fd(lambda x: np.zeros(3), theta),
                          np.zeros((3, 3)))
    with pytest.raises(ValueError):
        hessian_fd(lambda x: x, theta, step=0)
    with pytest.raises(NumericError):
        hessian_fd(lambda x: x / (x - x), theta)


def test_hessian_fd_logistic_oracle():
    data = make_data(w=1.0)
    prior = PriorSpec(beta_prior_sd=1e6)
    theta = np.random.default_rng(7).normal(scale=0.5, size=data.layout.size)
    grad = functools.partial(grad_log_pseudo_posterior, data=data,
                             prior=prior)
    H = hessian_fd(grad, theta)
    eta = data.X.dot(theta[:2]) + theta[2:6][data.group]
    p = expit(eta)
    expected = -(data.X * (p * (1 - p))[:, np.newaxis]).T.dot(data.X)
    assert_allclose(H[:2, :2], expected, rtol=1e-6, atol=1e-4)


def test_prior_curvature():
    layout = ParamLayout(2, 3)
    prior = PriorSpec(beta_prior_sd=2.0)
    theta = np.array([0.5, -1.0, 0.3, -0.2, 0.1, math.log(0.7)])
    H0 = prior_curvature(theta, prior, layout)
    assert_allclose(np.diag(H0)[:2], [0.25, 0.25])
    assert_allclose(np.diag(H0)[2:5], 1 / 0.7 ** 2)
    expected = hessian_fd(lambda x: -grad_log_prior(x, prior, layout), theta)
    assert_allclose(H0, expected, atol=1e-5)


def test_find_mode_bernoulli():
    y = np.r_[np.ones(60), np.zeros(140)]
    data = SurveyDataset(y, np.ones((200, 1)), np.zeros(200, dtype=int),
                         np.arange(200), np.ones(200))
    prior = PriorSpec(beta_prior_sd=1e6)
    init = data.layout.unpack(np.zeros(3))
    mode = find_mode(data, prior, init=init, free=[0])
    assert mode.beta[0] == pytest.approx(logit(0.3), abs=1e-4)
    assert mode.alpha[0] == 0 and mode.log_sigma_alpha == 0
    grad = grad_log_pseudo_posterior(mode, data, prior)
    assert abs(grad[0]) <= 1e-6 * 3
    assert initial_point(data).beta[0] == pytest.approx(logit(0.3))


def test_find_mode_grid():
    y = np.r_[np.ones(60), np.zeros(140)]
    data = SurveyDataset(y, np.ones((200, 1)), np.zeros(200, dtype=int),
                         np.arange(200), np.ones(200))
    prior = PriorSpec(beta_prior_sd=1.0)
    mode = find_mode(data, prior, init=np.zeros(3), free=[0])
    grid = np.linspace(-3.0, 1.0, 4001)
    values = [log_pseudo_posterior([b, 0.0, 0.0], data, prior) for b in grid]
    assert abs(mode.beta[0] - grid[np.argmax(values)]) <= 1e-3


def test_find_mode_convergence_error():
    y = np.r_[np.ones(60), np.zeros(140)]
    data = SurveyDataset(y, np.ones((200, 1)), np.zeros(200, dtype=int),
                         np.arange(200), np.ones(200))
    with pytest.raises(ConvergenceError) as exc_info:
        find_mode(data, PriorSpec(), init=np.zeros(3), free=[0], max_iter=0)
    assert isinstance(exc_info.value.best, ParamVector)
    assert exc_info.value.grad_norm > 0


def test_sampler_config():
    with pytest.raises(ConfigError):
        SamplerConfig(seed=None)
    with pytest.raises(ConfigError):
        SamplerConfig(seed=1, n_warmup=50)
    with pytest.raises(ConfigError):
        SamplerConfig(seed=1, target_accept=1.5)
    with pytest.raises(ConfigError):
        SamplerConfig.from_dict({'seed': 1, 'chains': 4})
    with pytest.raises(ConfigError):
        SamplerConfig(seed=1, parameterization='scaled')
    config = SamplerConfig.from_dict({'seed': 1, 'proposal': 'mala'})
    assert config.target == 0.57
    assert config.parameterization == 'non_centered'
    assert SamplerConfig.from_dict(config.to_dict()) == config


def test_sampler_determinism():
    data = make_data(n=100).normalized()
    config = SamplerConfig(seed=3, **FAST_SAMPLER)
    a = sample_pseudo_posterior(data, PriorSpec(), config)
    b = sample_pseudo_posterior(data, PriorSpec(), config)
    assert np.array_equal(a.draws, b.draws)
    assert np.array_equal(a.lp, b.lp)
    assert a.n_draws == 2 * 200
    assert a.param_names == data.layout.names
    assert np.all(np.isfinite(a.rhat))
    c = sample_pseudo_posterior(data, PriorSpec(), config.replace(seed=4))
    assert not np.array_equal(a.draws, c.draws)


def test_sampler_standard_normal():
    config = SamplerConfig(seed=8, n_chains=4, n_warmup=1000, n_keep=10000)
    draws = run_chains(lambda x: -0.5 * x.dot(x), np.zeros(2), config)
    assert draws.n_draws == 40000
    assert_allclose(draws.draws.mean(axis=0), [0, 0], atol=0.05)
    assert_allclose(draws.draws.var(axis=0), [1, 1], rtol=0.1)
    assert abs(draws.accept_rate.mean() - 0.25) < 0.1


def test_sampler_conjugate_normal():
    z = 2.0 + np.random.default_rng(9).standard_normal(50)
    precision = z.size + 1 / 100.0
    mean, var = z.sum() / precision, 1 / precision

    def log_density(x):
        return -0.5 * ((z - x[0]) ** 2).sum() - 0.5 * x[0] ** 2 / 100.0

    def grad(x):
        return np.array([(z - x[0]).sum() - x[0] / 100.0])

    config = SamplerConfig(seed=9, n_chains=4, n_warmup=1000, n_keep=10000,
                           proposal='mala')
    draws = run_chains(log_density, [0.0], config, grad=grad)
    ess = draws.ess[0]
    assert ess > 1000
    column = draws.draws[:, 0]
    assert abs(column.mean() - mean) < 4 * math.sqrt(var / ess)
    assert abs(column.var(ddof=1) / var - 1) < 4 * math.sqrt(2 / ess)


def test_sampler_divergence():
    def log_density(x):
        return np.nan if x[0] > 0.5 else -0.5 * x.dot(x)

    config = SamplerConfig(seed=1, n_chains=1, n_warmup=100, n_keep=100)
    with pytest.raises(DivergenceError) as exc_info:
        run_chains(log_density, np.zeros(2), config)
    assert exc_info.value.chain == 0
    assert exc_info.value.iterate[0] > 0.5
    with pytest.raises(ConfigError):
        run_chains(log_density, np.zeros(2), config.replace(proposal='mala'))


def test_non_centered_target():
    data = make_data(n=100).normalized()
    prior = PriorSpec()
    layout = data.layout
    target = NonCentered(
        layout, functools.partial(log_pseudo_posterior, data=data,
                                  prior=prior),
        functools.partial(grad_log_pseudo_posterior, data=data, prior=prior))
    theta = np.array([-0.3, 0.8, 0.4, -0.2, 0.1, -0.5, math.log(0.7)])
    phi = target.from_theta(theta)
    assert_allclose(phi[layout.alpha], theta[layout.alpha] / 0.7)
    assert_allclose(target.to_theta(phi), theta, rtol=1e-14)
    stacked = np.stack([phi, 2 * phi]).reshape(1, 2, -1)
    assert_allclose(target.to_theta(stacked)[0, 0], theta, rtol=1e-14)
    assert target.log_density(phi) == pytest.approx(
        log_pseudo_posterior(theta, data, prior) + 4 * math.log(0.7))
    assert_allclose(target.grad(phi), _fd_gradient(target.log_density, phi),
                    rtol=1e-5, atol=1e-5)
    far = phi.copy()
    far[layout.log_sigma] = 1e3
    assert target.log_density(far) == -np.inf


def test_sampler_parameterizations():
    data = make_data(n=100).normalized()
    prior = PriorSpec()
    config = SamplerConfig(seed=13, **FAST_SAMPLER)
    draws = sample_pseudo_posterior(data, prior, config)
    # Reported log-densities are those of theta, without the Jacobian.
    expected = [log_density(x, data, prior) for x in draws.draws[::50]]
    assert_allclose(draws.lp[::50], expected, rtol=1e-10)
    centered = sample_pseudo_posterior(
        data, prior, config.replace(parameterization=CENTERED))
    assert_allclose(centered.lp[::50],
                    [log_density(x, data, prior)
                     for x in centered.draws[::50]], rtol=1e-10)
    mala = sample_pseudo_posterior(data, prior,
                                   config.replace(proposal='mala'))
    assert np.all(np.isfinite(mala.draws))


def test_sampler_recovers_intercept():
    # With one group and only an intercept, beta + alpha is the logit of a
    # binomial proportion.  Its posterior mean under a flat prior is
    # digamma(k) - digamma(n - k); the proper priors here move it by far
    # less than the Monte Carlo error.
    n, k = 500, 150
    y = np.zeros(n)
    y[:k] = 1
    data = SurveyDataset(y, np.ones((n, 1)), np.zeros(n, dtype=int),
                         np.arange(n), np.ones(n))
    draws = surveypost.fit(data, seed=36)
    total = draws.draws[:, 0] + draws.draws[:, 1]
    chains = total.reshape(draws.n_chains, -1, 1)
    ess = effective_sample_size(chains)[0]
    mcse = total.std(ddof=1) / math.sqrt(ess)
    expected = digamma(k) - digamma(n - k)
    assert abs(expected - logit(k / n)) < 0.005
    assert abs(total.mean() - expected) < 3 * mcse + 0.002
    assert total.std() == pytest.approx(
        1 / math.sqrt(n * 0.3 * 0.7), rel=0.15)
    assert draws.rhat.max() < 1.1


def test_posterior_mean():
    layout = ParamLayout(1, 1)
    v = np.array([1.0, -2.0, 0.5])
    one = PosteriorDraws([v], [0.0], layout.names, [0], layout=layout)
    assert np.array_equal(np.asarray(posterior_mean(one)), v)
    two = PosteriorDraws([v, -v], [0.0, 0.0], layout.names, [0, 0],
                         layout=layout)
    assert np.array_equal(np.asarray(posterior_mean(two)), np.zeros(3))
    matrix = np.random.default_rng(10).standard_normal((500, 3))
    streaming = [math.fsum(matrix[:, k]) / 500 for k in range(3)]
    assert_allclose(posterior_mean(matrix), streaming, rtol=0, atol=1e-12)


def test_posterior_cov():
    a = np.array([[1.0, 2.0, 3.0], [1.5, 2.0, 3.0]])
    expected = np.zeros((3, 3))
    expected[0, 0] = 0.5 ** 2 / 2
    assert_allclose(posterior_cov(a), expected, atol=1e-15)
    matrix = np.random.default_rng(11).standard_normal((50, 4))
    mean = matrix.mean(axis=0)
    loop = np.zeros((4, 4))
    for j in range(4):
        for k in range(4):
            loop[j, k] = sum((row[j] - mean[j]) * (row[k] - mean[k])
                             for row in matrix) / 49
    assert_allclose(posterior_cov(matrix), loop, atol=1e-12)
    with pytest.raises(DataError):
        posterior_cov(matrix[:1])


def test_posterior_draws():
    layout = ParamLayout(2, 2)
    draws = make_draws(layout, M=10)
    assert draws.by_chain().shape == (2, 5, 5)
    assert draws.subset([0, 9]).n_draws == 2
    assert draws.subset([0, 9]).n_chains == 2
    with pytest.raises(DataError):
        draws.with_draws(np.zeros((3, 5)))
    with pytest.raises(NumericError):
        draws.with_draws(np.full((10, 5), np.nan))
    frame = draws.to_frame()
    assert list(frame.columns) == list(layout.names) + ['lp', 'chain']
    again = PosteriorDraws.from_frame(frame)
    assert again.layout == layout
    assert np.array_equal(again.draws, draws.draws)
    with pytest.raises(DataError):
        PosteriorDraws.from_frame(frame.drop(columns='lp'))


def test_rhat_and_ess():
    rng = np.random.default_rng(12)
    chains = rng.standard_normal((4, 1000, 2))
    assert np.all(split_rhat(chains) < 1.05)
    ess = effective_sample_size(chains)
    assert np.all((ess > 2000) & (ess < 6000))
    shifted = chains + np.arange(4)[:, np.newaxis, np.newaxis]
    assert np.all(split_rhat(shifted) > 1.5)


def test_half_sample_two_psus():
    data = make_data(n=20, n_psu=2)
    design = make_half_sample_bootstrap(data, n_replicates=50, seed=1)
    assert design.kind == HALF_SAMPLE_BOOTSTRAP
    assert set(np.unique(design.multipliers)) == {0.0, 2.0}
    for row in design.multipliers:
        a, b = row[data.psu == 0], row[data.psu == 1]
        assert len(set(a)) == 1 and len(set(b)) == 1
        assert a[0] + b[0] == 2
    assert_allclose(design.scale, 1 / 50.0)
    same = make_half_sample_bootstrap(data, n_replicates=50, seed=1)
    assert np.array_equal(design.multipliers, same.multipliers)


def test_half_sample_binomial():
    data = make_data(n=100, n_psu=10)
    design = make_half_sample_bootstrap(data, n_replicates=2000, seed=2)
    for psu in range(10):
        column = design.multipliers[:, np.flatnonzero(data.psu == psu)[0]]
        chosen = (column == 2).sum()
        assert abs(chosen - 1000) < 4 * math.sqrt(2000 * 0.25)


def test_half_sample_errors():
    data = make_data(n=20, n_psu=4, strata=4)
    with pytest.raises(DataError):
        make_half_sample_bootstrap(data, 10)
    with pytest.raises(ConfigError):
        make_half_sample_bootstrap(make_data(), 1)


def test_jackknife():
    data = make_data(n=30, n_psu=3)
    design = make_delete_a_group_jackknife(data, 3, seed=1)
    assert design.kind == JACKKNIFE
    assert design.n_replicates == 3
    for row in design.multipliers:
        assert set(np.unique(row)) == {0.0, 1.5}
        assert (row == 0).sum() == 10
    assert_allclose(design.scale, 2 / 3.0)
    with pytest.raises(DataError):
        make_delete_a_group_jackknife(data, 4)
    with pytest.raises(ConfigError):
        make_delete_a_group_jackknife(data, 1)


def test_jackknife_partition():
    data = make_data(n=120, n_psu=12, strata=3)
    design = make_delete_a_group_jackknife(data, 4, seed=5)
    assert design.n_replicates == 12
    assert np.array_equal((design.multipliers == 0).sum(axis=0),
                          np.ones(120))
    assert np.array_equal(np.bincount(design.blocks), [4, 4, 4])
    # Replicate mean of a weighted total equals the full-sample total.
    totals = design.rep_weights.sum(axis=1)
    assert totals.mean() == pytest.approx(data.w.sum(), rel=1e-10)
    for psu in range(12):
        units = data.psu == psu
        assert np.all(design.multipliers[:, units] ==
                      design.multipliers[:, units][:, :1])


def test_make_design():
    data = make_data(n=100, n_psu=10)
    design = make_design(data, ReplicationConfig(n_replicates=100, seed=1))
    assert design.kind == JACKKNIFE
    assert design.n_replicates == 10
    config = ReplicationConfig.from_dict({'kind': 'bootstrap',
                                          'n_replicates': 20, 'seed': 1})
    assert config.kind == HALF_SAMPLE_BOOTSTRAP
    assert make_design(data, config).n_replicates == 20
    with pytest.raises(ConfigError):
        ReplicationConfig.from_dict({'kind': 'fay'})
    with pytest.raises(ConfigError):
        ReplicationConfig.from_dict({'replicates': 3})


def test_estimate_J_constant_scores():
    data = make_data(n=100, n_psu=10, w=1.0)
    design = make_half_sample_bootstrap(data, 30, seed=3)
    K = data.layout.size
    with pytest.warns(RankWarning):
        J, rank = estimate_J(np.zeros(K), data, design,
                             score_fn=lambda theta, data: np.ones((data.n,
                                                                   K)))
    assert np.array_equal(J, np.zeros((K, K)))
    assert rank == 0


def test_estimate_J_loop_oracle():
    data = make_data(n=200, n_psu=40)
    design = make_half_sample_bootstrap(data, 50, seed=4)
    theta = np.random.default_rng(4).normal(scale=0.3, size=data.layout.size)
    J, rank = estimate_J(theta, data, design)
    scores = unit_scores(theta, data)
    totals = [(design.rep_weights[r][:, np.newaxis] * scores).sum(axis=0)
              for r in range(design.n_replicates)]
    mean = sum(totals) / len(totals)
    expected = sum(c * np.outer(t - mean, t - mean)
                   for c, t in zip(design.scale, totals))
    assert_allclose(J, expected, rtol=1e-10, atol=1e-10 * np.abs(J).max())
    assert np.array_equal(J, J.T)
    assert rank == np.linalg.matrix_rank(scores)
    eigenvalues = np.linalg.eigvalsh(J)
    assert eigenvalues.min() >= -1e-10 * np.trace(J)


def test_estimate_J_permutation():
    data = make_data(n=200, n_psu=40)
    design = make_half_sample_bootstrap(data, 50, seed=5)
    theta = np.random.default_rng(5).normal(scale=0.3, size=data.layout.size)
    J, __ = estimate_J(theta, data, design)
    order = np.random.default_rng(6).permutation(data.n)
    permuted, __ = estimate_J(theta, data.take(order), design.take(order))
    assert_allclose(permuted, J, rtol=1e-10, atol=1e-12 * np.abs(J).max())
    with pytest.raises(DataError):
        estimate_J(theta, data.take(order[:10]), design)


def test_estimate_J_bootstrap_agrees_with_jackknife():
    data = make_data(n=400, G=2, n_psu=400, w=1.0)
    theta = np.array([-0.5, 1.0, 0.2, -0.2, math.log(0.5)])
    jackknife = make_delete_a_group_jackknife(data, 400, seed=7)
    bootstrap = make_half_sample_bootstrap(data, 2000, seed=7)
    J_jk, __ = estimate_J(theta, data, jackknife)
    J_bs, __ = estimate_J(theta, data, bootstrap)
    ratio = np.diag(J_bs)[:-1] / np.diag(J_jk)[:-1]
    assert np.all(np.abs(ratio - 1) < 0.25)


def test_sqrt_matrix():
    assert_allclose(sqrt_matrix(np.eye(4)), np.eye(4))
    assert_allclose(sqrt_matrix(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    A = random_spd(6, seed=13)
    R = sqrt_matrix(A)
    assert np.array_equal(np.tril(R, -1), np.zeros((6, 6)))
    assert np.abs(R.T.dot(R) - A).max() <= 1e-10
    with pytest.raises(ConditioningError) as exc_info:
        sqrt_matrix(np.diag([1.0, -1.0]), floor=1e-6)
    assert exc_info.value.eigenvalues[0] == pytest.approx(-1.0)
    with pytest.raises(DataError):
        sqrt_matrix(np.ones((2, 3)))


def test_condition_psd():
    A = random_spd(3, seed=14)
    conditioned, shift = condition_psd(A)
    assert shift == 0
    assert_allclose(conditioned, A, rtol=1e-15)
    singular = np.diag([1.0, 0.0])
    conditioned, shift = condition_psd(singular)
    assert shift == pytest.approx(1e-10)
    assert np.linalg.eigvalsh(conditioned).min() > 0
    assert_allclose(inverse_psd(A).dot(A), np.eye(3), atol=1e-10)
    with pytest.raises(DataError):
        condition_psd(np.ones((2, 3)))


def test_condition_psd_logs_lift(caplog):
    indefinite = np.diag([1.0, -0.5])
    with caplog.at_level(logging.DEBUG, logger='surveypost.sandwich'):
        __, shift = condition_psd(indefinite)
    assert shift == pytest.approx(0.5 + 5e-11)
    lifts = [r for r in caplog.records if 'conditioning shift' in r.message]
    assert [r.levelno for r in lifts] == [logging.WARNING]
    caplog.clear()
    with caplog.at_level(logging.DEBUG, logger='surveypost.sandwich'):
        condition_psd(np.diag([1.0, 0.0]))
    lifts = [r for r in caplog.records if 'conditioning shift' in r.message]
    assert [r.levelno for r in lifts] == [logging.DEBUG]


def test_inverse_psd_floor():
    indefinite = np.diag([1.0, -0.5])
    with pytest.raises(ConditioningError) as exc_info:
        inverse_psd(indefinite)
    assert_allclose(exc_info.value.eigenvalues, [-0.5, 1.0])
    assert 'curvature' in str(exc_info.value)
    lifted = inverse_psd(indefinite, floor=None)
    assert np.all(np.linalg.eigvalsh(lifted) > 0)
    # Round-off below zero is lifted, not failed.
    nearly = np.diag([1.0, -1e-12])
    assert np.all(np.isfinite(inverse_psd(nearly)))


def test_adjustment_scalar():
    draws = np.random.default_rng(15).standard_normal((1000, 1))
    result = apply_adjustment(draws, CurvatureSet([[1.0]], [[4.0]]))
    assert_allclose(result.T, [[2.0]])
    adjusted = result.adjusted_draws.draws
    assert adjusted.std() == pytest.approx(2 * draws.std(), rel=1e-10)
    assert_allclose(result.design_effect, [4.0], rtol=1e-10)


def test_adjustment_collapse():
    H = random_spd(3, seed=16)
    draws = np.random.default_rng(16).standard_normal((500, 3))
    result = apply_adjustment(draws, CurvatureSet(H, H.copy()))
    assert_allclose(result.adjusted_draws.draws, draws, atol=1e-10)
    assert_allclose(result.T, np.eye(3), atol=1e-10)


def test_adjustment_affine_laws():
    H, J = random_spd(4, seed=17), random_spd(4, seed=18)
    draws = 1.0 + np.random.default_rng(17).standard_normal((800, 4))
    result = apply_adjustment(draws, CurvatureSet(H, J))
    adjusted = result.adjusted_draws.draws
    assert_allclose(adjusted.mean(axis=0), draws.mean(axis=0), atol=1e-10)
    T = result.T
    assert_allclose(np.cov(adjusted, rowvar=False),
                    T.T.dot(np.cov(draws, rowvar=False)).dot(T),
                    rtol=1e-9, atol=1e-12)
    assert np.all(result.design_effect > 0)
    assert_allclose(result.R1.T.dot(result.R1),
                    inverse_psd(H).dot(J).dot(inverse_psd(H)), rtol=1e-8)
    with pytest.raises(DataError):
        apply_adjustment(draws[:, :3], CurvatureSet(H, J))


def test_adjustment_covariance_oracle():
    H, J = random_spd(3, seed=19), random_spd(3, seed=20)
    H_inv = np.linalg.inv(H)
    z = np.random.default_rng(21).standard_normal((100000, 3))
    draws = z.dot(sqrt_matrix(H_inv))
    result = apply_adjustment(draws, CurvatureSet(H, J))
    target = H_inv.dot(J).dot(H_inv)
    covariance = np.cov(result.adjusted_draws.draws, rowvar=False)
    assert np.linalg.norm(covariance - target) / np.linalg.norm(target) < 0.03


def test_estimate_H_logistic():
    n = 300
    rng = np.random.default_rng(22)
    y = (rng.uniform(size=n) < 0.3).astype(float)
    data = SurveyDataset(y, np.ones((n, 1)), np.zeros(n, dtype=int),
                         np.arange(n), np.ones(n))
    draws = make_draws(data.layout, center=[-0.8, 0.1, 0.0], scale=0.05)
    center = draws.draws.mean(axis=0)
    H = estimate_H(draws, data)
    p = expit(center[0] + center[1])
    assert H[0, 0] == pytest.approx(n * p * (1 - p), rel=1e-6)
    assert np.all(H[-1] == 0)
    zero = estimate_H(draws, data.with_weights(np.zeros(n)))
    assert np.array_equal(zero, np.zeros((3, 3)))


def test_estimate_H_modes_agree():
    data = make_data(n=1000, w=1.0)
    center = np.array([-0.5, 1.0, 0.3, -0.3, 0.2, 0.0, math.log(0.5)])
    draws = make_draws(data.layout, center=center, scale=0.05)
    at_mean = estimate_H(draws, data)
    averaged = estimate_H(draws, data, mode=AVERAGED, n_points=20)
    assert_allclose(averaged, at_mean, rtol=0.1,
                    atol=0.02 * np.abs(at_mean).max())
    with pytest.raises(ConfigError):
        estimate_H(draws, data, mode='median')


def test_build_curvature():
    data = make_data().normalized()
    prior = PriorSpec()
    center = np.array([-0.5, 1.0, 0.3, -0.3, 0.2, 0.0, math.log(0.5)])
    draws = make_draws(data.layout, center=center, scale=0.05)
    design = make_half_sample_bootstrap(data, 50, seed=23)
    naive = build_curvature(NAIVE, draws, data, prior, design)
    pc = build_curvature(PRIOR_CURVATURE, draws, data, prior, design)
    assert_allclose(naive.H_used, pc.H_used, rtol=1e-4, atol=1e-5)
    assert np.array_equal(naive.J_used, naive.J)
    assert_allclose(pc.J_used, pc.J + pc.H0)
    assert_allclose(pc.H_used, pc.H + pc.H0)
    assert naive.to_dict()['variant'] == NAIVE
    with pytest.raises(ConfigError):
        build_curvature(YEO_JOHNSON, draws, data, prior, design)


def test_prior_curvature_collapses_without_information():
    data = make_data()
    empty = data.with_weights(np.zeros(data.n))
    layout = data.layout
    matrix = np.random.default_rng(24).standard_normal((400, layout.size))
    matrix -= matrix.mean(axis=0)
    draws = PosteriorDraws(matrix, np.zeros(400), layout.names,
                           np.zeros(400), layout=layout)
    design = make_half_sample_bootstrap(empty, 20, seed=24)
    curv = build_curvature(PRIOR_CURVATURE, draws, empty, PriorSpec(),
                           design)
    assert np.array_equal(curv.H, np.zeros_like(curv.H))
    assert_allclose(curv.H_used, curv.H0)
    assert_allclose(curv.J_used, curv.H0)
    result = apply_adjustment(draws, curv)
    assert_allclose(result.adjusted_draws.draws, matrix, atol=1e-10)


def test_indefinite_prior_curvature_fails():
    # A group with less likelihood information than its prior leaves the
    # (alpha, log sigma) block of H0 indefinite.  Without any weight, H0 is
    # all there is.
    data = make_data()
    empty = data.with_weights(np.zeros(data.n))
    layout = data.layout
    center = np.array([0.0, 0.0, 1.0, -1.0, 1.0, -1.0, math.log(0.5)])
    assert np.linalg.eigvalsh(
        prior_curvature(center, PriorSpec(), layout))[0] < -1
    draws = make_draws(layout, M=400, center=center, scale=0.01)
    design = make_half_sample_bootstrap(empty, 20, seed=24)
    for variant in [NAIVE, PRIOR_CURVATURE]:
        with pytest.raises(ConditioningError) as exc_info:
            adjust_draws(variant, draws, empty, PriorSpec(), design)
        assert exc_info.value.eigenvalues[0] < 0
        assert 'H_used' in str(exc_info.value)
    lifted = adjust_draws(PRIOR_CURVATURE, draws, empty, PriorSpec(), design,
                          AdjustConfig(floor=None))
    assert np.all(np.isfinite(lifted.adjusted_draws.draws))
    # The Yeo-Johnson curvature is an inverse covariance.
    result = adjust_draws(YEO_JOHNSON, draws, empty, PriorSpec(), design)
    assert np.all(np.isfinite(result.adjusted_draws.draws))


def test_adjust_fails_or_stays_bounded():
    data = make_data()
    draws = surveypost.fit(data, seed=3, **FAST_SAMPLER)
    for variant in [NAIVE, PRIOR_CURVATURE]:
        try:
            results = surveypost.adjust(draws, data, seed=3,
                                        variants=[variant])
        except ConditioningError as exc:
            assert exc.eigenvalues[0] < 0
        else:
            effect = results[variant].design_effect
            assert np.all((effect > 0) & (effect < 1e4))


def test_adjust_scale_equivariance():
    data = make_data()
    rescaled = data.with_weights(37 * data.w)
    draws = make_draws(data.layout, M=1000, scale=0.1)
    for variant in ALL_VARIANTS:
        a, = surveypost.adjust(draws, data, seed=5,
                               variants=[variant]).values()
        b, = surveypost.adjust(draws, rescaled, seed=5,
                               variants=[variant]).values()
        assert_allclose(a.T, b.T, rtol=1e-6, atol=1e-8)
        assert_allclose(a.adjusted_draws.draws, b.adjusted_draws.draws,
                        rtol=1e-6, atol=1e-8)


def test_adjust_draws_dispatch():
    data = make_data().normalized()
    draws = make_draws(data.layout, M=400, scale=0.1)
    design = make_half_sample_bootstrap(data, 50, seed=25)
    result = adjust_draws('raw', draws, data, PriorSpec(), design)
    assert result.variant == UNADJUSTED
    assert np.array_equal(result.T, np.eye(draws.n_params))
    assert np.array_equal(result.adjusted_draws.draws, draws.draws)
    for variant in [NAIVE, PRIOR_CURVATURE]:
        result = adjust_draws(variant, draws, data, PriorSpec(), design)
        assert result.variant == variant
        intervals = result.intervals(0.95)
        assert list(intervals.columns) == ['lower', 'upper', 'length']
        assert list(intervals.index) == list(draws.param_names)
        assert np.all(intervals['length'] > 0)
        assert json.dumps(result.to_dict())
    with pytest.raises(ConfigError):
        AdjustConfig(h_mode='mode')
    with pytest.raises(ConfigError):
        AdjustConfig(h0_space='phi')
    with pytest.raises(ConfigError):
        AdjustConfig(floor=-1.0)


def test_yj_forward():
    assert yj_forward(1, 3) == pytest.approx(3)
    assert yj_forward(0, 0) == 0
    assert yj_forward(0, -1) == pytest.approx(-1.5)
    assert yj_forward(2, -1) == pytest.approx(-math.log(2))
    x = np.linspace(-3, 3, 61)
    assert_allclose(yj_forward(1e-10, x), yj_forward(0, x), atol=1e-8)
    assert_allclose(yj_forward(2 - 1e-10, x), yj_forward(2, x), atol=1e-8)
    assert_allclose(yj_forward(0.7, [-1e-12, 1e-12]), [0, 0], atol=1e-11)
    xs = np.linspace(-5, 5, 1001)
    for lam in np.linspace(-3, 5, 17):
        assert np.all(np.diff(yj_forward(lam, xs)) > 0)
    with pytest.raises(NumericError):
        yj_forward(5, 1e100)


def test_yj_inverse():
    x = np.linspace(0, 5, 11)
    assert_allclose(yj_inverse(1, x), x, atol=1e-12)
    assert yj_inverse(0, -1.5) == pytest.approx(-1)
    assert yj_range(0) == (-np.inf, np.inf)
    assert yj_range(-1) == (-np.inf, 1.0)
    assert yj_range(3) == (-1.0, np.inf)
    with pytest.raises(DomainError):
        yj_inverse(-1, 1.5)
    with pytest.raises(DomainError):
        yj_inverse(3, -2)


def test_yj_round_trips():
    rng = np.random.default_rng(26)
    lams = rng.uniform(-3, 5, size=10000)
    xs = rng.normal(scale=2, size=10000)
    back = [yj_inverse(lam, yj_forward(lam, x)) for lam, x in zip(lams, xs)]
    assert_allclose(back, xs, rtol=1e-10, atol=1e-10)
    for lam in [-2.5, 0, 0.5, 1, 2, 4]:
        lo, hi = yj_range(lam)
        eta = np.linspace(max(lo, -3) + 0.05, min(hi, 3) - 0.05, 101)
        assert_allclose(yj_forward(lam, yj_inverse(lam, eta)), eta,
                        rtol=1e-10, atol=1e-10)


def test_yj_branch_points():
    # The non-negative half turns logarithmic at lambda = 0, the negative
    # half at lambda = 2.
    x = np.linspace(-4, 4, 81)
    negative, positive = x[x < 0], x[x > 0]
    assert_allclose(yj_forward(0, positive), np.log1p(positive))
    assert_allclose(yj_forward(2, negative), -np.log1p(-negative))
    assert_allclose(yj_forward(0, negative),
                    -(np.square(1 - negative) - 1) / 2)
    for lam in [0.0, 2.0]:
        for side in [-1e-9, 1e-9]:
            assert_allclose(yj_forward(lam + side, x), yj_forward(lam, x),
                            rtol=0, atol=1e-8)
    for lam in [-1, 0, 1e-9, 0.5, 1, 2 - 1e-9, 2, 2 + 1e-9, 3]:
        eta = yj_forward(lam, x)
        assert np.array_equal(eta < 0, x < 0)
        assert_allclose(yj_inverse(lam, eta), x, rtol=1e-9, atol=1e-9)


def test_yj_inverse_deriv():
    assert yj_inverse_deriv(1, 0.5) == pytest.approx(1, abs=1e-8)
    assert yj_inverse_deriv(0, 1.0) == pytest.approx(math.e, abs=1e-5)
    for lam in np.linspace(-3, 5, 9):
        lo, hi = yj_range(lam)
        eta = np.linspace(max(lo, -2) + 0.01, min(hi, 2) - 0.01, 50)
        assert np.all(yj_inverse_deriv(lam, eta) > 0)
    with pytest.raises(DomainError):
        yj_inverse_deriv(-1, 1 - 1e-9)


def test_fit_lambda():
    rng = np.random.default_rng(27)
    normal = rng.standard_normal(10000)
    assert 0.85 <= fit_lambda(normal) <= 1.15
    skewed = np.expm1(rng.standard_normal(10000))
    lam = fit_lambda(skewed)
    assert lam < 0.5
    best = profile_loglik(lam, skewed)
    assert best >= profile_loglik(lam - 0.05, skewed)
    assert best >= profile_loglik(lam + 0.05, skewed)
    with pytest.raises(DataError):
        fit_lambda(np.ones(100))
    with pytest.raises(DataError):
        fit_lambda(normal[:49])


def test_build_G():
    assert_allclose(build_G([0.0, 0.5, 2.0], [1, 1, 1]), np.ones((3, 3)),
                    atol=1e-8)
    G = build_G([math.log(2), math.log(3)], [0, 0])
    assert_allclose(G, [[4, 6], [6, 9]], rtol=1e-6)
    eta_bar = np.array([0.3, -0.4, 0.6])
    lambdas = np.array([0.5, 1.5, -1.0])
    G = build_G(eta_bar, lambdas)
    assert np.array_equal(G, G.T)
    assert np.all(G > 0)
    assert np.linalg.matrix_rank(G) == 1
    J = random_spd(3, seed=28)
    D = np.diag(YJTransform(lambdas).deriv(eta_bar))
    assert_allclose(G * J, D.dot(J).dot(D), rtol=1e-12)


def test_yj_transform():
    transform = YJTransform([-1.0, 3.0])
    values, count = transform.clamp(np.array([[2.0, -5.0], [0.0, 0.0]]))
    assert count == 2
    assert values[0, 0] < 1.0 and values[0, 1] > -1.0
    assert np.array_equal(values[1], [0.0, 0.0])
    transform.inverse(values)
    rng = np.random.default_rng(29)
    matrix = rng.standard_normal((200, 2))
    fitted = YJTransform.fit(matrix)
    assert fitted.fitted_on is not None
    assert_allclose(fitted.inverse(fitted.forward(matrix)), matrix,
                    atol=1e-10)
    with pytest.raises(DataError):
        fitted.forward(np.zeros((3, 3)))
    with pytest.raises(ConfigError):
        YJTransform([np.inf])


def test_yj_adjust_identity_transform():
    data = make_data().normalized()
    layout = data.layout
    prior = PriorSpec()
    center = np.array([-0.5, 1.0, 0.3, -0.3, 0.2, 0.0, math.log(0.5)])
    draws = make_draws(layout, M=2000, center=center, scale=0.1)
    design = make_half_sample_bootstrap(data, 50, seed=30)
    result = yj_adjust(draws, data, prior, design,
                       lambdas=np.ones(layout.size))
    mean = draws.draws.mean(axis=0)
    J, __ = estimate_J(mean, data, design)
    H0 = prior_curvature(mean, prior, layout)
    curv = CurvatureSet(inverse_psd(posterior_cov(draws)), J + H0,
                        PRIOR_CURVATURE, center=mean)
    expected = apply_adjustment(draws, curv)
    assert_allclose(result.adjusted_draws.draws,
                    expected.adjusted_draws.draws, atol=1e-8)
    assert result.variant == YEO_JOHNSON
    assert result.clamp_count == 0
    assert np.array_equal(result.lambdas, np.ones(layout.size))
    eta_space = yj_adjust(draws, data, prior, design,
                          lambdas=np.ones(layout.size), h0_space='eta')
    assert eta_space.adjusted_draws.n_draws == 2000


def _yj_setup():
    data = make_data().normalized()
    center = np.array([-0.5, 1.0, 0.3, -0.3, 0.2, 0.0, math.log(0.5)])
    draws = make_draws(data.layout, M=1000, center=center, scale=0.2)
    design = make_half_sample_bootstrap(data, 50, seed=33)
    return data, draws, design


def test_yj_adjust_collapses_when_J_equals_H(monkeypatch):
    data, draws, design = _yj_setup()
    layout = data.layout
    prior = PriorSpec()
    transform = YJTransform.fit(draws.draws)
    eta = transform.forward(draws.draws)
    eta_bar = eta.mean(axis=0)
    H_eta = inverse_psd(posterior_cov(eta))
    H0 = prior_curvature(transform.inverse(eta_bar), prior, layout)
    G = build_G(eta_bar, transform.lambdas)
    # J chosen so that the eta-space J + H0 is exactly H_eta.
    J = (H_eta - H0) / G
    monkeypatch.setattr('surveypost.transform.estimate_J',
                        lambda theta, data, design: (J, layout.size))
    result = yj_adjust(draws, data, prior, design,
                       lambdas=transform.lambdas, h0_space='eta')
    assert_allclose(result.T, np.eye(layout.size), atol=1e-6)
    assert result.clamp_count == 0
    assert_allclose(result.adjusted_draws.draws, draws.draws, atol=1e-6)
    assert_allclose(result.design_effect, 1, atol=1e-5)


def test_yj_adjust_identity_round_trip():
    data, draws, design = _yj_setup()
    result = adjust_draws(YEO_JOHNSON, draws, data, PriorSpec(), design)
    transform = YJTransform(result.lambdas)
    # With T = I the adjusted draws are the draws, through psi and back.
    identity = CurvatureSet(np.eye(data.layout.size),
                            np.eye(data.layout.size))
    eta = transform.forward(draws.draws)
    same = apply_adjustment(eta, identity)
    assert np.array_equal(same.T, np.eye(data.layout.size))
    assert_allclose(transform.inverse(same.adjusted_draws.draws),
                    draws.draws, rtol=1e-10, atol=1e-10)


def test_yj_back_transform_keeps_order():
    data, draws, design = _yj_setup()
    result = adjust_draws(YEO_JOHNSON, draws, data, PriorSpec(), design)
    assert result.clamp_count == 0
    transform = YJTransform(result.lambdas)
    eta = transform.forward(draws.draws)
    eta_bar = result.curvature.center
    assert_allclose(eta_bar, eta.mean(axis=0))
    adjusted_eta = (eta - eta_bar).dot(result.T) + eta_bar
    assert_allclose(adjusted_eta.mean(axis=0), eta_bar, atol=1e-10)
    assert_allclose(transform.inverse(eta_bar), result.center)
    adjusted = result.adjusted_draws.draws
    assert_allclose(adjusted, transform.inverse(adjusted_eta), atol=1e-10)
    # A monotone back-transform carries every order statistic, so the
    # median and the interval endpoints of eta map to those of theta.
    assert_allclose(np.sort(adjusted, axis=0),
                    transform.inverse(np.sort(adjusted_eta, axis=0)),
                    atol=1e-10)
    assert np.array_equal(np.argsort(adjusted, axis=0),
                          np.argsort(adjusted_eta, axis=0))


def test_yj_adjust_fitted():
    data = make_data().normalized()
    center = np.array([-0.5, 1.0, 0.3, -0.3, 0.2, 0.0, math.log(0.5)])
    draws = make_draws(data.layout, M=1000, center=center, scale=0.2)
    design = make_half_sample_bootstrap(data, 50, seed=31)
    config = AdjustConfig()
    result = adjust_draws('yj', draws, data, PriorSpec(), design, config)
    assert result.lambdas.shape == (data.layout.size,)
    assert np.all(np.isfinite(result.adjusted_draws.draws))
    assert np.all(result.design_effect > 0)
    assert 'lambdas' in result.to_dict()
    with pytest.raises(ConfigError):
        yj_adjust(draws, data, PriorSpec(), design, lambdas=[1.0, 1.0])
    with pytest.raises(ConfigError):
        yj_adjust(draws, data, PriorSpec(), design, h0_space='phi')


def test_yj_adjust_clamp_warning():
    # Huge weights inflate J far beyond the spread of the draws, so the
    # adjusted draws cross the upper end of the range at lambda = -3.
    data = make_data()
    data = data.with_weights(1e4 * data.w)
    layout = data.layout
    draws = make_draws(layout, M=400, center=np.full(layout.size, 0.5),
                       scale=0.1)
    design = make_half_sample_bootstrap(data, 50, seed=32)
    lambdas = np.full(layout.size, -3.0)
    __, hi = yj_range(-3.0)
    assert YJTransform(lambdas).forward(draws.draws).max() < hi
    config = AdjustConfig(lambdas=tuple(lambdas))
    with pytest.warns(ClampWarning):
        result = adjust_draws(YEO_JOHNSON, draws, data, PriorSpec(), design,
                              config)
    assert result.clamp_count > 0
    assert np.all(np.isfinite(result.adjusted_draws.draws))


def test_population():
    spec = PopulationSpec()
    sizes = spec.group_sizes
    assert sizes.sum() == 100000
    assert len(sizes) == 20
    assert np.all(sizes > 0) and np.all(np.diff(sizes) <= 0)
    assert spec.sigma_alpha == pytest.approx(0.5)
    assert spec.replace(sigma_alpha_reading='sd').sigma_alpha == 0.25
    with pytest.raises(ConfigError):
        PopulationSpec(N=10, G=20)
    with pytest.raises(ConfigError):
        PopulationSpec(sigma_alpha_reading='precision')
    population = generate_population(PopulationSpec(N=5000, G=10, seed=1))
    assert population.N == 5000
    assert np.array_equal(np.bincount(population.group),
                          population.spec.group_sizes)
    truth = population.truth
    assert truth.size == 13
    assert truth[:2].tolist() == [-2.0, 1.0]
    assert truth[-1] == pytest.approx(math.log(0.5))
    assert expit(population.spec.beta0) == pytest.approx(0.1192, abs=1e-4)
    again = generate_population(PopulationSpec(N=5000, G=10, seed=1))
    assert np.array_equal(population.y, again.y)


def test_population_random_effect_variance():
    spec = PopulationSpec(N=20, G=20, largest=1, smallest=1)
    alphas = np.concatenate([generate_population(spec, seed).alpha
                             for seed in range(2000)])
    se = math.sqrt(2.0 / alphas.size) * 0.25
    assert abs(alphas.var(ddof=1) - 0.25) < 4 * se


def test_srs_sample():
    population = generate_population(PopulationSpec(seed=2))
    sample = draw_srs_sample(population, seed=3)
    assert sample.n == 1000
    assert np.all(sample.w == 100.0)
    assert np.unique(sample.unit_id).size == 1000
    assert sample.n_psu == 100
    assert np.all(np.bincount(sample.psu_codes) == 10)
    assert np.array_equal(sample.y, population.y[sample.unit_id])
    with pytest.raises(ConfigError):
        draw_srs_sample(population, n_clusters=1)


def test_pps_sample():
    population = generate_population(PopulationSpec(seed=4))
    size = pps_size_measure(population)
    assert np.all(size >= 0.1)
    pi = pps_inclusion_probabilities(size, 1000)
    assert pi.sum() == pytest.approx(1000)
    sample = draw_pps_sample(population, seed=5)
    assert sample.n == 1000
    assert np.unique(sample.unit_id).size == 1000
    assert sample.w.sum() == pytest.approx(1000)
    assert np.all(np.bincount(sample.psu_codes) == 10)
    equal = draw_pps_sample(population, seed=5,
                            size=np.ones(population.N))
    assert_allclose(equal.w, 1.0)
    with pytest.raises(ConfigError):
        pps_inclusion_probabilities([1.0, 0.0], 1)


def test_pps_sample_is_informative():
    population = generate_population(PopulationSpec(seed=6))
    mean = population.y.mean()
    rngs = spawn_generators(6, 100)
    higher = sum(draw_pps_sample(population, seed=rng).y.mean() > mean
                 for rng in rngs)
    assert higher >= 95


def test_pps_certainty_units():
    population = generate_population(
        PopulationSpec(N=2000, G=4, largest=500, smallest=500, seed=7))
    size = np.ones(population.N)
    size[:20] = 1e6
    with pytest.warns(DesignWarning):
        sample = draw_pps_sample(population, n_clusters=10, cluster_size=10,
                                 seed=8, size=size)
    assert set(range(20)) <= set(sample.unit_id.tolist())
    assert sample.w.sum() == pytest.approx(100)


def _pps_study():
    population = PopulationSpec(N=20000, G=10, largest=4000, smallest=1000)
    return small_study(design=PPS, n_clusters=100, cluster_size=10,
                       population=population)


def test_draw_study_sample():
    config = _pps_study()
    population, data = draw_study_sample(config)
    assert data.n == 1000
    assert data.w.sum() == pytest.approx(1000)
    assert population.layout.size == 2 + 10 + 1
    again = draw_study_sample(config)[1]
    assert np.array_equal(again.y, data.y)
    other = draw_study_sample(config, rep=1)[1]
    assert not np.array_equal(other.w, data.w)


def test_pps_design_effects():
    population, data = draw_study_sample(_pps_study())
    assert 1 + (data.w.std() / data.w.mean()) ** 2 > 1.2
    draws = surveypost.fit(data, seed=38, **FAST_SAMPLER)
    results = surveypost.adjust(draws, data, seed=38, variants='raw,yj')
    beta = draws.layout.beta
    assert np.all(results[UNADJUSTED].design_effect == 1)
    assert np.all(results[YEO_JOHNSON].design_effect[beta] > 1)


def test_score_intervals():
    layout = ParamLayout(2, 3, ['Intercept', 'x'])
    draws = make_draws(layout, M=400, scale=0.2)
    result = unadjusted(draws)
    truth = np.zeros(layout.size)
    truth[0] = 5.0
    frame = score_intervals(result, truth, layout)
    assert list(frame['cls']) == [FIXED] * 2 + [RANDOM] * 3 + [SIGMA]
    assert not frame['covered'][0]
    assert frame['covered'][1:].all()
    row = frame.iloc[-1]
    assert row['length'] == pytest.approx(math.exp(row['upper']) -
                                          math.exp(row['lower']))


def _coverage_raw():
    rows = []
    for rep, covered, length in [(0, True, 1.0), (1, False, 3.0)]:
        for cls in PARAM_CLASSES:
            rows.append({'rep': rep, 'variant': NAIVE, 'cls': cls,
                         'length': length, 'covered': covered})
    return pd.DataFrame(rows)


def test_coverage_report():
    report = CoverageReport.from_raw(_coverage_raw(), [NAIVE])
    assert list(report.table.columns) == CoverageReport.COLUMNS
    assert list(report.table['cls']) == list(PARAM_CLASSES)
    assert report.n_replications == 2
    assert report.coverage(NAIVE, FIXED) == pytest.approx(50.0)
    assert report.length(NAIVE, SIGMA) == pytest.approx(2.0)
    cell = report.cell(NAIVE, RANDOM)
    assert cell['coverage_se'] == pytest.approx(100 * math.sqrt(0.25 / 2))
    assert cell['length_se'] == pytest.approx(1.0)
    with pytest.raises(KeyError):
        report.cell(YEO_JOHNSON, FIXED)
    assert report.to_csv().splitlines()[0] == ','.join(CoverageReport.COLUMNS)
    table = render_table(report)
    assert table.splitlines()[0] == 'Results for 2 SRS samples'
    assert 'Interval length' in table and 'Coverage (%)' in table
    assert '50.0' in table


def small_study(**kwargs):
    config = dict(
        seed=11, n_reps=2, n_clusters=10, cluster_size=10,
        population=PopulationSpec(N=2000, G=5, largest=600, smallest=200),
        sampler=SamplerConfig(seed=11, **FAST_SAMPLER),
        replication=ReplicationConfig(n_replicates=10))
    config.update(kwargs)
    return StudyConfig(**config)


def test_study_config():
    config = small_study()
    assert StudyConfig.from_dict(config.to_dict()).to_dict() == \
        config.to_dict()
    with pytest.raises(ConfigError):
        StudyConfig(seed=None)
    with pytest.raises(ConfigError):
        small_study(design='cluster')
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({'seed': 1, 'reps': 3})


def test_run_study_smoke():
    config = small_study()
    report = run_study(config)
    assert report.n_replications + report.n_failed == 2
    assert len(report.table) == 4 * 3
    assert list(report.table['variant']) == \
        [v for v in ALL_VARIANTS for __ in PARAM_CLASSES]
    assert set(report.variant_failures) == set(ALL_VARIANTS)
    assert report.variant_failures[UNADJUSTED] == 0
    assert report.variant_failures[YEO_JOHNSON] == 0
    scored = report.table.dropna(subset=['coverage'])
    assert {UNADJUSTED, YEO_JOHNSON} <= set(scored['variant'])
    assert scored['coverage'].between(0, 100).all()
    assert (scored['length'] > 0).all()
    again = run_study(config)
    pd.testing.assert_frame_equal(report.table, again.table)
    pooled = run_study(config.replace(n_workers=2))
    pd.testing.assert_frame_equal(report.table, pooled.table)


def test_run_study_counts_variant_failures(monkeypatch):
    adjust = simulation.adjust_draws

    def failing(variant, *args, **kwargs):
        if variant == NAIVE:
            raise LinAlgError('Matrix is not positive definite')
        return adjust(variant, *args, **kwargs)

    monkeypatch.setattr(simulation, 'adjust_draws', failing)
    report = run_study(small_study(variants=(UNADJUSTED, NAIVE)))
    assert report.n_failed == 0
    assert report.variant_failures == {UNADJUSTED: 0, NAIVE: 2}
    naive = report.table[report.table['variant'] == NAIVE]
    assert naive['coverage'].isna().all()
    assert report.table[report.table['variant'] == UNADJUSTED][
        'coverage'].notna().all()
    assert report.errors == ['%d naive: LinAlgError: Matrix is not positive '
                             'definite' % rep for rep in range(2)]
    assert 'naive failed in 2 replications' in render_table(report)
    assert report.to_dict()['variant_failures'][NAIVE] == 2


def test_run_study_every_variant_fails(monkeypatch):
    def failing(variant, *args, **kwargs):
        raise ConditioningError('H_used is indefinite')

    monkeypatch.setattr(simulation, 'adjust_draws', failing)
    with pytest.raises(SurveyPostError):
        run_study(small_study())


def test_brute_force_identical_weights():
    data = make_data(n=100).normalized()
    design = ReplicateDesign('identical', np.ones((2, data.n)),
                             [0.5, 0.5], data.psu, data.w)
    config = SamplerConfig(seed=12, n_chains=1, n_warmup=100, n_keep=100)
    variance = brute_force_replication_fit(data, design, config)
    assert list(variance.index) == list(data.layout.names)
    assert np.all(variance == 0)
    with pytest.raises(ConfigError):
        brute_force_replication_fit(data, None, config)


def test_read_dataset():
    data = read_dataset(TINY)
    assert data.n == 50
    assert data.layout.size == 8
    assert data.layout.names[:2] == ('beta[Intercept]', 'beta[x1]')
    assert data.layout.group_labels == ('1', '2', '3', '4', '5')
    assert np.all(data.w > 0)
    assert data.n_psu == 10


def _write_csv(path, text):
    path.write_text(text)
    return str(path)


def test_read_dataset_errors(tmp_path):
    path = _write_csv(tmp_path / 'a.csv', 'y,group,psu\n1,1,1\n')
    with pytest.raises(DataError) as exc_info:
        read_dataset(path)
    assert exc_info.value.column == 'weight'
    assert 'weight' in str(exc_info.value)
    path = _write_csv(tmp_path / 'b.csv', 'y,weight,group,psu\n1,1,1,1\n'
                                          '0,1,1,1\n2,1,1,1\n')
    with pytest.raises(DataError) as exc_info:
        read_dataset(path)
    assert exc_info.value.line == 4
    assert exc_info.value.column == 'y'
    path = _write_csv(tmp_path / 'c.csv', 'y,weight,group,psu\n1,0,1,1\n')
    with pytest.raises(DataError) as exc_info:
        read_dataset(path)
    assert exc_info.value.line == 2
    path = _write_csv(tmp_path / 'd.csv', 'y,weight,group,psu,x\n'
                                          '1,1,1,1,abc\n')
    with pytest.raises(DataError) as exc_info:
        read_dataset(path)
    assert exc_info.value.column == 'x'
    with pytest.raises(DataError):
        read_dataset(str(tmp_path / 'missing.csv'))


def test_draws_round_trip(tmp_path):
    layout = ParamLayout(2, 3, ['Intercept', 'x'])
    rng = np.random.default_rng(33)
    draws = PosteriorDraws(rng.standard_normal((100, 6)) * 1e3 ** rng.uniform(
        -2, 2, size=(100, 6)), rng.standard_normal(100), layout.names,
        np.repeat([0, 1], 50), layout=layout)
    path = write_draws(draws, str(tmp_path / 'draws.csv'))
    again = read_draws(path)
    assert np.array_equal(again.draws, draws.draws)
    assert np.array_equal(again.lp, draws.lp)
    assert np.array_equal(again.chain_id, draws.chain_id)
    assert again.layout == layout
    with pytest.raises(DataError):
        read_draws(path, ParamLayout(2, 2))


def test_manifest(tmp_path):
    output = _write_csv(tmp_path / 'out.csv', 'a\n1\n')
    path = write_manifest(str(tmp_path / 'manifest.json'), 'fit',
                          {'seed': 1, 'x': np.arange(2)}, [output])
    with open(path) as f:
        manifest = json.load(f)
    assert manifest['command'] == 'fit'
    assert manifest['config'] == {'seed': 1, 'x': [0, 1]}
    assert manifest['outputs'] == {'out.csv': file_digest(output)}


def test_shortcuts():
    data = read_dataset(TINY)
    draws = surveypost.fit(data, seed=1, **FAST_SAMPLER)
    assert draws.n_draws == 400
    results = surveypost.adjust(draws, data, seed=1, variants='raw,yj')
    assert set(results) == {UNADJUSTED, YEO_JOHNSON}
    assert np.array_equal(results[UNADJUSTED].adjusted_draws.draws,
                          draws.draws)


def _fit_args(output, *extra):
    return ['fit', '--data', TINY, '-o', str(output), '--chains', '2',
            '--warmup', '200', '--keep', '200', '--workers', '1'] + \
        list(extra)


def test_cli_seed_required(tmp_path):
    assert main(_fit_args(tmp_path / 'fit')) == 2
    assert not (tmp_path / 'fit').exists()


def test_cli_errors(tmp_path):
    assert main(['fit', '--data', str(tmp_path / 'no.csv'), '--seed',
                 '1']) == 2
    bad = _write_csv(tmp_path / 'bad.csv', 'y,weight,group,psu\n3,1,1,1\n')
    assert main(['fit', '--data', bad, '--seed', '1']) == 3
    assert main(['adjust', '--data', TINY, '--draws', TINY, '--seed', '1',
                 '--variants', 'magic']) == 2
    config = _write_csv(tmp_path / 'config.json', '[1, 2]')
    assert main(['fit', '--data', TINY, '--config', config]) == 2


def test_cli_fit_and_adjust(tmp_path):
    fit_dir = tmp_path / 'fit'
    assert main(_fit_args(fit_dir, '--seed', '1')) == 0
    draws_path = str(fit_dir / 'draws.csv')
    frame = pd.read_csv(draws_path, float_precision='round_trip')
    assert len(frame.columns) == 8 + 2
    assert len(frame) == 400
    summary = pd.read_csv(str(fit_dir / 'summary.csv'), index_col='param')
    assert {'mean', 'sd', 'rhat', 'ess'} <= set(summary.columns)
    with open(str(fit_dir / 'manifest.json')) as f:
        manifest = json.load(f)
    assert manifest['config']['seed'] == 1
    assert manifest['outputs']['draws.csv'] == file_digest(draws_path)

    # The manifest repeats the run.
    rerun_dir = tmp_path / 'rerun'
    assert main(['fit', '--config', str(fit_dir / 'manifest.json'), '-o',
                 str(rerun_dir)]) == 0
    assert file_digest(str(rerun_dir / 'draws.csv')) == \
        file_digest(draws_path)

    adjust_dir = tmp_path / 'adjust'
    assert main(['adjust', '--data', TINY, '--draws', draws_path, '--seed',
                 '1', '--variants', 'unadjusted', '-o',
                 str(adjust_dir)]) == 0
    adjusted = pd.read_csv(str(adjust_dir / 'adjusted_unadjusted.csv'),
                           float_precision='round_trip')
    pd.testing.assert_frame_equal(adjusted, frame)

    # Draws around zero keep the prior curvature positive definite.
    crafted = write_draws(make_draws(read_dataset(TINY).layout),
                          str(tmp_path / 'crafted.csv'))
    all_dir = tmp_path / 'all'
    assert main(['adjust', '--data', TINY, '--draws', crafted, '--seed',
                 '1', '--variants', 'all', '--replication', 'bootstrap',
                 '--replicates', '20', '-o', str(all_dir)]) == 0
    index = None
    for variant in ALL_VARIANTS:
        intervals = pd.read_csv(str(all_dir / ('intervals_%s.csv' % variant)),
                                index_col='param')
        if index is None:
            index = list(intervals.index)
        assert list(intervals.index) == index
        assert (all_dir / ('curvature_%s.json' % variant)).exists()
    effects = pd.read_csv(str(all_dir / 'design_effects.csv'),
                          index_col='param')
    assert list(effects.columns) == list(ALL_VARIANTS)
    assert (effects.to_numpy() > 0).all()
    combined = pd.read_csv(str(all_dir / 'intervals.csv'), index_col='param')
    assert list(combined.index) == index
    assert list(combined.columns) == [
        '%s_%s' % (v, c) for v in ALL_VARIANTS
        for c in ['lower', 'upper', 'length']]
    assert (combined['unadjusted_length'] > 0).all()


def test_cli_adjust_mismatch(tmp_path):
    layout = ParamLayout(2, 3, ['Intercept', 'x1'])
    draws = make_draws(layout, M=100)
    path = write_draws(draws, str(tmp_path / 'draws.csv'))
    assert main(['adjust', '--data', TINY, '--draws', path, '--seed',
                 '1']) == 3


def test_cli_simulate(tmp_path):
    config = {'seed': 3,
              'study': {'n_reps': 2, 'n_clusters': 10, 'cluster_size': 10,
                        'population': {'N': 2000, 'G': 5, 'largest': 600,
                                       'smallest': 200}},
              'sampler': FAST_SAMPLER,
              'replication': {'n_replicates': 10}}
    path = tmp_path / 'study.json'
    path.write_text(json.dumps(config))
    output = tmp_path / 'sim'
    assert main(['simulate', '--config', str(path), '--workers', '1',
                 '--raw', '-o', str(output)]) == 0
    coverage = pd.read_csv(str(output / 'coverage.csv'))
    assert len(coverage) == 12
    assert list(coverage.columns) == CoverageReport.COLUMNS
    assert (output / 'coverage.txt').read_text().startswith(
        'Results for')
    assert (output / 'raw.csv').exists()
    with open(str(output / 'manifest.json')) as f:
        manifest = json.load(f)
    assert manifest['config']['study']['seed'] == 3
    assert set(manifest['variant_failures']) == set(ALL_VARIANTS)


def test_cli_sample(tmp_path):
    config = {'study': {'n_clusters': 20, 'cluster_size': 10,
                        'population': {'N': 5000, 'G': 5, 'largest': 1500,
                                       'smallest': 500}}}
    path = tmp_path / 'study.json'
    path.write_text(json.dumps(config))
    output = tmp_path / 'demo'
    assert main(['sample', '--design', 'pps', '--seed', '1', '--config',
                 str(path), '-o', str(output)]) == 0
    data = read_dataset(str(output / 'sample.csv'))
    assert data.n == 200
    assert data.w.std() > 0
    truth = pd.read_csv(str(output / 'truth.csv'), index_col='param')
    assert list(truth.columns) == ['truth']
    assert len(truth) == 2 + 5 + 1
    with open(str(output / 'manifest.json')) as f:
        manifest = json.load(f)
    assert manifest['n_units'] == 200
    assert manifest['weight_cv'] > 0
    again = tmp_path / 'again'
    assert main(['sample', '--design', 'pps', '--seed', '1', '--config',
                 str(path), '-o', str(again)]) == 0
    assert file_digest(str(again / 'sample.csv')) == \
        file_digest(str(output / 'sample.csv'))


def test_compare_intervals():
    layout = ParamLayout(2, 3, ['Intercept', 'x'])
    draws = make_draws(layout, M=400, scale=0.2)
    results = {UNADJUSTED: unadjusted(draws),
               NAIVE: apply_adjustment(draws, CurvatureSet(
                   np.eye(layout.size), 4 * np.eye(layout.size)))}
    table = compare_intervals(results)
    assert table.index.name == 'param'
    assert list(table.index) == list(layout.names)
    assert list(table.columns[:3]) == ['unadjusted_lower', 'unadjusted_upper',
                                       'unadjusted_length']
    assert_allclose(table['naive_length'], 2 * table['unadjusted_length'])


def test_cli_linear_algebra_error(tmp_path, monkeypatch):
    def failing(*args, **kwargs):
        raise LinAlgError('SVD did not converge')

    monkeypatch.setattr('surveypost.cli.adjust_draws', failing)
    path = write_draws(make_draws(read_dataset(TINY).layout),
                       str(tmp_path / 'draws.csv'))
    assert main(['adjust', '--data', TINY, '--draws', path, '--seed', '1',
                 '--variants', 'naive', '-o', str(tmp_path / 'out')]) == 4


def test_cli_oracle(tmp_path):
    output = tmp_path / 'oracle'
    assert main(['oracle', '--data', TINY, '--seed', '2', '--chains', '2',
                 '--warmup', '200', '--keep', '200', '--workers', '1',
                 '--replicates', '2', '--variants', 'raw,yj', '-o',
                 str(output)]) == 0
    table = pd.read_csv(str(output / 'oracle.csv'), index_col='param')
    assert list(table.columns) == ['brute_force', UNADJUSTED, YEO_JOHNSON]
    assert len(table) == 8
    assert (table[UNADJUSTED] > 0).all()
    assert (table['brute_force'] >= 0).all()


@functools.lru_cache(maxsize=None)
def full_study(design):
    return run_study(StudyConfig(seed=2024, design=design, n_reps=100,
                                 n_workers=os.cpu_count() or 1))


def _scored(report, variant):
    # An indefinite H_used fails a variant; it may fail in every replication.
    return report.variant_failures[variant] < report.n_replications


@pytest.mark.slow
def test_srs_study():
    report = full_study(SRS)
    coverage = report.coverage
    assert 88 <= coverage(UNADJUSTED, FIXED) <= 98
    assert 89 <= coverage(YEO_JOHNSON, RANDOM) <= 100
    if _scored(report, NAIVE):
        assert coverage(NAIVE, RANDOM) <= 70
        assert coverage(NAIVE, SIGMA) <= 55
        assert coverage(YEO_JOHNSON, SIGMA) >= coverage(NAIVE, SIGMA) + 20


@pytest.mark.slow
def test_pps_study():
    report = full_study(PPS)
    coverage, length = report.coverage, report.length
    assert coverage(UNADJUSTED, FIXED) <= 80
    assert coverage(YEO_JOHNSON, FIXED) >= coverage(UNADJUSTED, FIXED)
    assert coverage(YEO_JOHNSON, SIGMA) >= 80
    assert length(YEO_JOHNSON, RANDOM) > length(UNADJUSTED, RANDOM)
    if _scored(report, NAIVE):
        assert coverage(NAIVE, RANDOM) <= 55


@pytest.mark.slow
def test_study_orderings():
    srs, pps = full_study(SRS), full_study(PPS)
    assert pps.coverage(UNADJUSTED, FIXED) < srs.coverage(UNADJUSTED, FIXED)
    for report in [srs, pps]:
        assert report.length(YEO_JOHNSON, FIXED) >= \
            report.length(UNADJUSTED, FIXED)
        assert report.variant_failures[YEO_JOHNSON] == 0
        if _scored(report, NAIVE):
            assert report.coverage(YEO_JOHNSON, RANDOM) > \
                report.coverage(NAIVE, RANDOM)
            assert report.length(NAIVE, FIXED) >= \
                report.length(UNADJUSTED, FIXED)
        if _scored(report, NAIVE) and _scored(report, PRIOR_CURVATURE):
            assert report.coverage(PRIOR_CURVATURE, SIGMA) > \
                report.coverage(NAIVE, SIGMA)
        if _scored(report, PRIOR_CURVATURE):
            assert report.length(PRIOR_CURVATURE, FIXED) >= \
                report.length(UNADJUSTED, FIXED)


@pytest.mark.slow
def test_bartlett_identity():
    data = make_data(n=5000, G=10, n_psu=5000, seed=34, w=1.0,
                     beta=(0.0, 0.5))
    prior = PriorSpec()
    draws = sample_pseudo_posterior(data, prior, SamplerConfig(seed=34))
    design = make_half_sample_bootstrap(data, 1000, seed=34)
    curv = build_curvature(PRIOR_CURVATURE, draws, data, prior, design)
    ratio = np.diag(curv.J_used)[:2] / np.diag(curv.H_used)[:2]
    assert np.all(np.abs(ratio - 1) < 0.2)


@pytest.mark.slow
def test_brute_force_oracle():
    population = generate_population(PopulationSpec(seed=35))
    data = draw_srs_sample(population, n_clusters=50, cluster_size=10,
                           seed=35).normalized()
    prior = PriorSpec()
    config = SamplerConfig(seed=35, n_workers=os.cpu_count() or 1)
    design = make_design(data, ReplicationConfig(n_replicates=20, seed=35))
    brute = brute_force_replication_fit(data, design, config, prior)
    draws = sample_pseudo_posterior(data, prior, config)
    result = adjust_draws(YEO_JOHNSON, draws, data, prior, design)
    adjusted = result.adjusted_draws.draws.var(axis=0, ddof=1)
    ratio = brute.to_numpy()[:2] / adjusted[:2]
    assert np.all((ratio > 0.5) & (ratio < 2))
