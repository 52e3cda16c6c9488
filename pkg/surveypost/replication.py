# -*- coding: utf-8 -*-
"""
   surveypost.replication
   ~~~~~~~~~~~~~~~~~~~~~~

   Replicate weights over primary sampling units and the replicate estimate
   of ``J``, the design variance of the weighted score.

   Scores are evaluated once at a plug-in estimate.  Each replicate only
   reweights them::

      s_r = sum_i w_i^(r) dl_i(theta_hat)
      J = sum_r c_r (s_r - s_bar)(s_r - s_bar)'

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
import dataclasses
import logging
import warnings

import numpy as np
import pandas as pd

from surveypost.errors import ConfigError, DataError, NumericError, RankWarning
from surveypost.model import unit_scores
from surveypost.utils import symmetrize


__all__ = ['DEFAULT_REPLICATES', 'HALF_SAMPLE_BOOTSTRAP', 'JACKKNIFE',
           'ReplicateDesign', 'ReplicationConfig', 'estimate_J',
           'make_delete_a_group_jackknife', 'make_design',
           'make_half_sample_bootstrap']


logger = logging.getLogger(__name__)


# Replicate designs:
HALF_SAMPLE_BOOTSTRAP = 'half_sample_bootstrap'
JACKKNIFE = 'delete_a_group_jackknife'

#: The default number of replicates.
DEFAULT_REPLICATES = 100


class ReplicateDesign(object):
    """``R`` replicate weight sets as PSU-constant multipliers of the base
    weights.

    :param kind: :data:`HALF_SAMPLE_BOOTSTRAP` or :data:`JACKKNIFE`.
    :param multipliers: the ``R x n`` weight multipliers.
    :param scale: the variance scaling constant ``c_r`` per replicate.
    :param psu_map: the PSU label per unit.
    :param blocks: replicates sharing a block are centered on their own mean,
                   e.g. the jackknife replicates of one stratum.
                   (default: one block)

    """

    __slots__ = ('kind', 'multipliers', 'scale', 'psu_map', 'stratum_map',
                 'base_weights', 'blocks', 'seed')

    def __init__(self, kind, multipliers, scale, psu_map, base_weights,
                 stratum_map=None, blocks=None, seed=None):
        multipliers = np.atleast_2d(np.asarray(multipliers, dtype=float))
        scale = np.asarray(scale, dtype=float).ravel()
        if scale.size != multipliers.shape[0]:
            raise DataError('%d scaling constants for %d replicates'
                            '' % (scale.size, multipliers.shape[0]))
        if np.any(multipliers < 0):
            raise DataError('Replicate multipliers should be non-negative')
        self.kind = kind
        self.multipliers = multipliers
        self.scale = scale
        self.psu_map = np.asarray(psu_map)
        self.base_weights = np.asarray(base_weights, dtype=float)
        self.stratum_map = stratum_map
        if blocks is None:
            blocks = np.zeros(multipliers.shape[0], dtype=int)
        self.blocks = np.asarray(blocks, dtype=int)
        self.seed = seed

    @property
    def n_replicates(self):
        return self.multipliers.shape[0]

    @property
    def n_units(self):
        return self.multipliers.shape[1]

    @property
    def rep_weights(self):
        """The ``R x n`` replicate weights."""
        return self.multipliers * self.base_weights

    def take(self, indices):
        """The design restricted to (or reordered by) the given units."""
        indices = np.asarray(indices)
        strata = None if self.stratum_map is None else \
            np.asarray(self.stratum_map)[indices]
        return type(self)(self.kind, self.multipliers[:, indices], self.scale,
                          self.psu_map[indices], self.base_weights[indices],
                          strata, self.blocks, self.seed)

    def to_frame(self):
        """Multipliers with one row per replicate and one column per unit."""
        columns = ['unit%d' % i for i in range(self.n_units)]
        return pd.DataFrame(self.multipliers, columns=columns)

    def to_dict(self):
        return {'kind': self.kind, 'n_replicates': self.n_replicates,
                'n_units': self.n_units, 'scale': self.scale.tolist(),
                'seed': self.seed}

    def __repr__(self):
        return '<ReplicateDesign: %s, R=%d>' % (self.kind, self.n_replicates)


def _psu_table(data):
    """PSU codes per unit and the stratum code of every PSU."""
    psu = data.psu_codes
    strata = np.zeros(data.n_psu, dtype=int)
    strata[psu] = data.stratum_codes
    return psu, strata


def make_half_sample_bootstrap(data, n_replicates=DEFAULT_REPLICATES,
                               seed=None):
    """Half-sample bootstrap replicates.  In every stratum and replicate a
    uniformly random half (rounded up) of the PSUs gets multiplier 2 and the
    rest 0.  ``c_r = 1 / R``.

    :raises DataError: a stratum has fewer than 2 PSUs.

    """
    if n_replicates < 2:
        raise ConfigError('At least 2 replicates are required')
    psu, strata = _psu_table(data)
    members = [np.flatnonzero(strata == h) for h in np.unique(strata)]
    for h, psus in enumerate(members):
        if psus.size < 2:
            raise DataError('Stratum %d has %d PSU; half-sampling needs 2'
                            '' % (h, psus.size))
    rng = np.random.default_rng(seed)
    psu_multipliers = np.zeros((n_replicates, strata.size))
    for r in range(n_replicates):
        for psus in members:
            half = int(np.ceil(psus.size / 2.0))
            chosen = rng.choice(psus, size=half, replace=False)
            psu_multipliers[r, chosen] = 2.0
    logger.info('built %d half-sample replicates over %d PSUs',
                n_replicates, strata.size)
    return ReplicateDesign(HALF_SAMPLE_BOOTSTRAP, psu_multipliers[:, psu],
                           np.full(n_replicates, 1.0 / n_replicates),
                           data.psu, data.w, data.stratum, seed=seed)


def make_delete_a_group_jackknife(data, n_groups, seed=None):
    """Delete-a-group jackknife replicates.  In every stratum, PSUs are
    randomly partitioned into `n_groups` groups of nearly equal size.  A
    replicate zeroes one group and rescales the rest of its stratum by
    ``n_groups / (n_groups - 1)``; other strata keep their weights.
    ``c_r = (n_groups - 1) / n_groups``.

    :raises DataError: `n_groups` exceeds the PSUs of a stratum.

    """
    if n_groups < 2:
        raise ConfigError('At least 2 jackknife groups are required')
    psu, strata = _psu_table(data)
    rng = np.random.default_rng(seed)
    rows, blocks = [], []
    for h in np.unique(strata):
        psus = np.flatnonzero(strata == h)
        if n_groups > psus.size:
            raise DataError('%d jackknife groups for %d PSUs in stratum %d'
                            '' % (n_groups, psus.size, h))
        groups = np.array_split(rng.permutation(psus), n_groups)
        for dropped in groups:
            row = np.ones(strata.size)
            row[psus] = n_groups / (n_groups - 1.0)
            row[dropped] = 0.0
            rows.append(row)
            blocks.append(h)
    n_replicates = len(rows)
    logger.info('built %d jackknife replicates over %d PSUs', n_replicates,
                strata.size)
    return ReplicateDesign(JACKKNIFE, np.asarray(rows)[:, psu],
                           np.full(n_replicates,
                                   (n_groups - 1.0) / n_groups),
                           data.psu, data.w, data.stratum, blocks, seed)


@dataclasses.dataclass(frozen=True)
class ReplicationConfig(object):
    """How to build replicate weights.  `n_replicates` is the number of
    bootstrap replicates or jackknife groups per stratum; it is capped at the
    PSU count for the jackknife.
    """

    kind: str = JACKKNIFE
    n_replicates: int = DEFAULT_REPLICATES
    seed: int = None

    def __post_init__(self):
        if self.kind not in (HALF_SAMPLE_BOOTSTRAP, JACKKNIFE):
            raise ConfigError('Unknown replicate design: %r' % self.kind)
        if self.n_replicates < 2:
            raise ConfigError('n_replicates should be at least 2')

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, config, **overrides):
        config = dict(config or {}, **overrides)
        aliases = {'bootstrap': HALF_SAMPLE_BOOTSTRAP,
                   'jackknife': JACKKNIFE}
        if 'kind' in config:
            config['kind'] = aliases.get(config['kind'], config['kind'])
        try:
            return cls(**config)
        except TypeError as exc:
            raise ConfigError('Invalid replication settings: %s' % exc)


def make_design(data, config):
    """Builds the replicate design described by a
    :class:`ReplicationConfig`.
    """
    if config.kind == HALF_SAMPLE_BOOTSTRAP:
        return make_half_sample_bootstrap(data, config.n_replicates,
                                          config.seed)
    smallest = np.bincount(_psu_table(data)[1]).min()
    return make_delete_a_group_jackknife(
        data, min(config.n_replicates, int(smallest)), config.seed)


def _rank(a):
    if not np.any(a):
        return 0
    try:
        return int(np.linalg.matrix_rank(a))
    except np.linalg.LinAlgError:
        raise NumericError('Cannot compute a matrix rank', term='J')


def estimate_J(theta_hat, data, design, score_fn=unit_scores):
    """The between-replicate variance of the weighted score at `theta_hat`.

    Replicate weights are the design multipliers times the weights of
    `data`, so `J` follows the weight scale of `data`.

    :param theta_hat: the plug-in estimate, usually the posterior mean.
    :param score_fn: a function ``(theta, data) -> n x K`` scores.
    :returns: ``(J, rank)``.  A rank below that of the weighted unit scores
              warns with :class:`~surveypost.errors.RankWarning`.

    """
    if design.n_units != data.n:
        raise DataError('The design has %d units, the dataset %d'
                        '' % (design.n_units, data.n))
    scores = np.asarray(score_fn(theta_hat, data), dtype=float)
    totals = (design.multipliers * data.w).dot(scores)
    dev = np.empty_like(totals)
    for block in np.unique(design.blocks):
        rows = design.blocks == block
        dev[rows] = totals[rows] - totals[rows].mean(axis=0)
    J = symmetrize((dev * design.scale[:, np.newaxis]).T.dot(dev))
    rank = _rank(J)
    # The scores bound the rank: log sigma_alpha has none and the random
    # intercepts add up to the intercept column.
    attainable = _rank(scores[data.w != 0])
    if rank < attainable:
        message = ('J has rank %d < %d, the rank of the scores (R=%d)'
                   '' % (rank, attainable, design.n_replicates))
        logger.warning(message)
        warnings.warn(message, RankWarning)
    return J, rank
