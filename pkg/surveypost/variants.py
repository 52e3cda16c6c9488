# -*- coding: utf-8 -*-
"""
   surveypost.variants
   ~~~~~~~~~~~~~~~~~~~

   Names of the posterior adjustment variants.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
from surveypost.errors import ConfigError


__all__ = ['ALL_VARIANTS', 'NAIVE', 'PRIOR_CURVATURE', 'UNADJUSTED',
           'YEO_JOHNSON', 'parse_variant', 'parse_variants']


# Adjustment variants:
UNADJUSTED = 'unadjusted'  # pseudo-posterior draws as they are
NAIVE = 'naive'  # log-posterior curvature, replicate J
PRIOR_CURVATURE = 'prior_curvature'  # H + H0 against J + H0
YEO_JOHNSON = 'yeo_johnson'  # prior curvature on normalized marginals

#: Variants in the order of the report tables.
ALL_VARIANTS = (UNADJUSTED, NAIVE, PRIOR_CURVATURE, YEO_JOHNSON)

#: Accepted spellings on the command line and in config files.
ALIASES = {
    'none': UNADJUSTED, 'raw': UNADJUSTED,
    'baseline': NAIVE,
    'prior': PRIOR_CURVATURE, 'pc': PRIOR_CURVATURE,
    'prior-curvature': PRIOR_CURVATURE,
    'yj': YEO_JOHNSON, 'yeo-johnson': YEO_JOHNSON,
}


def parse_variant(name):
    """Resolves a variant name::

    >>> parse_variant('yj')
    'yeo_johnson'
    >>> parse_variant('naive')
    'naive'

    """
    key = str(name).strip().lower()
    if key in ALL_VARIANTS:
        return key
    try:
        return ALIASES[key]
    except KeyError:
        raise ConfigError('Unknown adjustment variant: %r' % name)


def parse_variants(names):
    """Resolves a comma separated string or a sequence of variant names.
    ``'all'`` means every variant.  Duplicates are dropped, order is kept.
    """
    if isinstance(names, str):
        if names.strip().lower() == 'all':
            return ALL_VARIANTS
        names = [x for x in names.split(',') if x.strip()]
    seen = []
    for name in names:
        variant = parse_variant(name)
        if variant not in seen:
            seen.append(variant)
    if not seen:
        raise ConfigError('No adjustment variant selected')
    return tuple(seen)
