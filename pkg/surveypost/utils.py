# -*- coding: utf-8 -*-
"""
   surveypost.utils
   ~~~~~~~~~~~~~~~~

   Utilities for internal use.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
import hashlib

import numpy as np

from surveypost.errors import DataError


__all__ = ['check_square', 'derive_seed', 'fingerprint', 'spawn_generators',
           'symmetrize']


def symmetrize(a):
    """Returns ``(A + A') / 2``.  The result is exactly symmetric."""
    a = np.asarray(a, dtype=float)
    return (a + a.T) / 2.0


def check_square(a, size=None, name='matrix'):
    """Checks that `a` is a finite square matrix and returns it as a float
    array.

    :raises DataError: `a` is not square, has the wrong size or includes
                       non-finite entries.

    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError('%s is not square: %r' % (name, a.shape))
    if size is not None and a.shape[0] != size:
        raise DataError('%s should be %d x %d, got %r'
                        '' % (name, size, size, a.shape))
    if not np.all(np.isfinite(a)):
        raise DataError('%s includes non-finite entries' % name)
    return a


def spawn_generators(seed, n, *keys):
    """Makes `n` independent random generators derived from `seed` and
    optional integer keys.  The same arguments always give the same streams.
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    children = np.random.SeedSequence(entropy).spawn(n)
    return [np.random.default_rng(child) for child in children]


def fingerprint(array):
    """A short hexadecimal digest of an array's shape and bytes."""
    array = np.ascontiguousarray(array, dtype=float)
    digest = hashlib.sha1(repr(array.shape).encode('ascii'))
    digest.update(array.tobytes())
    return digest.hexdigest()[:16]


def derive_seed(seed, *keys):
    """An integer seed derived from `seed` and integer keys, e.g. the seed of
    replicate weights under a master seed.
    """
    rng, = spawn_generators(seed, 1, *keys)
    return int(rng.integers(2 ** 63 - 1))
