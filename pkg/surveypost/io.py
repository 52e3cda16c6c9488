# -*- coding: utf-8 -*-
"""
   surveypost.io
   ~~~~~~~~~~~~~

   Reading datasets and draws, writing reports and run manifests.

   :copyright: (c) 2016-2026 by What! Studio
   :license: BSD, see LICENSE for more details.

"""
import datetime
import hashlib
import json
import logging
import os

import numpy as np
import pandas as pd

from surveypost.__about__ import __version__
from surveypost.errors import DataError
from surveypost.model import SurveyDataset
from surveypost.sampler import PosteriorDraws


__all__ = ['DRAWS_FLOAT_FORMAT', 'file_digest', 'read_dataset', 'read_draws',
           'write_draws', 'write_frame', 'write_json', 'write_manifest']


logger = logging.getLogger(__name__)


#: 17 significant digits read back to the same doubles.
DRAWS_FLOAT_FORMAT = '%.17g'

#: Columns every dataset CSV needs.
REQUIRED_COLUMNS = ('y', 'weight', 'group', 'psu')

#: The name of the intercept column added to the covariates.
INTERCEPT = 'Intercept'


def _read_csv(path, **kwargs):
    try:
        return pd.read_csv(path, **kwargs)
    except FileNotFoundError:
        raise DataError('No such file: %s' % path)
    except pd.errors.EmptyDataError:
        raise DataError('Empty file: %s' % path)
    except pd.errors.ParserError as exc:
        raise DataError('Malformed CSV %s: %s' % (path, exc))


def _bad_rows(mask):
    """1-based file lines of flagged rows.  The header is line 1."""
    return np.flatnonzero(np.asarray(mask)) + 2


def _numeric(frame, name):
    values = pd.to_numeric(frame[name], errors='coerce')
    bad = _bad_rows(values.isna())
    if bad.size:
        raise DataError('%s is not a number: %r'
                        '' % (name, frame[name].iloc[bad[0] - 2]),
                        line=int(bad[0]), column=name)
    return values.to_numpy(dtype=float)


def _label_order(labels):
    if all(x.lstrip('-').isdigit() for x in labels):
        return sorted(labels, key=int)
    return sorted(labels)


def read_dataset(path):
    """Reads a dataset CSV with columns ``y``, ``weight``, ``group``,
    ``psu``, an optional ``stratum`` and covariates.  An ``Intercept``
    column is prepended to the covariates.

    :raises DataError: a column is missing or a value is invalid.  The error
                       names the line and column.

    """
    frame = _read_csv(path, dtype=str, keep_default_na=False,
                      skipinitialspace=True)
    frame.columns = [str(c).strip() for c in frame.columns]
    for name in REQUIRED_COLUMNS:
        if name not in frame.columns:
            raise DataError('Missing column %r in %s' % (name, path),
                            column=name)
    if frame.empty:
        raise DataError('No rows in %s' % path)
    for name in REQUIRED_COLUMNS + ('stratum',):
        if name in frame.columns:
            bad = _bad_rows(frame[name].str.strip() == '')
            if bad.size:
                raise DataError('Empty %s' % name, line=int(bad[0]),
                                column=name)
    y = _numeric(frame, 'y')
    bad = _bad_rows((y != 0) & (y != 1))
    if bad.size:
        raise DataError('y should be 0 or 1', line=int(bad[0]), column='y')
    w = _numeric(frame, 'weight')
    bad = _bad_rows(~np.isfinite(w) | (w <= 0))
    if bad.size:
        raise DataError('Weights should be positive and finite',
                        line=int(bad[0]), column='weight')
    special = set(REQUIRED_COLUMNS) | {'stratum'}
    covariates = [c for c in frame.columns if c not in special]
    columns = [np.ones(len(frame))]
    for name in covariates:
        column = _numeric(frame, name)
        bad = _bad_rows(~np.isfinite(column))
        if bad.size:
            raise DataError('Covariates should be finite', line=int(bad[0]),
                            column=name)
        columns.append(column)
    group = frame['group'].str.strip()
    labels = _label_order(group.unique().tolist())
    codes = pd.Categorical(group, categories=labels).codes
    stratum = frame['stratum'].str.strip().to_numpy() \
        if 'stratum' in frame.columns else None
    data = SurveyDataset(y, np.column_stack(columns), codes,
                         frame['psu'].str.strip().to_numpy(), w, stratum,
                         n_groups=len(labels),
                         covariate_names=[INTERCEPT] + covariates,
                         group_labels=labels)
    logger.info('read %d units, %d covariates and %d groups from %s',
                data.n, data.n_covariates, data.n_groups, path)
    return data


def write_draws(draws, path):
    """Writes draws with columns of parameters, ``lp`` and ``chain``."""
    draws.to_frame().to_csv(path, index=False,
                            float_format=DRAWS_FLOAT_FORMAT)
    return path


def read_draws(path, layout=None):
    """Reads draws written by :func:`write_draws` or another program.  The
    doubles are restored exactly.
    """
    frame = _read_csv(path, float_precision='round_trip')
    return PosteriorDraws.from_frame(frame, layout)


def write_frame(frame, path, index=False):
    frame.to_csv(path, index=index, float_format='%.10g')
    return path


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError('Not serializable: %r' % type(value))


def write_json(data, path):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=_json_default)
        f.write('\n')
    return path


def file_digest(path):
    """The SHA-1 of a file's bytes."""
    digest = hashlib.sha1()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command, config, outputs=()):
    """Writes a manifest which embeds the resolved configuration and the
    digests of the written files.
    """
    manifest = {
        'command': command,
        'version': __version__,
        'created': datetime.datetime.now(datetime.timezone.utc).isoformat(),
        'config': config,
        'outputs': {os.path.basename(p): file_digest(p) for p in outputs},
    }
    return write_json(manifest, path)
