"""
Reading transaction files and writing results.

Every writer goes through a temporary file in the destination directory followed by os.replace, and every text
output starts with a provenance line carrying the package version and the config digest.
"""

import csv
import json
import os
import re
import tempfile
from logging import getLogger

import numpy as np
import pandas as pd

from . import __version__
from .errors import DataError

TRANSACTION_COLUMNS = ('transaction_id', 'store_id', 'date', 'product_id', 'quantity', 'unit_price', 'gross_value',
                       'discount', 'category_l1', 'category_l2', 'category_l3', 'private_label')
NUMERIC_COLUMNS = ('quantity', 'unit_price', 'gross_value', 'discount')
POSITIVE_COLUMNS = ('quantity', 'unit_price')
MAX_REJECT_SHARE = 0.001
FLOAT_FORMAT = '%.12g'


def _reject_reasons(df):
    reasons = pd.Series('', index=df.index)
    for col in NUMERIC_COLUMNS:
        values = pd.to_numeric(df[col], errors='coerce')
        bad = values.isna() & df[col].notna()
        if col in POSITIVE_COLUMNS:
            bad |= values.isna() | (values <= 0)
        reasons[bad] += f"{col} "
    dates = pd.to_datetime(df['date'], errors='coerce', format='ISO8601')
    reasons[dates.isna()] += 'date '
    reasons[~df['private_label'].isin(['0', '1'])] += 'private_label '
    for col in ('transaction_id', 'store_id', 'product_id'):
        reasons[df[col].isna() | (df[col].str.strip() == '')] += f"{col} "
    return reasons.str.strip()


def read_transactions_csv(path, max_reject_share=MAX_REJECT_SHARE):
    """
    Load a transaction CSV into a typed frame. Malformed rows are dropped with a warning naming their line numbers;
    more than max_reject_share of rows rejected is a DataError.
    """
    if not os.path.exists(path):
        raise DataError(f"transaction file {path} does not exist")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[''], encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DataError(f"transaction file {path} is empty") from None
    except pd.errors.ParserError as e:
        found = re.search(r"line (\d+)", str(e))
        line = int(found.group(1)) if found else None
        where = f" at line {line}" if line else ""
        raise DataError(f"transaction file {path} cannot be parsed{where}: {e}",
                        rejects=[(line, "malformed row")] if line else None) from None
    missing = [c for c in TRANSACTION_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"transaction file {path} lacks columns {missing}")
    if df.empty:
        raise DataError(f"transaction file {path} has a header but no rows")

    reasons = _reject_reasons(df)
    rejected = reasons != ''
    rejects = [(int(i) + 2, r) for i, r in reasons[rejected].items()]
    if rejects:
        getLogger(__name__).warning(f"{len(rejects)} malformed rows in {path}: "
                                    + ', '.join(f"line {n} ({r})" for n, r in rejects[:20]))
    if len(rejects) > max_reject_share * len(df):
        raise DataError(f"{len(rejects)} of {len(df)} rows rejected in {path}", rejects=rejects)

    df = df[~rejected].reset_index(drop=True)
    for col in NUMERIC_COLUMNS:
        df[col] = pd.to_numeric(df[col]).fillna(0.0).astype(float)
    df['private_label'] = df['private_label'].astype(int)
    getLogger(__name__).info(f"read {len(df)} transaction lines from {path}")
    return df


def provenance(digest):
    return f"# basketdemand {__version__} config {digest}"


def _atomic_write(path, write):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            write(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    getLogger(__name__).debug(f"wrote {path}")
    return path


def write_frame(path, frame, digest):
    def write(f):
        f.write(provenance(digest) + '\n')
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return _atomic_write(path, write)


def write_dense(path, matrix, labels, digest):
    frame = pd.DataFrame(np.asarray(matrix, dtype=float), columns=list(labels))
    frame.insert(0, 'product_id', list(labels))
    return write_frame(path, frame, digest)


def write_coordinates(path, matrix, labels, digest):
    """Nonzero entries as (row, col, value) with product ids."""
    matrix = np.asarray(matrix, dtype=float)
    rows, cols = np.nonzero(matrix)
    labels = np.asarray(list(labels), dtype=object)
    frame = pd.DataFrame({'row': labels[rows], 'col': labels[cols], 'value': matrix[rows, cols]})
    return write_frame(path, frame, digest)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if not np.isfinite(value) else float(FLOAT_FORMAT % value)
    return value


def write_json(path, payload, digest):
    body = {'provenance': {'version': __version__, 'config-digest': digest}, **_jsonable(payload)}
    return _atomic_write(path, lambda f: json.dump(body, f, indent=2, sort_keys=True))


def write_ndjson(path, records, digest):
    def write(f):
        f.write(json.dumps({'provenance': {'version': __version__, 'config-digest': digest}}) + '\n')
        for record in records:
            f.write(json.dumps(_jsonable(record), sort_keys=True) + '\n')
    return _atomic_write(path, write)


def write_records_csv(path, records):
    """Plain transaction CSV (no provenance line) in the input schema, used for fixtures."""
    def write(f):
        records[list(TRANSACTION_COLUMNS)].to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n',
                                                  quoting=csv.QUOTE_MINIMAL)
    return _atomic_write(path, write)
