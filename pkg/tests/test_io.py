import json

import numpy as np
import pandas as pd
import pytest

from basketdemand import __version__, io
from basketdemand.errors import DataError

from conftest import make_records


@pytest.fixture
def records():
    rows = [(f"t{i}", 's1', '2020-01-05', p, 1.0, 2.5, 'dairy') for i in range(1000) for p in ('milk', 'cream')]
    return make_records(rows)


def test_read_round_trip(tmp_path, records):
    path = str(tmp_path / 'tx.csv')
    io.write_records_csv(path, records)
    df = io.read_transactions_csv(path)
    assert len(df) == 2000
    assert list(df.columns) == list(io.TRANSACTION_COLUMNS)
    assert df['quantity'].dtype == float
    assert df['private_label'].dtype.kind == 'i'


def test_few_malformed_rows_are_dropped(tmp_path, records):
    records.loc[3, 'unit_price'] = 0.0
    path = str(tmp_path / 'tx.csv')
    io.write_records_csv(path, records)
    df = io.read_transactions_csv(path)
    assert len(df) == 1999


def test_too_many_malformed_rows(tmp_path, records):
    records.loc[:9, 'quantity'] = -1.0
    path = str(tmp_path / 'tx.csv')
    io.write_records_csv(path, records)
    with pytest.raises(DataError) as err:
        io.read_transactions_csv(path)
    assert len(err.value.rejects) == 10
    # header is line 1, so row 0 sits on line 2
    assert err.value.rejects[0] == (2, 'quantity')


def test_reject_reasons(tmp_path, records):
    records = records.head(4).copy()
    records.loc[0, 'date'] = 'someday'
    records.loc[1, 'private_label'] = 2
    path = str(tmp_path / 'tx.csv')
    io.write_records_csv(path, records)
    with pytest.raises(DataError) as err:
        io.read_transactions_csv(path)
    assert dict(err.value.rejects) == {2: 'date', 3: 'private_label'}


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(DataError, match='does not exist'):
        io.read_transactions_csv(str(tmp_path / 'nope.csv'))
    empty = tmp_path / 'empty.csv'
    empty.write_text('')
    with pytest.raises(DataError, match='empty'):
        io.read_transactions_csv(str(empty))
    header = tmp_path / 'header.csv'
    header.write_text(','.join(io.TRANSACTION_COLUMNS) + '\n')
    with pytest.raises(DataError, match='no rows'):
        io.read_transactions_csv(str(header))
    partial = tmp_path / 'partial.csv'
    partial.write_text('transaction_id,product_id\nt1,milk\n')
    with pytest.raises(DataError, match='lacks columns'):
        io.read_transactions_csv(str(partial))


def test_frame_writer_provenance(tmp_path):
    path = tmp_path / 'sub' / 'table.csv'
    io.write_frame(str(path), pd.DataFrame({'a': [1.0, 2.5]}), 'abc123')
    lines = path.read_text().splitlines()
    assert lines[0] == f"# basketdemand {__version__} config abc123"
    assert lines[1:] == ['a', '1', '2.5']
    assert [p.name for p in path.parent.iterdir()] == ['table.csv']
    back = pd.read_csv(path, comment='#')
    assert back['a'].tolist() == [1.0, 2.5]


def test_matrix_writers(tmp_path):
    w = np.array([[0.0, 0.5], [0.5, 0.0]])
    io.write_coordinates(str(tmp_path / 'w.coo.csv'), w, ('milk', 'cream'), 'd')
    coo = pd.read_csv(tmp_path / 'w.coo.csv', comment='#')
    assert coo.to_dict(orient='records') == [{'row': 'milk', 'col': 'cream', 'value': 0.5},
                                             {'row': 'cream', 'col': 'milk', 'value': 0.5}]
    io.write_dense(str(tmp_path / 'w.csv'), w, ('milk', 'cream'), 'd')
    dense = pd.read_csv(tmp_path / 'w.csv', comment='#', index_col='product_id')
    np.testing.assert_array_equal(dense.to_numpy(), w)


def test_json_writers(tmp_path):
    io.write_json(str(tmp_path / 'out.json'), {'x': np.float64(0.1) + np.float64(0.2), 'bad': np.nan,
                                               'v': np.arange(3), 'n': np.int64(4)}, 'digest')
    body = json.loads((tmp_path / 'out.json').read_text())
    assert body['provenance'] == {'version': __version__, 'config-digest': 'digest'}
    assert body['x'] == 0.3
    assert body['bad'] is None
    assert body['v'] == [0, 1, 2]
    assert body['n'] == 4

    io.write_ndjson(str(tmp_path / 'out.ndjson'), ({'i': i} for i in range(2)), 'digest')
    lines = [json.loads(line) for line in (tmp_path / 'out.ndjson').read_text().splitlines()]
    assert lines == [{'provenance': {'version': __version__, 'config-digest': 'digest'}}, {'i': 0}, {'i': 1}]


def test_row_with_extra_fields(tmp_path, records):
    path = tmp_path / 'tx.csv'
    io.write_records_csv(str(path), records.head(6))
    lines = path.read_text().splitlines()
    lines[4] += ',surplus'
    path.write_text('\n'.join(lines) + '\n')
    with pytest.raises(DataError, match='line 5') as err:
        io.read_transactions_csv(str(path))
    assert err.value.rejects == [(5, 'malformed row')]
    assert err.value.exit_code == 1
