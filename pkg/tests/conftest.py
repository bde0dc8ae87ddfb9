import numpy as np
import pandas as pd
import pytest

from basketdemand import linalg
from basketdemand.copurchase import TransactionLog

BREAKFAST_A = np.array([[2.0, 0.0, 1.0, 2.0],
                  [2.0, 2.0, 2.0, 4.0],
                  [0.0, 2.0, 1.0, 2.0]])

CONTEXT_M_INV = np.array([[1.140, -0.107, -0.370],
                       [-0.107, 1.030, -0.107],
                       [-0.370, -0.107, 1.140]])

CONTEXT_SIGMA = np.array([[0.884, 0.257, -0.627],
                       [0.257, 0.514, 0.257],
                       [-0.627, 0.257, 0.884]])


@pytest.fixture
def breakfast_a():
    return BREAKFAST_A.copy()


@pytest.fixture
def uniform_m():
    return 0.1 * np.ones((3, 3)) + 0.9 * np.eye(3)


@pytest.fixture
def context_m():
    return linalg.symmetrize(np.linalg.inv(CONTEXT_M_INV))


@pytest.fixture
def context_sigma():
    return CONTEXT_SIGMA.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pd(rng, k, spread=0.3):
    b = rng.normal(0.0, spread, (k, k))
    return linalg.symmetrize(np.eye(k) + b @ b.T)


def random_baskets(rng, k, j, full_row_rank=False):
    """Nonnegative integer K x J matrix with no zero rows or columns."""
    while True:
        a = rng.integers(0, 3, (k, j)).astype(float)
        a[:, ~a.any(axis=0)] = 1.0
        a[~a.any(axis=1), 0] = 1.0
        if not full_row_rank or np.linalg.matrix_rank(a) == k:
            return a


@pytest.fixture
def breakfast_log():
    """The four baskets of the milk/bacon/pasta example as a transaction log."""
    return TransactionLog.from_incidence(BREAKFAST_A, product_ids=('milk', 'bacon', 'pasta'),
                                         transaction_ids=('breakfast', 'dinner', 'weekly-a', 'weekly-b'))


def make_records(rows):
    """Transaction records in the CSV schema from (transaction, store, date, product, qty, price, l3) tuples."""
    df = pd.DataFrame(rows, columns=['transaction_id', 'store_id', 'date', 'product_id', 'quantity', 'unit_price',
                                     'category_l3'])
    df['category_l1'] = 'food'
    df['category_l2'] = 'aisle'
    df['private_label'] = 0
    df['gross_value'] = df['quantity'] * df['unit_price']
    df['discount'] = 0.0
    return df


@pytest.fixture(scope='session')
def market():
    """A synthetic log strong enough for the price coefficient to be recovered."""
    from basketdemand.fixtures import synthetic_market
    return synthetic_market(seed=3, n_stores=6, n_quarters=12, cost_noise=0.8, demand_noise=0.1)


@pytest.fixture(scope='session')
def market_panel(market):
    from basketdemand.panel import PanelFilters, build_panel
    return build_panel(market.log, PanelFilters(min_transactions=10))
