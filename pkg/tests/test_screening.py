import numpy as np
import pytest

from basketdemand import linalg, screening
from basketdemand.copurchase import TransactionLog
from basketdemand.errors import InvalidInputError


@pytest.fixture
def busy_log():
    """x and y are always bought together 3000 times; z is bought alone once."""
    s = np.zeros((3, 3001))
    s[:2, :3000] = 1.0
    s[2, 3000] = 1.0
    return TransactionLog.from_incidence(s, product_ids=('x', 'y', 'z'))


def test_singleton_counts(breakfast_log, busy_log):
    appearances, alone = screening.singleton_counts(breakfast_log)
    assert appearances.tolist() == [3, 4, 3]
    assert alone.tolist() == [0, 0, 0]
    appearances, alone = screening.singleton_counts(busy_log)
    assert appearances.tolist() == [3000, 3000, 1]
    assert alone.tolist() == [0, 0, 1]


def test_jeffreys_bound_sits_between_rules_of_thumb():
    bound = screening.jeffreys_upper_bound(0, 3000, 0.95)
    assert 1 / 3000 < bound < 3 / 3000
    assert bound == pytest.approx(3.8415 / (2 * 3000.5), rel=0.02)
    assert screening.jeffreys_upper_bound(0, 3000, 0.99) > bound
    assert screening.jeffreys_upper_bound(5, 3000, 0.95) > bound


def test_screen_verdicts(busy_log, breakfast_log):
    table = screening.singleton_screen(busy_log, confidence=0.95, threshold=0.001).set_index('product_id')
    assert table.loc['x', 'verdict'] == screening.NEVER
    assert table.loc['z', 'verdict'] == screening.OBSERVED
    assert table.loc['x', 'rule_of_three'] == pytest.approx(0.001)
    # too few appearances to rule anything out
    small = screening.singleton_screen(breakfast_log, confidence=0.95, threshold=0.001)
    assert (small['verdict'] == screening.INCONCLUSIVE).all()
    strict = screening.singleton_screen(busy_log, confidence=0.95, threshold=0.0001).set_index('product_id')
    assert strict.loc['x', 'verdict'] == screening.INCONCLUSIVE


@pytest.mark.parametrize('confidence, threshold', [(0.0, 0.01), (1.0, 0.01), (0.95, 0.0), (0.95, 1.5)])
def test_screen_rejects_bad_levels(breakfast_log, confidence, threshold):
    with pytest.raises(InvalidInputError):
        screening.singleton_screen(breakfast_log, confidence, threshold)


def test_screen_grid(busy_log):
    grid = screening.screen_grid(busy_log)
    assert len(grid) == 9
    totals = grid['never-singleton'] + grid['singleton-observed'] + grid['inconclusive']
    assert (totals == 3).all()
    assert (grid['singleton-observed'] == 1).all()


@pytest.fixture
def shop_log():
    # milk alone; milk+bread; bread+jam; milk+bread+jam; two milk+bread
    s = np.array([[1.0, 1.0, 0.0, 1.0, 2.0],
                  [0.0, 1.0, 1.0, 1.0, 1.0],
                  [0.0, 0.0, 1.0, 1.0, 0.0]])
    return TransactionLog.from_incidence(s, product_ids=('milk', 'bread', 'jam'))


def test_reduce_consideration_set(shop_log):
    cs = screening.reduce_consideration_set(shop_log)
    assert cs.good_labels == ('milk', 'bread', 'jam')
    assert cs.basket_labels[0] == 'single:milk'
    assert {tuple(col) for col in cs.a.T} == {(1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (0.0, 1.0, 1.0)}


def test_reduced_set_spans_every_transaction(shop_log):
    cs = screening.reduce_consideration_set(shop_log)
    for col in shop_log.quantities.toarray().T:
        assert linalg.nnls(cs.a, col).residual_norm <= 1e-8


def test_reduction_without_singletons_keeps_unique_transactions(breakfast_log):
    cs = screening.reduce_consideration_set(breakfast_log)
    assert cs.n_baskets == 4
    assert not any(label.startswith('single:') for label in cs.basket_labels)


def test_reduced_baskets_are_unique_when_goods_move_together(busy_log):
    cs = screening.reduce_consideration_set(busy_log)
    assert cs.basket_labels == ('single:z', 'basket0')
    assert np.unique(cs.a, axis=1).shape[1] == cs.n_baskets == 2
    # x and y share every basket, which a reduced set may keep
    assert np.array_equal(cs.a[0], cs.a[1])
