"""
Seeded synthetic point-of-sale logs with a known demand model behind them.

Each store-quarter market draws prices, solves basket demand with the demand module and turns basket intensities
into Poisson transaction counts. Every transaction also carries a constant-price carrier bag, and visits that buy
nothing else are bag-only, so the per-store-quarter visit count is fixed and quantity per transaction is an
unbiased, linear read of model demand. The bag is removed by the constant-price filter when the panel is built.

Prices are cost + a category-quarter cost shock + rho * the demand shock, so they are endogenous; the cost shock
is shared across stores, which makes competitor prices in other stores a valid instrument. Prices are not
equilibrium prices of any market conduct.

corner_heavy replaces the unit baskets with cyclic pairs and triples and alternates high- and low-utility goods,
so linear demand lies outside the basket cone and the non-negativity corners bind in nearly every market.
"""

from dataclasses import dataclass, field
from logging import getLogger

import numpy as np
import pandas as pd

from . import linalg
from .copurchase import TransactionLog
from .demand import solve_basket_demand
from .simulate import draw_rng

BAG = 'bag'


@dataclass(frozen=True)
class FixtureSpec:
    n_goods: int = 12
    n_stores: int = 4
    n_quarters: int = 8
    visits: int = 1000
    intensity: float = 0.01
    phi: float = -0.4
    alpha: float = 0.0
    rho: float = 0.6
    demand_noise: float = 0.3
    cost_noise: float = 0.4
    corner_heavy: bool = False
    start: str = '2020Q1'


@dataclass
class SyntheticMarket:
    records: pd.DataFrame
    truth: dict = field(default_factory=dict)

    @property
    def log(self):
        return TransactionLog.from_records(self.records)


def _shelves(spec):
    # corner-heavy markets alternate high- and low-utility goods, each kind on its own shelf
    return np.arange(spec.n_goods) % (2 if spec.corner_heavy else 3)


def _products(rng, spec):
    ids = [f"g{i:03d}" for i in range(spec.n_goods)]
    l3 = _shelves(spec)
    products = pd.DataFrame({'product_id': ids,
                             'category_l1': np.where(l3 < 2, 'food', 'home'),
                             'category_l2': [f"aisle{c // 2}" for c in l3],
                             'category_l3': [f"shelf{c}" for c in l3],
                             'private_label': (rng.random(spec.n_goods) < 0.3).astype(int),
                             'delta': rng.uniform(4.0, 6.0, spec.n_goods),
                             'cost': rng.uniform(1.5, 3.0, spec.n_goods)})
    if spec.corner_heavy:
        # a high good outweighs twice its low neighbours, so no basket reaches its linear demand
        low = l3 == 1
        products.loc[low, 'delta'] = rng.uniform(1.0, 1.5, int(low.sum()))
    return products


def _proxy(rng, k, alpha):
    """A sparse symmetric hollow W in [0, 1] and the inverse interaction matrix I + alpha W."""
    w = np.triu((rng.random((k, k)) < 0.2) * rng.uniform(0.2, 1.0, (k, k)), 1)
    w = w + w.T
    return w, np.eye(k) + alpha * w


def _baskets(k, corner_heavy):
    if not corner_heavy:
        return np.eye(k)
    # pairs and triples of neighbouring goods; no good can be bought on its own
    cols = []
    for i in range(k):
        pair = np.zeros(k)
        pair[[i, (i + 1) % k]] = 1.0
        triple = np.zeros(k)
        triple[[i, (i + 1) % k, (i + 2) % k]] = 1.0
        cols += [pair, triple]
    return np.column_stack(cols)


def synthetic_market(seed=0, spec=None, **overrides):
    """Build a synthetic log; overrides replace FixtureSpec fields. truth holds the primitives in panel units."""
    spec = spec or FixtureSpec()
    if overrides:
        spec = FixtureSpec(**{**spec.__dict__, **overrides})
    rng = draw_rng(seed, 0)
    products = _products(rng, spec)
    k = spec.n_goods
    w, h = _proxy(rng, k, spec.alpha)
    m = linalg.symmetrize(np.linalg.inv(h))
    a = _baskets(k, spec.corner_heavy)
    stores = [f"s{i}" for i in range(spec.n_stores)]
    quarters = pd.period_range(spec.start, periods=spec.n_quarters, freq='Q')
    cost_shock = rng.normal(0.0, spec.cost_noise, (3, spec.n_quarters))
    l3 = _shelves(spec)

    lines = []
    n_corner = 0
    for t, quarter in enumerate(quarters):
        day0 = quarter.start_time
        n_days = (quarter.end_time - quarter.start_time).days + 1
        for store in stores:
            xi = rng.normal(0.0, spec.demand_noise, k)
            price = products['cost'].to_numpy() + cost_shock[l3, t] + spec.rho * xi + rng.normal(0.0, 0.1, k)
            price = np.round(np.clip(price, 0.5, None), 2)
            intercept = products['delta'].to_numpy() + xi + spec.phi * price
            result = solve_basket_demand(a, m, intercept, enforce_nn=True)
            n_corner += int(result.lambda_active.any())
            counts = rng.poisson(spec.visits * spec.intensity * np.clip(result.z, 0.0, None))
            visits = max(spec.visits, int(counts.sum()))
            basket_of = np.concatenate([np.repeat(np.arange(a.shape[1]), counts),
                                        np.full(visits - counts.sum(), -1)])
            days = rng.integers(0, n_days, visits)
            for v, (j, d) in enumerate(zip(basket_of, days)):
                tid = f"{store}-{quarter}-{v:05d}"
                date = (day0 + pd.Timedelta(days=int(d))).strftime('%Y-%m-%d')
                lines.append((tid, store, date, BAG, 1.0, 0.1))
                if j >= 0:
                    for i in np.flatnonzero(a[:, j]):
                        lines.append((tid, store, date, products['product_id'][i], float(a[i, j]), float(price[i])))

    records = pd.DataFrame(lines, columns=['transaction_id', 'store_id', 'date', 'product_id', 'quantity',
                                           'unit_price'])
    info = products.set_index('product_id')[['category_l1', 'category_l2', 'category_l3', 'private_label']]
    info.loc[BAG] = ['home', 'aisle9', 'shelf9', 0]
    records = records.join(info, on='product_id')
    records['gross_value'] = records['quantity'] * records['unit_price']
    records['discount'] = 0.0
    records['private_label'] = records['private_label'].astype(int)

    truth = {'phi': spec.phi * spec.intensity, 'phi-model': spec.phi, 'alpha': spec.alpha, 'w': w, 'a': a, 'm': m,
             'goods': tuple(products['product_id']), 'intensity': spec.intensity,
             'corner-share': n_corner / (spec.n_stores * spec.n_quarters)}
    getLogger(__name__).info(f"synthetic market: {len(records)} lines, {records['transaction_id'].nunique()} "
                             f"transactions, corner share {truth['corner-share']:.2f}")
    return SyntheticMarket(records=records, truth=truth)
