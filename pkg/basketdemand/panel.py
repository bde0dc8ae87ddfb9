"""
Market panel construction for the estimation pipeline.

Transaction lines are filtered, aggregated to (good, store, quarter) cells and turned into standardized covariates,
Hausman-style instruments and per-market spatial lags through the co-purchase proxy.

Filters, applied in order on the raw lines:
    min-transactions   goods seen in fewer than the minimum number of transactions
    zero-price         goods ever sold at a zero unit price
    constant-price     goods whose unit price never varies
    no-competitor      cells with no close competitor priced in another store that quarter
"""

from dataclasses import dataclass, field
from logging import getLogger

import numpy as np
import pandas as pd

from .errors import DataError

CATEGORY_LEVELS = ('category_l1', 'category_l2', 'category_l3')
KEY = ['product_id', 'store_id', 'quarter']


@dataclass(frozen=True)
class PanelFilters:
    min_transactions: int = 100
    drop_zero_price: bool = True
    drop_constant_price: bool = True
    require_competitor: bool = True

    @classmethod
    def from_settings(cls, config):
        p = config.section('panel')
        return cls(min_transactions=p['min-transactions'], drop_zero_price=p['drop-zero-price'],
                   drop_constant_price=p['drop-constant-price'], require_competitor=p['require-competitor'])


@dataclass
class MarketPanel:
    """
    One row per (good, store, quarter). quantity is units per store-quarter transaction; units is the raw total.
    good is the integer position of product_id in goods, market the store|quarter label.
    """
    frame: pd.DataFrame
    goods: tuple
    covariate_columns: list
    fe_columns: list
    instrument_columns: list
    attrition: dict = field(default_factory=dict)

    @property
    def n_obs(self):
        return len(self.frame)

    @property
    def quarters(self):
        return sorted(self.frame['quarter'].unique())


def standardize(x):
    """
    Column-wise (x - mean) / sd with population sd. Constant columns become zero.
    Returns the standardized array with the means and sds used.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = x.reshape(len(x), -1)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    constant = sd <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    z = np.where(constant, 0.0, (x - mean) / np.where(constant, 1.0, sd))
    sd = np.where(constant, 1.0, sd)
    return (z.ravel() if squeeze else z), mean, sd


def _drop_goods(df, goods, attrition, name):
    mask = df['product_id'].isin(goods)
    attrition[name] = int(mask.sum())
    if mask.any():
        getLogger(__name__).info(f"filter {name}: removed {int(mask.sum())} lines ({len(set(goods))} goods)")
    return df[~mask]


def _competitor_price(cells):
    """Mean price of same-category_l3 competitors in the other stores during the same quarter."""
    by_cat = cells.groupby(['category_l3', 'quarter'])['price'].agg(['sum', 'count'])
    by_store = cells.groupby(['category_l3', 'quarter', 'store_id'])['price'].agg(['sum', 'count'])
    by_good = cells.groupby(['product_id', 'quarter'])['price'].agg(['sum', 'count'])
    cat = by_cat.reindex(pd.MultiIndex.from_frame(cells[['category_l3', 'quarter']])).to_numpy()
    store = by_store.reindex(pd.MultiIndex.from_frame(cells[['category_l3', 'quarter', 'store_id']])).to_numpy()
    good = by_good.reindex(pd.MultiIndex.from_frame(cells[['product_id', 'quarter']])).to_numpy()
    own = cells['price'].to_numpy()
    total = cat[:, 0] - store[:, 0] - (good[:, 0] - own)
    count = cat[:, 1] - store[:, 1] - (good[:, 1] - 1)
    return np.where(count > 0, total / np.where(count > 0, count, 1), np.nan)


def _lagged(cells, column):
    """Previous quarter's value of column for the same good and store; the current value when there is none."""
    prev = cells[KEY + [column]].copy()
    prev['quarter'] = (pd.PeriodIndex(prev['quarter'], freq='Q') + 1).astype(str)
    merged = cells[KEY].merge(prev, on=KEY, how='left')
    return merged[column].fillna(cells[column].reset_index(drop=True)).to_numpy()


def build_panel(log, filters=None):
    """Filter, aggregate and instrument a transaction log's records into a MarketPanel."""
    filters = filters or PanelFilters()
    if log.records is None:
        raise DataError("the transaction log carries no records to build a panel from")
    df = log.records.copy()
    attrition = {'input-rows': len(df)}
    df['quarter'] = pd.to_datetime(df['date']).dt.to_period('Q').astype(str)
    participation = df.groupby(['store_id', 'quarter'])['transaction_id'].nunique().rename('n_transactions')

    counts = df.groupby('product_id')['transaction_id'].nunique()
    df = _drop_goods(df, counts.index[counts < filters.min_transactions], attrition, 'min-transactions')
    zero = df.loc[df['unit_price'] <= 0, 'product_id'].unique() if filters.drop_zero_price else []
    df = _drop_goods(df, zero, attrition, 'zero-price')
    spread = df.groupby('product_id')['unit_price'].nunique()
    constant = spread.index[spread <= 1] if filters.drop_constant_price else []
    df = _drop_goods(df, constant, attrition, 'constant-price')

    df = df.assign(revenue=df['quantity'] * df['unit_price'])
    cells = (df.groupby(KEY, sort=True)
             .agg(units=('quantity', 'sum'), revenue=('revenue', 'sum'), n_rows=('quantity', 'size'),
                  category_l1=('category_l1', 'first'), category_l2=('category_l2', 'first'),
                  category_l3=('category_l3', 'first'), private_label=('private_label', 'max'))
             .reset_index())
    cells = cells[cells['units'] > 0].reset_index(drop=True)
    cells['price'] = cells['revenue'] / cells['units']
    cells = cells.merge(participation.reset_index(), on=['store_id', 'quarter'], how='left')
    cells['quantity'] = cells['units'] / cells['n_transactions']

    cells['z_competitor_price'] = _competitor_price(cells)
    if filters.require_competitor:
        missing = cells['z_competitor_price'].isna()
        attrition['no-competitor'] = int(cells.loc[missing, 'n_rows'].sum())
        cells = cells[~missing].reset_index(drop=True)
    else:
        attrition['no-competitor'] = 0
        cells['z_competitor_price'] = cells['z_competitor_price'].fillna(cells['price'].mean())
    attrition['zero-quantity'] = attrition['input-rows'] - sum(v for k, v in attrition.items() if k != 'input-rows') \
        - int(cells['n_rows'].sum())
    attrition['kept-rows'] = int(cells['n_rows'].sum())

    if cells.empty:
        raise DataError(f"panel is empty after filtering: {attrition}", attrition=attrition)

    cells['z_competitor_price_lag'] = _lagged(cells, 'z_competitor_price')
    instruments = ['z_competitor_price', 'z_competitor_price_lag']
    for level in CATEGORY_LEVELS:
        name = f"z_competitors_{level[-2:]}"
        cells[name] = cells.groupby(['store_id', 'quarter', level])['product_id'].transform('size') - 1.0
        cells[f"{name}_lag"] = _lagged(cells, name)
        instruments += [name, f"{name}_lag"]

    cells['store_presence'] = cells.groupby(['product_id', 'quarter'])['store_id'].transform('nunique').astype(float)
    dummies = [pd.get_dummies(cells[level], prefix=level[-2:], drop_first=True, dtype=float) for level in CATEGORY_LEVELS]
    store_fe = pd.get_dummies(cells['store_id'], prefix='store', drop_first=True, dtype=float)
    quarter_fe = pd.get_dummies(cells['quarter'], prefix='quarter', drop_first=True, dtype=float)
    cells['private_label'] = cells['private_label'].astype(float)
    cells = pd.concat([cells] + dummies + [store_fe, quarter_fe], axis=1)

    goods = tuple(sorted(cells['product_id'].unique()))
    cells['good'] = pd.Index(goods).get_indexer(cells['product_id'])
    cells['market'] = cells['store_id'].astype(str) + '|' + cells['quarter']
    covariates = [c for d in dummies for c in d.columns] + ['private_label', 'store_presence']
    fe = list(store_fe.columns) + list(quarter_fe.columns)
    getLogger(__name__).info(f"panel built: {len(cells)} cells, {len(goods)} goods, "
                             f"{cells['market'].nunique()} markets, attrition {attrition}")
    return MarketPanel(frame=cells, goods=goods, covariate_columns=covariates, fe_columns=fe,
                       instrument_columns=instruments, attrition=attrition)


def proxy_matrix(w, which='s'):
    return np.asarray(w.select(which) if hasattr(w, 'select') else w, dtype=float)


def spatial_lags(w, x, goods, markets, j_max=2, standardize_lags=True, names=None):
    """
    W^j x for j = 1..j_max computed market by market. Goods absent from a market have their rows and columns of W
    zeroed for that market. Returns the lag block and its column names.
    """
    w = proxy_matrix(w)
    x = np.asarray(x, dtype=float)
    x = x.reshape(len(x), -1)
    goods = np.asarray(goods, dtype=int)
    markets = np.asarray(markets)
    if j_max < 1:
        raise DataError(f"j_max must be at least 1, got {j_max}")
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DataError(f"proxy matrix must be square, got shape {w.shape}")
    if goods.size != x.shape[0] or markets.size != x.shape[0]:
        raise DataError("goods, markets and design rows differ in length")
    if goods.size and (goods.min() < 0 or goods.max() >= w.shape[0]):
        raise DataError(f"good indices exceed the {w.shape[0]}x{w.shape[0]} proxy matrix")
    if np.abs(np.diag(w)).max(initial=0.0) > 0:
        raise DataError("proxy matrix must have a hollow diagonal")

    n_cols = x.shape[1]
    out = np.zeros((x.shape[0], n_cols * j_max))
    for market in pd.unique(markets):
        rows = np.flatnonzero(markets == market)
        g = goods[rows]
        if np.unique(g).size != g.size:
            raise DataError(f"market {market} lists a good more than once")
        present = np.zeros(w.shape[0], dtype=bool)
        present[g] = True
        w_m = w * np.outer(present, present)
        current = np.zeros((w.shape[0], n_cols))
        current[g] = x[rows]
        for j in range(j_max):
            current = w_m @ current
            out[rows, j * n_cols:(j + 1) * n_cols] = current[g]
    if standardize_lags:
        out = standardize(out)[0]
    names = names or [f"x{i}" for i in range(n_cols)]
    columns = [f"W{j + 1}:{name}" for j in range(j_max) for name in names]
    return out, columns


@dataclass(frozen=True)
class PcaResult:
    scores: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    explained: np.ndarray
    n_kept: int
    price_components: tuple
    all_loadings: np.ndarray
    mean: np.ndarray

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) @ self.loadings

    def reconstruct(self, x):
        """Project onto every component and back; recovers x exactly up to rounding."""
        centered = np.asarray(x, dtype=float) - self.mean
        return centered @ self.all_loadings @ self.all_loadings.T + self.mean


def pca_reduce(x, variance_target=0.9, n_price_components=10):
    """
    Principal components of a standardized design, keeping the shortest eigenvalue-sorted prefix whose share of
    total variance reaches variance_target. The leading n_price_components of those are flagged for price
    interactions.
    """
    x = np.asarray(x, dtype=float)
    x = x.reshape(len(x), -1)
    if not 0 < variance_target <= 1:
        raise DataError(f"variance target must lie in (0, 1], got {variance_target}")
    if x.shape[0] < 2 or not (x.std(axis=0) > 0).any():
        raise DataError("design has no varying column to take principal components of")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(vals, kind='stable')[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    explained = np.cumsum(vals) / vals.sum()
    n_kept = int(min(np.searchsorted(explained, variance_target - 1e-12) + 1, vals.size))
    loadings = vecs[:, :n_kept]
    getLogger(__name__).info(f"pca: kept {n_kept} of {vals.size} components ({100 * explained[n_kept - 1]:.1f}% variance)")
    return PcaResult(scores=centered @ loadings, loadings=loadings, eigenvalues=vals, explained=explained,
                     n_kept=n_kept, price_components=tuple(range(min(n_price_components, n_kept))),
                     all_loadings=vecs, mean=mean)
