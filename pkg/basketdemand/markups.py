"""
Mark-up analytics from a fitted demand model.

For each store-quarter market the fit implies a price Jacobian in raw units,

    J_m = (sd_q / sd_p) (diag(phi_bar + X eta) + sum_j (c_j / s_j) W_m^j)

with c_j the coefficient of the standardized lag W^j p and s_j its scale. Lerner indices follow from the Bertrand
first-order conditions with zero marginal cost; the tables built here feed the quarterly series, percentile bands,
fixed-basket indices and percentile transitions written by the estimate command.
"""

from logging import getLogger

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, NumericalError

PERCENTILES = (10, 25, 50, 75, 90)
MOVING_WINDOW = 4


def lerner_from_jacobian(jac, prices, quantities, g=None):
    """
    Lerner indices solving the zero-cost first-order conditions r_i + sum_k G_ik E_ki r_k L_k = 0, with E the
    elasticity matrix, r revenues and G the ownership pattern including its unit diagonal. With G = I this is
    L_i = -1/E_ii.
    """
    jac = np.asarray(jac, dtype=float)
    p = np.asarray(prices, dtype=float)
    q = np.asarray(quantities, dtype=float)
    if (q <= 0).any() or (p <= 0).any():
        raise DataError("Lerner indices need positive prices and quantities")
    k = p.size
    g = np.eye(k) if g is None else np.asarray(g, dtype=float)
    e = jac * p[None, :] / q[:, None]
    r = p * q
    system = (g * e.T) * r[None, :]
    try:
        return -np.linalg.solve(system, r)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"ownership-weighted elasticity matrix is singular: {err}") from err


def intensive_margin_jacobian(j_hat, s, eta_n):
    """Jacobian of total demand per transaction when participation responds too: J + s eta_N'."""
    return np.asarray(j_hat, dtype=float) + np.outer(np.asarray(s, dtype=float), np.asarray(eta_n, dtype=float))


def participation_gradient(delta, prices, revenue=None):
    """
    d ln N / d p_b for a participation elasticity delta on the log price index: the simple mean index gives
    delta / (n P), the revenue-weighted one (weights held fixed) delta w_b / P.
    """
    p = np.asarray(prices, dtype=float)
    if revenue is None:
        return np.full(p.size, delta / (p.size * p.mean()))
    w = np.asarray(revenue, dtype=float)
    w = w / w.sum()
    return delta * w / (w @ p)


def market_jacobian(fit, design, rows):
    """Implied raw-unit price Jacobian for the design rows of one market."""
    coef = fit.coefficients
    goods = design.goods[rows]
    own = np.full(rows.size, fit.phi_bar)
    eta = fit.price_interactions
    if eta.size:
        own = own + design.interaction_scores[rows] @ eta.to_numpy()
    jac = np.diag(own)
    if design.w is not None:
        w_m = design.w[np.ix_(goods, goods)]
        power = np.eye(goods.size)
        for j in range(1, design.j_max + 1):
            power = power @ w_m
            name = f"W{j}:price"
            if name in coef.index:
                jac = jac + coef[name] / design.lag_scales.get(name, 1.0) * power
    return design.y_scale / design.price_scale * jac


def _ownership(kind, n):
    if kind == 'singleton':
        return np.eye(n)
    if kind == 'store':
        return np.ones((n, n))
    raise ConfigError(f"unknown ownership assumption {kind!r}")


def markups(fit, design, panel, ownership='singleton', participation=None):
    """
    Per-(good, store, quarter) elasticities and Lerner indices. Goods with a nonnegative own elasticity are
    flagged and dropped from their market before solving. participation, when given, is the participation
    elasticity and adds the extensive margin through intensive_margin_jacobian.
    """
    frame = panel.frame.iloc[design.rows].reset_index(drop=True)
    out = frame[['product_id', 'store_id', 'quarter', 'category_l3', 'price', 'quantity', 'revenue']].copy()
    out['own_elasticity'] = np.nan
    out['lerner'] = np.nan
    out['excluded'] = False
    excluded = []
    for market in pd.unique(design.markets):
        rows = np.flatnonzero(design.markets == market)
        p = frame['price'].to_numpy()[rows]
        q = frame['quantity'].to_numpy()[rows]
        jac = market_jacobian(fit, design, rows)
        if participation is not None:
            jac = intensive_margin_jacobian(jac, q, participation_gradient(participation, p))
        own = np.diag(jac) * p / q
        out.loc[rows, 'own_elasticity'] = own
        keep = own < 0
        if not keep.all():
            out.loc[rows[~keep], 'excluded'] = True
            excluded += frame['product_id'].to_numpy()[rows[~keep]].tolist()
        if keep.any():
            sub = np.ix_(keep, keep)
            out.loc[rows[keep], 'lerner'] = lerner_from_jacobian(jac[sub], p[keep], q[keep],
                                                                _ownership(ownership, int(keep.sum())))
    if excluded:
        getLogger(__name__).warning(f"{len(excluded)} cells with nonnegative own elasticity excluded from mark-ups, "
                                    f"goods {sorted(set(excluded))}")
    kept = ~out['excluded']
    out['weight'] = 0.0
    out.loc[kept, 'weight'] = out.loc[kept, 'revenue'] / out.loc[kept].groupby('quarter')['revenue'].transform('sum')
    getLogger(__name__).info(f"mark-ups for {int(kept.sum())} cells, mean Lerner {out.loc[kept, 'lerner'].mean():.4f}")
    return out


def _weighted_quantile(values, weights, q):
    order = np.argsort(values, kind='stable')
    v, w = values[order], weights[order]
    cum = np.cumsum(w) - 0.5 * w
    return float(np.interp(q / 100.0 * w.sum(), cum, v))


def quarterly_series(table, by=()):
    """Revenue-weighted mean mark-up with percentile bands and its four-quarter moving average."""
    data = table[~table['excluded']]
    keys = list(by) + ['quarter']
    records = []
    for key, group in data.groupby(keys, sort=True):
        key = key if isinstance(key, tuple) else (key,)
        values, weights = group['lerner'].to_numpy(), group['revenue'].to_numpy()
        row = dict(zip(keys, key))
        row['mean'] = float(np.average(values, weights=weights))
        row['n'] = len(group)
        for pct in PERCENTILES:
            row[f"p{pct}"] = _weighted_quantile(values, weights, pct)
        records.append(row)
    series = pd.DataFrame.from_records(records)
    if series.empty:
        raise DataError("no mark-ups left to summarize")
    if by:
        series['moving_average'] = series.groupby(list(by))['mean'].transform(
            lambda s: s.rolling(MOVING_WINDOW, min_periods=1).mean())
    else:
        series['moving_average'] = series['mean'].rolling(MOVING_WINDOW, min_periods=1).mean()
    return series


def markup_indices(table):
    """
    Fixed-basket mark-up indices over (good, store) items. Laspeyres holds the first quarter's revenue shares,
    Paasche the last quarter's; each quarter renormalizes over the base items present and counts the items it
    had to drop because they are absent from the base quarter.
    """
    data = table[~table['excluded']]
    quarters = sorted(data['quarter'].unique())
    if len(quarters) < 2:
        raise DataError(f"mark-up indices need at least 2 quarters, got {len(quarters)}")
    items = data.set_index(['product_id', 'store_id'])

    def base_weights(quarter):
        rev = items.loc[items['quarter'] == quarter, 'revenue']
        return rev / rev.sum()

    records = []
    bases = {'laspeyres': base_weights(quarters[0]), 'paasche': base_weights(quarters[-1])}
    for quarter in quarters:
        current = items.loc[items['quarter'] == quarter, 'lerner']
        row = {'quarter': quarter}
        for name, w in bases.items():
            common = current.index.intersection(w.index)
            row[name] = float((w[common] * current[common]).sum() / w[common].sum()) if len(common) else np.nan
            row[f"{name}_dropped"] = int(len(current.index.difference(w.index)))
        records.append(row)
    return pd.DataFrame.from_records(records)


def percentile_transitions(table, n_bins=5, category='category_l3'):
    """
    Assign each (good, store) a mark-up percentile bin within its category every quarter and pool the transitions
    between adjacent quarters. Rows are normalized to sum to one; a bin never left stays NaN.
    """
    data = table[~table['excluded']].copy()
    data['bin'] = data.groupby(['quarter', category])['lerner'].transform(
        lambda s: np.minimum(np.ceil(s.rank(pct=True, method='average') * n_bins) - 1, n_bins - 1)).astype(int)
    data['period'] = pd.PeriodIndex(data['quarter'], freq='Q').astype('int64')
    nxt = data[['product_id', 'store_id', 'period', 'bin']].copy()
    nxt['period'] -= 1
    pairs = data.merge(nxt, on=['product_id', 'store_id', 'period'], suffixes=('', '_next'))
    counts = np.zeros((n_bins, n_bins))
    np.add.at(counts, (pairs['bin'].to_numpy(), pairs['bin_next'].to_numpy()), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, totals, out=np.full_like(counts, np.nan), where=totals > 0)
    labels = [f"bin{i}" for i in range(n_bins)]
    return pd.DataFrame(matrix, index=labels, columns=labels)


def price_index(panel, by=()):
    """Revenue-weighted nominal price index per quarter (and per any extra keys)."""
    frame = panel.frame.assign(_pw=panel.frame['price'] * panel.frame['revenue'])
    keys = list(by) + ['quarter']
    agg = frame.groupby(keys, sort=True).agg(_pw=('_pw', 'sum'), revenue=('revenue', 'sum'),
                                             simple=('price', 'mean'))
    agg['revenue_weighted'] = agg['_pw'] / agg['revenue']
    return agg.drop(columns='_pw').reset_index()
