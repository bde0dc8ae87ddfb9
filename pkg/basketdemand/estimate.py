"""
Instrumented demand estimation on a MarketPanel.

The estimating equation, in standardized units and per store-quarter market m, is

    q = X b + phi p + (X eta) p + sum_j W_m^j (X b_j + phi_j p) + e

with X the principal components of the covariates (plus fixed effects), W the co-purchase proxy and price
instrumented by competitor prices in other stores and their lags. tsls_fit estimates it with linearmodels IV2SLS
under store x quarter clustered errors; instruments that add no rank beyond the controls are dropped first.

nn_control_function_fit moves the part of fitted demand that lies outside the basket cone into the dependent
variable and refits until the correction settles. lf_grid_fit instead evaluates the projected model on a grid of
lag coefficients.

participation_elasticity is the store-level first-difference IV of transaction counts on the price index.

TODO: - cluster-robust Anderson-Rubin intervals for participation_elasticity (only HC1 is implemented)
"""

from dataclasses import dataclass, field, replace
from functools import partial
from logging import getLogger

import numpy as np
import pandas as pd
from linearmodels.iv import IV2SLS

from . import linalg
from .errors import ConfigError, DataError, IdentificationError, NumericalError
from .panel import pca_reduce, proxy_matrix, spatial_lags, standardize

RANK_REL_TOL = 1e-10
MIN_PARTICIPATION_OBS = 8


@dataclass(frozen=True)
class EstimationSettings:
    variance_target: float = 0.9
    n_price_components: int = 10
    j_max: int = 2
    proxy: str = 'auto'
    include_fe: bool = True
    cluster_key: tuple = ('store_id', 'quarter')
    max_rounds: int = 10
    tol: float = 1e-6
    lf_form: str = 'exact'
    alpha_grid: tuple = ()

    @classmethod
    def from_settings(cls, config):
        e = config.section('estimate')
        return cls(variance_target=e['pca-variance-target'], n_price_components=e['price-components'],
                   j_max=e['j-max'], proxy=e['proxy'], include_fe=e['include-fe'],
                   cluster_key=tuple(e['cluster-key']), max_rounds=e['max-rounds'], tol=e['cf-tol'],
                   lf_form=e['lf-projector'], alpha_grid=tuple(tuple(np.atleast_1d(a)) for a in e['alpha-grid']))


@dataclass
class Design:
    """
    Everything a fit needs, aligned row by row. goods, markets and w are only required by the lag-aware fits and by
    the mark-up Jacobian; lag_scales maps a lag column name to the sd it was divided by.
    """
    y: np.ndarray
    exog: np.ndarray
    exog_names: list
    endog: np.ndarray
    endog_names: list
    instruments: np.ndarray
    instrument_names: list
    clusters: np.ndarray
    goods: np.ndarray = None
    markets: np.ndarray = None
    w: np.ndarray = None
    j_max: int = 0
    y_mean: float = 0.0
    y_scale: float = 1.0
    price_mean: float = 0.0
    price_scale: float = 1.0
    lag_scales: dict = field(default_factory=dict)
    interaction_scores: np.ndarray = None
    n_components_kept: int = 0
    rows: np.ndarray = None

    @classmethod
    def from_arrays(cls, y, exog, endog, instruments, clusters=None, exog_names=None, endog_names=None,
                    instrument_names=None, **kwargs):
        y = np.asarray(y, dtype=float).ravel()
        n = y.size
        exog, endog, instruments = (np.asarray(b, dtype=float).reshape(n, -1) for b in (exog, endog, instruments))
        clusters = np.arange(n) if clusters is None else pd.factorize(np.asarray(clusters))[0]
        return cls(y=y, exog=exog, exog_names=exog_names or [f"x{i}" for i in range(exog.shape[1])],
                   endog=endog, endog_names=endog_names or (['price'] + [f"endog{i}" for i in range(1, endog.shape[1])]),
                   instruments=instruments,
                   instrument_names=instrument_names or [f"z{i}" for i in range(instruments.shape[1])],
                   clusters=clusters, rows=np.arange(n), **kwargs)

    @property
    def n_obs(self):
        return self.y.size

    def with_y(self, y):
        return replace(self, y=np.asarray(y, dtype=float))

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        pick = {}
        for name in ('y', 'exog', 'endog', 'instruments', 'clusters', 'goods', 'markets', 'interaction_scores', 'rows'):
            value = getattr(self, name)
            pick[name] = None if value is None else value[mask]
        return replace(self, **pick)

    def without_lags(self):
        keep = {}
        for block, names in (('exog', 'exog_names'), ('endog', 'endog_names'), ('instruments', 'instrument_names')):
            mask = np.array([not n.startswith('W') for n in getattr(self, names)], dtype=bool)
            keep[block] = getattr(self, block)[:, mask]
            keep[names] = [n for n, m in zip(getattr(self, names), mask) if m]
        return replace(self, j_max=0, lag_scales={}, **keep)


@dataclass
class FitResult:
    coefficients: pd.Series
    std_errors: pd.Series
    covariance: np.ndarray
    r2: float
    adj_r2: float
    wald_f: float
    wald_df: tuple
    wald_pvalue: float
    dwh_chi2: float
    dwh_df: int
    dwh_pvalue: float
    first_stage_f: dict
    n_obs: int
    n_clusters: int
    rss: float
    fitted: np.ndarray
    residuals: np.ndarray
    n_components_kept: int = 0
    alphas: dict = field(default_factory=dict)
    correction_residual: np.ndarray = None
    converged: bool = True
    rounds: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    label: str = 'base'

    @property
    def phi_bar(self):
        return float(self.coefficients.get('price', np.nan))

    @property
    def price_interactions(self):
        return self.coefficients[[n for n in self.coefficients.index if n.startswith('price:')]]

    def diagnostics(self):
        return {'adj-r2': self.adj_r2, 'r2': self.r2, 'wald-f': self.wald_f, 'wald-df': list(self.wald_df),
                'wald-p': self.wald_pvalue, 'dwh-chi2': self.dwh_chi2, 'dwh-df': self.dwh_df,
                'dwh-p': self.dwh_pvalue, 'first-stage-f': self.first_stage_f, 'n-obs': self.n_obs,
                'n-clusters': self.n_clusters, 'n-components-kept': self.n_components_kept,
                'converged': self.converged, 'rounds': self.rounds, 'warnings': self.warnings}

    def to_json(self):
        return {'label': self.label,
                'phi-bar': self.phi_bar,
                'alphas': {str(k): v for k, v in self.alphas.items()},
                'coefficients': {name: {'estimate': float(b), 'std-error': float(self.std_errors[name])}
                                 for name, b in self.coefficients.items()},
                'diagnostics': self.diagnostics()}


def _rank(m):
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > RANK_REL_TOL * s[0])) if s[0] > 0 else 0


def _deficient_columns(m, names):
    """Columns that add nothing to the rank of the columns before them."""
    bad, rank = [], 0
    for i, name in enumerate(names):
        r = _rank(m[:, :i + 1])
        if r == rank:
            bad.append(name)
        rank = r
    return bad


def _informative_instruments(exog, z):
    """Indices of the excluded instruments that add rank beyond exog and the instruments kept before them."""
    keep, base = [], exog
    rank = _rank(base)
    for i in range(z.shape[1]):
        trial = np.column_stack([base, z[:, i]])
        r = _rank(trial)
        if r > rank:
            keep.append(i)
            base, rank = trial, r
    return keep


def _iv_model(y, exog, exog_names, endog, endog_names, instruments, instrument_names):
    frame = partial(pd.DataFrame, index=pd.RangeIndex(y.size))
    return IV2SLS(pd.Series(y, name='y'), frame(exog, columns=list(exog_names)),
                  frame(endog, columns=list(endog_names)) if endog.shape[1] else None,
                  frame(instruments, columns=list(instrument_names)) if endog.shape[1] else None)


def tsls_fit(design, label='base'):
    """2SLS with store x quarter cluster-robust covariance, adjusted R^2, Wald F and Durbin-Wu-Hausman."""
    y, exog, endog, z = design.y, design.exog, design.endog, design.instruments
    n = y.size
    names = list(design.exog_names) + list(design.endog_names)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(exog)) and np.all(np.isfinite(endog))
            and np.all(np.isfinite(z))):
        raise DataError("design contains NaN or Inf entries")
    keep = _informative_instruments(exog, z)
    if len(keep) < endog.shape[1]:
        raise IdentificationError(f"{len(keep)} informative instruments for {endog.shape[1]} endogenous columns",
                                  columns=design.endog_names)
    if len(keep) < z.shape[1]:
        dropped = [nm for i, nm in enumerate(design.instrument_names) if i not in keep]
        getLogger(__name__).debug(f"instruments without rank beyond the controls dropped: {dropped}")
    z = z[:, keep]
    instrument_names = [design.instrument_names[i] for i in keep]
    n_clusters = int(np.unique(design.clusters).size)
    if n_clusters < 2:
        raise IdentificationError("cluster-robust covariance needs at least two clusters")

    zz = np.column_stack([exog, z])
    v = endog - zz @ np.linalg.lstsq(zz, endog, rcond=None)[0] if endog.shape[1] else endog
    x_hat = np.column_stack([exog, endog - v])
    if _rank(x_hat) < x_hat.shape[1]:
        bad = _deficient_columns(x_hat, names)
        raise IdentificationError(f"first stage is rank deficient in {bad}", columns=bad)

    model = _iv_model(y, exog, design.exog_names, endog, design.endog_names, z, instrument_names)
    try:
        res = model.fit(cov_type='clustered', clusters=np.asarray(design.clusters), debiased=True)
    except ValueError as e:
        raise IdentificationError(f"2SLS rejected the design: {e}") from e
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"2SLS solve failed: {e}") from e

    u = res.resids.to_numpy()
    wald = res.f_statistic
    dwh, dwh_p = np.nan, np.nan
    first_stage = {}
    # an instrument that reproduces its regressor leaves no first-stage error to test
    exact = np.linalg.norm(v, axis=0) <= 1e-10 * np.maximum(np.linalg.norm(endog, axis=0), 1.0)
    if endog.shape[1] and not exact.any():
        durbin = res.durbin()
        dwh, dwh_p = float(durbin.stat), float(durbin.pval)
        first_stage = {nm: float(f) for nm, f in res.first_stage.diagnostics['f.stat'].items()}
    elif endog.shape[1]:
        first_stage = {nm: np.inf if e else np.nan for nm, e in zip(design.endog_names, exact)}

    result = FitResult(coefficients=res.params[names], std_errors=res.std_errors[names],
                       covariance=res.cov.loc[names, names].to_numpy(), r2=float(res.rsquared),
                       adj_r2=float(res.rsquared_adj), wald_f=float(wald.stat),
                       wald_df=(int(wald.df), int(wald.df_denom)), wald_pvalue=float(wald.pval), dwh_chi2=dwh,
                       dwh_df=int(endog.shape[1]), dwh_pvalue=dwh_p, first_stage_f=first_stage, n_obs=n,
                       n_clusters=n_clusters, rss=float(u @ u), fitted=res.fitted_values.to_numpy().ravel(),
                       residuals=u, n_components_kept=design.n_components_kept, label=label)
    result.alphas = implied_alphas(result, design)
    getLogger(__name__).info(f"2SLS {label}: n={n}, k={len(names)}, phi_bar={result.phi_bar:.4g}, "
                             f"adj R2={result.adj_r2:.4f}")
    return result


def implied_alphas(fit, design):
    """alpha_j = (coefficient of W^j p / its scale) / phi_bar."""
    phi = fit.coefficients.get('price', np.nan)
    alphas = {}
    for j in range(1, design.j_max + 1):
        name = f"W{j}:price"
        if name in fit.coefficients.index and phi != 0 and np.isfinite(phi):
            alphas[j] = float(fit.coefficients[name] / design.lag_scales.get(name, 1.0) / phi)
    return alphas


def build_design(panel, proxy=None, settings=None, which=None):
    """
    Standardize the panel, reduce covariates by PCA, form price interactions with the leading components and
    append spatial lags of components, price and instruments when a proxy is given.
    """
    settings = settings or EstimationSettings()
    frame = panel.frame
    n = len(frame)
    covariates, _, _ = standardize(frame[panel.covariate_columns].to_numpy(dtype=float))
    pca = pca_reduce(covariates, settings.variance_target, settings.n_price_components)
    scores = pca.scores
    y, y_mean, y_scale = standardize(frame['quantity'].to_numpy(dtype=float))
    price, price_mean, price_scale = standardize(frame['price'].to_numpy(dtype=float))
    z, _, _ = standardize(frame[panel.instrument_columns].to_numpy(dtype=float))
    inter = scores[:, list(pca.price_components)]

    pc_names = [f"pc{i}" for i in range(pca.n_kept)]
    exog = [np.ones((n, 1)), scores]
    exog_names = ['const'] + pc_names
    if settings.include_fe and panel.fe_columns:
        exog.append(frame[panel.fe_columns].to_numpy(dtype=float))
        exog_names += list(panel.fe_columns)
    endog = [price[:, None], price[:, None] * inter]
    endog_names = ['price'] + [f"price:pc{i}" for i in pca.price_components]
    instruments = [z, z[:, :1] * inter]
    instrument_names = list(panel.instrument_columns) + [f"{panel.instrument_columns[0]}:pc{i}"
                                                        for i in pca.price_components]

    goods = frame['good'].to_numpy()
    markets = frame['market'].to_numpy()
    w = None
    lag_scales = {}
    if proxy is not None and settings.j_max > 0:
        w = proxy_align(proxy, panel.goods, which or settings.proxy)
        for block, values, names in ((exog, scores, pc_names), (endog, price[:, None], ['price']),
                                     (instruments, z, list(panel.instrument_columns))):
            raw, columns = spatial_lags(w, values, goods, markets, settings.j_max, standardize_lags=False, names=names)
            lagged, _, sd = standardize(raw)
            block.append(lagged)
            lag_scales.update(dict(zip(columns, sd)))
            if block is exog:
                exog_names += columns
            elif block is endog:
                endog_names += columns
            else:
                instrument_names += columns

    clusters = frame[list(settings.cluster_key)].astype(str).agg('|'.join, axis=1).to_numpy()
    return Design(y=y, exog=np.column_stack(exog), exog_names=exog_names, endog=np.column_stack(endog),
                  endog_names=endog_names, instruments=np.column_stack(instruments),
                  instrument_names=instrument_names, clusters=pd.factorize(clusters)[0], goods=goods,
                  markets=markets, w=w, j_max=settings.j_max if w is not None else 0, y_mean=float(y_mean[0]),
                  y_scale=float(y_scale[0]), price_mean=float(price_mean[0]), price_scale=float(price_scale[0]),
                  lag_scales=lag_scales, interaction_scores=inter, n_components_kept=pca.n_kept,
                  rows=np.arange(n))


def proxy_align(proxy, goods, which='s'):
    """Restrict a proxy built over all logged products to the panel's goods, in panel order."""
    if which == 'auto':
        which = 's'
    w = proxy_matrix(proxy, which)
    ids = list(getattr(proxy, 'product_ids', ()) or ())
    if not ids:
        if w.shape[0] != len(goods):
            raise DataError(f"proxy covers {w.shape[0]} goods but the panel has {len(goods)}")
        return w
    index = pd.Index(ids).get_indexer(list(goods))
    if (index < 0).any():
        missing = [g for g, i in zip(goods, index) if i < 0]
        raise DataError(f"goods {missing} are not covered by the proxy")
    return w[np.ix_(index, index)]


def select_proxy(panel, proxy, settings=None):
    """
    Choose between the complement, substitute and combined proxies by adjusted R^2 on the last quarter,
    fitting on the earlier quarters.
    """
    settings = settings or EstimationSettings()
    holdout = (panel.frame['quarter'] == panel.quarters[-1]).to_numpy()
    scores = {}
    for which in ('c', 's', 'both'):
        try:
            design = build_design(panel, proxy, settings, which=which)
            fit = tsls_fit(design.subset(~holdout), label=f"proxy-{which}")
            test = design.subset(holdout)
            x = np.column_stack([test.exog, test.endog])
            u = test.y - x @ fit.coefficients.to_numpy()
            tss = np.sum((test.y - test.y.mean()) ** 2)
            n, k = test.y.size, x.shape[1]
            scores[which] = 1 - (u @ u / max(n - k, 1)) / (tss / max(n - 1, 1)) if tss > 0 else -np.inf
        except (IdentificationError, NumericalError, DataError) as e:
            getLogger(__name__).warning(f"proxy {which} could not be evaluated: {e}")
            scores[which] = -np.inf
    best = max(scores, key=lambda key: scores[key])
    getLogger(__name__).info(f"proxy holdout adjusted R2: {scores}; using {best}")
    return best, scores


def inverse_interaction(w, alphas, present=None):
    """M^-1 = I + sum_j alpha_j W^j on the goods present, symmetrized and loaded to stay positive definite."""
    w = np.asarray(w, dtype=float)
    if present is not None:
        w = w[np.ix_(present, present)]
    k = w.shape[0]
    h = np.eye(k)
    power = np.eye(k)
    for j in sorted(alphas):
        power = power @ w
        h = h + alphas[j] * power
    h = linalg.symmetrize(h)
    floor = 1e-6 * max(np.mean(np.diag(h)), 1e-12)
    lam = linalg.min_eigenvalue(h) if k else floor
    if lam < floor:
        h = h + (floor - lam) * np.eye(k)
    return h


def nn_correction(a, m_hat, q_hat):
    """r = q_hat - A argmin_{l >= 0} ||A l - q_hat||^2_M for one market; returns r and the basket weights."""
    solution = linalg.nnls(a, q_hat, weight=m_hat)
    return q_hat - a @ solution.z, solution.z


def _market_blocks(design, a):
    a = linalg.basket_matrix(a)
    for market in pd.unique(design.markets):
        rows = np.flatnonzero(design.markets == market)
        goods = design.goods[rows]
        a_m = a[goods]
        a_m = a_m[:, a_m.any(axis=0)]
        yield rows, goods, a_m


def correction_residual(design, fit, a):
    """Stack the per-market NN corrections of the fitted quantities, in raw quantity units."""
    q_hat = fit.fitted * design.y_scale + design.y_mean
    r = np.zeros(design.n_obs)
    for rows, goods, a_m in _market_blocks(design, a):
        if a_m.shape[1] == 0:
            r[rows] = q_hat[rows]
            continue
        h = inverse_interaction(design.w, fit.alphas, goods) if design.w is not None else np.eye(goods.size)
        r[rows], _ = nn_correction(a_m, np.linalg.inv(h), q_hat[rows])
    return r


def nn_control_function_fit(design, a, max_rounds=10, tol=1e-6):
    """
    Iterate: fit, compute the correction r from the fitted quantities, refit on y + r / sd(q), until the relative
    change in r falls below tol. A zero first correction returns the base fit unchanged.
    """
    base = tsls_fit(design, label='base')
    r = correction_residual(design, base, a)
    scale = max(np.linalg.norm(base.fitted * design.y_scale + design.y_mean), 1.0)
    if np.linalg.norm(r) <= 1e-12 * scale:
        getLogger(__name__).info("no binding corners; corrected fit equals the base fit")
        return replace(base, correction_residual=r, label='nn-corrected', rounds=[0.0])

    rounds = []
    fit = base
    for t in range(1, max_rounds + 1):
        fit = tsls_fit(design.with_y(design.y + r / design.y_scale), label=f"nn-round-{t}")
        r_next = correction_residual(design, fit, a)
        change = float(np.linalg.norm(r_next - r) / max(np.linalg.norm(r_next), 1e-300))
        rounds.append(change)
        getLogger(__name__).debug(f"control function round {t}: relative change {change:.3e}")
        if change < tol:
            return replace(fit, correction_residual=r, rounds=rounds, converged=True, label='nn-corrected')
        r = r_next
    msg = f"control function did not converge in {max_rounds} rounds (last change {rounds[-1]:.3e})"
    getLogger(__name__).warning(msg)
    return replace(fit, correction_residual=r, rounds=rounds, converged=False, warnings=[msg], label='nn-corrected')


def lf_operator(h, a_m, form='exact'):
    """The projected inverse interaction matrix for one market: A(A'MA)^+A' from M^-1 = h, or its context form."""
    if form == 'exact':
        return linalg.projector_from_inverse(a_m, h)
    if form == 'context':
        return linalg.inverse_weighted_projector(a_m, h)
    raise ConfigError(f"unknown projector form {form!r}")


def _grid_design(design, a, alphas, form):
    base = design.without_lags()
    blocks = {name: np.array(getattr(base, name), dtype=float) for name in ('exog', 'endog', 'instruments')}
    for rows, goods, a_m in _market_blocks(design, a):
        h = inverse_interaction(design.w, alphas, goods) if design.w is not None else np.eye(goods.size)
        op = lf_operator(h, a_m, form)
        for name in blocks:
            blocks[name][rows] = op @ blocks[name][rows]
    return replace(base, **blocks)


def lf_grid_fit(design, a, alpha_grid, form='exact'):
    """Fit the projected model at each grid point of lag coefficients and keep the smallest second-stage RSS."""
    grid = [tuple(np.atleast_1d(np.asarray(p, dtype=float))) for p in alpha_grid]
    if not grid:
        raise ConfigError("alpha grid is empty")
    if design.w is None or design.goods is None:
        raise DataError("grid fit needs a design with goods, markets and a proxy matrix")
    if np.all(linalg.cone_coverage(a)):
        getLogger(__name__).warning("consideration set covers every unit vector; the grid fit reduces to the lag model")

    best, table = None, []
    for point in grid:
        alphas = {j + 1: v for j, v in enumerate(point)}
        try:
            fit = tsls_fit(_grid_design(design, a, alphas, form), label='lf-grid')
        except (IdentificationError, NumericalError) as e:
            getLogger(__name__).warning(f"grid point {point} skipped: {e}")
            table.append({'alpha': point, 'rss': np.inf})
            continue
        fit.alphas = alphas
        table.append({'alpha': point, 'rss': fit.rss})
        getLogger(__name__).debug(f"grid point {point}: rss {fit.rss:.6g}")
        if best is None or fit.rss < best.rss:
            best = fit
    if best is None:
        raise NumericalError("no grid point could be fitted")
    best.rounds = table
    return best


@dataclass
class ParticipationResult:
    delta: float
    std_error: float
    p_value: float
    ar_pvalue: float
    first_stage_f: float
    lag: int
    n_obs: int
    index: str
    data: dict = field(default_factory=dict, repr=False)

    def ar_pvalue_at(self, delta0):
        return anderson_rubin_pvalue(self.data['y'], self.data['x'], self.data['z'], self.data['exog'], delta0)

    def to_json(self):
        return {'index': self.index, 'delta': self.delta, 'std-error': self.std_error, 'p-value': self.p_value,
                'ar-p-value': self.ar_pvalue, 'first-stage-f': self.first_stage_f, 'instrument-lag': self.lag,
                'n-obs': self.n_obs}


def _participation_frames(exog, z):
    exog = pd.DataFrame(exog, columns=['const', 'trend'])
    return exog, pd.DataFrame({'instrument': np.ravel(z)})


def anderson_rubin_pvalue(y, x, z, exog, delta0):
    """Heteroskedasticity-robust test that the instrument does not explain y - delta0 x."""
    exog, instrument = _participation_frames(exog, z)
    target = y - delta0 * x
    reduced = IV2SLS(pd.Series(target, name='target'), pd.concat([exog, instrument], axis=1), None, None)
    res = reduced.fit(cov_type='robust', debiased=True)
    if np.abs(res.resids).max() <= 1e-12 * max(np.abs(target).max(), 1.0):
        # exact fit leaves no residual variance to test against
        return 1.0 if abs(res.params.iloc[-1]) <= 1e-12 else 0.0
    restriction = np.zeros((1, res.params.size))
    restriction[0, -1] = 1.0
    return float(res.wald_test(restriction, np.zeros(1)).pval)


def participation_series(panel, index='simple'):
    """Per store-quarter transaction count, price index and competitor-price index (simple or revenue-weighted)."""
    frame = panel.frame
    if index == 'simple':
        agg = frame.groupby(['store_id', 'quarter']).agg(price_index=('price', 'mean'),
                                                         instrument_index=('z_competitor_price', 'mean'),
                                                         n_transactions=('n_transactions', 'first'))
    elif index == 'revenue':
        weighted = frame.assign(wp=frame['price'] * frame['revenue'], wz=frame['z_competitor_price'] * frame['revenue'])
        agg = weighted.groupby(['store_id', 'quarter']).agg(wp=('wp', 'sum'), wz=('wz', 'sum'), rev=('revenue', 'sum'),
                                                           n_transactions=('n_transactions', 'first'))
        agg['price_index'] = agg['wp'] / agg['rev']
        agg['instrument_index'] = agg['wz'] / agg['rev']
        agg = agg[['price_index', 'instrument_index', 'n_transactions']]
    else:
        raise ConfigError(f"unknown price index {index!r}")
    agg = agg.reset_index()
    agg['period'] = pd.PeriodIndex(agg['quarter'], freq='Q').astype('int64')
    return agg


def participation_elasticity_from_series(series, max_lag=2, index='simple'):
    """
    First-difference IV of d ln N on d ln P with a constant and linear trend, instrumented by d ln Z at the lag
    (0..max_lag) with the strongest first stage. Consecutive periods only.
    """
    s = series.sort_values(['store_id', 'period']).copy()
    for col in ('n_transactions', 'price_index', 'instrument_index'):
        if (s[col] <= 0).any():
            raise DataError(f"{col} must be positive to take logs")
        s[f"d_{col}"] = s.groupby('store_id')[col].transform(lambda v: np.log(v).diff())
    gap = s.groupby('store_id')['period'].diff()
    s.loc[gap != 1, ['d_n_transactions', 'd_price_index', 'd_instrument_index']] = np.nan
    for lag in range(1, max_lag + 1):
        shifted = s.groupby('store_id')['d_instrument_index'].shift(lag)
        s[f"d_instrument_lag{lag}"] = shifted.where(s.groupby('store_id')['period'].diff(lag) == lag)
    s['d_instrument_lag0'] = s['d_instrument_index']

    best = None
    for lag in range(max_lag + 1):
        cols = ['d_n_transactions', 'd_price_index', f"d_instrument_lag{lag}", 'period']
        data = s[cols].dropna()
        if len(data) < MIN_PARTICIPATION_OBS:
            continue
        x = data['d_price_index'].to_numpy()
        zc = data[f"d_instrument_lag{lag}"].to_numpy()
        if np.std(x) <= 1e-12 or np.std(zc) <= 1e-12:
            continue
        exog = np.column_stack([np.ones(len(data)), data['period'].to_numpy(dtype=float) - data['period'].mean()])
        exog_frame, instrument = _participation_frames(exog, zc)
        model = IV2SLS(pd.Series(data['d_n_transactions'].to_numpy(), name='d_ln_transactions'), exog_frame,
                       pd.DataFrame({'price': x}), instrument)
        try:
            res = model.fit(cov_type='robust', debiased=True)
        except ValueError as e:
            getLogger(__name__).debug(f"participation instrument lag {lag} skipped: {e}")
            continue
        f = float(res.first_stage.diagnostics.loc['price', 'f.stat'])
        getLogger(__name__).debug(f"participation instrument lag {lag}: first-stage F {f:.3f}")
        if best is None or f > best[0]:
            best = (f, lag, res, data['d_n_transactions'].to_numpy(), x, zc, exog)
    if best is None:
        n_usable = int(s['d_n_transactions'].notna().sum())
        if n_usable < MIN_PARTICIPATION_OBS:
            raise DataError(f"only {n_usable} usable differenced observations, need {MIN_PARTICIPATION_OBS}")
        raise DataError("price or instrument index does not vary; first-stage F is undefined")

    f, lag, res, y, x, zc, exog = best
    delta, se = float(res.params['price']), float(res.std_errors['price'])
    result = ParticipationResult(delta=delta, std_error=se, p_value=float(res.pvalues['price']),
                                 ar_pvalue=anderson_rubin_pvalue(y, x, zc, exog, 0.0), first_stage_f=f,
                                 lag=lag, n_obs=y.size, index=index,
                                 data={'y': y, 'x': x, 'z': zc[:, None], 'exog': exog})
    getLogger(__name__).info(f"participation elasticity ({index}): {delta:.4f} (se {se:.4f}), lag {lag}, F {f:.2f}")
    return result


def participation_elasticity(panel, index='simple', max_lag=2):
    return participation_elasticity_from_series(participation_series(panel, index), max_lag=max_lag, index=index)
