"""
Monte Carlo study of consumer-choice counterfactuals.

Each draw generates a random consideration set A, an interaction matrix M that mixes a co-purchase proxy built from
A with random noise, and marginal utilities delta. Four markets are then solved:

    constrained / unconstrained demand (A versus the identity)  x  single-product competition / monopoly

and the draw records own- and cross-price effects of the equilibrium Jacobian, welfare, profit and demand. The study
table reports per-metric means and the share of draws in which the constrained market sits on the expected side of
the unconstrained one.

Random streams are keyed by (seed, draw index) through Philox, so serial and parallel runs produce the same table.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from logging import getLogger

import numpy as np
import pandas as pd

from . import equilibrium, linalg
from .copurchase import TransactionLog, build_proxy, complement_cosine, hollow, second_order_cosine
from .demand import ConsiderationSet, face_jacobian, solve_basket_demand
from .errors import BasketDemandError, ConfigError, NumericalError

SIGN_TOL = 1e-9
TIE_RTOL = 1e-8
REPAIR_ATTEMPTS = 50
EXTRA_ATTEMPTS = 20

MODELS = ('constrained-competition', 'constrained-monopoly', 'unconstrained-competition', 'unconstrained-monopoly')

# metric, market whose equilibrium it is read from, relation constrained-vs-unconstrained, strong hypothesis
TABLE_ROWS = [('avg own-price effect', 'competition', 'own', 'abs-lower', True),
              ('avg cross-price effect', 'competition', 'cross', 'lower', True),
              ('avg substitution effect', 'competition', 'substitution', 'higher', False),
              ('avg complementary effect', 'competition', 'complementary', 'abs-higher', False),
              ('avg number of substitutes', 'competition', 'n-substitutes', 'lower', False),
              ('avg number of complements', 'competition', 'n-complements', 'higher', False),
              ('firm consumer surplus', 'competition', 'consumer-surplus', 'lower', False),
              ('monopoly consumer surplus', 'monopoly', 'consumer-surplus', 'lower', False),
              ('firm aggregate profit', 'competition', 'profit', 'lower', False),
              ('monopoly aggregate profit', 'monopoly', 'profit', 'lower', False),
              ('firm aggregate demand', 'competition', 'demand', 'lower', False),
              ('monopoly aggregate demand', 'monopoly', 'demand', 'lower', False)]


@dataclass(frozen=True)
class SimConfig:
    n_draws: int = 1000
    n_goods_base: int = 10
    n_baskets_base: int = 51
    max_extra_rows_cols: int = 10
    phi: float = -0.5
    proxy_mix: float = 0.5
    seed: int = 20200201
    zero_share: float = 0.7
    max_entry: int = 2
    rand_offdiag: float = 0.15
    delta_low: float = 1.0
    delta_high: float = 3.0
    pd_floor: float = 0.05
    proxy_alpha: float = 0.05
    proxy_strength: float = 0.3
    max_failure_share: float = 0.01
    force_identity: bool = False

    def __post_init__(self):
        for name in ('n_draws', 'n_goods_base', 'n_baskets_base', 'max_entry'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.max_extra_rows_cols < 0:
            raise ConfigError(f"max_extra_rows_cols must be nonnegative, got {self.max_extra_rows_cols}")
        if not 0 <= self.proxy_mix <= 1:
            raise ConfigError(f"proxy_mix must lie in [0, 1], got {self.proxy_mix}")
        if not self.phi < 0:
            raise ConfigError(f"phi must be negative, got {self.phi}")
        if not 0 <= self.zero_share < 1:
            raise ConfigError(f"zero_share must lie in [0, 1), got {self.zero_share}")
        if not 0 < self.delta_low <= self.delta_high:
            raise ConfigError(f"delta range ({self.delta_low}, {self.delta_high}) is not a positive interval")

    @classmethod
    def from_settings(cls, config):
        """Read the simulate: section of a RunConfig."""
        sim = config.section('simulate')
        return cls(n_draws=sim['n-draws'], n_goods_base=sim['n-goods-base'], n_baskets_base=sim['n-baskets-base'],
                   max_extra_rows_cols=sim['max-extra-rows-cols'], phi=sim['phi'], proxy_mix=sim['proxy-mix'],
                   seed=config.get('run:seed'), zero_share=sim['zero-share'], max_entry=sim['max-entry'],
                   rand_offdiag=sim['rand-offdiag'], delta_low=sim['delta-low'], delta_high=sim['delta-high'],
                   pd_floor=sim['pd-floor'], proxy_alpha=sim['proxy-alpha'], proxy_strength=sim['proxy-strength'],
                   max_failure_share=sim['max-failure-share'], force_identity=sim['force-identity'])


@dataclass
class DrawMetrics:
    draw: int
    n_goods: int
    n_baskets: int
    rank: int
    n_missing_basis_vectors: int
    models: dict = field(default_factory=dict)

    @property
    def full_rank(self):
        return self.rank == self.n_goods

    def to_json(self):
        return asdict(self)


def draw_rng(seed, draw):
    """Independent Philox stream for one draw."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(draw,))))


def _random_block(rng, rows, cols, cfg):
    nonzero = rng.random((rows, cols)) >= cfg.zero_share
    values = rng.integers(1, cfg.max_entry + 1, size=(rows, cols))
    return np.where(nonzero, values, 0).astype(float)


def _bad_columns(a):
    bad = ~a.any(axis=0)
    _, first = np.unique(a, axis=1, return_index=True)
    duplicate = np.ones(a.shape[1], dtype=bool)
    duplicate[first] = False
    return bad | duplicate


def _repair_columns(rng, a, cfg):
    """Replace zero and duplicate columns with nonnegative combinations of surviving ones, then densify if stuck."""
    for attempt in range(REPAIR_ATTEMPTS):
        bad = _bad_columns(a)
        if not bad.any():
            return a
        good = np.flatnonzero(~bad)
        for j in np.flatnonzero(bad):
            if good.size >= 2 and attempt < REPAIR_ATTEMPTS // 2:
                pick = rng.choice(good, size=2, replace=False)
                a[:, j] = a[:, pick] @ rng.integers(1, cfg.max_entry + 1, size=2)
            else:
                a[:, j] = rng.integers(1, cfg.max_entry + 1, size=a.shape[0])
    return a


def _append_combinations(rng, a, n_extra, cfg):
    """Append n_extra columns, each a nonnegative combination of two existing columns and distinct from all others."""
    for _ in range(n_extra):
        for _ in range(EXTRA_ATTEMPTS):
            pick = rng.choice(a.shape[1], size=min(2, a.shape[1]), replace=False)
            column = a[:, pick] @ rng.integers(1, cfg.max_entry + 1, size=pick.size)
            if not (a == column[:, None]).all(axis=0).any():
                a = np.column_stack([a, column])
                break
    return a


def draw_consideration_set(rng, cfg):
    k, j = cfg.n_goods_base, cfg.n_baskets_base
    a = _random_block(rng, k, j, cfg)
    for _ in range(REPAIR_ATTEMPTS):
        a = _repair_columns(rng, a, cfg)
        a = _repair_columns(rng, a.T, cfg).T
        if not _bad_columns(a).any() and not _bad_columns(a.T).any():
            break
    n_rows = int(rng.integers(0, cfg.max_extra_rows_cols + 1))
    n_cols = int(rng.integers(0, cfg.max_extra_rows_cols + 1))
    a = _append_combinations(rng, a.T, n_rows, cfg).T
    a = _append_combinations(rng, a, n_cols, cfg)
    if cfg.force_identity:
        a = np.eye(a.shape[0])
    return ConsiderationSet(a)


def draw_interaction_matrix(rng, a, cfg):
    """
    M = mix * M_proxy + (1 - mix) * M_rand, loaded on the diagonal until its smallest eigenvalue reaches
    pd_floor times the mean diagonal.

    M_proxy = I + strength * S, where S is the second-order cosine of the baskets-as-transactions log restricted
    to pairs that are not significant complements: goods that share complements without being bought together
    interact as substitutes.
    """
    k = a.n_goods
    m_proxy = np.eye(k)
    if cfg.proxy_mix > 0:
        log = TransactionLog.from_incidence(a.a, product_ids=a.good_labels, transaction_ids=a.basket_labels)
        proxy = build_proxy(log, cfg.proxy_alpha, cfg.proxy_alpha)
        similarity = hollow(second_order_cosine(complement_cosine(log))) * (1.0 - proxy.a_c)
        m_proxy = m_proxy + cfg.proxy_strength * similarity
    noise = np.triu(rng.uniform(-cfg.rand_offdiag, cfg.rand_offdiag, size=(k, k)), 1)
    m_rand = np.eye(k) + noise + noise.T
    m = linalg.symmetrize(cfg.proxy_mix * m_proxy + (1 - cfg.proxy_mix) * m_rand)
    floor = cfg.pd_floor * np.mean(np.diag(m))
    lam = linalg.min_eigenvalue(m)
    if lam < floor:
        m = m + (floor - lam) * np.eye(k)
    return m


def jacobian_metrics(jac):
    k = jac.shape[0]
    off = jac[~np.eye(k, dtype=bool)]
    subs, comps = off[off > SIGN_TOL], off[off < -SIGN_TOL]
    return {'own': float(np.mean(np.diag(jac))),
            'cross': float(np.mean(off)) if off.size else 0.0,
            'substitution': float(np.mean(subs)) if subs.size else 0.0,
            'complementary': float(np.mean(comps)) if comps.size else 0.0,
            'n-substitutes': float(subs.size / k),
            'n-complements': float(comps.size / k)}


def evaluate_markets(a, m, delta, phi, coverage=None):
    """Solve the four markets for one draw and return their metric records keyed by model name."""
    a = linalg.basket_matrix(a)
    k = a.shape[0]
    identity = np.eye(k)
    coverage = linalg.cone_coverage(a) if coverage is None else coverage
    setups = {'constrained': (a, linalg.projector(a, m), coverage),
              'unconstrained': (identity, linalg.symmetrize(np.linalg.inv(m)), np.ones(k, dtype=bool))}
    records = {}
    for demand_side, (basket, sigma, cover) in setups.items():
        outcomes = {'competition': equilibrium.bertrand_from_sigma(sigma, m, delta, phi),
                    'monopoly': equilibrium.monopoly_from_sigma(sigma, delta, phi, m=m)}
        for market, outcome in outcomes.items():
            intercept = delta + phi * outcome.prices
            q = solve_basket_demand(basket, m, intercept, enforce_nn=True, coverage=cover).q
            jac = face_jacobian(basket, m, intercept, phi, coverage=cover)
            record = jacobian_metrics(jac)
            record.update({'consumer-surplus': equilibrium.consumer_surplus(m, delta, q),
                           'profit': float(outcome.prices @ q),
                           'demand': float(q.sum()),
                           'nn-binds': bool(np.abs(q - outcome.quantities).max() > 1e-8)})
            records[f"{demand_side}-{market}"] = record
    return records


def run_draw(cfg, draw):
    rng = draw_rng(cfg.seed, draw)
    cs = draw_consideration_set(rng, cfg)
    m = draw_interaction_matrix(rng, cs, cfg)
    delta = rng.uniform(cfg.delta_low, cfg.delta_high, size=cs.n_goods)
    coverage = linalg.cone_coverage(cs.a)
    metrics = DrawMetrics(draw=draw, n_goods=cs.n_goods, n_baskets=cs.n_baskets, rank=cs.rank,
                          n_missing_basis_vectors=int((~coverage).sum()))
    metrics.models = evaluate_markets(cs.a, m, delta, cfg.phi, coverage=coverage)
    return metrics


def _safe_draw(args):
    cfg, draw = args
    try:
        return run_draw(cfg, draw)
    except (BasketDemandError, np.linalg.LinAlgError, FloatingPointError) as e:
        getLogger(__name__).warning(f"draw {draw} failed and is excluded: {e}")
        return None


def _tied(a, b):
    return bool(np.isclose(a, b, rtol=TIE_RTOL, atol=SIGN_TOL))


def _relation_holds(relation, constrained, unconstrained, ties_hold=False):
    """
    Whether constrained sits on the stated side of unconstrained. Values equal up to TIE_RTOL are ties, which count
    as holding only when ties_hold is set: on a full-rank draw whose equilibrium touches no cone face the two
    demand sides coincide, and the strong relations are read as weak inequalities there.
    """
    if relation.startswith('abs-'):
        constrained, unconstrained, relation = abs(constrained), abs(unconstrained), relation[4:]
    if relation not in ('lower', 'higher'):
        raise ValueError(f"unknown relation {relation}")
    if _tied(constrained, unconstrained):
        return ties_hold
    return constrained < unconstrained if relation == 'lower' else constrained > unconstrained


def study_table(draws):
    rows = []
    for label, market, metric, relation, strong in TABLE_ROWS:
        c = np.array([d.models[f"constrained-{market}"][metric] for d in draws])
        u = np.array([d.models[f"unconstrained-{market}"][metric] for d in draws])
        holds = [_relation_holds(relation, ci, ui, ties_hold=strong) for ci, ui in zip(c, u)]
        ties = [_tied(abs(ci), abs(ui)) if relation.startswith('abs-') else _tied(ci, ui) for ci, ui in zip(c, u)]
        rows.append({'metric': label, 'constrained': float(c.mean()) if c.size else np.nan,
                     'unconstrained': float(u.mean()) if u.size else np.nan, 'relation': relation,
                     'strong': strong, 'pct-draws': 100.0 * float(np.mean(holds)) if holds else np.nan,
                     'pct-ties': 100.0 * float(np.mean(ties)) if ties else np.nan})
    return pd.DataFrame(rows)


def market_comparisons(draws):
    """Monopoly versus competition within each demand side; reported, never asserted."""
    rows = []
    for side in ('constrained', 'unconstrained'):
        for metric, relation in (('profit', 'higher'), ('consumer-surplus', 'lower'), ('demand', 'lower')):
            mono = np.array([d.models[f"{side}-monopoly"][metric] for d in draws])
            comp = np.array([d.models[f"{side}-competition"][metric] for d in draws])
            holds = [_relation_holds(relation, mi, ci) for mi, ci in zip(mono, comp)]
            rows.append({'demand': side, 'metric': metric, 'monopoly': float(mono.mean()) if mono.size else np.nan,
                         'competition': float(comp.mean()) if comp.size else np.nan,
                         'relation': f"monopoly {relation}",
                         'pct-draws': 100.0 * float(np.mean(holds)) if holds else np.nan})
    return pd.DataFrame(rows)


@dataclass
class StudyResult:
    table: pd.DataFrame
    full_rank_table: pd.DataFrame
    comparisons: pd.DataFrame
    draws: list
    n_failed: int
    config: SimConfig

    def summary(self):
        return {'n-draws': self.config.n_draws,
                'n-succeeded': len(self.draws),
                'n-failed': self.n_failed,
                'n-full-rank': sum(d.full_rank for d in self.draws),
                'mean-goods': float(np.mean([d.n_goods for d in self.draws])) if self.draws else np.nan,
                'mean-baskets': float(np.mean([d.n_baskets for d in self.draws])) if self.draws else np.nan,
                'mean-rank': float(np.mean([d.rank for d in self.draws])) if self.draws else np.nan,
                'mean-missing-basis-vectors': (float(np.mean([d.n_missing_basis_vectors for d in self.draws]))
                                               if self.draws else np.nan)}


def run_study(cfg, threads=1):
    jobs = [(cfg, draw) for draw in range(cfg.n_draws)]
    getLogger(__name__).info(f"running {cfg.n_draws} draws on {threads} worker(s), seed {cfg.seed}")
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_safe_draw, jobs, chunksize=max(1, cfg.n_draws // (4 * threads))))
    else:
        results = [_safe_draw(job) for job in jobs]

    draws = [r for r in results if r is not None]
    n_failed = len(results) - len(draws)
    if n_failed / cfg.n_draws >= cfg.max_failure_share and n_failed > 0:
        raise NumericalError(f"{n_failed} of {cfg.n_draws} draws failed, above the "
                             f"{100 * cfg.max_failure_share:.1f}% budget")
    full_rank = [d for d in draws if d.full_rank]
    getLogger(__name__).info(f"study complete: {len(draws)} draws used, {n_failed} failed, {len(full_rank)} full rank")
    return StudyResult(table=study_table(draws), full_rank_table=study_table(full_rank),
                       comparisons=market_comparisons(draws), draws=draws, n_failed=n_failed, config=cfg)
