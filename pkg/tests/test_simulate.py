import numpy as np
import pytest

from basketdemand import linalg, simulate
from basketdemand.config import RunConfig
from basketdemand.errors import ConfigError
from basketdemand.simulate import SimConfig

SMALL = dict(n_draws=6, n_goods_base=4, n_baskets_base=7, max_extra_rows_cols=2, max_failure_share=1.0)


def test_draw_streams_are_keyed_by_seed_and_draw():
    assert simulate.draw_rng(7, 3).random() == simulate.draw_rng(7, 3).random()
    assert simulate.draw_rng(7, 3).random() != simulate.draw_rng(7, 4).random()
    assert simulate.draw_rng(7, 3).random() != simulate.draw_rng(8, 3).random()


def test_consideration_set_draws_are_valid():
    cfg = SimConfig(**SMALL)
    for draw in range(30):
        cs = simulate.draw_consideration_set(simulate.draw_rng(cfg.seed, draw), cfg)
        assert cfg.n_goods_base <= cs.n_goods <= cfg.n_goods_base + cfg.max_extra_rows_cols
        assert cfg.n_baskets_base <= cs.n_baskets <= cfg.n_baskets_base + cfg.max_extra_rows_cols
        assert (cs.a >= 0).all()
        assert cs.a.any(axis=0).all() and cs.a.any(axis=1).all()
        assert np.unique(cs.a, axis=1).shape[1] == cs.n_baskets


def test_interaction_matrix_draws_are_positive_definite():
    cfg = SimConfig(**SMALL)
    for draw in range(30):
        rng = simulate.draw_rng(cfg.seed, draw)
        cs = simulate.draw_consideration_set(rng, cfg)
        m = simulate.draw_interaction_matrix(rng, cs, cfg)
        assert np.array_equal(m, m.T)
        assert linalg.min_eigenvalue(m) >= cfg.pd_floor * np.mean(np.diag(m)) - 1e-10


def test_draws_are_reproducible():
    cfg = SimConfig(**SMALL)
    assert simulate.run_draw(cfg, 2).to_json() == simulate.run_draw(cfg, 2).to_json()


def test_identity_baskets_make_both_demand_sides_agree():
    cfg = SimConfig(**SMALL, force_identity=True)
    for draw in range(5):
        metrics = simulate.run_draw(cfg, draw)
        assert metrics.full_rank and metrics.n_missing_basis_vectors == 0
        for market in ('competition', 'monopoly'):
            constrained = metrics.models[f"constrained-{market}"]
            unconstrained = metrics.models[f"unconstrained-{market}"]
            for key in ('own', 'cross', 'consumer-surplus', 'profit', 'demand'):
                assert constrained[key] == pytest.approx(unconstrained[key], rel=1e-8, abs=1e-10)


def test_example_markets(breakfast_a, uniform_m):
    records = simulate.evaluate_markets(breakfast_a, uniform_m, np.full(3, 2.0), -0.1)
    assert set(records) == set(simulate.MODELS)
    for record in records.values():
        assert record['own'] < 0
        assert isinstance(record['nn-binds'], bool)
    # monopoly quantities are half of Sigma delta
    assert records['constrained-monopoly']['demand'] == pytest.approx(16.0 / 7.0)
    assert records['constrained-monopoly']['profit'] > records['constrained-competition']['profit']


def test_jacobian_metrics():
    jac = np.array([[-1.0, 0.5, -0.2], [0.5, -2.0, 0.0], [-0.2, 0.0, -3.0]])
    metrics = simulate.jacobian_metrics(jac)
    assert metrics['own'] == pytest.approx(-2.0)
    assert metrics['cross'] == pytest.approx(0.6 / 6)
    assert metrics['substitution'] == pytest.approx(0.5)
    assert metrics['complementary'] == pytest.approx(-0.2)
    assert metrics['n-substitutes'] == pytest.approx(2 / 3)
    assert metrics['n-complements'] == pytest.approx(2 / 3)


def test_small_study():
    result = simulate.run_study(SimConfig(**SMALL))
    summary = result.summary()
    assert summary['n-succeeded'] + summary['n-failed'] == 6
    assert len(result.table) == len(simulate.TABLE_ROWS)
    assert result.table['pct-draws'].between(0, 100).all()
    assert set(result.comparisons['demand']) == {'constrained', 'unconstrained'}
    assert summary['n-full-rank'] == sum(d.full_rank for d in result.draws)


def test_config_validation():
    with pytest.raises(ConfigError):
        SimConfig(n_draws=0)
    with pytest.raises(ConfigError):
        SimConfig(phi=0.5)
    with pytest.raises(ConfigError):
        SimConfig(delta_low=3.0, delta_high=1.0)


def test_config_from_settings():
    config = RunConfig.load(overrides={'simulate:n-draws': 12, 'run:seed': 5, 'simulate:force-identity': True})
    cfg = SimConfig.from_settings(config)
    assert cfg.n_draws == 12 and cfg.seed == 5 and cfg.force_identity
    assert cfg.phi == -0.5


@pytest.mark.slow
def test_parallel_study_matches_serial():
    cfg = SimConfig(**{**SMALL, 'n_draws': 16})
    serial = simulate.run_study(cfg, threads=1)
    parallel = simulate.run_study(cfg, threads=2)
    assert [d.to_json() for d in serial.draws] == [d.to_json() for d in parallel.draws]
    assert serial.table.equals(parallel.table)


@pytest.mark.slow
def test_default_study_shape():
    result = simulate.run_study(SimConfig(n_draws=20, max_failure_share=1.0))
    summary = result.summary()
    assert summary['mean-goods'] >= 10
    assert summary['mean-baskets'] >= 51
    own = result.table.set_index('metric').loc['avg own-price effect']
    assert own['constrained'] < 0 and own['unconstrained'] < 0


def test_relation_ties_count_only_for_strong_rows():
    assert simulate._relation_holds('abs-lower', -0.4, -0.5)
    assert not simulate._relation_holds('abs-lower', -0.5, -0.4)
    assert simulate._relation_holds('lower', 0.2, 0.2 + 1e-13, ties_hold=True)
    assert not simulate._relation_holds('lower', 0.2, 0.2 + 1e-13)
    assert not simulate._relation_holds('higher', 3.0, 3.0)
    with pytest.raises(ValueError):
        simulate._relation_holds('sideways', 1.0, 2.0)


def test_identity_draws_tie_on_every_row():
    result = simulate.run_study(SimConfig(**SMALL, force_identity=True))
    table = result.table.set_index('metric')
    assert (table.loc[table['strong'], 'pct-draws'] == 100.0).all()
    own = table.loc['avg own-price effect']
    assert own['pct-ties'] == 100.0


@pytest.mark.slow
def test_default_study_relations():
    result = simulate.run_study(SimConfig(n_draws=200, max_failure_share=1.0))
    table = result.table.set_index('metric')
    assert (table.loc[table['strong'], 'pct-draws'] == 100.0).all()
    assert (table['pct-draws'] + table['pct-ties'] <= 100.0 + 1e-9).all()
    # constrained substitutes pull harder than unconstrained ones in most draws
    assert table.loc['avg substitution effect', 'pct-draws'] > 50.0
    assert table.loc['avg complementary effect', 'pct-draws'] > 50.0
