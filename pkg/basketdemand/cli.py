"""
Command line entry point.

    basketdemand simulate       Monte Carlo study table
    basketdemand proxy          co-purchase proxy matrices from a transaction CSV
    basketdemand estimate       panel, fits, mark-ups and plot data from a transaction CSV
    basketdemand counterfactual equilibria and stock-outs for a specified market
    basketdemand screen         singleton screen and consideration-set reduction
    basketdemand fixture        write a synthetic transaction CSV with its truth

Exit codes: 0 success, 1 usage/config/data error, 2 numerical or budget failure.
"""

import argparse
import logging
import os
import sys
from logging import getLogger

import numpy as np
import pandas as pd

from . import __version__, equilibrium, io, linalg
from .config import RunConfig, parse_value
from .copurchase import TransactionLog, build_proxy
from .demand import ConsiderationSet
from .errors import BasketDemandError, ConfigError, DataError, NumericalError
from .estimate import (EstimationSettings, build_design, lf_grid_fit, nn_control_function_fit,
                       participation_elasticity, select_proxy, tsls_fit)
from .fixtures import synthetic_market
from .markups import markup_indices, markups, percentile_transitions, price_index, quarterly_series
from .panel import PanelFilters, build_panel
from .screening import reduce_consideration_set, screen_grid, singleton_screen
from .simulate import SimConfig, run_study


def _out(config, name):
    return os.path.join(config.get('run:out'), name)


def _read_log(config):
    path = config.get('run:input')
    if not path:
        raise ConfigError("no input transaction file given (--input or run:input)")
    return TransactionLog.from_records(io.read_transactions_csv(path))


def cmd_simulate(config):
    cfg = SimConfig.from_settings(config)
    study = run_study(cfg, threads=config.get('run:threads'))
    digest = config.digest()
    io.write_frame(_out(config, 'study-table.csv'), study.table, digest)
    io.write_frame(_out(config, 'study-table-full-rank.csv'), study.full_rank_table, digest)
    io.write_frame(_out(config, 'market-comparisons.csv'), study.comparisons, digest)
    io.write_json(_out(config, 'study.json'), {'summary': study.summary(),
                                                'table': study.table.to_dict(orient='records'),
                                                'full-rank-table': study.full_rank_table.to_dict(orient='records'),
                                                'market-comparisons': study.comparisons.to_dict(orient='records')},
                  digest)
    io.write_ndjson(_out(config, 'draws.ndjson'), (d.to_json() for d in study.draws), digest)
    strong = study.table[study.table['strong']]
    for _, row in strong.iterrows():
        if row['pct-draws'] < 100.0:
            getLogger(__name__).warning(f"strong relation '{row['metric']}' held in only {row['pct-draws']:.1f}% of draws")
    return study


def cmd_proxy(config):
    log = _read_log(config)
    p = config.section('proxy')
    proxy = build_proxy(log, p['alpha-c'], p['alpha-l'], normalize=p['normalize'], path=p['path'])
    digest = config.digest()
    labels = log.product_ids
    for name, matrix in (('w-c', proxy.w_c), ('w-s', proxy.w_s)):
        if p['format'] in ('coordinates', 'both'):
            io.write_coordinates(_out(config, f"{name}.coo.csv"), matrix, labels, digest)
        if p['format'] in ('dense', 'both'):
            io.write_dense(_out(config, f"{name}.csv"), matrix, labels, digest)
    io.write_dense(_out(config, 'mu.csv'), proxy.mu, labels, digest)
    io.write_json(_out(config, 'proxy-summary.json'), proxy.summary(), digest)
    return proxy


def panel_consideration_set(log, goods):
    """The reduced consideration set restricted to the panel's goods, with baskets left empty or repeated dropped."""
    reduced = reduce_consideration_set(log)
    rows = pd.Index(reduced.good_labels).get_indexer(list(goods))
    a = reduced.a[rows]
    a = a[:, a.any(axis=0)]
    return np.unique(a, axis=1)


def cmd_estimate(config):
    log = _read_log(config)
    e = config.section('estimate')
    p = config.section('proxy')
    settings = EstimationSettings.from_settings(config)
    panel = build_panel(log, PanelFilters.from_settings(config))
    proxy = build_proxy(log, p['alpha-c'], p['alpha-l'], normalize=p['normalize'], path=p['path'])
    which = settings.proxy
    proxy_scores = {}
    if settings.j_max > 0 and which == 'auto':
        which, proxy_scores = select_proxy(panel, proxy, settings)
    design = build_design(panel, proxy if settings.j_max > 0 else None, settings, which=which)
    a = panel_consideration_set(log, panel.goods)

    base = tsls_fit(design, label='base')
    corrected = nn_control_function_fit(design, a, max_rounds=settings.max_rounds, tol=settings.tol)
    fits = {'base': base.to_json(), 'nn-corrected': corrected.to_json()}
    if settings.alpha_grid:
        grid = lf_grid_fit(design, a, settings.alpha_grid, form=settings.lf_form)
        fits['lf-grid'] = grid.to_json()

    participation = {}
    for index in ('simple', 'revenue'):
        try:
            participation[index] = participation_elasticity(panel, index=index,
                                                            max_lag=e['participation-max-lag']).to_json()
        except DataError as err:
            getLogger(__name__).warning(f"participation elasticity ({index}) not estimated: {err}")
            participation[index] = {'error': str(err)}

    table = markups(corrected, design, panel, ownership=e['ownership'])
    digest = config.digest()
    io.write_json(_out(config, 'fit.json'), {'fits': fits, 'proxy': which, 'proxy-holdout-adj-r2': proxy_scores,
                                             'attrition': panel.attrition, 'participation': participation,
                                             'n-goods': len(panel.goods), 'n-obs': panel.n_obs}, digest)
    io.write_frame(_out(config, 'markups.csv'), table, digest)
    io.write_frame(_out(config, 'markup-series.csv'), quarterly_series(table), digest)
    io.write_frame(_out(config, 'markup-store-series.csv'), quarterly_series(table, by=('store_id',)), digest)
    if len(panel.quarters) >= 2:
        io.write_frame(_out(config, 'markup-indices.csv'), markup_indices(table), digest)
        transitions = percentile_transitions(table, n_bins=e['transition-bins'])
        io.write_frame(_out(config, 'markup-transitions.csv'), transitions.reset_index(names='from'), digest)
    io.write_frame(_out(config, 'price-index.csv'), price_index(panel), digest)
    io.write_frame(_out(config, 'price-index-store.csv'), price_index(panel, by=('store_id',)), digest)
    return fits


def _counterfactual_market(config):
    c = config.section('counterfactual')
    a = ConsiderationSet(np.asarray(c['a'], dtype=float), good_labels=c['goods'] or None)
    m = linalg.check_pd(np.asarray(c['m'], dtype=float))
    delta = linalg.as_vector(c['delta'], 'delta', a.n_goods)
    return c, a, m, delta, float(c['phi'])


def _outcome_json(outcome, labels):
    return {'prices': dict(zip(labels, outcome.prices)), 'quantities': dict(zip(labels, outcome.quantities)),
            'profits': outcome.profits, 'total-profit': outcome.total_profit,
            'consumer-surplus': outcome.consumer_surplus, 'unique': outcome.unique,
            'multiplicity-dimension': int(outcome.multiplicity_basis.shape[1]), 'certified': outcome.certified,
            'flags': outcome.flags}


def cmd_counterfactual(config):
    c, a, m, delta, phi = _counterfactual_market(config)
    labels = a.good_labels
    report = {'bertrand': _outcome_json(equilibrium.bertrand_single_product(a, m, delta, phi), labels),
              'monopoly': _outcome_json(equilibrium.monopoly_closed_forms(a, m, delta, phi), labels)}
    if c['firms']:
        if len(c['firms']) != a.n_goods:
            raise ConfigError(f"counterfactual:firms lists {len(c['firms'])} firms for {a.n_goods} goods")
        own = equilibrium.Ownership.from_firms(c['firms'])
        report['ownership'] = _outcome_json(equilibrium.multiproduct_equilibrium(a, m, delta, phi, own), labels)

    stockouts = []
    for good in c['stockouts']:
        i = a.good_index(good)
        dq, d_profit, d_cs = equilibrium.stockout_delta(a, m, delta, phi, i, quantity_scale=c['quantity-scale'])
        ratio = d_cs / d_profit if d_profit != 0 else np.nan
        if d_profit != 0 and not np.isclose(ratio, -1.5 * phi, rtol=1e-10, atol=0.0):
            raise NumericalError(f"stock-out of {good}: dCS/dProfit = {ratio} differs from -1.5 phi = {-1.5 * phi}")
        stockouts.append({'good': good, 'dq': dict(zip(labels, dq)), 'd-profit': d_profit, 'd-cs': d_cs,
                          'ratio': ratio, 'expected-ratio': -1.5 * phi})
        getLogger(__name__).info(f"stock-out {good}: dProfit {d_profit:.6g}, dCS {d_cs:.6g}, ratio {ratio:.6g}")
    report['stockouts'] = stockouts
    io.write_json(_out(config, 'counterfactual.json'), report, config.digest())
    print(f"monopoly quantities: {np.round(report_quantities(report['monopoly'], labels), 6).tolist()}")
    return report


def report_quantities(block, labels):
    return np.array([block['quantities'][g] for g in labels])


def cmd_screen(config):
    log = _read_log(config)
    s = config.section('screen')
    digest = config.digest()
    per_good = pd.concat([singleton_screen(log, conf, thr) for conf in s['confidence'] for thr in s['threshold']],
                         ignore_index=True)
    io.write_frame(_out(config, 'singleton-screen.csv'), per_good, digest)
    io.write_frame(_out(config, 'singleton-grid.csv'), screen_grid(log, s['confidence'], s['threshold']), digest)
    reduced = reduce_consideration_set(log)
    frame = pd.DataFrame(reduced.a, columns=list(reduced.basket_labels))
    frame.insert(0, 'product_id', list(reduced.good_labels))
    io.write_frame(_out(config, 'consideration-set.csv'), frame, digest)
    return reduced


def cmd_fixture(config, corner_heavy=False):
    market = synthetic_market(seed=config.get('run:seed'), corner_heavy=corner_heavy)
    io.write_records_csv(_out(config, 'transactions.csv'), market.records)
    truth = {k: v for k, v in market.truth.items() if k not in ('m',)}
    io.write_json(_out(config, 'truth.json'), truth, config.digest())
    return market


COMMANDS = {'simulate': cmd_simulate, 'proxy': cmd_proxy, 'estimate': cmd_estimate,
            'counterfactual': cmd_counterfactual, 'screen': cmd_screen, 'fixture': cmd_fixture}


def build_parser():
    parser = argparse.ArgumentParser(prog='basketdemand', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--version', action='version', version=f"basketdemand {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=None, help='YAML configuration file')
    common.add_argument('--seed', type=int, default=None, help='overrides run:seed')
    common.add_argument('--out', default=None, help='output directory, overrides run:out')
    common.add_argument('--threads', type=int, default=None, help='worker processes, overrides run:threads')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='override any setting by its colon path, e.g. simulate:n-draws=200')
    common.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ('proxy', 'estimate', 'screen'):
            p.add_argument('--input', default=None, help='transaction CSV, overrides run:input')
        if name == 'fixture':
            p.add_argument('--corner-heavy', action='store_true', help='pair and triple baskets over alternating high- and low-utility goods, so corners bind')
    return parser


def resolve_config(args):
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = parse_value(value)
    for flag, key in (('seed', 'run:seed'), ('out', 'run:out'), ('threads', 'run:threads'), ('input', 'run:input')):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return RunConfig.load(args.config, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = resolve_config(args)
        if args.command == 'fixture':
            cmd_fixture(config, corner_heavy=args.corner_heavy)
        else:
            COMMANDS[args.command](config)
    except BasketDemandError as e:
        getLogger(__name__).error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        getLogger(__name__).error(f"{args.command} failed: {e}")
        return 1
    getLogger(__name__).info(f"{args.command} finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
