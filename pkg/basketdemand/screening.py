"""
Singleton screening and consideration-set reduction from observed transactions.

A good is a singleton when some transaction contains it alone. singleton_screen bounds the rate at which a good
is bought alone with a one-sided Jeffreys credible bound; reduce_consideration_set keeps only the unique
transactions needed to span the same cone once singleton baskets are available.
"""

from logging import getLogger

import numpy as np
import pandas as pd
from scipy import stats

from .demand import ConsiderationSet
from .errors import InvalidInputError

NEVER = 'never-singleton'
OBSERVED = 'singleton-observed'
INCONCLUSIVE = 'inconclusive'


def singleton_counts(log):
    """Per product: transactions it appears in and transactions where it is the only product."""
    s = log.s
    d_t = np.asarray(s.sum(axis=0)).ravel()
    appearances = np.asarray(s.sum(axis=1)).ravel()
    alone = np.asarray(s[:, d_t == 1].sum(axis=1)).ravel()
    return appearances.astype(int), alone.astype(int)


def jeffreys_upper_bound(successes, trials, confidence=0.95):
    """One-sided upper credible bound of a binomial rate under the Jeffreys Beta(1/2, 1/2) prior."""
    successes = np.asarray(successes, dtype=float)
    trials = np.asarray(trials, dtype=float)
    return stats.beta.ppf(confidence, successes + 0.5, trials - successes + 0.5)


def singleton_screen(log, confidence=0.95, threshold=0.001):
    if not 0 < confidence < 1:
        raise InvalidInputError(f"confidence must lie in (0, 1), got {confidence}")
    if not 0 < threshold < 1:
        raise InvalidInputError(f"threshold must lie in (0, 1), got {threshold}")
    n, s = singleton_counts(log)
    bound = jeffreys_upper_bound(s, n, confidence)
    verdict = np.where(s > 0, OBSERVED, np.where(bound < threshold, NEVER, INCONCLUSIVE))
    out = pd.DataFrame({'product_id': log.product_ids, 'appearances': n, 'singletons': s,
                        'upper_bound': bound, 'rule_of_three': 3.0 / n, 'verdict': verdict})
    out['confidence'] = confidence
    out['threshold'] = threshold
    getLogger(__name__).info(f"singleton screen at {confidence:.3g}/{threshold:.3g}: "
                             f"{int((verdict == NEVER).sum())} of {len(out)} goods never bought alone")
    return out


def screen_grid(log, confidences=(0.9, 0.95, 0.99), thresholds=(0.01, 0.001, 0.0001)):
    """How many goods meet each (confidence, threshold) standard."""
    rows = []
    for c in confidences:
        for t in thresholds:
            verdicts = singleton_screen(log, c, t)['verdict']
            rows.append({'confidence': c, 'threshold': t, 'never-singleton': int((verdicts == NEVER).sum()),
                         'singleton-observed': int((verdicts == OBSERVED).sum()),
                         'inconclusive': int((verdicts == INCONCLUSIVE).sum())})
    return pd.DataFrame.from_records(rows)


def _unique_transactions(log):
    q = log.quantities if log.quantities is not None else log.s
    dense = np.asarray(q.todense(), dtype=float)
    return np.unique(dense, axis=1)


def reduce_consideration_set(log):
    """
    Unit baskets for every singleton good plus the smallest set of unique transactions that, together with those
    units, spans the same cone:

      - strip singleton goods from every transaction and drop those left empty
      - group by what remains
      - keep the transaction equal to the remainder when there is one, otherwise every transaction whose added
        singleton part does not dominate another's
    """
    unique = _unique_transactions(log)
    k = unique.shape[0]
    _, alone = singleton_counts(log)
    singles = alone > 0
    groups = {}
    for col in unique.T:
        residual = np.where(singles, 0.0, col)
        if not residual.any():
            continue
        groups.setdefault(residual.tobytes(), []).append(col)

    kept = []
    for members in groups.values():
        extras = [np.where(singles, m, 0.0) for m in members]
        exact = [m for m, e in zip(members, extras) if not e.any()]
        if exact:
            kept.append(exact[0])
            continue
        for i, (m, e) in enumerate(zip(members, extras)):
            dominated = any(np.all(e >= o) and np.any(e > o) for j, o in enumerate(extras) if j != i)
            if not dominated:
                kept.append(m)

    columns = [np.eye(k)[:, i] for i in np.flatnonzero(singles)] + kept
    labels = [f"single:{log.product_ids[i]}" for i in np.flatnonzero(singles)] + [f"basket{i}" for i in range(len(kept))]
    a = np.column_stack(columns)
    # first occurrence wins, so singleton units keep their place ahead of multi-good baskets
    first = np.sort(np.unique(a, axis=1, return_index=True)[1])
    if first.size < a.shape[1]:
        getLogger(__name__).warning(f"{a.shape[1] - first.size} duplicate baskets dropped from the reduced set")
        a, labels = a[:, first], [labels[i] for i in first]
    getLogger(__name__).info(f"consideration set reduced from {unique.shape[1]} unique transactions to "
                             f"{int(singles.sum())} singleton and {len(kept)} multi-good baskets")
    return ConsiderationSet(a, good_labels=log.product_ids, basket_labels=tuple(labels), strict=False)
