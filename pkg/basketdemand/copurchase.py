"""
Co-purchase proxies for cross-price effects.

A transaction log is held as a sparse product x transaction incidence S. Co-occurrence counts C = SS' are compared
with the expectation of a bipartite configuration model that preserves product and transaction degrees; pairs
co-purchased significantly more often than expected are complements, pairs sharing complements but co-purchased
significantly less often are substitutes.

Both a scipy.sparse path and a dense numpy path are provided. The sparse one is the default; the dense one is kept
as a check for small logs.
"""

from dataclasses import dataclass
from logging import getLogger
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import sparse, stats

from .errors import InvalidInputError

DEFAULT_ALPHA_C = 0.01
DEFAULT_ALPHA_L = 0.01


class SignificanceMasks(NamedTuple):
    a_c: np.ndarray
    a_l: np.ndarray


@dataclass(frozen=True)
class TransactionLog:
    """
    Product x transaction incidence with optional unit counts and the raw records it was built from.

    records, when present, is the long-format frame of the transaction CSV (one row per transaction line).
    """
    s: sparse.csr_matrix
    product_ids: tuple
    transaction_ids: tuple
    quantities: sparse.csr_matrix = None
    records: pd.DataFrame = None

    def __post_init__(self):
        s = sparse.csr_matrix(self.s, dtype=float)
        s.data = (s.data != 0).astype(float)
        s.eliminate_zeros()
        k, t = s.shape
        if k < 2 or t < 1:
            raise InvalidInputError(f"a transaction log needs at least 2 products and 1 transaction, got {k}x{t}")
        if len(self.product_ids) != k or len(self.transaction_ids) != t:
            raise InvalidInputError("identifier counts do not match the incidence matrix")
        d_p = np.asarray(s.sum(axis=1)).ravel()
        d_t = np.asarray(s.sum(axis=0)).ravel()
        if (d_p == 0).any() or (d_t == 0).any():
            raise InvalidInputError(f"empty products {np.flatnonzero(d_p == 0).tolist()} "
                                    f"or transactions {np.flatnonzero(d_t == 0).tolist()} in the log")
        object.__setattr__(self, 's', s)
        object.__setattr__(self, 'product_ids', tuple(self.product_ids))
        object.__setattr__(self, 'transaction_ids', tuple(self.transaction_ids))
        if self.quantities is not None:
            object.__setattr__(self, 'quantities', sparse.csr_matrix(self.quantities, dtype=float))

    @classmethod
    def from_incidence(cls, matrix, product_ids=None, transaction_ids=None):
        """Build a log from a dense or sparse K x T matrix of unit counts (any nonzero entry is a purchase)."""
        quantities = sparse.csr_matrix(matrix, dtype=float)
        k, t = quantities.shape
        product_ids = tuple(product_ids) if product_ids is not None else tuple(f"p{i}" for i in range(k))
        transaction_ids = tuple(transaction_ids) if transaction_ids is not None else tuple(f"t{i}" for i in range(t))
        return cls(quantities.copy(), product_ids, transaction_ids, quantities=quantities)

    @classmethod
    def from_records(cls, records):
        """Build a log from transaction rows with at least transaction_id, product_id and quantity columns."""
        products = np.sort(records['product_id'].astype(str).unique())
        transactions = np.sort(records['transaction_id'].astype(str).unique())
        rows = pd.Index(products).get_indexer(records['product_id'].astype(str))
        cols = pd.Index(transactions).get_indexer(records['transaction_id'].astype(str))
        quantities = sparse.coo_matrix((records['quantity'].to_numpy(dtype=float), (rows, cols)),
                                       shape=(products.size, transactions.size)).tocsr()
        getLogger(__name__).info(f"transaction log: {products.size} products, {transactions.size} transactions")
        return cls(quantities.copy(), tuple(products), tuple(transactions), quantities=quantities,
                   records=records.reset_index(drop=True))

    @property
    def n_products(self):
        return self.s.shape[0]

    @property
    def n_transactions(self):
        return self.s.shape[1]

    def duplicated(self, times=2):
        """The same log repeated `times` times, with fresh transaction ids."""
        s = sparse.hstack([self.s] * times).tocsr()
        ids = tuple(f"{tid}#{n}" for n in range(times) for tid in self.transaction_ids)
        return TransactionLog(s, self.product_ids, ids)


def degree_diagonals(log):
    d_p = np.asarray(log.s.sum(axis=1)).ravel()
    d_t = np.asarray(log.s.sum(axis=0)).ravel()
    return d_p, d_t


def cooccurrence(log):
    return np.asarray((log.s @ log.s.T).todense())


def hollow(m):
    m = np.array(m, dtype=float)
    np.fill_diagonal(m, 0.0)
    return m


def complement_cosine(log, path='sparse'):
    """
    Cosine of the degree-normalised purchase patterns, Xi_ab / sqrt(Xi_aa Xi_bb) with
    Xi = D_P^-1 S D_T^-1 S' D_P^-1. Unit diagonal; hollowing happens in build_proxy.
    """
    d_p, d_t = degree_diagonals(log)
    if path == 'sparse':
        left = sparse.diags(1.0 / d_p) @ log.s
        xi = np.asarray((left @ sparse.diags(1.0 / d_t) @ left.T).todense())
    elif path == 'dense':
        s = log.s.toarray()
        left = s / d_p[:, None]
        xi = (left / d_t[None, :]) @ left.T
    else:
        raise InvalidInputError(f"unknown evaluation path {path!r}")
    norm = np.sqrt(np.diag(xi))
    cos = xi / np.outer(norm, norm)
    return np.clip(0.5 * (cos + cos.T), 0.0, 1.0)


def bicm_expected(log):
    """
    Expected common transactions under the degree-preserving null model,

        mu_ab = d_a d_b (mean(d_t^2) - mean(d_t)) / ((1/K) (sum d_t)^2)
    """
    d_p, d_t = degree_diagonals(log)
    k, t = log.s.shape
    spread = (np.sum(d_t ** 2) - np.sum(d_t)) / t
    scale = np.sum(d_t) ** 2 / k
    return np.outer(d_p, d_p) * spread / scale


def significance_masks(log, alpha_c=DEFAULT_ALPHA_C, alpha_l=DEFAULT_ALPHA_L, mu=None):
    """
    a_c flags pairs with P(X >= c_ab) < alpha_c and a_l pairs with P(X <= c_ab) < alpha_l, X ~ Poisson(mu_ab).
    Pairs with mu_ab = 0 carry no information and are never flagged.
    """
    for name, alpha in (('alpha_c', alpha_c), ('alpha_l', alpha_l)):
        if not 0 < alpha < 1:
            raise InvalidInputError(f"{name} must lie in (0, 1), got {alpha}")
    mu = bicm_expected(log) if mu is None else mu
    counts = cooccurrence(log)
    informative = mu > 0
    safe_mu = np.where(informative, mu, 1.0)
    upper = stats.poisson.sf(counts - 1, safe_mu)
    lower = stats.poisson.cdf(counts, safe_mu)
    a_c = hollow(informative & (upper < alpha_c))
    a_l = hollow(informative & (lower < alpha_l))
    getLogger(__name__).debug(f"significant pairs: {int(a_c.sum()) // 2} complements, {int(a_l.sum()) // 2} low")
    return SignificanceMasks(a_c, a_l)


def second_order_cosine(cosines):
    """(CC')_ab / (sqrt(sum_k C_ak) sqrt(sum_k C_bk)): how alike two products' complement profiles are."""
    cosines = np.asarray(cosines, dtype=float)
    row = np.sqrt(cosines.sum(axis=1))
    row = np.where(row > 0, row, 1.0)
    return np.clip((cosines @ cosines.T) / np.outer(row, row), 0.0, 1.0)


def substitute_measure(log, masks, cosines):
    """W_s = I{A_c'A_c > 0} o A_l o cos(theta_s), hollowed."""
    shared = (masks.a_c.T @ masks.a_c) > 0
    return hollow(shared * masks.a_l * second_order_cosine(cosines))


def row_normalize(w):
    w = np.asarray(w, dtype=float)
    sums = w.sum(axis=1, keepdims=True)
    return np.divide(w, sums, out=np.zeros_like(w), where=sums > 0)


@dataclass(frozen=True)
class ProxyMatrices:
    w_c: np.ndarray
    w_s: np.ndarray
    a_c: np.ndarray
    a_l: np.ndarray
    mu: np.ndarray
    alpha_c: float
    alpha_l: float
    product_ids: tuple = ()

    def select(self, which='s'):
        """The proxy used for spatial lags: 'c', 's' or 'both' (their elementwise mean)."""
        if which == 'c':
            return self.w_c
        if which == 's':
            return self.w_s
        if which == 'both':
            return 0.5 * (self.w_c + self.w_s)
        raise InvalidInputError(f"unknown proxy selection {which!r}")

    def summary(self):
        k = self.w_c.shape[0]
        pairs = k * (k - 1)
        return {'n-products': k,
                'alpha-c': self.alpha_c,
                'alpha-l': self.alpha_l,
                'complement-pairs': int(self.a_c.sum()) // 2,
                'low-cooccurrence-pairs': int(self.a_l.sum()) // 2,
                'w-c-density': float((self.w_c > 0).sum() / pairs) if pairs else 0.0,
                'w-s-density': float((self.w_s > 0).sum() / pairs) if pairs else 0.0}


def build_proxy(log, alpha_c=DEFAULT_ALPHA_C, alpha_l=DEFAULT_ALPHA_L, normalize=False, path='sparse'):
    mu = bicm_expected(log)
    masks = significance_masks(log, alpha_c, alpha_l, mu=mu)
    cosines = complement_cosine(log, path=path)
    w_c = hollow(masks.a_c * cosines)
    w_s = substitute_measure(log, masks, cosines)
    if normalize:
        w_c, w_s = row_normalize(w_c), row_normalize(w_s)
    getLogger(__name__).info(f"proxy built for {log.n_products} products: "
                             f"{int((w_c > 0).sum()) // 2} complement and {int((w_s > 0).sum()) // 2} substitute links")
    return ProxyMatrices(w_c, w_s, masks.a_c, masks.a_l, mu, alpha_c, alpha_l, log.product_ids)
