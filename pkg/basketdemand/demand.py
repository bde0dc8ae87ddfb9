"""
Consumer side of the quadratic-utility model: unconstrained and consideration-set-constrained demand, the local
price Jacobian, elasticities and the corner-solution wedge.

Constrained demand is q = A z with basket intensities z. Without the non-negativity condition z is the minimum-norm
solve and q = Sigma (delta + phi p); with it z solves the M-weighted NNLS and some baskets clamp at zero.

The *_from_intercept functions take the marginal-utility vector c = delta + phi p directly. The equilibrium and
simulation code call them at computed prices, where c need not be positive.
"""

from dataclasses import dataclass
from enum import Enum
from logging import getLogger

import numpy as np

from . import linalg
from .errors import DomainError, InvalidInputError

ACTIVE_Z_REL_TOL = 1e-10
MULTIPLIER_TOL = 1e-10


class BindingMode(str, Enum):
    NONE = 'none'
    NN_ONLY = 'NN-only'
    LF_ONLY = 'LF-only'
    NN_AND_LF = 'NN-and-LF'

    @classmethod
    def classify(cls, nn_binds, lf_binds):
        if nn_binds and lf_binds:
            return cls.NN_AND_LF
        if nn_binds:
            return cls.NN_ONLY
        if lf_binds:
            return cls.LF_ONLY
        return cls.NONE


@dataclass(frozen=True)
class ConsiderationSet:
    """
    Nonnegative K x J matrix whose columns are the shopping baskets a consumer evaluates.

    Sets read off observed transactions may contain goods that are always bought together, so strict=False lets
    duplicate rows through (with a warning). Every other invariant is always enforced.
    """
    a: np.ndarray
    good_labels: tuple = None
    basket_labels: tuple = None
    strict: bool = True

    def __post_init__(self):
        a = linalg.as_matrix(self.a, 'consideration set')
        if (a < 0).any():
            raise InvalidInputError("consideration set has negative entries")
        k, j = a.shape
        if k == 0 or j == 0:
            raise InvalidInputError(f"consideration set must be non-empty, got shape {a.shape}")
        zero_rows = np.flatnonzero(~a.any(axis=1))
        zero_cols = np.flatnonzero(~a.any(axis=0))
        if zero_rows.size or zero_cols.size:
            raise InvalidInputError(f"consideration set has zero rows {zero_rows.tolist()} / columns {zero_cols.tolist()}")
        if np.unique(a, axis=1).shape[1] != j:
            raise InvalidInputError("consideration set has duplicate baskets")
        if np.unique(a, axis=0).shape[0] != k:
            if self.strict:
                raise InvalidInputError("consideration set has duplicate goods (identical rows)")
            getLogger(__name__).warning("consideration set has goods with identical basket rows")

        goods = tuple(self.good_labels) if self.good_labels is not None else tuple(f"g{i}" for i in range(k))
        baskets = tuple(self.basket_labels) if self.basket_labels is not None else tuple(f"b{i}" for i in range(j))
        if len(goods) != k or len(baskets) != j:
            raise InvalidInputError(f"label counts ({len(goods)}, {len(baskets)}) do not match shape {a.shape}")
        a.flags.writeable = False
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'good_labels', goods)
        object.__setattr__(self, 'basket_labels', baskets)

    @classmethod
    def identity(cls, k, good_labels=None):
        return cls(np.eye(k), good_labels=good_labels)

    @property
    def n_goods(self):
        return self.a.shape[0]

    @property
    def n_baskets(self):
        return self.a.shape[1]

    @property
    def rank(self):
        return linalg.matrix_rank(self.a)

    def good_index(self, label):
        try:
            return self.good_labels.index(label)
        except ValueError:
            raise InvalidInputError(f"unknown good {label!r}") from None


@dataclass(frozen=True)
class DemandPrimitives:
    delta: np.ndarray
    phi: float
    prices: np.ndarray

    def __post_init__(self):
        delta = linalg.as_vector(self.delta, 'delta')
        prices = linalg.as_vector(self.prices, 'prices', delta.size)
        phi = float(self.phi)
        if not phi < 0:
            raise InvalidInputError(f"phi must be negative, got {phi}")
        if (delta <= 0).any():
            raise InvalidInputError("delta must be positive")
        if (prices < 0).any():
            raise InvalidInputError("prices must be nonnegative")
        if (delta + phi * prices <= 0).any():
            bad = np.flatnonzero(delta + phi * prices <= 0).tolist()
            raise InvalidInputError(f"initial marginal utilities delta + phi p are not positive for goods {bad}")
        object.__setattr__(self, 'delta', delta)
        object.__setattr__(self, 'prices', prices)
        object.__setattr__(self, 'phi', phi)

    @property
    def intercept(self):
        return self.delta + self.phi * self.prices

    def with_prices(self, prices):
        return DemandPrimitives(self.delta, self.phi, prices)


@dataclass(frozen=True)
class DemandResult:
    q: np.ndarray
    z: np.ndarray = None
    lambda_active: np.ndarray = None
    binding_mode: BindingMode = BindingMode.NONE


def _check_dims(a, m):
    a = linalg.basket_matrix(a)
    m = linalg.check_pd(m)
    if a.shape[0] != m.shape[0]:
        raise InvalidInputError(f"consideration set has {a.shape[0]} goods but M is {m.shape[0]}x{m.shape[0]}")
    return a, m


def demand_unconstrained(m, prim):
    """q = M^-1 (delta + phi p). Negative entries are returned as they are."""
    m = linalg.check_pd(m)
    if m.shape[0] != prim.delta.size:
        raise InvalidInputError(f"M is {m.shape[0]}x{m.shape[0]} but delta has {prim.delta.size} goods")
    q = np.linalg.solve(m, prim.intercept)
    if (q < 0).any():
        getLogger(__name__).debug(f"unconstrained demand negative for goods {np.flatnonzero(q < 0).tolist()}")
    return DemandResult(q=q, z=None, lambda_active=np.zeros(0, dtype=bool), binding_mode=BindingMode.NONE)


def basket_multipliers(a, m, intercept, z):
    """Shadow prices lambda = A'M(Az) - A'c of the z >= 0 constraints; positive entries mark clamped baskets."""
    return a.T @ (m @ (a @ z)) - a.T @ intercept


def _active_baskets(a, m, intercept, z):
    lam = basket_multipliers(a, m, intercept, z)
    scale = max(np.abs(a.T @ intercept).max(initial=0.0), 1.0)
    at_zero = z <= ACTIVE_Z_REL_TOL * max(z.max(initial=0.0), 0.0)
    return at_zero & (lam > MULTIPLIER_TOL * scale)


def solve_basket_demand(a, m, intercept, enforce_nn=True, coverage=None):
    """
    Constrained demand for an arbitrary marginal-utility vector c.

    With enforce_nn the basket intensities solve min_{z>=0} ||Az - Sigma c||^2_M, which has the same minimiser as
    maximising the quadratic utility over z >= 0. Passing a precomputed cone coverage vector skips that check.
    """
    a, m = _check_dims(a, m)
    intercept = linalg.as_vector(intercept, 'intercept', a.shape[0])
    inner = linalg.pseudoinverse(linalg.symmetrize(a.T @ m @ a)).pinv
    if coverage is None:
        coverage = linalg.cone_coverage(a)
    lf_binds = not bool(np.all(coverage))

    if not enforce_nn:
        z = inner @ (a.T @ intercept)
        return DemandResult(q=a @ z, z=z, lambda_active=np.zeros(a.shape[1], dtype=bool),
                            binding_mode=BindingMode.classify(False, lf_binds))

    sigma = linalg.symmetrize(a @ inner @ a.T)
    solution = linalg.nnls(a, sigma @ intercept, weight=m)
    z = solution.z
    active = _active_baskets(a, m, intercept, z)
    mode = BindingMode.classify(bool(active.any()), lf_binds)
    getLogger(__name__).debug(f"constrained demand: {int(active.sum())} clamped baskets, mode {mode.value}")
    return DemandResult(q=a @ z, z=z, lambda_active=active, binding_mode=mode)


def demand_constrained(a, m, prim, enforce_nn=True):
    return solve_basket_demand(a, m, prim.intercept, enforce_nn=enforce_nn)


def face_jacobian(a, m, intercept, phi, coverage=None):
    """phi * Sigma_F where F keeps the baskets that are not clamped at zero under the NN solve."""
    a, m = _check_dims(a, m)
    result = solve_basket_demand(a, m, intercept, enforce_nn=True, coverage=coverage)
    face = a[:, ~result.lambda_active]
    if face.shape[1] == 0:
        return np.zeros((a.shape[0], a.shape[0]))
    return phi * linalg.projector(face, m)


def jacobian(a, m, prim):
    return face_jacobian(a, m, prim.intercept, prim.phi)


def elasticity(a, m, prim):
    """Entry (a, b) is dq_a/dp_b * p_b / q_a on the active face."""
    jac = jacobian(a, m, prim)
    q = demand_constrained(a, m, prim, enforce_nn=True).q
    zero = np.flatnonzero(q <= 1e-12)
    if zero.size:
        labels = [getattr(a, 'good_labels', range(q.size))[i] for i in zero]
        raise DomainError(f"elasticity undefined at zero demand for goods {labels}", goods=labels)
    return jac * prim.prices[None, :] / q[:, None]


def corner_wedge(a, m, prim):
    """q_NN - q_free, nonzero only when some basket clamps at zero."""
    a, m = _check_dims(a, m)
    coverage = linalg.cone_coverage(a)
    constrained = solve_basket_demand(a, m, prim.intercept, enforce_nn=True, coverage=coverage)
    free = solve_basket_demand(a, m, prim.intercept, enforce_nn=False, coverage=coverage)
    return constrained.q - free.q


def utility(m, prim, q):
    """Quadratic utility net of the price term: q'(delta + phi p) - 1/2 q'Mq."""
    m = linalg.as_matrix(m, 'interaction matrix')
    q = linalg.as_vector(q, 'q', m.shape[0])
    return float(q @ prim.intercept - 0.5 * q @ m @ q)


def lf_sensitivity_gap(a, m, dp):
    """||(M^-1 - Sigma) dp||: zero for price changes in M col(A) (col(A) itself when M = I), positive otherwise."""
    a, m = _check_dims(a, m)
    dp = linalg.as_vector(dp, 'dp', a.shape[0])
    return float(np.linalg.norm((np.linalg.inv(m) - linalg.projector(a, m)) @ dp))
