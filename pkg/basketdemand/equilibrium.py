"""
Supply side: Bertrand-Nash prices under an ownership pattern, the monopoly closed forms, welfare and stock-out
counterfactuals.

Marginal costs are zero throughout. Demand at equilibrium is the NN-free projection q = Sigma(delta + phi p), which is
the system the first-order conditions are written for. For ownership G (symmetric, hollow) they stack to

    W p = -(1/phi) Sigma delta,    W = Omega + Sigma + Sigma o G,    Omega = diag(Sigma)

Single-product ownership gives G = 0 and a unique solution. Under monopoly W = 2 Sigma and the nullspace of Sigma
leaves prices undetermined, although quantities and profit are not.
"""

from dataclasses import dataclass, field
from logging import getLogger
from typing import NamedTuple

import numpy as np

from . import linalg
from .errors import ConvergenceError, InvalidInputError, NumericalError

CONDITION_LIMIT = 1e10
OMEGA_FLOOR = 1e-12


@dataclass(frozen=True)
class Ownership:
    g: np.ndarray
    firm_of: tuple

    def __post_init__(self):
        g = linalg.as_matrix(self.g, 'ownership matrix')
        k = g.shape[0]
        if g.shape != (k, k) or len(self.firm_of) != k:
            raise InvalidInputError(f"ownership matrix {g.shape} does not match {len(self.firm_of)} goods")
        if not np.isin(g, (0.0, 1.0)).all() or (g != g.T).any() or np.diag(g).any():
            raise InvalidInputError("ownership matrix must be symmetric, hollow and 0/1")
        same = np.equal.outer(np.asarray(self.firm_of, dtype=object), np.asarray(self.firm_of, dtype=object))
        np.fill_diagonal(same, False)
        if (same.astype(float) != g).any():
            raise InvalidInputError("ownership matrix disagrees with the good-to-firm map")
        object.__setattr__(self, 'g', g)
        object.__setattr__(self, 'firm_of', tuple(self.firm_of))

    @classmethod
    def from_firms(cls, firm_of):
        firms = np.asarray(list(firm_of), dtype=object)
        g = np.equal.outer(firms, firms).astype(float)
        np.fill_diagonal(g, 0.0)
        return cls(g, tuple(firm_of))

    @classmethod
    def singletons(cls, k):
        return cls.from_firms(range(k))

    @classmethod
    def monopoly(cls, k):
        return cls.from_firms([0] * k)

    @property
    def firms(self):
        return tuple(dict.fromkeys(self.firm_of))

    @property
    def is_single_product(self):
        return not self.g.any()

    @property
    def is_monopoly(self):
        return len(self.firms) == 1


@dataclass(frozen=True)
class EquilibriumOutcome:
    prices: np.ndarray
    quantities: np.ndarray
    profits: dict
    consumer_surplus: float
    multiplicity_basis: np.ndarray
    certified: bool = True
    flags: list = field(default_factory=list)

    @property
    def total_profit(self):
        return float(sum(self.profits.values()))

    @property
    def unique(self):
        return self.multiplicity_basis.shape[1] == 0


class StockoutDelta(NamedTuple):
    dq: np.ndarray
    d_profit: float
    d_cs: float


def consumer_surplus(m, delta, q):
    """q'delta - 1/2 q'Mq. For the projected system this equals (3/8) delta'Sigma delta at the monopoly optimum."""
    return float(q @ delta - 0.5 * q @ m @ q)


def _primitives(a, m, delta, phi):
    a = linalg.basket_matrix(a)
    m = linalg.check_pd(m)
    delta = linalg.as_vector(delta, 'delta', a.shape[0])
    if not float(phi) < 0:
        raise InvalidInputError(f"phi must be negative, got {phi}")
    return a, m, delta, float(phi), linalg.projector(a, m)


def foc_residual(sigma, delta, phi, prices, ownership=None):
    """Stacked first-order conditions Sigma delta + phi W p; zero at an equilibrium of the given ownership."""
    k = sigma.shape[0]
    g = np.zeros((k, k)) if ownership is None else ownership.g
    w = np.diag(np.diag(sigma)) + sigma + sigma * g
    return sigma @ delta + phi * (w @ prices)


def _outcome(sigma, m, delta, phi, prices, ownership, basis, certified, label):
    q = sigma @ (delta + phi * prices)
    revenue = prices * q
    profits = {}
    for firm, r in zip(ownership.firm_of, revenue):
        profits[firm] = profits.get(firm, 0.0) + float(r)
    flags = []
    if (prices < 0).any():
        flags.append(f"negative prices for goods {np.flatnonzero(prices < 0).tolist()}")
    if (q < -1e-10).any():
        flags.append(f"negative quantities for goods {np.flatnonzero(q < -1e-10).tolist()}")
    for flag in flags:
        getLogger(__name__).warning(f"{label}: {flag}")
    return EquilibriumOutcome(prices=prices, quantities=q, profits=profits,
                              consumer_surplus=consumer_surplus(m, delta, q),
                              multiplicity_basis=basis, certified=certified, flags=flags)


def bertrand_from_sigma(sigma, m, delta, phi):
    omega = np.diag(sigma)
    if (omega <= OMEGA_FLOOR).any():
        raise NumericalError(f"own-price terms of Sigma are not positive for goods {np.flatnonzero(omega <= OMEGA_FLOOR).tolist()}")
    w = np.diag(omega) + sigma
    cond = np.linalg.cond(w)
    if not cond < CONDITION_LIMIT:
        raise NumericalError(f"Omega + Sigma is singular (condition number {cond:.3e})")
    prices = -np.linalg.solve(w, sigma @ delta) / phi
    k = sigma.shape[0]
    return _outcome(sigma, m, delta, phi, prices, Ownership.singletons(k), np.zeros((k, 0)), True, 'bertrand')


def bertrand_single_product(a, m, delta, phi):
    """p* = -(1/phi)(Omega + Sigma)^-1 Sigma delta with one firm per good."""
    a, m, delta, phi, sigma = _primitives(a, m, delta, phi)
    return bertrand_from_sigma(sigma, m, delta, phi)


def multiproduct_from_sigma(sigma, m, delta, phi, own):
    k = sigma.shape[0]
    if own.g.shape != (k, k):
        raise InvalidInputError(f"ownership covers {own.g.shape[0]} goods, expected {k}")
    w = linalg.symmetrize(np.diag(np.diag(sigma)) + sigma + sigma * own.g)
    inverse = linalg.pseudoinverse(w)
    prices = -(inverse.pinv @ (sigma @ delta)) / phi
    certified = own.is_single_product or own.is_monopoly
    outcome = _outcome(sigma, m, delta, phi, prices, own, inverse.nullspace_basis, certified, 'multiproduct')
    residual = np.abs(foc_residual(sigma, delta, phi, prices, own)).max(initial=0.0)
    if residual > 1e-8 * max(np.abs(sigma @ delta).max(initial=0.0), 1.0):
        outcome.flags.append(f"first-order conditions inconsistent, residual {residual:.3e}")
    if not certified:
        outcome.flags.append("partial multi-product ownership: minimum-norm candidate, not certified as an equilibrium")
    return outcome


def multiproduct_equilibrium(a, m, delta, phi, own):
    """Minimum-norm p* = -(1/phi) W^+ Sigma delta with the nullspace of W as the multiplicity basis."""
    a, m, delta, phi, sigma = _primitives(a, m, delta, phi)
    return multiproduct_from_sigma(sigma, m, delta, phi, own)


def monopoly_from_sigma(sigma, delta, phi, m=None):
    """
    Closed forms q* = Sigma delta / 2, profit = -(1/4 phi) delta'Sigma delta, CS = (3/8) delta'Sigma delta.

    Prices are the minimum-norm point -(1/2 phi) Sigma^+ Sigma delta. When m is given the surplus is evaluated from
    the quadratic form instead of the closed form (the two agree whenever Sigma M Sigma = Sigma).
    """
    k = sigma.shape[0]
    inverse = linalg.pseudoinverse(sigma)
    quad = float(delta @ sigma @ delta)
    q = 0.5 * sigma @ delta
    prices = -(inverse.pinv @ (sigma @ delta)) / (2 * phi)
    cs = 0.375 * quad if m is None else consumer_surplus(m, delta, q)
    return EquilibriumOutcome(prices=prices, quantities=q, profits={0: -quad / (4 * phi)}, consumer_surplus=cs,
                              multiplicity_basis=inverse.nullspace_basis, certified=True)


def monopoly_closed_forms(a, m, delta, phi):
    a, m, delta, phi, sigma = _primitives(a, m, delta, phi)
    return monopoly_from_sigma(sigma, delta, phi)


def stockout_delta(a, m, delta, phi, good, quantity_scale=0.5):
    """
    Change in monopoly quantities, profit and surplus when good i is withdrawn (reduced system minus full system).

    With B = sigma_ii delta_i^2 + 2 delta_i sigma_i'delta_-i the profit change is B/(4 phi) and the surplus change
    -(3/8) B, so dCS/dProfit = -1.5 phi. quantity_scale multiplies the bracketed quantity change.
    """
    a, m, delta, phi, sigma = _primitives(a, m, delta, phi)
    k = sigma.shape[0]
    if not 0 <= good < k:
        raise InvalidInputError(f"good index {good} out of range for {k} goods")
    rest = np.arange(k) != good
    s_ii = sigma[good, good]
    s_i = sigma[rest, good]
    d_i, d_rest = delta[good], delta[rest]
    b = s_ii * d_i ** 2 + 2 * d_i * (s_i @ d_rest)
    dq = np.empty(k)
    dq[good] = -quantity_scale * (s_ii * d_i + s_i @ d_rest)
    dq[rest] = -quantity_scale * s_i * d_i
    getLogger(__name__).debug(f"stock-out of good {good}: B = {b:.6g}")
    return StockoutDelta(dq, b / (4 * phi), -0.375 * b)


def best_response_prices(sigma, delta, phi, damping=0.5, tol=1e-13, max_iter=100000, start=None):
    """
    Damped Jacobi iteration of the single-product first-order conditions

        p_i = -[(Sigma delta)_i + phi sum_{k != i} Sigma_ik p_k] / (2 phi Sigma_ii)
    """
    sigma = linalg.as_matrix(sigma, 'Sigma')
    delta = linalg.as_vector(delta, 'delta', sigma.shape[0])
    omega = np.diag(sigma)
    off = sigma - np.diag(omega)
    base = sigma @ delta
    p = np.zeros_like(delta) if start is None else linalg.as_vector(start, 'start', delta.size)
    history = []
    for it in range(max_iter):
        target = -(base + phi * (off @ p)) / (2 * phi * omega)
        step = damping * (target - p)
        p = p + step
        change = np.abs(step).max(initial=0.0)
        if it % 1000 == 0:
            history.append(change)
        if change < tol * max(np.abs(p).max(initial=0.0), 1.0):
            getLogger(__name__).debug(f"best responses converged after {it + 1} iterations")
            return p
    raise ConvergenceError(f"best-response iteration did not converge in {max_iter} steps", best=p, history=history)
