"""
Numerical kernels shared by the demand, equilibrium and estimation code.

Everything here is a pure function of its inputs. Matrices are coerced to Fortran-ordered float64 arrays so that
reductions happen in the same order on every platform.

The M-weighted projector Sigma = A(A'MA)^+A' is the object most of the package is built around. When the consideration
set A has full row rank it collapses to M^-1; otherwise it is the M-orthogonal projection of M^-1 onto the column span
of A.

TODO: - nnls re-solves the passive-set least squares from scratch each step; a QR update would be faster on the
  large control-function problems
"""

from dataclasses import dataclass
from logging import getLogger

import numpy as np

from .errors import ConvergenceError, InvalidInputError, ModelAssumptionError

PINV_REL_TOL = 1e-12
PD_REL_TOL = 1e-10
WEIGHT_JITTER = 1e-12
CONE_TOL = 1e-8
NNLS_ITER_FACTOR = 10


@dataclass(frozen=True)
class PseudoinverseResult:
    pinv: np.ndarray
    rank: int
    nullspace_basis: np.ndarray
    tolerance_used: float


@dataclass(frozen=True)
class NnlsSolution:
    z: np.ndarray
    residual_norm: float
    active_set: tuple
    iterations: int


def as_matrix(m, name='matrix'):
    """Return m as a finite 2-d Fortran-ordered float array or raise InvalidInputError."""
    try:
        arr = np.asfortranarray(np.asarray(m, dtype=float))
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name} could not be read as a real matrix: {e}") from e
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1, order='F')
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf entries")
    return arr


def as_vector(v, name='vector', size=None):
    try:
        arr = np.asarray(v, dtype=float).ravel()
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name} could not be read as a real vector: {e}") from e
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf entries")
    if size is not None and arr.size != size:
        raise InvalidInputError(f"{name} has length {arr.size}, expected {size}")
    return arr


def basket_matrix(a):
    """Accept either a ConsiderationSet (anything with an ``a`` attribute) or a plain array."""
    return as_matrix(getattr(a, 'a', a), 'consideration set')


def symmetrize(m):
    return np.asfortranarray(0.5 * (m + m.T))


def pseudoinverse(m, rel_tol=PINV_REL_TOL):
    """
    Moore-Penrose pseudoinverse by SVD. Singular values below rel_tol * sigma_max are treated as exact zeros.

    The nullspace basis spans the kernel of m (its columns are right singular vectors of the dropped values).
    """
    if not 0 < rel_tol < 1:
        raise InvalidInputError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    m = as_matrix(m)
    n_rows, n_cols = m.shape
    if m.size == 0:
        return PseudoinverseResult(np.zeros((n_cols, n_rows), order='F'), 0, np.eye(n_cols, order='F'), 0.0)
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=True)
    except np.linalg.LinAlgError as e:
        raise InvalidInputError(f"SVD failed: {e}") from e

    s_max = s[0] if s.size else 0.0
    tol = rel_tol * s_max
    rank = int(np.sum(s > tol)) if s_max > 0 else 0
    pinv = (vh[:rank].T / s[:rank]) @ u[:, :rank].T
    nullspace = vh[rank:].T
    getLogger(__name__).debug(f"pseudoinverse of {n_rows}x{n_cols}: rank {rank}, tolerance {tol:.3e}")
    return PseudoinverseResult(np.asfortranarray(pinv), rank, np.asfortranarray(nullspace), float(tol))


def penrose_residual(m, pinv):
    """Largest relative violation of the four Moore-Penrose identities."""
    m = as_matrix(m)
    pinv = as_matrix(pinv)
    scale_m = max(np.abs(m).max(initial=0.0), 1.0)
    scale_p = max(np.abs(pinv).max(initial=0.0), 1.0)
    checks = [np.abs(m @ pinv @ m - m).max(initial=0.0) / scale_m,
              np.abs(pinv @ m @ pinv - pinv).max(initial=0.0) / scale_p,
              np.abs((m @ pinv).T - m @ pinv).max(initial=0.0),
              np.abs((pinv @ m).T - pinv @ m).max(initial=0.0)]
    return float(max(checks))


def min_eigenvalue(m):
    return float(np.linalg.eigvalsh(symmetrize(as_matrix(m)))[0])


def check_pd(m, name='interaction matrix'):
    """Raise ModelAssumptionError unless m is symmetric with smallest eigenvalue above 1e-10 * trace / K."""
    m = as_matrix(m, name)
    k = m.shape[0]
    if m.shape[1] != k:
        raise InvalidInputError(f"{name} must be square, got shape {m.shape}")
    if np.abs(m - m.T).max(initial=0.0) > 1e-10 * max(np.abs(m).max(initial=0.0), 1.0):
        raise ModelAssumptionError(f"{name} is not symmetric")
    floor = PD_REL_TOL * np.trace(m) / k
    lam_min = min_eigenvalue(m)
    if not lam_min > floor:
        raise ModelAssumptionError(f"{name} is not positive definite (smallest eigenvalue {lam_min:.3e})")
    return m


def sym_sqrt(m):
    """Symmetric square root of a PSD matrix; small negative eigenvalues from rounding are clipped to zero."""
    vals, vecs = np.linalg.eigh(symmetrize(as_matrix(m)))
    return np.asfortranarray((vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T)


def projector(a, m):
    """Sigma = A(A'MA)^+A' for PD M. Symmetric and PSD; equal to M^-1 when A has full row rank."""
    a = basket_matrix(a)
    m = check_pd(m)
    if a.shape[0] != m.shape[0]:
        raise InvalidInputError(f"consideration set has {a.shape[0]} goods but M is {m.shape[0]}x{m.shape[0]}")
    inner = pseudoinverse(symmetrize(a.T @ m @ a))
    return symmetrize(a @ inner.pinv @ a.T)


def projector_from_inverse(a, m_inv):
    """A(A'MA)^+A' evaluated from M^-1, as needed when only the inverse interaction matrix is estimated."""
    m_inv = check_pd(symmetrize(as_matrix(m_inv, 'inverse interaction matrix')), 'inverse interaction matrix')
    return projector(a, symmetrize(np.linalg.inv(m_inv)))


def inverse_weighted_projector(a, m_inv):
    """H A (A'HA)^+ A'H with H = M^-1. Agrees with projector(a, M) when A has full row rank."""
    a = basket_matrix(a)
    h = symmetrize(as_matrix(m_inv, 'inverse interaction matrix'))
    if a.shape[0] != h.shape[0]:
        raise InvalidInputError(f"consideration set has {a.shape[0]} goods but M^-1 is {h.shape[0]}x{h.shape[0]}")
    ha = h @ a
    inner = pseudoinverse(symmetrize(a.T @ ha))
    return symmetrize(ha @ inner.pinv @ ha.T)


def _weighted_norm(r, weight):
    if weight is None:
        return float(np.linalg.norm(r))
    return float(np.sqrt(max(r @ weight @ r, 0.0)))


def nnls(design, target, weight=None, max_iter=None):
    """
    Minimise ||design z - target||^2_weight over z >= 0 with the Lawson-Hanson active-set method.

    A weight is handled by solving the unweighted problem for R design, R target where R is the symmetric square root
    of weight + 1e-12 I, so positive semi-definite weights are accepted. The residual norm is reported in the
    supplied weight.
    """
    design = as_matrix(design, 'design')
    n_rows, n_cols = design.shape
    target = as_vector(target, 'target', n_rows)
    if weight is not None:
        weight = symmetrize(as_matrix(weight, 'weight'))
        if weight.shape != (n_rows, n_rows):
            raise InvalidInputError(f"weight is {weight.shape}, expected {(n_rows, n_rows)}")
        root = sym_sqrt(weight + WEIGHT_JITTER * np.eye(n_rows))
        b_mat, b_vec = root @ design, root @ target
    else:
        b_mat, b_vec = design, target
    if max_iter is None:
        max_iter = NNLS_ITER_FACTOR * max(n_cols, 1)

    tol = 10 * np.finfo(float).eps * max(np.abs(b_mat).sum(axis=0).max(initial=0.0), 1.0) * max(n_rows, n_cols)
    passive = np.zeros(n_cols, dtype=bool)
    # columns that fell inside the span of the passive set; retried once the passive set changes
    excluded = np.zeros(n_cols, dtype=bool)
    x = np.zeros(n_cols)
    w = b_mat.T @ b_vec
    iterations = 0

    def _solution(z):
        z = np.where(passive, np.clip(z, 0.0, None), 0.0)
        return NnlsSolution(z, _weighted_norm(design @ z - target, weight), tuple(np.flatnonzero(z == 0)), iterations)

    def _ls(mask):
        s = np.zeros(n_cols)
        s[mask] = np.linalg.lstsq(b_mat[:, mask], b_vec, rcond=None)[0]
        return s

    while True:
        candidates = np.where(passive | excluded, -np.inf, w)
        if candidates.size == 0 or candidates.max() <= tol:
            break
        if iterations >= max_iter:
            raise ConvergenceError(f"nnls exceeded {max_iter} iterations", best=_solution(x))
        iterations += 1
        j = int(np.argmax(candidates))
        passive[j] = True
        s = _ls(passive)
        if s[j] <= tol:
            passive[j] = False
            excluded[j] = True
            continue
        while s[passive].min() <= 0:
            iterations += 1
            if iterations >= max_iter:
                raise ConvergenceError(f"nnls exceeded {max_iter} iterations", best=_solution(x))
            blocking = passive & (s <= 0)
            step = x[blocking] - s[blocking]
            alpha = np.min(np.where(step > 0, x[blocking] / np.where(step > 0, step, 1.0), 0.0))
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
            s = _ls(passive)
            if not passive.any():
                break
        x = s
        excluded[:] = False
        w = b_mat.T @ (b_vec - b_mat @ x)
        getLogger(__name__).debug(f"nnls iteration {iterations}: {int(passive.sum())} passive columns")

    return _solution(x)


def nnls_kkt_violation(design, target, z, weight=None):
    """Largest violation of the NNLS optimality conditions for a candidate z (0 means optimal)."""
    design = as_matrix(design, 'design')
    weight = np.eye(design.shape[0]) if weight is None else as_matrix(weight, 'weight')
    z = as_vector(z, 'z', design.shape[1])
    grad = design.T @ weight @ (design @ z - as_vector(target, 'target', design.shape[0]))
    free = z > 0
    on_active = np.clip(-grad[~free], 0.0, None).max(initial=0.0)
    off_active = np.abs(grad[free]).max(initial=0.0)
    return float(max(on_active, off_active, np.clip(-z, 0.0, None).max(initial=0.0)))


def cone_coverage(a):
    """Entry k is True iff the unit vector e_k lies in the conical hull of A's columns."""
    a = basket_matrix(a)
    if (a < 0).any():
        raise InvalidInputError("consideration set has negative entries")
    eye = np.eye(a.shape[0])
    covered = np.array([nnls(a, eye[k]).residual_norm <= CONE_TOL for k in range(a.shape[0])])
    getLogger(__name__).debug(f"cone coverage: {int(covered.sum())}/{covered.size} unit vectors reachable")
    return covered


def matrix_rank(a):
    return pseudoinverse(basket_matrix(a)).rank
