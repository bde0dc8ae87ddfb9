import numpy as np
import pytest
from numpy.testing import assert_allclose

from basketdemand import demand, linalg
from basketdemand.demand import BindingMode, ConsiderationSet, DemandPrimitives
from basketdemand.errors import DomainError, InvalidInputError, ModelAssumptionError

from conftest import random_baskets, random_pd


@pytest.fixture
def uniform_prim():
    return DemandPrimitives(delta=[2.0, 2.0, 2.0], phi=-0.1, prices=[1.0, 1.0, 1.0])


@pytest.fixture
def corner_case():
    """Two close substitutes where the weaker one is priced out."""
    m = np.array([[1.0, 0.9], [0.9, 1.0]])
    return np.eye(2), m, DemandPrimitives(delta=[3.0, 1.0], phi=-0.1, prices=[1.0, 1.0])


def test_unconstrained_symmetric_example(uniform_m, uniform_prim):
    q = demand.demand_unconstrained(uniform_m, uniform_prim).q
    assert_allclose(q, np.full(3, 1.9 / 1.2), atol=1e-12)


def test_constrained_symmetric_example(breakfast_a, uniform_m, uniform_prim):
    result = demand.demand_constrained(breakfast_a, uniform_m, uniform_prim)
    side = 7.6 / 7.0
    assert_allclose(result.q, [side, 2 * side, side], atol=1e-9)
    assert not result.lambda_active.any()
    assert result.binding_mode is BindingMode.LF_ONLY
    assert (result.z >= 0).all()
    assert_allclose(breakfast_a @ result.z, result.q, atol=1e-12)


def test_consideration_set_validation():
    with pytest.raises(InvalidInputError):
        ConsiderationSet(np.array([[1.0, -1.0], [0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        ConsiderationSet(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(InvalidInputError):
        ConsiderationSet(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        ConsiderationSet(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    lenient = ConsiderationSet(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), strict=False)
    assert lenient.n_goods == 3 and lenient.rank == 2


def test_consideration_set_labels(breakfast_a):
    cs = ConsiderationSet(breakfast_a, good_labels=('milk', 'bacon', 'pasta'))
    assert cs.good_index('bacon') == 1
    assert cs.basket_labels == ('b0', 'b1', 'b2', 'b3')
    assert cs.rank == 2
    with pytest.raises(InvalidInputError):
        cs.good_index('eggs')
    with pytest.raises(InvalidInputError):
        ConsiderationSet(breakfast_a, good_labels=('milk', 'bacon'))


def test_primitives_validation():
    with pytest.raises(InvalidInputError):
        DemandPrimitives(delta=[1.0], phi=0.1, prices=[1.0])
    with pytest.raises(InvalidInputError):
        DemandPrimitives(delta=[1.0], phi=-1.0, prices=[2.0])
    with pytest.raises(InvalidInputError):
        DemandPrimitives(delta=[1.0, 1.0], phi=-1.0, prices=[0.5])


def test_identity_baskets_nest_unconstrained(rng):
    for _ in range(50):
        k = int(rng.integers(2, 6))
        m = random_pd(rng, k, spread=0.2)
        prim = DemandPrimitives(delta=rng.uniform(2, 3, k), phi=-0.5, prices=rng.uniform(0, 1, k))
        free = demand.demand_unconstrained(m, prim).q
        assert np.abs(demand.demand_constrained(np.eye(k), m, prim, enforce_nn=False).q - free).max() <= 1e-8
        wide = random_baskets(rng, k, k + 2, full_row_rank=True)
        assert np.abs(demand.demand_constrained(wide, m, prim, enforce_nn=False).q - free).max() <= 1e-8


def test_corner_solution(corner_case):
    a, m, prim = corner_case
    assert_allclose(demand.demand_unconstrained(m, prim).q, [11.0, -9.0], atol=1e-9)
    result = demand.demand_constrained(a, m, prim)
    assert_allclose(result.q, [2.9, 0.0], atol=1e-9)
    assert result.lambda_active.tolist() == [False, True]
    assert result.binding_mode is BindingMode.NN_ONLY
    assert_allclose(demand.basket_multipliers(a, m, prim.intercept, result.z), [0.0, 0.9 * 2.9 - 0.9], atol=1e-9)


def test_corner_wedge(corner_case, breakfast_a, uniform_m, uniform_prim):
    a, m, prim = corner_case
    assert_allclose(demand.corner_wedge(a, m, prim), [2.9 - 11.0, 9.0], atol=1e-9)
    assert_allclose(demand.corner_wedge(breakfast_a, uniform_m, uniform_prim), 0.0, atol=1e-9)


def test_face_jacobian_drops_clamped_baskets(corner_case):
    a, m, prim = corner_case
    assert_allclose(demand.jacobian(a, m, prim), [[-0.1, 0.0], [0.0, 0.0]], atol=1e-12)


def test_elasticity_undefined_at_zero_demand(corner_case):
    a, m, prim = corner_case
    with pytest.raises(DomainError) as info:
        demand.elasticity(a, m, prim)
    assert info.value.goods == [1]


def test_jacobian_matches_finite_differences(breakfast_a, uniform_m, uniform_prim):
    jac = demand.jacobian(breakfast_a, uniform_m, uniform_prim)
    assert_allclose(jac, uniform_prim.phi * linalg.projector(breakfast_a, uniform_m), atol=1e-12)
    h = 1e-4
    base = demand.demand_constrained(breakfast_a, uniform_m, uniform_prim).q
    for b in range(3):
        bumped = uniform_prim.prices.copy()
        bumped[b] += h
        q = demand.demand_constrained(breakfast_a, uniform_m, uniform_prim.with_prices(bumped)).q
        assert_allclose((q - base) / h, jac[:, b], atol=1e-5)


def test_elasticity_scales_jacobian(breakfast_a, uniform_m, uniform_prim):
    el = demand.elasticity(breakfast_a, uniform_m, uniform_prim)
    q = demand.demand_constrained(breakfast_a, uniform_m, uniform_prim).q
    jac = demand.jacobian(breakfast_a, uniform_m, uniform_prim)
    assert el[0, 1] == pytest.approx(jac[0, 1] * 1.0 / q[0])
    assert (np.diag(el) < 0).all()


def test_law_of_demand(rng):
    for _ in range(100):
        k, j = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        a = random_baskets(rng, k, j)
        m = random_pd(rng, k)
        prim = DemandPrimitives(delta=rng.uniform(2, 4, k), phi=-0.5, prices=rng.uniform(0, 1, k))
        assert np.linalg.eigvalsh(linalg.symmetrize(demand.jacobian(a, m, prim))).max() <= 1e-9
        other = prim.with_prices(prim.prices + rng.uniform(0, 0.5, k))
        dq = demand.demand_constrained(a, m, other).q - demand.demand_constrained(a, m, prim).q
        assert dq @ (other.prices - prim.prices) <= 1e-9


def test_constrained_optimum_beats_feasible_bundles(rng, breakfast_a, uniform_m, uniform_prim):
    best = demand.demand_constrained(breakfast_a, uniform_m, uniform_prim).q
    u_best = demand.utility(uniform_m, uniform_prim, best)
    for _ in range(100):
        q = breakfast_a @ rng.uniform(0, 1, 4)
        assert demand.utility(uniform_m, uniform_prim, q) <= u_best + 1e-12
    free = demand.demand_unconstrained(uniform_m, uniform_prim).q
    assert demand.utility(uniform_m, uniform_prim, free) >= u_best


def test_price_change_sensitivity(rng, breakfast_a, uniform_m):
    v = rng.normal(size=4)
    assert demand.lf_sensitivity_gap(breakfast_a, np.eye(3), breakfast_a @ v) <= 1e-10
    assert demand.lf_sensitivity_gap(breakfast_a, uniform_m, uniform_m @ breakfast_a @ v) <= 1e-10
    # (1, -1, 1) is orthogonal to both basket directions
    assert demand.lf_sensitivity_gap(breakfast_a, uniform_m, [1.0, -1.0, 1.0]) > 1e-3
    assert demand.lf_sensitivity_gap(np.eye(3), uniform_m, [1.0, -1.0, 1.0]) <= 1e-10


def test_dimension_mismatch_and_indefinite_m(breakfast_a, uniform_prim):
    with pytest.raises(InvalidInputError):
        demand.demand_constrained(breakfast_a, np.eye(2), uniform_prim)
    with pytest.raises(ModelAssumptionError):
        demand.demand_constrained(breakfast_a, -np.eye(3), uniform_prim)


def _rank_deficient_instance(rng):
    """Three goods and four baskets where the third good always moves with the first two."""
    b = random_baskets(rng, 2, 4)
    a = np.vstack([b, b[0] + b[1]])
    prim = DemandPrimitives(delta=rng.uniform(1, 3, 3), phi=-0.5, prices=rng.uniform(0, 1, 3))
    return a, random_pd(rng, 3), prim


def test_nullspace_component_leaves_demand_unchanged(rng):
    for _ in range(50):
        a, m, prim = _rank_deficient_instance(rng)
        free = demand.demand_constrained(a, m, prim, enforce_nn=False)
        kernel = linalg.pseudoinverse(a).nullspace_basis
        assert kernel.shape[1] >= 1
        z = free.z + kernel @ rng.normal(0.0, 3.0, kernel.shape[1])
        assert np.abs(a @ z - free.q).max() <= 1e-10
        assert_allclose(demand.basket_multipliers(a, m, prim.intercept, z), 0.0, atol=1e-9)


def test_active_face_never_steepens_own_price_response(rng):
    clamped = 0
    for _ in range(200):
        k, j = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        a = random_baskets(rng, k, j)
        m = random_pd(rng, k, spread=0.6)
        prim = DemandPrimitives(delta=rng.uniform(0.5, 4, k), phi=-0.5, prices=rng.uniform(0, 0.9, k))
        clamped += int(demand.demand_constrained(a, m, prim).lambda_active.any())
        face = np.abs(np.diag(demand.jacobian(a, m, prim)))
        full = np.abs(np.diag(prim.phi * linalg.projector(a, m)))
        assert (face <= full + 1e-10).all()
    assert clamped > 0


def test_constrained_demand_matches_utility_grid_search(rng):
    n = 21
    for _ in range(10):
        a, m, prim = _rank_deficient_instance(rng)
        result = demand.demand_constrained(a, m, prim)
        top = 1.25 * result.z.max() + 0.5
        axis = np.linspace(0.0, top, n)
        z = np.stack(np.meshgrid(*[axis] * 4, indexing='ij'), axis=-1).reshape(-1, 4)
        q = z @ a.T
        values = q @ prim.intercept - 0.5 * np.einsum('ij,jk,ik->i', q, m, q)
        best = demand.utility(m, prim, result.q)
        step = axis[1] - axis[0]
        # the grid point nearest the optimum stays on every clamped face, so only curvature is lost
        bound = np.linalg.eigvalsh(a.T @ m @ a).max() * step ** 2 / 2
        assert best >= values.max() - 1e-9
        assert best - values.max() <= bound + 1e-9


def test_jacobian_with_one_clamped_basket_matches_finite_differences(rng):
    h = 1e-5
    checked = 0
    for _ in range(5000):
        a = random_baskets(rng, 3, 3, full_row_rank=True)
        m = random_pd(rng, 3, spread=0.6)
        prim = DemandPrimitives(delta=rng.uniform(0.5, 4, 3), phi=-0.5, prices=rng.uniform(0.1, 0.9, 3))
        if np.linalg.cond(a.T @ m @ a) > 1e4:
            continue
        result = demand.demand_constrained(a, m, prim)
        lam = demand.basket_multipliers(a, m, prim.intercept, result.z)
        active = result.lambda_active
        if active.sum() != 1 or lam[active].min() <= 1e-3 or result.z[~active].min() <= 1e-3:
            continue
        jac = demand.jacobian(a, m, prim)
        for b in range(3):
            up, down = prim.prices.copy(), prim.prices.copy()
            up[b] += h
            down[b] -= h
            q_up = demand.demand_constrained(a, m, prim.with_prices(up)).q
            q_down = demand.demand_constrained(a, m, prim.with_prices(down)).q
            assert_allclose((q_up - q_down) / (2 * h), jac[:, b], rtol=1e-4, atol=1e-6)
        checked += 1
        if checked == 10:
            break
    assert checked == 10
