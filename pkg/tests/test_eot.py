import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import eot_2x2, random_simplex
from robustdyn import (ConvergenceError, Coupling, DimensionError, DiscreteMeasure, DomainError, Grid, discretize_ar1,
                       joint_from_chain, kl_divergence, marginal, product_coupling)
from robustdyn.eot import (CostTensor, absorb_reference, eot_value_dual, primal_value, reference_log_density,
                           schrodinger_residual, sinkhorn, solve_against, solve_against_scaled,
                           stationary_perturbed_eot, worst_case_kernel)

G2 = Grid([0.0, 1.0])


def _measure(g, w):
    return DiscreteMeasure(g, w)


def _random_instance(rng, n, spread=1.0):
    g = Grid(np.arange(n, dtype=float))
    a, b = random_simplex(rng, n), random_simplex(rng, n)
    cost = CostTensor((g, g), rng.uniform(-spread, spread, (n, n)))
    return g, _measure(g, a), _measure(g, b), cost


def _random_reference(rng, n):
    t = rng.uniform(0.05, 1.0, (n, n))
    g = Grid(np.arange(n, dtype=float))
    return Coupling((g, g), t / t.sum())


# ---- reference absorption

def test_product_reference_has_zero_log_density():
    u = _measure(G2, [0.3, 0.7])
    f0 = product_coupling([u, u])
    assert np.allclose(reference_log_density(f0).rho, 0.0, atol=1e-15)
    cost = CostTensor((G2, G2), [[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(absorb_reference(cost, f0, 0.7).values, cost.values, atol=1e-15)


def test_absorbed_solve_matches_direct_reference_solve():
    f0 = Coupling((G2, G2), [[0.45, 0.05], [0.05, 0.45]])
    cost = CostTensor((G2, G2), [[0.2, -0.4], [0.9, 0.1]])
    m = [marginal(f0, 0), marginal(f0, 1)]
    direct = sinkhorn(cost, m, 0.5, reference=f0)
    absorbed = solve_against(cost, f0, 0.5)
    assert absorbed.value == pytest.approx(direct.value, abs=1e-8)
    assert np.allclose(absorbed.plan.tensor, direct.plan.tensor, atol=1e-8)


def test_zero_cost_minimizer_is_reference():
    rng = np.random.default_rng(3)
    f0 = _random_reference(rng, 4)
    sol = solve_against(CostTensor.zeros_like(f0.grids), f0, 1.3)
    assert sol.value == pytest.approx(0.0, abs=1e-10)
    assert np.allclose(sol.plan.tensor, f0.tensor, atol=1e-9)


def test_zero_reference_cells_get_infinite_cost():
    f0 = Coupling((G2, G2), [[0.5, 0.0], [0.0, 0.5]])
    vals = absorb_reference(CostTensor.zeros_like(f0.grids), f0, 1.0).values
    assert np.isinf(vals[0, 1]) and np.isinf(vals[1, 0])
    assert np.isfinite(vals[0, 0])


# ---- sinkhorn

def test_zero_cost_gives_product_and_flat_potentials():
    a, b = _measure(G2, [0.2, 0.8]), _measure(G2, [0.6, 0.4])
    sol = sinkhorn(CostTensor.zeros_like((G2, G2)), [a, b], 1.0)
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(sol.plan.tensor, np.outer(a.weights, b.weights), atol=1e-12)
    for p in sol.potentials:
        assert np.ptp(p) < 1e-10


def test_anti_diagonal_cost_matches_grid_search():
    u = _measure(G2, [0.5, 0.5])
    cost = CostTensor((G2, G2), [[0.0, 1.0], [1.0, 0.0]])
    sol = sinkhorn(cost, [u, u], 1.0)
    val, plan = eot_2x2(cost.values, [0.5, 0.5], [0.5, 0.5], 1.0)
    assert sol.value == pytest.approx(val, abs=1e-6)
    assert np.allclose(sol.plan.tensor, plan, atol=1e-5)
    # the optimum of this symmetric instance is known in closed form: a = e / (2 (1 + e))
    assert sol.plan.tensor[0, 0] == pytest.approx(np.e / (2 * (1 + np.e)), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([0.1, 1.0, 10.0]))
def test_two_by_two_oracle_equivalence(seed, lam):
    rng = np.random.default_rng(seed)
    _, a, b, cost = _random_instance(rng, 2)
    sol = sinkhorn(cost, [a, b], lam)
    val, _ = eot_2x2(cost.values, a.weights, b.weights, lam)
    assert sol.value == pytest.approx(val, abs=1e-6)
    assert np.max(np.abs(sol.plan.tensor.sum(axis=1) - a.weights)) < 1e-8
    assert np.max(np.abs(sol.plan.tensor.sum(axis=0) - b.weights)) < 1e-8


def test_huge_regularization_returns_product():
    rng = np.random.default_rng(5)
    _, a, b, cost = _random_instance(rng, 6)
    sol = sinkhorn(cost, [a, b], 1e6)
    tv = 0.5 * np.abs(sol.plan.tensor - np.outer(a.weights, b.weights)).sum()
    assert tv < 1e-4


def test_value_equals_sum_of_potential_means():
    rng = np.random.default_rng(6)
    _, a, b, cost = _random_instance(rng, 5)
    sol = sinkhorn(cost, [a, b], 0.3)
    tot = float(a.weights @ sol.potentials[0] + b.weights @ sol.potentials[1])
    assert sol.value == pytest.approx(tot, abs=1e-8)
    assert schrodinger_residual(sol, cost, [a, b]) < 1e-8


def test_three_marginal_problem():
    rng = np.random.default_rng(7)
    g = Grid(np.arange(3.0))
    ms = [_measure(g, random_simplex(rng, 3)) for _ in range(3)]
    cost = CostTensor((g, g, g), rng.uniform(-1, 1, (3, 3, 3)))
    sol = sinkhorn(cost, ms, 0.5)
    for i, m in enumerate(ms):
        assert np.max(np.abs(marginal(sol.plan, i).weights - m.weights)) < 1e-8
    ref = product_coupling(ms)
    assert primal_value(sol.plan, cost, ref, 0.5) == pytest.approx(sol.value, abs=1e-6)
    assert eot_value_dual(sol.potentials, cost, ms, None, 0.5) == pytest.approx(sol.value, abs=1e-8)


def test_nonconvergence_raises_with_residual():
    rng = np.random.default_rng(8)
    _, a, b, cost = _random_instance(rng, 8, spread=5.0)
    with pytest.raises(ConvergenceError) as info:
        sinkhorn(CostTensor((cost.grids[0], cost.grids[1], cost.grids[0]), rng.uniform(-5, 5, (8, 8, 8))),
                 [a, b, a], 0.01, max_iter=2)
    assert np.isfinite(info.value.residual)


def test_sinkhorn_input_checks():
    u = _measure(G2, [0.5, 0.5])
    cost = CostTensor.zeros_like((G2, G2))
    with pytest.raises(DomainError):
        sinkhorn(cost, [u, u], 0.0)
    with pytest.raises(DimensionError):
        sinkhorn(cost, [u], 1.0)
    with pytest.raises(DimensionError):
        CostTensor((G2, G2), np.zeros((2, 3)))
    with pytest.raises(DomainError):
        CostTensor((G2, G2), [[0, np.nan], [0, 0]])


def test_solution_serializes():
    u = _measure(G2, [0.5, 0.5])
    sol = sinkhorn(CostTensor((G2, G2), [[0, 1], [1, 0]]), [u, u], 1.0)
    d = json.loads(json.dumps(sol.to_dict()))
    assert set(d) >= {"potentials", "plan", "value", "iterations", "residual"}


# ---- duality

def test_dual_at_zero_is_zero():
    u = _measure(G2, [0.5, 0.5])
    assert eot_value_dual([np.zeros(2), np.zeros(2)], CostTensor.zeros_like((G2, G2)), [u, u], None, 2.0) == 0.0


def test_dual_at_optimum_and_weak_duality():
    rng = np.random.default_rng(9)
    _, a, b, cost = _random_instance(rng, 5)
    f0 = product_coupling([a, b])
    sol = sinkhorn(cost, [a, b], 0.4)
    assert eot_value_dual(sol.potentials, cost, [a, b], f0, 0.4) == pytest.approx(sol.value, abs=1e-8)
    for _ in range(50):
        phis = [p + rng.normal(0, 0.3, p.shape) for p in sol.potentials]
        assert eot_value_dual(phis, cost, [a, b], f0, 0.4) <= sol.value + 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_primal_dual_gap_general_reference(seed):
    rng = np.random.default_rng(100 + seed)
    f0 = _random_reference(rng, 5)
    cost = CostTensor(f0.grids, rng.uniform(-1, 1, (5, 5)))
    lam = rng.choice([0.1, 0.5, 2.0])
    sol = solve_against(cost, f0, lam)
    assert primal_value(sol.plan, cost, f0, lam) == pytest.approx(sol.value, abs=1e-6)


def test_value_nondecreasing_in_lambda():
    rng = np.random.default_rng(10)
    f0 = _random_reference(rng, 6)
    cost = CostTensor(f0.grids, rng.uniform(-1, 1, (6, 6)))
    ladder = [0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0]
    values = []
    for lam in ladder:
        if lam == 0.0:
            values.append(-np.inf)
        else:
            values.append(solve_against_scaled(cost, f0, lam).value)
    assert np.all(np.diff(values) >= -1e-8)


def test_small_lambda_reaches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        _, a, b, cost = _random_instance(rng, 2)
        f0 = product_coupling([a, b])
        sol = solve_against_scaled(cost, f0, 1e-3)
        val, _ = eot_2x2(cost.values, a.weights, b.weights, 1e-3)
        assert sol.value == pytest.approx(val, abs=1e-6)


def test_scaled_ladder_agrees_with_plain_solve():
    rng = np.random.default_rng(12)
    f0 = joint_from_chain(discretize_ar1(0, 0.6, 0.4, 9))
    cost = CostTensor(f0.grids, rng.uniform(-1, 1, (9, 9)))
    plain = solve_against(cost, f0, 0.2)
    scaled = solve_against_scaled(cost, f0, 0.2)
    assert scaled.value == pytest.approx(plain.value, abs=1e-8)


# ---- stationary perturbation

def _stationary_instance(seed, n=5):
    rng = np.random.default_rng(seed)
    ch = discretize_ar1(0.0, rng.uniform(-0.8, 0.8), 0.5, n)
    f0 = joint_from_chain(ch)
    cost = CostTensor(f0.grids, rng.uniform(-1, 1, (n, n)))
    return ch.stationary, f0, cost, rng


def test_stationary_zero_radius_is_plain_eot():
    nu0, f0, cost, _ = _stationary_instance(0)
    res = stationary_perturbed_eot(cost, nu0, f0, 0.5, 0.0)
    assert res.value == pytest.approx(solve_against(cost, f0, 0.5).value, abs=1e-6)
    value, plan, nu_star = res
    assert nu_star is nu0


@pytest.mark.parametrize("seed", range(5))
def test_stationary_output_is_stationary_and_feasible(seed):
    nu0, f0, cost, rng = _stationary_instance(seed)
    delta1 = float(rng.uniform(0.01, 0.3))
    res = stationary_perturbed_eot(cost, nu0, f0, 0.5, delta1)
    t = res.plan.tensor
    assert np.max(np.abs(t.sum(axis=0) - t.sum(axis=1))) < 1e-6
    assert kl_divergence(res.nu_star, nu0) <= delta1 + 1e-6
    # freeing the stationary law can only lower the minimum
    assert res.value <= solve_against(cost, f0, 0.5).value + 1e-8


def test_stationary_rejects_negative_radius():
    nu0, f0, cost, _ = _stationary_instance(1)
    with pytest.raises(DomainError):
        stationary_perturbed_eot(cost, nu0, f0, 0.5, -0.1)


# ---- kernels

def test_kernel_round_trip():
    ch = discretize_ar1(0.1, 0.7, 0.3, 6)
    k = worst_case_kernel(joint_from_chain(ch))
    assert np.allclose(k.kernel, ch.kernel, atol=1e-14)


def test_product_plan_gives_iid_kernel():
    u = _measure(Grid(np.arange(3.0)), [0.2, 0.3, 0.5])
    k = worst_case_kernel(product_coupling([u, u]))
    assert np.allclose(k.kernel, u.weights[None, :], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_kernel_from_solver_plan_is_valid_chain(seed):
    nu0, f0, cost, _ = _stationary_instance(seed, n=4)
    plan = solve_against(cost, f0, 0.3).plan
    k = worst_case_kernel(plan)
    assert np.all(k.kernel >= 0)
    assert np.allclose(k.kernel.sum(axis=1), 1.0, atol=1e-12)
    st_ = k.stationary.weights
    assert np.max(np.abs(st_ @ k.kernel - st_)) < 1e-8


def test_kernel_rejects_unequal_marginals():
    with pytest.raises(DomainError):
        worst_case_kernel(Coupling((G2, G2), [[0.5, 0.3], [0.1, 0.1]]))
