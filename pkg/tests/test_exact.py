import numpy as np
import pytest
from scipy.optimize import linprog

from eotlab import (
    CostMatrix,
    DiscreteMeasure,
    InstanceError,
    SinkhornConfig,
    brute_force_assignment,
    c_transform,
    check_optimality,
    sinkhorn_solve,
    solve_exact,
)
from eotlab.exact import transportation_simplex
from eotlab.instances import assignment_instance, random_instance
from eotlab.measures import Coupling, PotentialPair
from eotlab.simplex import solve_lp

SWAP = CostMatrix([[0.0, 1.0], [1.0, 0.0]])
TOL = 1e-9


def _assert_certificate(sol, C, mu, nu):
    diag = check_optimality(sol.coupling, sol.potentials, C, mu, nu)
    assert diag["max_violation"] <= TOL
    assert diag["slackness_defect"] <= TOL
    assert abs(diag["gap"]) <= TOL


class TestSolveExact:
    def test_swap_cost(self):
        mu = nu = DiscreteMeasure.uniform([0.0, 1.0])
        sol = solve_exact(mu, nu, SWAP)
        assert sol.value == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(sol.coupling.mass, np.diag([0.5, 0.5]), atol=1e-15)
        _assert_certificate(sol, SWAP, mu, nu)

    def test_three_point_identity_pairing(self, three_point):
        mu, nu, C = three_point
        sol = solve_exact(mu, nu, C)
        assert sol.value == pytest.approx(0.25, abs=1e-12)
        np.testing.assert_allclose(sol.coupling.mass, np.eye(3) / 3, atol=1e-15)
        _assert_certificate(sol, C, mu, nu)

    def test_constant_cost(self):
        mu = DiscreteMeasure([0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
        nu = DiscreteMeasure([0.0, 1.0], [0.4, 0.6])
        C = CostMatrix(np.ones((3, 2)))
        sol = solve_exact(mu, nu, C)
        assert sol.value == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(sol.potentials.f, 0.5, atol=1e-12)
        np.testing.assert_allclose(sol.potentials.g, 0.5, atol=1e-12)

    def test_constant_cost_matches_brute_force(self):
        mu = nu = DiscreteMeasure.uniform(np.arange(4.0))
        C = CostMatrix(np.ones((4, 4)))
        assert solve_exact(mu, nu, C).value == pytest.approx(brute_force_assignment(mu, nu, C), abs=1e-12)

    def test_potentials_normalized(self):
        mu, nu, C = random_instance(4, 7, 5)
        sol = solve_exact(mu, nu, C)
        assert sol.potentials.epsilon == 0.0
        assert abs(mu.weights @ sol.potentials.f - nu.weights @ sol.potentials.g) <= 1e-10

    def test_unique_hint_random_weights(self):
        # generic weights give a nondegenerate basis
        mu, nu, C = random_instance(11, 6, 6)
        assert solve_exact(mu, nu, C).dual_unique_hint

    def test_unique_hint_false_on_degenerate(self, three_point):
        # uniform marginals with a permutation optimum: the support is disconnected
        assert not solve_exact(*three_point).dual_unique_hint

    def test_rectangular(self):
        mu, nu, C = random_instance(2, 3, 9)
        sol = solve_exact(mu, nu, C)
        assert sol.coupling.mass.shape == (3, 9)
        _assert_certificate(sol, C, mu, nu)

    def test_shape_mismatch(self, two_point):
        mu, nu, _ = two_point
        with pytest.raises(InstanceError):
            solve_exact(mu, nu, CostMatrix(np.ones((3, 2))))


class TestBruteForce:
    def test_swap(self):
        mu = nu = DiscreteMeasure.uniform([0.0, 1.0])
        assert brute_force_assignment(mu, nu, SWAP) == 0.0

    def test_three_point(self, three_point):
        assert brute_force_assignment(*three_point) == pytest.approx(0.25, abs=1e-15)

    def test_singleton(self):
        mu = nu = DiscreteMeasure.uniform([0.0])
        assert brute_force_assignment(mu, nu, CostMatrix([[7.0]])) == 7.0

    def test_rejects_nonuniform(self):
        mu = DiscreteMeasure([0.0, 1.0], [0.3, 0.7])
        with pytest.raises(InstanceError):
            brute_force_assignment(mu, mu, SWAP)

    def test_rejects_large(self):
        mu = DiscreteMeasure.uniform(np.arange(9.0))
        with pytest.raises(InstanceError):
            brute_force_assignment(mu, mu, CostMatrix(np.zeros((9, 9))))


@pytest.mark.parametrize("seed", range(100))
def test_oracle_equivalence(seed):
    n = 2 + seed % 5
    mu, nu, C = assignment_instance(seed, n)
    sol = solve_exact(mu, nu, C)
    assert abs(sol.value - brute_force_assignment(mu, nu, C)) <= TOL
    _assert_certificate(sol, C, mu, nu)


@pytest.mark.parametrize("seed", range(30))
def test_matches_scipy_linprog(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, 9, size=2)
    mu, nu, C = random_instance(seed, int(m), int(n))
    A_eq = np.vstack([np.kron(np.eye(m), np.ones(n)), np.kron(np.ones(m), np.eye(n))])
    b_eq = np.concatenate([mu.weights, nu.weights])
    ref = linprog(C.values.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert solve_exact(mu, nu, C).value == pytest.approx(ref.fun, abs=1e-9)
    assert solve_lp(C.values.ravel(), A_eq, b_eq).value == pytest.approx(ref.fun, abs=1e-9)


def test_transportation_simplex_basis_is_spanning_tree():
    mu, nu, C = random_instance(3, 5, 4)
    flow, u, v, basis, _ = transportation_simplex(mu.weights, nu.weights, C.values)
    assert len(basis) == 5 + 4 - 1
    for i, j in basis:
        assert u[i] + v[j] == pytest.approx(C.values[i, j], abs=1e-12)
    np.testing.assert_allclose(flow.sum(axis=1), mu.weights, atol=1e-12)
    np.testing.assert_allclose(flow.sum(axis=0), nu.weights, atol=1e-12)


def test_degenerate_uniform_instances_terminate():
    # maximal degeneracy: identity-like costs with uniform marginals
    n = 12
    mu = nu = DiscreteMeasure.uniform(np.arange(float(n)))
    C = CostMatrix(np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float))
    sol = solve_exact(mu, nu, C)
    assert sol.value == pytest.approx(0.0, abs=1e-12)


class TestCheckOptimality:
    def test_zero_potentials(self, three_point):
        mu, nu, C = three_point
        sol = solve_exact(mu, nu, C)
        zero = PotentialPair(np.zeros(3), np.zeros(3))
        diag = check_optimality(sol.coupling, zero, C, mu, nu)
        assert diag["max_violation"] <= 0.0
        assert diag["gap"] == pytest.approx(sol.value, abs=1e-15)

    def test_sinkhorn_pair_entry_bound(self, three_point):
        # this instance converges only sublinearly at eps = 1e-3, so tol is looser here
        mu, nu, C = three_point
        eps = 1e-3
        sol = sinkhorn_solve(mu, nu, C, SinkhornConfig(eps, tol=1e-4, max_iter=200_000))
        diag = check_optimality(sol.coupling, sol.potentials, C, mu, nu)
        assert diag["max_violation"] <= eps * np.log(9.0) + 1e-8

    def test_slackness_defect_detects_bad_pair(self, three_point):
        mu, nu, C = three_point
        sol = solve_exact(mu, nu, C)
        shifted = PotentialPair(sol.potentials.f - 0.1, sol.potentials.g)
        assert check_optimality(sol.coupling, shifted, C, mu, nu)["slackness_defect"] == pytest.approx(0.1)


class TestCTransform:
    def test_zero(self):
        np.testing.assert_array_equal(c_transform(np.zeros(2), SWAP), [0.0, 0.0])

    def test_constant_cost(self):
        C = CostMatrix(np.ones((3, 3)))
        np.testing.assert_allclose(c_transform(np.full(3, 0.5), C), 0.5)

    def test_row_direction(self):
        C = CostMatrix([[1.0, 2.0], [3.0, 0.5]])
        np.testing.assert_allclose(c_transform([0.0, 1.0], C, direction="row"), [1.0, -0.5])

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            c_transform([0.0, 0.0], SWAP, direction="diag")

    @pytest.mark.parametrize("seed", range(20))
    def test_dominates_simplex_duals(self, seed):
        mu, nu, C = random_instance(seed, 5, 5)
        sol = solve_exact(mu, nu, C)
        g = c_transform(sol.potentials.f, C)
        assert np.all(g >= sol.potentials.g - 1e-12)
        assert np.max(sol.potentials.f[:, None] + g[None, :] - C.values) <= 1e-12

    @pytest.mark.parametrize("seed", range(20))
    def test_double_transform_improves_dual(self, seed):
        mu, nu, C = random_instance(seed, 6, 5)
        g = np.random.default_rng(seed).normal(size=5)
        f1 = c_transform(g, C, direction="row")
        g1 = c_transform(f1, C, direction="col")
        f2 = c_transform(g1, C, direction="row")
        g2 = c_transform(f2, C, direction="col")
        assert np.max(f2[:, None] + g2[None, :] - C.values) <= 1e-12
        d1 = mu.weights @ f1 + nu.weights @ g1
        d2 = mu.weights @ f2 + nu.weights @ g2
        assert d2 >= d1 - 1e-12
        np.testing.assert_allclose(f2, f1, atol=1e-12)


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
@pytest.mark.parametrize("seed", range(5))
def test_exact_value_below_entropic_primal(seed, eps):
    mu, nu, C = random_instance(seed, 8, 8)
    assert solve_exact(mu, nu, C).value <= sinkhorn_solve(mu, nu, C, SinkhornConfig(eps)).primal + 1e-12


def test_coupling_feasible(two_point):
    mu, nu, C = two_point
    sol = solve_exact(mu, nu, C)
    assert isinstance(sol.coupling, Coupling)
    assert sol.coupling.is_feasible(mu, nu)
