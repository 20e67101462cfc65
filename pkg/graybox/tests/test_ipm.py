"""
Graybox NLP - Interior-Point Solver Tests
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from graybox import ipm
from graybox.config import Settings
from graybox.errors import LinAlgFailureError
from graybox.ipm import (
    IpmOptions,
    IpmStatus,
    KktSystem,
    assemble_kkt,
    compute_kkt_residuals,
    fraction_to_boundary,
    inertia_correct,
    kkt_leaf_plan,
    solve,
)
from graybox.linalg import CondensedLdlt, ldlt_factor, ldlt_solve
from graybox.model import (
    DenseQuadraticObjective,
    FunctionBlock,
    LinearBlock,
    LinearObjective,
    NlpProblem,
    QuadraticObjective,
    TimingAccumulator,
    Triplets,
    eval_all,
)
from graybox.problems.adversarial import build_adversarial, make_adversarial_instance
from graybox.tests.oracles import equality_qp_solution, naive_kkt


def triplets_from_dense(matrix, lower_only=False) -> Triplets:
    matrix = np.asarray(matrix, dtype=np.float64)
    source = np.tril(matrix) if lower_only else matrix
    rows, cols = np.nonzero(source)
    return Triplets(rows, cols, source[rows, cols], matrix.shape)


def random_equality_qp(seed: int, n: int = 5, m: int = 2):
    rng = np.random.default_rng(seed)
    root = rng.standard_normal((n, n))
    q = root.T @ root + np.eye(n)
    c = rng.standard_normal(n)
    a = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    problem = NlpProblem(name=f"qp{seed}")
    x = problem.add_variables("x", n)
    problem.add_block(LinearBlock("eq", a, deps=x, rhs=b))
    problem.set_objective(DenseQuadraticObjective(x, q, q_vector=-c))
    return problem, (q, c, a, b)


def quarter_circle_problem() -> NlpProblem:
    """min x0 + 2 x1 s.t. x0^2 + x1^2 = 4, x >= 0; optimum (2, 0)."""
    problem = NlpProblem(name="arc")
    x = problem.add_variables("x", 2, lower=0.0, init=[1.0, 1.5])
    problem.add_block(FunctionBlock(
        "circle", x, 1,
        residual_fn=lambda v: np.array([v @ v]),
        jacobian_fn=lambda v: 2.0 * v,
        jac_pattern=([0, 0], [0, 1]),
        hessian_fn=lambda v, lam: np.array([2.0 * lam[0], 2.0 * lam[0]]),
        hess_pattern=([0, 1], [0, 1]),
        rhs=4.0,
    ))
    problem.set_objective(LinearObjective(x, [1.0, 2.0]))
    return problem


def expected_next_mu(mu: float, opts: IpmOptions) -> float:
    return max(opts.tol / 10.0, min(opts.mu_shrink * mu, mu ** opts.mu_power))


class TestIpmOptions:
    """Option validation and environment seeding."""

    def test_defaults(self):
        opts = IpmOptions()
        assert opts.tol == 1e-6
        assert opts.max_iter == 3000
        assert opts.tau == 0.995

    def test_tau_must_be_below_one(self):
        with pytest.raises(ValidationError):
            IpmOptions(tau=1.0)

    def test_growth_above_one(self):
        with pytest.raises(ValidationError):
            IpmOptions(reg_growth=1.0)

    def test_from_settings(self):
        settings = Settings(GRAYBOX_TOL=1e-8, GRAYBOX_MAX_ITER=50)
        opts = IpmOptions.from_settings(settings, mu_init=0.5)
        assert opts.tol == 1e-8
        assert opts.max_iter == 50
        assert opts.mu_init == 0.5


class TestAssembleKkt:
    """Newton matrix layout."""

    def test_scalar_with_bound(self):
        """H = 2, x = 1, z = 0.1, lower 0 gives [[2.1]]."""
        kkt = assemble_kkt(
            triplets_from_dense([[2.0]]), Triplets(np.zeros(0, int), np.zeros(0, int),
                                                   np.zeros(0), (0, 1)),
            [1.0], [0.1], mu=0.1,
        )
        np.testing.assert_allclose(kkt.effective_matrix(), [[2.1]])

    def test_free_variable_with_one_constraint(self):
        kkt = assemble_kkt(
            triplets_from_dense([[3.0]]), triplets_from_dense([[1.0]]), [0.5], [0.0], mu=0.1,
            lower=[-math.inf],
        )
        np.testing.assert_allclose(kkt.effective_matrix(), [[3.0, 1.0], [1.0, 0.0]])
        assert kkt.required_inertia.as_tuple() == (1, 1, 0)

    def test_matches_naive_builder(self):
        rng = np.random.default_rng(4)
        n, m = 6, 3
        h = rng.standard_normal((n, n))
        h = h + h.T
        jac = rng.standard_normal((m, n))
        x = rng.uniform(0.5, 2.0, n)
        z = rng.uniform(0.1, 1.0, n)
        lower = np.array([0.0, 0.0, -math.inf, 0.1, -math.inf, 0.2])
        kkt = assemble_kkt(
            triplets_from_dense(h, lower_only=True), triplets_from_dense(jac), x, z, mu=0.01,
            delta=0.3, lower=lower, delta_c=1e-8,
        )
        expected = naive_kkt(h, jac, x, z, lower, 0.01, delta_w=0.3, delta_c=1e-8)
        np.testing.assert_allclose(kkt.effective_matrix(), expected, atol=1e-14)

    def test_right_hand_side(self):
        """-(grad + J^T lam - mu / s, g)."""
        kkt = assemble_kkt(
            triplets_from_dense([[1.0, 0.0], [0.0, 1.0]], lower_only=True),
            triplets_from_dense([[1.0, 1.0]]),
            [1.0, 2.0], [1.0, 1.0], mu=0.5,
            grad=[1.0, 1.0], lam=[2.0], g=[0.25],
        )
        np.testing.assert_allclose(kkt.rhs, [-(1 + 2 - 0.5), -(1 + 2 - 0.25), -0.25])

    def test_products_match_dense(self):
        rng = np.random.default_rng(6)
        n, m = 5, 2
        h = rng.standard_normal((n, n))
        h = h + h.T
        hess = triplets_from_dense(h, lower_only=True)
        jac = triplets_from_dense(rng.standard_normal((m, n)))
        kkt = assemble_kkt(
            hess, jac,
            rng.uniform(0.5, 2.0, n), rng.uniform(0.1, 1.0, n), mu=0.1,
        )
        v = rng.standard_normal(n + m)
        np.testing.assert_allclose(kkt.matvec(v, 0.3, 1e-2), kkt.regularized(0.3, 1e-2) @ v,
                                   atol=1e-12)
        dx = v[:n]
        assert kkt.hessian_quadratic(dx) == pytest.approx(dx @ kkt.regularized(0.0)[:n, :n] @ dx)

    def test_from_dense(self):
        matrix = np.array([[2.0, 0.5, 1.0], [0.5, -1.0, 3.0], [1.0, 3.0, 0.0]])
        kkt = KktSystem.from_dense(matrix, n_var=2)
        assert (kkt.n_var, kkt.n_con) == (2, 1)
        np.testing.assert_array_equal(kkt.effective_matrix(), matrix)
        np.testing.assert_array_equal(kkt.rhs, np.zeros(3))


class TestCondensedKkt:
    """Leaf elimination of slack and split structure against the dense factorization."""

    def setup_method(self):
        instance = make_adversarial_instance(side=3, hidden=(6,), n_classes=3, seed=1)
        self.problem = build_adversarial(instance.spec("reduced"))
        lower = self.problem.lower_bounds()
        ctx = ipm._Context(self.problem, IpmOptions(), lower, np.isfinite(lower),
                           TimingAccumulator())
        state = ipm._initial_state(ctx)
        lam = np.random.default_rng(0).standard_normal(self.problem.n_con)
        ev = eval_all(self.problem, state.x, lam, TimingAccumulator())
        self.kkt = assemble_kkt(ev.hess, ev.jac, state.x, state.z, state.mu, lower=lower,
                                grad=ev.grad, lam=lam, g=ev.g)
        self.plan = kkt_leaf_plan(ev.hess, ev.jac, ctx.bounded)

    def test_slacks_and_split_rows_are_leaves(self):
        """u, v, the box slacks and the rows tying them to x never reach the dense core."""
        n = 9
        assert self.plan.dimension == self.kkt.dimension
        assert self.plan.n_eliminated >= 5 * n
        for name in ("u", "v"):
            assert not np.isin(self.problem.groups[name], self.plan.core).any()

    @pytest.mark.parametrize("delta_w", [0.0, 1.0])
    def test_inertia_matches_dense(self, delta_w):
        condensed = self.kkt.factor(delta_w, 0.0, self.plan)
        dense = ldlt_factor(self.kkt.regularized(delta_w))
        assert isinstance(condensed, CondensedLdlt)
        assert condensed.inertia == dense.inertia

    def test_solution_matches_dense(self):
        x = ldlt_solve(self.kkt.factor(1.0, 0.0, self.plan), self.kkt.rhs)
        expected = np.linalg.solve(self.kkt.regularized(1.0), self.kkt.rhs)
        np.testing.assert_allclose(x, expected, rtol=1e-7, atol=1e-9 * np.max(np.abs(expected)))

    def test_solve_agrees_with_dense_path(self):
        condensed = solve(self.problem)
        dense = solve(self.problem, IpmOptions(condense_kkt=False))
        assert condensed.optimal and dense.optimal
        assert condensed.objective == pytest.approx(dense.objective, rel=1e-5, abs=1e-7)


class TestInertiaCorrection:
    """Regularization until the KKT matrix has inertia (n, m, 0)."""

    def test_convex_needs_no_regularization(self):
        kkt = KktSystem.from_dense([[2.0, 1.0], [1.0, 0.0]], n_var=1)
        fact, reg = inertia_correct(kkt, IpmOptions())
        assert reg.delta_w == 0.0 and reg.delta_c == 0.0
        assert fact.inertia.as_tuple() == (1, 1, 0)

    def test_negative_curvature(self):
        """-I needs delta_w above 1."""
        kkt = KktSystem.from_dense(-np.eye(2), n_var=2)
        fact, reg = inertia_correct(kkt, IpmOptions())
        assert reg.delta_w > 1.0
        assert fact.inertia.as_tuple() == (2, 0, 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_indefinite(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 8, 3
        h = rng.standard_normal((n, n))
        h = h + h.T
        jac = rng.standard_normal((m, n))
        matrix = np.block([[h, jac.T], [jac, np.zeros((m, m))]])
        fact, reg = inertia_correct(KktSystem.from_dense(matrix, n), IpmOptions())
        assert fact.inertia.as_tuple() == (n, m, 0)
        shifted = matrix + np.diag(np.r_[np.full(n, reg.delta_w), np.full(m, -reg.delta_c)])
        eig = np.linalg.eigvalsh(shifted)
        assert int(np.sum(eig > 0)) == n

    def test_rank_deficient_constraints_use_dual_regularization(self):
        """Two identical rows leave a zero pivot that delta_w alone cannot remove."""
        jac = np.array([[1.0, 1.0], [1.0, 1.0]])
        matrix = np.block([[2.0 * np.eye(2), jac.T], [jac, np.zeros((2, 2))]])
        fact, reg = inertia_correct(KktSystem.from_dense(matrix, 2), IpmOptions())
        assert reg.delta_c == ipm.DUAL_REGULARIZATION
        assert fact.inertia.as_tuple() == (2, 2, 0)

    def test_gives_up_past_max(self):
        kkt = KktSystem.from_dense(-np.eye(2), n_var=2)
        with pytest.raises(LinAlgFailureError):
            inertia_correct(kkt, IpmOptions(reg_max=1e-3))


class TestFractionToBoundary:
    def test_blocking_component(self):
        assert fraction_to_boundary([1.0], [-10.0], 0.995) == pytest.approx(0.0995)

    def test_non_blocking(self):
        assert fraction_to_boundary([1.0, 2.0], [0.5, 0.0], 0.995) == 1.0

    def test_keeps_strict_interior(self):
        rng = np.random.default_rng(1)
        v = rng.uniform(0.1, 1.0, 20)
        dv = rng.standard_normal(20) * 5.0
        alpha = fraction_to_boundary(v, dv, 0.995)
        assert np.all(v + alpha * dv >= (1 - 0.995) * v - 1e-15)


class TestSolve:
    """End-to-end solves."""

    def test_bounded_scalar(self):
        """min (x - 1)^2 with x >= 0 ends at x = 1."""
        problem = NlpProblem()
        problem.add_variable("x", lower=0.0)
        problem.set_objective(QuadraticObjective([0], a=1.0, b=-2.0, c=1.0))
        result = solve(problem)
        assert result.status is IpmStatus.OPTIMAL
        assert result.x[0] == pytest.approx(1.0, abs=1e-5)
        assert result.objective == pytest.approx(0.0, abs=1e-9)

    def test_linear_program(self):
        """min x1 + x2 s.t. x1 + x2 = 1, x >= 0 has objective 1."""
        problem = NlpProblem()
        x = problem.add_variables("x", 2, lower=0.0)
        problem.add_block(LinearBlock("sum", [[1.0, 1.0]], deps=x, rhs=1.0))
        problem.set_objective(LinearObjective(x, 1.0))
        result = solve(problem)
        assert result.optimal
        assert result.objective == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("seed", range(50))
    def test_equality_qp_matches_closed_form(self, seed):
        problem, (q, c, a, b) = random_equality_qp(seed)
        result = solve(problem)
        expected = equality_qp_solution(q, c, a, b)
        assert result.optimal
        np.testing.assert_allclose(result.x, expected, rtol=1e-6, atol=1e-8)

    def test_equality_qp_takes_full_newton_step(self):
        problem, _ = random_equality_qp(3)
        result = solve(problem)
        assert result.trace[1].alpha_primal == 1.0

    def test_nonconvex_constraint(self):
        result = solve(quarter_circle_problem())
        assert result.optimal
        assert result.x[0] == pytest.approx(2.0, abs=1e-4)
        assert result.objective == pytest.approx(2.0, abs=1e-4)

    def test_redundant_constraints(self):
        """Duplicated rows: the solve still converges through dual regularization."""
        problem = NlpProblem()
        x = problem.add_variables("x", 2)
        problem.add_block(LinearBlock("first", [[1.0, 1.0]], deps=x, rhs=1.0))
        problem.add_block(LinearBlock("second", [[1.0, 1.0]], deps=x, rhs=1.0))
        problem.set_objective(QuadraticObjective(x, a=1.0))
        result = solve(problem)
        assert result.optimal
        np.testing.assert_allclose(result.x, [0.5, 0.5], atol=1e-5)

    def test_optimal_point_passes_fresh_kkt_check(self):
        problem = quarter_circle_problem()
        result = solve(problem)
        residuals = compute_kkt_residuals(problem, result.x, result.lam, result.z)
        assert residuals.kkt_error <= 1e-6
        assert residuals.bound_violation == 0.0

    def test_iterates_stay_interior(self):
        result = solve(quarter_circle_problem())
        assert np.all(result.x > 0.0)
        assert np.all(result.z > 0.0)

    def test_barrier_parameter_schedule(self):
        """mu never increases and each drop follows the update rule."""
        opts = IpmOptions()
        result = solve(quarter_circle_problem(), opts)
        mus = [record.mu for record in result.trace]
        for before, after in zip(mus, mus[1:]):
            assert after <= before
            if after < before:
                mu = before
                while mu > after:
                    mu = expected_next_mu(mu, opts)
                assert mu == after

    def test_deterministic(self):
        first = solve(quarter_circle_problem())
        second = solve(quarter_circle_problem())
        assert first.iterations == second.iterations
        np.testing.assert_array_equal(first.x, second.x)
        assert [r.to_dict() for r in first.trace] == [r.to_dict() for r in second.trace]

    def test_timing_breakdown(self):
        result = solve(quarter_circle_problem())
        shares = result.timing.percentages()
        assert sum(shares.values()) == pytest.approx(100.0)
        assert result.time_per_iter_s * result.iterations == pytest.approx(result.timing.total_s)

    def test_max_iter(self):
        result = solve(quarter_circle_problem(), IpmOptions(max_iter=0))
        assert result.status is IpmStatus.MAX_ITER
        assert result.iterations == 0

    def test_time_limit(self):
        result = solve(quarter_circle_problem(), IpmOptions(time_limit_s=0.0))
        assert result.status is IpmStatus.TIME_LIMIT

    def test_infeasible(self):
        """x1 + x2 = -1 with x >= 0 never reports Optimal."""
        problem = NlpProblem()
        x = problem.add_variables("x", 2, lower=0.0, init=1.0)
        problem.add_block(LinearBlock("sum", [[1.0, 1.0]], deps=x, rhs=-1.0))
        result = solve(problem, IpmOptions(max_iter=200))
        assert result.status in (IpmStatus.INFEASIBLE, IpmStatus.MAX_ITER)
        assert np.all(result.x >= 0.0)

    def test_result_dict(self):
        result = solve(quarter_circle_problem())
        data = result.to_dict(include_trace=True)
        assert data["status"] == "Optimal"
        assert len(data["trace"]) == result.iterations + 1
        assert set(data["timing"]) == {"function_s", "jacobian_s", "hessian_s", "solver_s",
                                       "total_s"}


class TestRestoration:
    """Feasibility restoration on its own."""

    def test_halves_violation(self):
        problem = NlpProblem(name="ring")
        x = problem.add_variables("x", 2, lower=0.0, init=0.5)
        problem.add_block(FunctionBlock(
            "ring", x, 1,
            residual_fn=lambda v: np.array([v @ v]),
            jacobian_fn=lambda v: 2.0 * v,
            jac_pattern=([0, 0], [0, 1]),
            hessian_fn=lambda v, lam: np.array([2.0 * lam[0], 2.0 * lam[0]]),
            hess_pattern=([0, 1], [0, 1]),
            rhs=4.0,
        ))
        lower = problem.lower_bounds()
        ctx = ipm._Context(problem, IpmOptions(), lower, np.isfinite(lower), TimingAccumulator())
        state = ipm._initial_state(ctx)
        restored = ipm._restore(ctx, state)
        assert restored is not None
        assert np.linalg.norm(restored.ev.g) <= 0.5 * np.linalg.norm(state.ev.g)
        assert np.all(restored.x > 0.0)
