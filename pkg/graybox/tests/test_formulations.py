"""
Graybox NLP - Network Embedding Tests
Structure counts, oracle accuracy and sign conventions of both formulations.
"""

import numpy as np
import pytest

from graybox.errors import DimensionMismatchError
from graybox.formulations import (
    ActivationBlock,
    Formulation,
    NeuralNetBlock,
    embed,
    embed_full_space,
    embed_reduced_space,
    embedding_stats,
    formulation_stats,
)
from graybox.model import NlpProblem, eval_all
from graybox.nn import forward, lagrangian_hessian, random_network
from graybox.tests.oracles import dense_reference


def host(n_inputs: int, seed: int = 0) -> tuple[NlpProblem, np.ndarray]:
    problem = NlpProblem(name="host")
    init = np.random.default_rng(seed).uniform(-1, 1, n_inputs)
    inputs = problem.add_variables("x", n_inputs, init=init)
    return problem, inputs


class TestActivationBlock:
    """Per-layer activation rows."""

    def test_tanh_pattern(self):
        block = ActivationBlock("act", "tanh", np.arange(4), np.arange(4, 8))
        assert block.jac_nnz == 8
        assert block.hess_nnz == 4

    def test_linear_has_no_hessian(self):
        block = ActivationBlock("act", "linear", np.arange(3), np.arange(3, 6))
        assert block.hess_nnz == 0

    def test_softmax_pattern(self):
        block = ActivationBlock("act", "softmax", np.arange(3), np.arange(3, 6))
        assert block.jac_nnz == 9 + 3
        assert block.hess_nnz == 6


class TestFullSpace:
    """One affine and one activation block per layer."""

    def test_single_linear_layer_counts(self):
        """
        Dense 2x3 linear layer: 4 variables, 4 rows and 12 Jacobian entries.

        The affine rows hold the 6 weights plus the identity on z (8 entries). The
        linear activation rows hold y and z (4 entries). Counting the activation as
        a full 2x2 Jacobian on z would give 14; the linear map is diagonal.
        """
        problem, inputs = host(3)
        nn = random_network([3, 2], activation="linear", seed=1)
        handle = embed_full_space(problem, nn, inputs)
        stats = embedding_stats(problem, handle)
        assert stats.n_var == 4
        assert stats.n_con == 4
        assert stats.jac_nnz == (6 + 2) + (2 + 2)
        assert stats.hess_nnz == 0
        assert handle.n_intermediate == 4

    def test_groups_and_blocks(self):
        problem, inputs = host(3)
        handle = embed_full_space(problem, random_network([3, 4, 2], seed=2), inputs, name="net")
        assert {"net.z1", "net.y1", "net.z2", "net.y2"} <= set(problem.groups)
        assert handle.blocks == ["net.affine1", "net.act1", "net.affine2", "net.act2"]
        np.testing.assert_array_equal(handle.outputs, problem.groups["net.y2"])

    def test_initial_point_is_forward_pass(self):
        problem, inputs = host(5, seed=3)
        nn = random_network([5, 6, 3], final="softmax", seed=3)
        handle = embed_full_space(problem, nn, inputs)
        x0 = problem.initial_point()
        np.testing.assert_allclose(problem.constraint_values(x0), 0.0, atol=1e-12)
        np.testing.assert_allclose(x0[handle.outputs], forward(nn, x0[inputs]), atol=1e-14)

    def test_jac_nnz_tracks_parameter_count(self):
        """Above 1k parameters the full-space Jacobian has about one entry per parameter."""
        problem, inputs = host(64)
        nn = random_network([64, 32, 32, 10], final="softmax", seed=4)
        assert nn.n_params > 1000
        stats = embedding_stats(problem, embed_full_space(problem, nn, inputs))
        assert 0.9 <= stats.jac_nnz / nn.n_params <= 1.3

    def test_bounded_activations(self):
        problem, inputs = host(3)
        nn = random_network([3, 4, 2], activation="tanh", final="sigmoid", seed=5)
        handle = embed_full_space(problem, nn, inputs, name="net", bound_activations=True)
        lower = problem.lower_bounds()
        assert np.all(lower[problem.groups["net.y1"]] == -1.0)
        assert np.all(lower[problem.groups["net.y2"]] == 0.0)
        assert "net.y1.upper.slack" in problem.groups
        assert "net.y2.upper" in handle.blocks

    @pytest.mark.parametrize("final", ["tanh", "sigmoid", "linear", "softmax"])
    def test_oracles_match_finite_differences(self, final):
        problem, inputs = host(4, seed=6)
        nn = random_network([4, 5, 3], activation="sigmoid", final=final, seed=6)
        embed_full_space(problem, nn, inputs)
        rng = np.random.default_rng(7)
        x = problem.initial_point() + rng.uniform(-0.1, 0.1, problem.n_var)
        lam = rng.standard_normal(problem.n_con)
        result = eval_all(problem, x, lam)
        _, jac, hess = dense_reference(problem, x, lam)
        np.testing.assert_allclose(result.jac.to_dense(), jac, atol=1e-6)
        np.testing.assert_allclose(result.hess.to_symmetric_dense(), hess, atol=1e-5)


class TestReducedSpace:
    """Single gray-box block."""

    def test_small_block_counts(self):
        problem, inputs = host(4)
        n_var, n_con = problem.n_var, problem.n_con
        handle = embed_reduced_space(problem, random_network([4, 3, 2], seed=1), inputs)
        assert problem.n_var == n_var + 2
        assert problem.n_con == n_con + 2
        stats = embedding_stats(problem, handle)
        assert (stats.jac_nnz, stats.hess_nnz) == (10, 10)

    def test_image_sized_block(self):
        problem, inputs = host(784)
        handle = embed_reduced_space(problem, random_network([784, 10], final="softmax"), inputs)
        stats = embedding_stats(problem, handle)
        assert stats.n_var == 10 and stats.n_con == 10
        assert stats.jac_nnz == 7850
        assert stats.hess_nnz == 307_720

    def test_surrogate_sized_block(self):
        problem, inputs = host(117)
        handle = embed_reduced_space(problem, random_network([117, 32, 37]), inputs)
        stats = embedding_stats(problem, handle)
        assert stats.jac_nnz == 4366
        assert stats.hess_nnz == 6903

    def test_depth_invariant(self):
        counts = set()
        for depth in range(1, 6):
            problem, inputs = host(6)
            nn = random_network([6, *([9] * (depth - 1)), 3], seed=depth)
            embed_reduced_space(problem, nn, inputs)
            counts.add(tuple(formulation_stats(problem).to_dict().values()))
        assert len(counts) == 1

    def test_residual_zero_at_forward_pass(self):
        problem, inputs = host(5, seed=2)
        nn = random_network([5, 7, 3], final="softmax", seed=2)
        embed_reduced_space(problem, nn, inputs)
        assert np.all(problem.constraint_values(problem.initial_point()) == 0.0)

    def test_multiplier_sign(self):
        """Block Hessian is the lower triangle of -sum lam_i Hess NN_i."""
        nn = random_network([4, 5, 2], seed=8)
        block = NeuralNetBlock("nn", nn, np.arange(4), np.arange(4, 6))
        x = np.array([0.2, -0.1, 0.5, 0.3])
        lam = np.array([1.5, -0.5])
        expected = -lagrangian_hessian(nn, x, lam)[np.tril_indices(4)]
        np.testing.assert_allclose(block.hessian_values(np.r_[x, 0.0, 0.0], lam), expected)

    @pytest.mark.parametrize("final", ["tanh", "softmax"])
    def test_oracles_match_finite_differences(self, final):
        problem, inputs = host(4, seed=9)
        nn = random_network([4, 6, 3], activation="tanh", final=final, seed=9)
        embed_reduced_space(problem, nn, inputs)
        rng = np.random.default_rng(10)
        x = problem.initial_point() + rng.uniform(-0.1, 0.1, problem.n_var)
        lam = rng.standard_normal(problem.n_con)
        result = eval_all(problem, x, lam)
        _, jac, hess = dense_reference(problem, x, lam)
        np.testing.assert_allclose(result.jac.to_dense(), jac, atol=1e-6)
        np.testing.assert_allclose(result.hess.to_symmetric_dense(), hess, atol=1e-5)


class TestComparison:
    """Both formulations on the same network."""

    def test_full_space_has_more_variables(self):
        nn = random_network([5, 8, 8, 3], seed=3)
        full, full_inputs = host(5)
        reduced, reduced_inputs = host(5)
        embed(full, nn, full_inputs, Formulation.FULL_SPACE)
        embed(reduced, nn, reduced_inputs, "reduced")
        assert full.n_var > reduced.n_var
        assert full.n_con > reduced.n_con

    def test_wrong_input_count(self):
        problem, inputs = host(3)
        with pytest.raises(DimensionMismatchError):
            embed(problem, random_network([4, 2]), inputs, "reduced")

    def test_stats_of_empty_problem(self):
        stats = formulation_stats(NlpProblem())
        assert stats.to_dict() == {"n_var": 0, "n_con": 0, "jac_nnz": 0, "hess_nnz": 0}
