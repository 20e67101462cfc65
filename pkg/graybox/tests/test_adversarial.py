"""
Graybox NLP - Adversarial Problem Tests
"""

import logging

import numpy as np
import pytest

from graybox.errors import ConfigError, DimensionMismatchError, InfeasibleSpecError, PixelRangeError
from graybox.formulations import Formulation
from graybox.ipm import solve
from graybox.nn import Layer, NeuralNet, forward, random_network
from graybox.problems.adversarial import (
    AdversarialSpec,
    build_adversarial,
    find_reachable_target,
    make_adversarial_instance,
    synthetic_image,
    verify_adversarial,
)

# Fresh-forward-pass tolerance on the active confidence row.
ACTIVE_TOL = 1e-5
PARITY_SEEDS = range(10)


def scaled_identity_classifier(scale: float = 4.0) -> NeuralNet:
    return NeuralNet((Layer(scale * np.eye(3), np.zeros(3), "softmax"),))


def solve_both(instance, confidence: float = 0.6):
    results = {}
    for formulation in Formulation:
        spec = instance.spec(formulation, confidence)
        problem = build_adversarial(spec)
        results[formulation] = (spec, problem, solve(problem))
    return results


class TestAdversarialSpec:
    """Input validation."""

    def setup_method(self):
        self.classifier = scaled_identity_classifier()

    def test_target_out_of_range(self):
        with pytest.raises(DimensionMismatchError):
            AdversarialSpec(self.classifier, [0.5, 0.5, 0.5], target=3)

    def test_pixel_out_of_range(self):
        with pytest.raises(PixelRangeError):
            AdversarialSpec(self.classifier, [1.5, 0.5, 0.5], target=0)

    def test_wrong_image_size(self):
        with pytest.raises(DimensionMismatchError):
            AdversarialSpec(self.classifier, [0.5, 0.5], target=0)

    def test_confidence_range(self):
        with pytest.raises(ConfigError):
            AdversarialSpec(self.classifier, [0.5, 0.5, 0.5], target=0, confidence=1.0)


class TestBuildAdversarial:
    """Problem layout."""

    def test_groups_and_zero_objective_at_reference(self):
        spec = AdversarialSpec(scaled_identity_classifier(), [0.2, 0.5, 0.3], target=0)
        problem = build_adversarial(spec)
        assert {"x", "u", "v", "y"} <= set(problem.groups)
        x0 = problem.initial_point()
        assert problem.objective.value(x0) == 0.0
        np.testing.assert_array_equal(x0[problem.groups["x"]], spec.x_ref)

    def test_full_space_adds_intermediates(self):
        nn = random_network([4, 6, 3], final="softmax", seed=1)
        x_ref = np.full(4, 0.5)
        full = build_adversarial(AdversarialSpec(nn, x_ref, 1, formulation="full"))
        reduced = build_adversarial(AdversarialSpec(nn, x_ref, 1, formulation="reduced"))
        assert full.n_var > reduced.n_var

    def test_already_satisfied_warns(self, caplog):
        spec = AdversarialSpec(scaled_identity_classifier(), [0.9, 0.1, 0.1], target=0)
        with caplog.at_level(logging.WARNING, logger="graybox.problems.adversarial"):
            build_adversarial(spec)
        assert any("already predicted" in record.message for record in caplog.records)


class TestSolveAdversarial:
    """End-to-end solves."""

    def test_already_satisfied_returns_reference(self):
        """Target already reached at x_ref: the optimum is x_ref with objective 0."""
        spec = AdversarialSpec(scaled_identity_classifier(), [0.9, 0.1, 0.1], target=0)
        problem = build_adversarial(spec)
        result = solve(problem)
        assert result.optimal
        assert result.objective == pytest.approx(0.0, abs=1e-4)
        np.testing.assert_allclose(result.x[problem.groups["x"]], spec.x_ref, atol=1e-4)

    @pytest.mark.parametrize("formulation", ["reduced", "full"])
    def test_seeded_instance(self, formulation):
        instance = make_adversarial_instance(side=4, hidden=(8, 8), n_classes=3, seed=0)
        spec = instance.spec(formulation)
        problem = build_adversarial(spec)
        result = solve(problem)
        assert result.optimal
        check = verify_adversarial(spec, result.x[problem.groups["x"]])
        assert check.satisfied(spec.confidence, tol=ACTIVE_TOL)
        assert check.predicted == spec.target
        assert result.objective == pytest.approx(check.l1_distance, abs=1e-4)

    def test_bounded_activations(self):
        instance = make_adversarial_instance(side=3, hidden=(6,), n_classes=3, seed=1)
        spec = instance.spec("full", bound_activations=True)
        problem = build_adversarial(spec)
        result = solve(problem)
        assert result.optimal
        assert verify_adversarial(spec, result.x[problem.groups["x"]]).satisfied(
            spec.confidence, tol=ACTIVE_TOL
        )

    def test_formulations_agree(self):
        """Objectives agree to 1e-4 relative on at least 8 of 10 seeded instances."""
        agree = 0
        for seed in PARITY_SEEDS:
            instance = make_adversarial_instance(side=4, hidden=(8,), n_classes=3, seed=seed)
            results = solve_both(instance)
            full = results[Formulation.FULL_SPACE][2]
            reduced = results[Formulation.REDUCED_SPACE][2]
            if full.optimal and reduced.optimal:
                scale = max(abs(full.objective), abs(reduced.objective), 1e-8)
                if abs(full.objective - reduced.objective) / scale <= 1e-4:
                    agree += 1
        assert agree >= 8


class TestSeededInstances:
    """Synthetic images and reachable targets."""

    def test_synthetic_image_range(self):
        image = synthetic_image(6, seed=3)
        assert image.shape == (36,)
        assert image.min() >= 0.05 and image.max() <= 0.95
        np.testing.assert_array_equal(image, synthetic_image(6, seed=3))

    def test_witness_reaches_target(self):
        instance = make_adversarial_instance(side=4, hidden=(8,), n_classes=3, seed=2)
        y = forward(instance.classifier, instance.witness)
        assert y[instance.target] >= 0.7
        assert instance.target != int(np.argmax(forward(instance.classifier, instance.x_ref)))

    def test_unreachable_target(self):
        """A classifier that never exceeds 0.7 on any class has no reachable target."""
        flat = NeuralNet((Layer(np.zeros((3, 4)), np.zeros(3), "softmax"),))
        assert find_reachable_target(flat, np.full(4, 0.5)) is None
        with pytest.raises(InfeasibleSpecError):
            make_adversarial_instance(side=2, classifier=flat)
