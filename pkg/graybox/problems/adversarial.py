"""
Graybox NLP - Adversarial Example Problem
Smallest L1 perturbation of a reference image that makes a classifier
predict a chosen target with a required confidence.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import sparse

from ..errors import ConfigError, DimensionMismatchError, InfeasibleSpecError, PixelRangeError
from ..formulations import EmbedHandle, Formulation, embed
from ..linalg import RealVec
from ..model import LinearBlock, LinearObjective, NlpProblem, Sense, add_inequality_as_slack
from ..nn import ActivationKind, NeuralNet, forward, random_network

logger = logging.getLogger(__name__)

# Softmax temperatures tried when building seeded classifiers.
OUTPUT_SCALES = (4.0, 8.0, 16.0, 32.0)
REACHABLE_CONFIDENCE = 0.7


@dataclass
class AdversarialSpec:
    """Classifier, reference image, target class and confidence threshold."""
    classifier: NeuralNet
    x_ref: RealVec
    target: int
    confidence: float = 0.6
    formulation: Formulation = Formulation.REDUCED_SPACE
    bound_activations: bool = False

    def __post_init__(self):
        self.x_ref = np.asarray(self.x_ref, dtype=np.float64).reshape(-1)
        self.formulation = Formulation(self.formulation)
        if self.x_ref.shape[0] != self.classifier.input_dim:
            raise DimensionMismatchError(
                f"reference image has {self.x_ref.shape[0]} pixels, classifier takes "
                f"{self.classifier.input_dim}"
            )
        if not 0 <= self.target < self.classifier.output_dim:
            raise DimensionMismatchError(
                f"target {self.target} outside 0..{self.classifier.output_dim - 1}"
            )
        if np.any(self.x_ref < 0.0) or np.any(self.x_ref > 1.0):
            raise PixelRangeError("reference pixels must lie in [0, 1]")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(f"confidence must lie in (0, 1), got {self.confidence}")


def build_adversarial(spec: AdversarialSpec, name: str = "adversarial") -> NlpProblem:
    """
    min sum(u + v)
    s.t. x - u + v = x_ref, y = NN(x), y_t >= confidence, 0 <= x <= 1, u, v >= 0.

    Groups x, u, v and y are registered on the returned problem.
    """
    n = spec.classifier.input_dim
    y_ref = forward(spec.classifier, spec.x_ref)
    if int(np.argmax(y_ref)) == spec.target and y_ref[spec.target] >= spec.confidence:
        logger.warning(
            "[ADVERSARIAL] target %d already predicted with confidence %.3f at x_ref; "
            "the solution is x_ref itself", spec.target, y_ref[spec.target],
        )

    problem = NlpProblem(name=name)
    x = problem.add_variables("x", n, lower=0.0, init=spec.x_ref)
    u = problem.add_variables("u", n, lower=0.0, init=0.0)
    v = problem.add_variables("v", n, lower=0.0, init=0.0)

    add_inequality_as_slack(
        problem, LinearBlock("x.upper", sparse.identity(n), x, Sense.LE, 1.0)
    )
    eye = sparse.identity(n)
    problem.add_block(
        LinearBlock("l1.split", sparse.hstack([eye, -eye, eye]), np.concatenate([x, u, v]),
                    rhs=spec.x_ref)
    )

    handle: EmbedHandle = embed(problem, spec.classifier, x, spec.formulation,
                                name="classifier", bound_activations=spec.bound_activations)
    problem.groups["y"] = handle.outputs

    row = sparse.coo_matrix(([1.0], ([0], [spec.target])), shape=(1, spec.classifier.output_dim))
    add_inequality_as_slack(
        problem, LinearBlock("confidence", row, handle.outputs, Sense.GE, spec.confidence)
    )
    problem.set_objective(LinearObjective(np.concatenate([u, v]), 1.0))
    logger.info("[ADVERSARIAL] built %s (%s): n_var=%d n_con=%d target=%d",
                name, spec.formulation.value, problem.n_var, problem.n_con, spec.target)
    return problem


@dataclass
class AdversarialCheck:
    """Fresh-forward-pass verification of a candidate image."""
    target_confidence: float
    predicted: int
    l1_distance: float
    bound_violation: float

    def satisfied(self, confidence: float, tol: float = 1e-6) -> bool:
        return self.target_confidence >= confidence - tol and self.bound_violation <= tol


def verify_adversarial(spec: AdversarialSpec, x) -> AdversarialCheck:
    x = np.asarray(x, dtype=np.float64)
    y = forward(spec.classifier, x)
    violation = float(max(np.max(-x, initial=0.0), np.max(x - 1.0, initial=0.0)))
    return AdversarialCheck(
        target_confidence=float(y[spec.target]),
        predicted=int(np.argmax(y)),
        l1_distance=float(np.sum(np.abs(x - spec.x_ref))),
        bound_violation=violation,
    )


# ============================================================================
# Seeded instances
# ============================================================================

def synthetic_image(side: int, seed: int = 0) -> RealVec:
    """Seeded grayscale blob on a side x side grid, flattened row-major, values in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    coords = np.arange(side, dtype=np.float64)
    cy, cx = rng.uniform(0.25 * side, 0.75 * side, size=2)
    width = max(side / 3.0, 0.5)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width * width))
    image = 0.1 + 0.8 * blob + 0.05 * rng.standard_normal((side, side))
    return np.clip(image, 0.05, 0.95).reshape(-1)


def _candidate_images(n: int, seed: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(seed + 7919)
    uniform = rng.uniform(0.0, 1.0, size=(count, n))
    binary = (rng.uniform(size=(count, n)) > 0.5).astype(np.float64)
    return np.vstack([uniform, binary])


def find_reachable_target(
    classifier: NeuralNet, x_ref: RealVec, seed: int = 0, threshold: float = REACHABLE_CONFIDENCE,
    samples: int = 256,
) -> Optional[tuple[int, RealVec]]:
    """
    A target class other than the prediction at x_ref together with an image
    in the unit box that reaches `threshold` on it, or None.
    """
    label = int(np.argmax(forward(classifier, x_ref)))
    best: Optional[tuple[float, int, RealVec]] = None
    for image in _candidate_images(classifier.input_dim, seed, samples):
        y = forward(classifier, image)
        for cls in np.argsort(-y):
            cls = int(cls)
            if cls == label:
                continue
            if y[cls] >= threshold and (best is None or y[cls] > best[0]):
                best = (float(y[cls]), cls, image)
            break
    if best is None:
        return None
    return best[1], best[2]


@dataclass
class AdversarialInstance:
    """A seeded classifier, reference image and a target known to be reachable."""
    classifier: NeuralNet
    x_ref: RealVec
    target: int
    seed: int
    output_scale: float
    witness: RealVec = field(repr=False)

    def spec(
        self, formulation: Union[Formulation, str] = Formulation.REDUCED_SPACE,
        confidence: float = 0.6, bound_activations: bool = False,
    ) -> AdversarialSpec:
        return AdversarialSpec(self.classifier, self.x_ref, self.target, confidence,
                               Formulation(formulation), bound_activations)


def make_adversarial_instance(
    side: int = 4,
    hidden: Sequence[int] = (8,),
    n_classes: int = 3,
    seed: int = 0,
    activation: Union[ActivationKind, str] = ActivationKind.TANH,
    classifier: Optional[NeuralNet] = None,
) -> AdversarialInstance:
    """
    Seeded classifier (hidden activation + softmax), synthetic reference image
    and a target class that some image in [0, 1]^n reaches with confidence
    >= 0.7. A given classifier is used as-is.
    """
    n = side * side
    x_ref = synthetic_image(side, seed)
    if classifier is not None:
        if classifier.input_dim != n:
            raise DimensionMismatchError(f"classifier takes {classifier.input_dim} inputs, "
                                         f"a {side}x{side} image has {n}")
        found = find_reachable_target(classifier, x_ref, seed)
        if found is None:
            raise InfeasibleSpecError("no class other than the prediction is reachable")
        return AdversarialInstance(classifier, x_ref, found[0], seed, 1.0, found[1])

    widths = [n, *hidden, n_classes]
    for scale in OUTPUT_SCALES:
        net = random_network(widths, activation, ActivationKind.SOFTMAX, seed, output_scale=scale)
        found = find_reachable_target(net, x_ref, seed)
        if found is not None:
            logger.debug("[ADVERSARIAL] seed %d: target %d reachable at scale %.0f",
                         seed, found[0], scale)
            return AdversarialInstance(net, x_ref, found[0], seed, scale, found[1])
    raise InfeasibleSpecError(f"seed {seed}: no reachable target for widths {widths}")
