"""
Graybox NLP - Surrogate-Constrained Dispatch Problem
Quadratic-cost generator dispatch with a power balance row, box limits and a
neural surrogate keeping every bus frequency above a floor.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError, model_validator
from scipy import optimize, sparse

from ..config import get_settings
from ..errors import ConfigError, DimensionMismatchError, InfeasibleSpecError
from ..formulations import Formulation, embed
from ..linalg import RealVec
from ..model import LinearBlock, NlpProblem, QuadraticObjective, Sense, add_inequality_as_slack
from ..nn import ActivationKind, Layer, NeuralNet, forward, random_network

logger = logging.getLogger(__name__)

def frequency_floor(eta: Optional[float] = None) -> float:
    """The given floor, else GRAYBOX_FREQUENCY_FLOOR."""
    return get_settings().frequency_floor if eta is None else float(eta)


@dataclass
class DispatchSpec:
    """Generators, fixed demands and the frequency surrogate."""
    surrogate: NeuralNet
    a: RealVec
    b: RealVec
    c: RealVec
    p_min: RealVec
    p_max: RealVec
    demand: RealVec
    eta: Optional[float] = None  # omitted: GRAYBOX_FREQUENCY_FLOOR
    formulation: Formulation = Formulation.REDUCED_SPACE
    bound_activations: bool = False

    def __post_init__(self):
        for attr in ("a", "b", "c", "p_min", "p_max", "demand"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=np.float64).reshape(-1))
        self.formulation = Formulation(self.formulation)
        n_gen = self.p_min.shape[0]
        for attr in ("a", "b", "c", "p_max"):
            if getattr(self, attr).shape[0] != n_gen:
                raise DimensionMismatchError(
                    f"'{attr}' has the wrong length for {n_gen} generators"
                )
        if np.any(self.p_min > self.p_max):
            raise ConfigError("p_min must not exceed p_max")
        if self.surrogate.input_dim != n_gen + self.n_demand:
            raise DimensionMismatchError(
                f"surrogate takes {self.surrogate.input_dim} inputs, expected "
                f"{n_gen} generations + {self.n_demand} demands"
            )
        self.eta = frequency_floor(self.eta)
        if not self.eta > 0.0:
            raise ConfigError(f"frequency floor must be positive, got {self.eta}")

    @property
    def n_gen(self) -> int:
        return self.p_min.shape[0]

    @property
    def n_demand(self) -> int:
        return self.demand.shape[0]

    @property
    def total_demand(self) -> float:
        return float(np.sum(self.demand))

    def balanced_point(self) -> RealVec:
        """Point on the balance line at the same fraction of every generator's range."""
        span = float(np.sum(self.p_max - self.p_min))
        share = 0.5 if span == 0.0 else (self.total_demand - float(np.sum(self.p_min))) / span
        return self.p_min + share * (self.p_max - self.p_min)

    def cost(self, p) -> float:
        p = np.asarray(p, dtype=np.float64)
        return float(np.sum(self.a * p * p + self.b * p + self.c))


def _check_balance(spec: DispatchSpec) -> None:
    low, high = float(np.sum(spec.p_min)), float(np.sum(spec.p_max))
    if not low <= spec.total_demand <= high:
        raise InfeasibleSpecError(
            f"total demand {spec.total_demand:.6g} outside generation range [{low:.6g}, {high:.6g}]"
        )


def build_dispatch(spec: DispatchSpec, name: str = "dispatch") -> NlpProblem:
    """
    min sum(a p^2 + b p + c)
    s.t. sum(p) = sum(d), d pinned to the demand, NN(p, d) >= eta, p_min <= p <= p_max.

    Groups p, d and y are registered on the returned problem.
    """
    _check_balance(spec)
    problem = NlpProblem(name=name)
    p = problem.add_variables("p", spec.n_gen, lower=spec.p_min, init=spec.balanced_point())
    d = problem.add_variables("d", spec.n_demand, init=spec.demand)

    add_inequality_as_slack(
        problem, LinearBlock("p.upper", sparse.identity(spec.n_gen), p, Sense.LE, spec.p_max)
    )
    problem.add_block(
        LinearBlock("demand.pin", sparse.identity(spec.n_demand), d, rhs=spec.demand)
    )
    problem.add_block(
        LinearBlock("balance", np.ones((1, spec.n_gen)), p, rhs=spec.total_demand)
    )

    handle = embed(problem, spec.surrogate, np.concatenate([p, d]), spec.formulation,
                   name="surrogate", bound_activations=spec.bound_activations)
    problem.groups["y"] = handle.outputs
    m = spec.surrogate.output_dim
    add_inequality_as_slack(
        problem, LinearBlock("frequency", sparse.identity(m), handle.outputs, Sense.GE, spec.eta)
    )
    problem.set_objective(QuadraticObjective(p, spec.a, spec.b, spec.c))
    logger.info("[DISPATCH] built %s (%s): n_var=%d n_con=%d buses=%d",
                name, spec.formulation.value, problem.n_var, problem.n_con, m)
    return problem


def surrogate_frequencies(spec: DispatchSpec, p) -> RealVec:
    """Fresh forward pass of the surrogate at (p, demand)."""
    return forward(spec.surrogate, np.concatenate([np.asarray(p, dtype=np.float64), spec.demand]))


# ============================================================================
# Reference dispatch and surrogate construction
# ============================================================================

def economic_dispatch(spec: DispatchSpec) -> RealVec:
    """
    Cheapest balanced dispatch ignoring the surrogate.

    p_i(nu) = clip((nu - b_i) / (2 a_i), p_min_i, p_max_i), with the balance
    multiplier nu found by Brent's method. Requires a > 0.
    """
    _check_balance(spec)
    if np.any(spec.a <= 0.0):
        raise ConfigError("economic dispatch needs strictly convex costs (a > 0)")

    def dispatch_at(nu: float) -> RealVec:
        return np.clip((nu - spec.b) / (2.0 * spec.a), spec.p_min, spec.p_max)

    lo = float(np.min(spec.b + 2.0 * spec.a * spec.p_min)) - 1.0
    hi = float(np.max(spec.b + 2.0 * spec.a * spec.p_max)) + 1.0
    nu = optimize.brentq(lambda v: float(np.sum(dispatch_at(v))) - spec.total_demand, lo, hi,
                         xtol=1e-14, rtol=1e-15, maxiter=500)
    return dispatch_at(nu)


def constant_surrogate(n_inputs: int, n_outputs: int, value: float = 60.0) -> NeuralNet:
    """Single linear layer with zero weights: every output equals `value`."""
    return NeuralNet((Layer(np.zeros((n_outputs, n_inputs)), np.full(n_outputs, value),
                            ActivationKind.LINEAR),))


def straddling_surrogate(
    p_safe: RealVec,
    p_cheap: RealVec,
    demand: RealVec,
    hidden: Sequence[int] = (8,),
    n_bus: int = 4,
    eta: Optional[float] = None,
    seed: int = 0,
    gap: float = 0.6,
    activation: Union[ActivationKind, str] = ActivationKind.TANH,
) -> NeuralNet:
    """
    Seeded surrogate whose frequency surface straddles eta (default: the configured floor).

    Every bus sits eta + gap/2 or higher at p_safe; the bus with the largest
    drop between p_safe and p_cheap ends gap/2 below eta at p_cheap. The last
    layer is linear so the shift is exact.
    """
    eta = frequency_floor(eta)
    p_safe = np.asarray(p_safe, dtype=np.float64)
    p_cheap = np.asarray(p_cheap, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    n_inputs = p_safe.shape[0] + demand.shape[0]
    raw = random_network([n_inputs, *hidden, n_bus], activation, ActivationKind.LINEAR, seed)

    at_safe = forward(raw, np.concatenate([p_safe, demand]))
    at_cheap = forward(raw, np.concatenate([p_cheap, demand]))
    drop = at_safe - at_cheap
    sign = np.where(drop < 0.0, -1.0, 1.0)
    drop = np.abs(drop)
    if float(np.max(drop)) <= 1e-12:
        raise InfeasibleSpecError("surrogate cannot separate the safe and cheap dispatch points")

    scale = gap / float(np.max(drop))
    last = raw.layers[-1]
    factor = sign * scale
    weight = factor[:, None] * last.weight
    # every bus reads eta + gap/2 at p_safe
    bias = eta + 0.5 * gap - factor * (at_safe - last.bias)
    layers = raw.layers[:-1] + (Layer(weight, bias, ActivationKind.LINEAR),)
    return NeuralNet(layers)


class DispatchCase(BaseModel):
    """JSON case file for `solve-dispatch`."""
    a: list[float]
    b: list[float]
    c: list[float]
    p_min: list[float]
    p_max: list[float]
    demand: list[float]
    eta: Optional[float] = None  # omitted: GRAYBOX_FREQUENCY_FLOOR

    @model_validator(mode="after")
    def _lengths(self) -> "DispatchCase":
        n = len(self.p_min)
        if any(len(values) != n for values in (self.a, self.b, self.c, self.p_max)):
            raise ValueError("a, b, c, p_min and p_max must have one entry per generator")
        return self

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DispatchCase":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise ConfigError(f"{path}: invalid dispatch case: {exc}") from exc

    def to_spec(
        self,
        surrogate: NeuralNet,
        formulation: Union[Formulation, str] = Formulation.REDUCED_SPACE,
        eta: Optional[float] = None,
    ) -> DispatchSpec:
        return DispatchSpec(
            surrogate=surrogate,
            a=self.a, b=self.b, c=self.c,
            p_min=self.p_min, p_max=self.p_max,
            demand=self.demand,
            eta=self.eta if eta is None else eta,
            formulation=Formulation(formulation),
        )


@dataclass
class DispatchInstance:
    """Seeded case plus its straddling surrogate."""
    case: DispatchCase
    surrogate: NeuralNet
    seed: int

    def spec(self, formulation: Union[Formulation, str] = Formulation.REDUCED_SPACE,
             bound_activations: bool = False) -> DispatchSpec:
        spec = self.case.to_spec(self.surrogate, formulation)
        spec.bound_activations = bound_activations
        return spec


def make_dispatch_instance(
    n_gen: int = 3,
    n_demand: int = 2,
    hidden: Sequence[int] = (8,),
    n_bus: int = 4,
    seed: int = 0,
    eta: Optional[float] = None,
    surrogate: Optional[NeuralNet] = None,
) -> DispatchInstance:
    """
    Seeded generators and demands with a surrogate that is active at the
    optimum (a given surrogate is used as-is). The floor defaults to the
    configured one and is written into the case.
    """
    eta = frequency_floor(eta)
    rng = np.random.default_rng(seed)
    p_min = rng.uniform(0.1, 0.3, n_gen)
    p_max = rng.uniform(1.5, 2.5, n_gen)
    a = rng.uniform(0.5, 2.0, n_gen)
    b = rng.uniform(1.0, 5.0, n_gen)
    c = rng.uniform(0.0, 1.0, n_gen)
    total = float(np.sum(p_min)) + 0.4 * float(np.sum(p_max - p_min))
    weights = rng.uniform(0.5, 1.5, n_demand)
    demand = total * weights / np.sum(weights)
    case = DispatchCase(a=a.tolist(), b=b.tolist(), c=c.tolist(), p_min=p_min.tolist(),
                        p_max=p_max.tolist(), demand=demand.tolist(), eta=eta)
    if surrogate is None:
        unconstrained = case.to_spec(constant_surrogate(n_gen + n_demand, n_bus, eta + 1.0))
        surrogate = straddling_surrogate(
            unconstrained.balanced_point(), economic_dispatch(unconstrained),
            unconstrained.demand, hidden=hidden, n_bus=n_bus, eta=eta, seed=seed,
        )
    return DispatchInstance(case, surrogate, seed)
