"""
Graybox NLP - Network Embeddings
Full-space (one block pair per layer) and reduced-space (one gray-box block)
encodings of y = NN(x) inside an NlpProblem, plus structural statistics.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
from scipy import sparse

from .errors import DimensionMismatchError, StructuralError
from .linalg import RealVec
from .model import ConstraintBlock, LinearBlock, NlpProblem, Sense, add_inequality_as_slack
from .nn import (
    ActivationKind,
    NeuralNet,
    activate,
    elementwise_derivatives,
    forward,
    jacobian,
    lagrangian_hessian,
    softmax_lagrangian_hessian,
)

logger = logging.getLogger(__name__)


class Formulation(str, Enum):
    FULL_SPACE = "full"
    REDUCED_SPACE = "reduced"


# Output ranges used when full-space activations are bounded.
_ACTIVATION_RANGES = {
    ActivationKind.TANH: (-1.0, 1.0),
    ActivationKind.SIGMOID: (0.0, 1.0),
    ActivationKind.SOFTMAX: (0.0, 1.0),
}


@dataclass
class LayerVars:
    """Variable indices of one unrolled layer."""
    z: np.ndarray
    y: np.ndarray


@dataclass
class EmbedHandle:
    """Where an embedded network lives inside its host problem."""
    formulation: Formulation
    inputs: np.ndarray
    outputs: np.ndarray
    layers: list[LayerVars] = field(default_factory=list)
    blocks: list[str] = field(default_factory=list)
    n_var_added: int = 0
    n_con_added: int = 0

    @property
    def n_intermediate(self) -> int:
        return sum(layer.z.size + layer.y.size for layer in self.layers)


@dataclass(frozen=True)
class FormulationStats:
    """Variable, constraint and nonzero counts (Hessian lower triangle)."""
    n_var: int
    n_con: int
    jac_nnz: int
    hess_nnz: int

    def to_dict(self) -> dict:
        return {
            "n_var": self.n_var,
            "n_con": self.n_con,
            "jac_nnz": self.jac_nnz,
            "hess_nnz": self.hess_nnz,
        }


# ============================================================================
# Blocks
# ============================================================================

class ActivationBlock(ConstraintBlock):
    """y - sigma(z) = 0 for one layer; deps are [z, y]."""

    def __init__(self, name: str, kind: ActivationKind, z_vars, y_vars):
        self.kind = ActivationKind(kind)
        k = len(z_vars)
        idx = np.arange(k)
        if self.kind.elementwise:
            jac_rows = np.concatenate([idx, idx])
            jac_cols = np.concatenate([idx, k + idx])
            hess = ((), ()) if self.kind is ActivationKind.LINEAR else (idx, idx)
        else:
            jac_rows = np.concatenate([np.repeat(idx, k), idx])
            jac_cols = np.concatenate([np.tile(idx, k), k + idx])
            hess = np.tril_indices(k)
        self.width = k
        super().__init__(name, np.concatenate([z_vars, y_vars]), k, (jac_rows, jac_cols), hess)

    def residual(self, xd: RealVec) -> RealVec:
        k = self.width
        return xd[k:] - activate(self.kind, xd[:k])

    def jacobian_values(self, xd: RealVec) -> RealVec:
        k = self.width
        y = activate(self.kind, xd[:k])
        if self.kind.elementwise:
            d1, _ = elementwise_derivatives(self.kind, y)
            return np.concatenate([-d1, np.ones(k)])
        jac = np.diag(y) - np.outer(y, y)
        return np.concatenate([-jac.ravel(), np.ones(k)])

    def hessian_values(self, xd: RealVec, lam: RealVec) -> RealVec:
        k = self.width
        if self.kind is ActivationKind.LINEAR:
            return np.zeros(0)
        y = activate(self.kind, xd[:k])
        if self.kind.elementwise:
            _, d2 = elementwise_derivatives(self.kind, y)
            return -lam * d2
        return -softmax_lagrangian_hessian(y, lam)[self.hess_rows, self.hess_cols]


class NeuralNetBlock(ConstraintBlock):
    """
    Gray-box row group y - NN(x) = 0 over deps [x, y].

    Jacobian values are -J(x) row-major followed by the identity on y; the
    Hessian is dense over x and comes from the network's Lagrangian-Hessian
    oracle called with -lambda.
    """

    def __init__(self, name: str, nn: NeuralNet, x_vars, y_vars):
        self.nn = nn
        n, m = nn.input_dim, nn.output_dim
        rows = np.concatenate([np.repeat(np.arange(m), n), np.arange(m)])
        cols = np.concatenate([np.tile(np.arange(n), m), n + np.arange(m)])
        super().__init__(
            name, np.concatenate([x_vars, y_vars]), m, (rows, cols), np.tril_indices(n)
        )

    def residual(self, xd: RealVec) -> RealVec:
        n = self.nn.input_dim
        return xd[n:] - forward(self.nn, xd[:n])

    def jacobian_values(self, xd: RealVec) -> RealVec:
        n = self.nn.input_dim
        return np.concatenate([-jacobian(self.nn, xd[:n]).ravel(), np.ones(self.nn.output_dim)])

    def hessian_values(self, xd: RealVec, lam: RealVec) -> RealVec:
        n = self.nn.input_dim
        hess = lagrangian_hessian(self.nn, xd[:n], -lam)
        return hess[self.hess_rows, self.hess_cols]


# ============================================================================
# Embedding
# ============================================================================

def _check_inputs(problem: NlpProblem, nn: NeuralNet, input_vars) -> np.ndarray:
    inputs = np.asarray(input_vars, dtype=np.intp).reshape(-1)
    if inputs.shape[0] != nn.input_dim:
        raise DimensionMismatchError(
            f"network takes {nn.input_dim} inputs, got {inputs.shape[0]} variables"
        )
    if inputs.size and (inputs.min() < 0 or inputs.max() >= problem.n_var):
        raise StructuralError("input variable index out of range")
    return inputs


def _bound_outputs(problem: NlpProblem, name: str, kind: ActivationKind, y_vars) -> None:
    low, high = _ACTIVATION_RANGES[kind]
    for index in y_vars:
        problem.variables[index].lower = low
    add_inequality_as_slack(
        problem,
        LinearBlock(f"{name}.upper", sparse.identity(len(y_vars)), y_vars, Sense.LE, high),
    )


def embed_full_space(
    problem: NlpProblem,
    nn: NeuralNet,
    input_vars: Sequence[int],
    name: str = "nn",
    bound_activations: bool = False,
) -> EmbedHandle:
    """
    Unroll every layer into z_l = W_l y_{l-1} + b_l and y_l = sigma_l(z_l).

    Intermediates are free (or range-bounded with `bound_activations`) and are
    initialized by a forward pass from the inputs' initial values.
    """
    inputs = _check_inputs(problem, nn, input_vars)
    n_var0, n_con0 = problem.n_var, problem.n_con
    handle = EmbedHandle(Formulation.FULL_SPACE, inputs, np.zeros(0, dtype=np.intp))

    y_value = problem.initial_point()[inputs]
    previous = inputs
    for index, layer in enumerate(nn.layers, start=1):
        z_value = layer.weight @ y_value + layer.bias
        y_value = activate(layer.activation, z_value)
        z_vars = problem.add_variables(f"{name}.z{index}", layer.n_out, init=z_value)
        y_vars = problem.add_variables(f"{name}.y{index}", layer.n_out, init=y_value)

        coefficients = sparse.hstack(
            [-sparse.coo_matrix(layer.weight), sparse.identity(layer.n_out)]
        )
        affine = LinearBlock(f"{name}.affine{index}", coefficients,
                             np.concatenate([previous, z_vars]), rhs=layer.bias)
        problem.add_block(affine)
        act = ActivationBlock(f"{name}.act{index}", layer.activation, z_vars, y_vars)
        problem.add_block(act)
        handle.blocks.extend([affine.name, act.name])

        if bound_activations and layer.activation in _ACTIVATION_RANGES:
            _bound_outputs(problem, f"{name}.y{index}", layer.activation, y_vars)
            handle.blocks.append(f"{name}.y{index}.upper")

        handle.layers.append(LayerVars(z_vars, y_vars))
        previous = y_vars

    handle.outputs = previous
    handle.n_var_added = problem.n_var - n_var0
    handle.n_con_added = problem.n_con - n_con0
    logger.info("[EMBED] full-space '%s': +%d vars, +%d cons, %d layers",
                name, handle.n_var_added, handle.n_con_added, nn.depth)
    return handle


def embed_reduced_space(
    problem: NlpProblem, nn: NeuralNet, input_vars: Sequence[int], name: str = "nn"
) -> EmbedHandle:
    """Add outputs y (initialized to NN(x0)) and the single block y - NN(x) = 0."""
    inputs = _check_inputs(problem, nn, input_vars)
    n_var0, n_con0 = problem.n_var, problem.n_con
    y0 = forward(nn, problem.initial_point()[inputs])
    outputs = problem.add_variables(f"{name}.y", nn.output_dim, init=y0)
    block = NeuralNetBlock(name, nn, inputs, outputs)
    problem.add_block(block)
    handle = EmbedHandle(
        Formulation.REDUCED_SPACE,
        inputs,
        outputs,
        blocks=[block.name],
        n_var_added=problem.n_var - n_var0,
        n_con_added=problem.n_con - n_con0,
    )
    logger.info("[EMBED] reduced-space '%s': +%d vars, +%d cons, jac_nnz=%d hess_nnz=%d",
                name, handle.n_var_added, handle.n_con_added, block.jac_nnz, block.hess_nnz)
    return handle


def embed(
    problem: NlpProblem,
    nn: NeuralNet,
    input_vars: Sequence[int],
    formulation: Union[Formulation, str],
    name: str = "nn",
    bound_activations: bool = False,
) -> EmbedHandle:
    formulation = Formulation(formulation)
    if formulation is Formulation.FULL_SPACE:
        return embed_full_space(problem, nn, input_vars, name, bound_activations)
    return embed_reduced_space(problem, nn, input_vars, name)


# ============================================================================
# Statistics
# ============================================================================

def formulation_stats(problem: NlpProblem) -> FormulationStats:
    """Counts from declared patterns only; no oracle is evaluated."""
    return FormulationStats(
        n_var=problem.n_var,
        n_con=problem.n_con,
        jac_nnz=problem.jacobian_nnz(),
        hess_nnz=problem.hessian_nnz(),
    )


def embedding_stats(problem: NlpProblem, handle: EmbedHandle) -> FormulationStats:
    """Counts contributed by one embedding's own variables and blocks."""
    names = set(handle.blocks)
    blocks = [block for block in problem.blocks if block.name in names]
    return FormulationStats(
        n_var=handle.n_var_added,
        n_con=handle.n_con_added,
        jac_nnz=sum(block.jac_nnz for block in blocks),
        hess_nnz=sum(block.hess_nnz for block in blocks),
    )
