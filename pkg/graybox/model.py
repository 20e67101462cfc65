"""
Graybox NLP - Problem Model
Variables with lower bounds, equality constraint blocks with declared sparsity,
objective oracles, slack reformulation and the aggregated oracle evaluation.
"""

import logging
import math
import threading
import time
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import sparse

from .errors import (
    ContractViolationError,
    DimensionMismatchError,
    NumericError,
    StructuralError,
)
from .linalg import RealMat, RealVec

logger = logging.getLogger(__name__)

IndexArray = np.ndarray

TIMING_CATEGORIES = ("function", "jacobian", "hessian")


class Sense(str, Enum):
    """Row sense of a constraint block before slack reformulation."""
    EQ = "eq"
    LE = "le"
    GE = "ge"


@dataclass
class VarSpec:
    """One scalar decision variable; lower = -inf marks a free variable."""
    name: str
    lower: float = -math.inf
    init: float = 0.0

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower)


# ============================================================================
# Sparse triplets
# ============================================================================

@dataclass
class Triplets:
    """Coordinate-format matrix; duplicate positions are summed on densification."""
    rows: IndexArray
    cols: IndexArray
    vals: RealVec
    shape: tuple[int, int]

    @property
    def nnz(self) -> int:
        return int(self.vals.shape[0])

    def to_sparse(self) -> sparse.csr_matrix:
        return sparse.coo_matrix((self.vals, (self.rows, self.cols)), shape=self.shape).tocsr()

    def to_dense(self) -> RealMat:
        return self.to_sparse().toarray()

    def to_symmetric_dense(self) -> RealMat:
        """Expand a lower-triangular pattern into the full symmetric matrix."""
        lower = self.to_dense()
        return lower + lower.T - np.diag(np.diag(lower))

    def matvec(self, v: RealVec) -> RealVec:
        return np.bincount(self.rows, weights=self.vals * v[self.cols], minlength=self.shape[0])

    def rmatvec(self, v: RealVec) -> RealVec:
        """Product with the transpose."""
        return np.bincount(self.cols, weights=self.vals * v[self.rows], minlength=self.shape[1])

    def symmetric_matvec(self, v: RealVec) -> RealVec:
        """Product with the symmetric matrix whose lower triangle these triplets hold."""
        off = self.rows != self.cols
        out = self.matvec(v)
        out += np.bincount(self.cols[off], weights=self.vals[off] * v[self.rows[off]],
                           minlength=self.shape[1])
        return out


def _index_array(values, name: str) -> IndexArray:
    array = np.asarray(values, dtype=np.intp).reshape(-1)
    if array.size and array.min() < 0:
        raise StructuralError(f"{name} contains negative indices")
    return array


def _unique_positions(rows: IndexArray, cols: IndexArray) -> int:
    if rows.size == 0:
        return 0
    return int(np.unique(np.stack([rows, cols], axis=1), axis=0).shape[0])


# ============================================================================
# Constraint blocks
# ============================================================================

class ConstraintBlock(ABC):
    """
    A group of scalar constraints over a subset of variables.

    Patterns are local: Jacobian rows index the block's rows, columns index
    positions in `deps`; Hessian entries index positions in `deps` and must
    be lower triangular (row >= col). The problem sees `residual - rhs`.
    """

    def __init__(
        self,
        name: str,
        deps: Sequence[int],
        arity: int,
        jac_pattern: tuple[Sequence[int], Sequence[int]],
        hess_pattern: tuple[Sequence[int], Sequence[int]] = ((), ()),
        senses: Union[Sense, Sequence[Sense]] = Sense.EQ,
        rhs=0.0,
        pure: bool = True,
    ):
        self.name = name
        self.deps = _index_array(deps, "deps")
        self.arity = int(arity)
        self.jac_rows = _index_array(jac_pattern[0], "jacobian rows")
        self.jac_cols = _index_array(jac_pattern[1], "jacobian cols")
        self.hess_rows = _index_array(hess_pattern[0], "hessian rows")
        self.hess_cols = _index_array(hess_pattern[1], "hessian cols")
        if isinstance(senses, (Sense, str)):
            senses = [Sense(senses)] * self.arity
        self.senses = tuple(Sense(s) for s in senses)
        self.rhs = np.broadcast_to(np.asarray(rhs, dtype=np.float64), (self.arity,)).copy()
        self.pure = pure
        self._validate()

    def _validate(self) -> None:
        k = self.deps.shape[0]
        if len(self.senses) != self.arity:
            raise StructuralError(
                f"block '{self.name}' has {len(self.senses)} senses for {self.arity} rows"
            )
        ragged_jac = self.jac_rows.shape != self.jac_cols.shape
        if ragged_jac or self.hess_rows.shape != self.hess_cols.shape:
            raise StructuralError(f"block '{self.name}' has ragged pattern arrays")
        if self.jac_rows.size and (self.jac_rows.max() >= self.arity or self.jac_cols.max() >= k):
            raise StructuralError(f"block '{self.name}' Jacobian pattern is out of range")
        if self.hess_rows.size:
            if self.hess_rows.max() >= k or self.hess_cols.max() >= k:
                raise StructuralError(f"block '{self.name}' Hessian pattern is out of range")
            if np.any(self.hess_rows < self.hess_cols):
                raise StructuralError(
                    f"block '{self.name}' Hessian pattern is not lower triangular"
                )
        if _unique_positions(self.jac_rows, self.jac_cols) != self.jac_rows.size:
            raise StructuralError(f"block '{self.name}' repeats a Jacobian position")
        if _unique_positions(self.hess_rows, self.hess_cols) != self.hess_rows.size:
            raise StructuralError(f"block '{self.name}' repeats a Hessian position")

    @property
    def jac_nnz(self) -> int:
        return int(self.jac_rows.size)

    @property
    def hess_nnz(self) -> int:
        return int(self.hess_rows.size)

    @property
    def is_equality(self) -> bool:
        return all(s is Sense.EQ for s in self.senses)

    @abstractmethod
    def residual(self, xd: RealVec) -> RealVec:
        """Row values h(x_deps), before subtracting rhs."""

    @abstractmethod
    def jacobian_values(self, xd: RealVec) -> RealVec:
        """Values at the declared Jacobian positions."""

    def hessian_values(self, xd: RealVec, lam: RealVec) -> RealVec:
        """Values of sum_i lam_i Hess(h_i) at the declared Hessian positions."""
        return np.zeros(self.hess_nnz)


class LinearBlock(ConstraintBlock):
    """Rows A x_deps with a constant (scipy.sparse or dense) coefficient matrix."""

    def __init__(self, name: str, coefficients, deps: Sequence[int], senses=Sense.EQ, rhs=0.0):
        matrix = sparse.coo_matrix(coefficients, dtype=np.float64)
        matrix.sum_duplicates()
        self.matrix = matrix.tocsr()
        self._values = matrix.data.copy()
        super().__init__(
            name,
            deps,
            matrix.shape[0],
            (matrix.row, matrix.col),
            senses=senses,
            rhs=rhs,
        )
        if matrix.shape[1] != self.deps.shape[0]:
            raise StructuralError(
                f"block '{name}' has {matrix.shape[1]} coefficient columns "
                f"for {self.deps.shape[0]} deps"
            )

    def residual(self, xd: RealVec) -> RealVec:
        return self.matrix @ xd

    def jacobian_values(self, xd: RealVec) -> RealVec:
        return self._values


class FunctionBlock(ConstraintBlock):
    """Block backed by plain callables with declared patterns."""

    def __init__(
        self,
        name: str,
        deps: Sequence[int],
        arity: int,
        residual_fn: Callable[[RealVec], RealVec],
        jacobian_fn: Callable[[RealVec], RealVec],
        jac_pattern: tuple[Sequence[int], Sequence[int]],
        hessian_fn: Optional[Callable[[RealVec, RealVec], RealVec]] = None,
        hess_pattern: tuple[Sequence[int], Sequence[int]] = ((), ()),
        senses=Sense.EQ,
        rhs=0.0,
        pure: bool = True,
    ):
        super().__init__(name, deps, arity, jac_pattern, hess_pattern, senses, rhs, pure)
        self._residual_fn = residual_fn
        self._jacobian_fn = jacobian_fn
        self._hessian_fn = hessian_fn

    def residual(self, xd: RealVec) -> RealVec:
        return self._residual_fn(xd)

    def jacobian_values(self, xd: RealVec) -> RealVec:
        return self._jacobian_fn(xd)

    def hessian_values(self, xd: RealVec, lam: RealVec) -> RealVec:
        if self._hessian_fn is None:
            return np.zeros(self.hess_nnz)
        return self._hessian_fn(xd, lam)


class SlackedBlock(ConstraintBlock):
    """
    Inequality block rewritten as equalities with one slack per inequality row.

    h(x) <= c becomes h(x) + s - c = 0 and h(x) >= c becomes h(x) - s - c = 0,
    s >= 0. Equality rows of the inner block pass through unchanged.
    """

    def __init__(self, inner: ConstraintBlock, slack_vars: Sequence[int]):
        self.inner = inner
        inequality_rows = [i for i, s in enumerate(inner.senses) if s is not Sense.EQ]
        slack_vars = _index_array(slack_vars, "slack vars")
        if slack_vars.shape[0] != len(inequality_rows):
            raise StructuralError(
                f"block '{inner.name}' needs {len(inequality_rows)} slacks, "
                f"got {slack_vars.shape[0]}"
            )
        k = inner.deps.shape[0]
        self._slack_rows = np.asarray(inequality_rows, dtype=np.intp)
        self._slack_signs = np.array(
            [1.0 if inner.senses[i] is Sense.LE else -1.0 for i in inequality_rows]
        )
        super().__init__(
            inner.name,
            np.concatenate([inner.deps, slack_vars]),
            inner.arity,
            (
                np.concatenate([inner.jac_rows, self._slack_rows]),
                np.concatenate([inner.jac_cols, k + np.arange(slack_vars.shape[0])]),
            ),
            (inner.hess_rows, inner.hess_cols),
            senses=Sense.EQ,
            rhs=inner.rhs,
            pure=inner.pure,
        )
        self._n_inner = k

    def residual(self, xd: RealVec) -> RealVec:
        values = np.array(self.inner.residual(xd[: self._n_inner]), dtype=np.float64)
        values[self._slack_rows] += self._slack_signs * xd[self._n_inner:]
        return values

    def jacobian_values(self, xd: RealVec) -> RealVec:
        inner = np.asarray(self.inner.jacobian_values(xd[: self._n_inner]), dtype=np.float64)
        return np.concatenate([inner, self._slack_signs])

    def hessian_values(self, xd: RealVec, lam: RealVec) -> RealVec:
        return self.inner.hessian_values(xd[: self._n_inner], lam)


# ============================================================================
# Objectives
# ============================================================================

class Objective(ABC):
    """Objective over the full variable vector; Hessian pattern is global and lower."""

    hess_rows: IndexArray = np.zeros(0, dtype=np.intp)
    hess_cols: IndexArray = np.zeros(0, dtype=np.intp)

    @property
    def max_index(self) -> int:
        return -1

    @abstractmethod
    def value(self, x: RealVec) -> float:
        ...

    @abstractmethod
    def gradient(self, x: RealVec) -> RealVec:
        ...

    def hessian_values(self, x: RealVec) -> RealVec:
        return np.zeros(self.hess_rows.shape[0])


class ZeroObjective(Objective):
    """Pure feasibility problem."""

    def value(self, x: RealVec) -> float:
        return 0.0

    def gradient(self, x: RealVec) -> RealVec:
        return np.zeros_like(x)


class LinearObjective(Objective):
    """f(x) = sum_k c_k x_{i_k} + constant."""

    def __init__(self, indices: Sequence[int], coefficients, constant: float = 0.0):
        self.indices = _index_array(indices, "objective indices")
        self.coefficients = np.broadcast_to(
            np.asarray(coefficients, dtype=np.float64), self.indices.shape
        ).copy()
        self.constant = float(constant)

    @property
    def max_index(self) -> int:
        return int(self.indices.max()) if self.indices.size else -1

    def value(self, x: RealVec) -> float:
        return float(self.coefficients @ x[self.indices]) + self.constant

    def gradient(self, x: RealVec) -> RealVec:
        grad = np.zeros_like(x)
        np.add.at(grad, self.indices, self.coefficients)
        return grad


class QuadraticObjective(Objective):
    """Separable f(x) = sum_k a_k x_k^2 + b_k x_k + c_k over the given indices."""

    def __init__(self, indices: Sequence[int], a, b=0.0, c=0.0):
        self.indices = _index_array(indices, "objective indices")
        if np.unique(self.indices).size != self.indices.size:
            raise StructuralError("separable quadratic objective repeats an index")
        shape = self.indices.shape
        self.a = np.broadcast_to(np.asarray(a, dtype=np.float64), shape).copy()
        self.b = np.broadcast_to(np.asarray(b, dtype=np.float64), shape).copy()
        self.c = np.broadcast_to(np.asarray(c, dtype=np.float64), shape).copy()
        self.hess_rows = self.indices
        self.hess_cols = self.indices

    @property
    def max_index(self) -> int:
        return int(self.indices.max()) if self.indices.size else -1

    def value(self, x: RealVec) -> float:
        xi = x[self.indices]
        return float(np.sum(self.a * xi * xi + self.b * xi + self.c))

    def gradient(self, x: RealVec) -> RealVec:
        grad = np.zeros_like(x)
        grad[self.indices] = 2.0 * self.a * x[self.indices] + self.b
        return grad

    def hessian_values(self, x: RealVec) -> RealVec:
        return 2.0 * self.a


class DenseQuadraticObjective(Objective):
    """f(x) = 1/2 x_I^T Q x_I + q^T x_I over an index set I."""

    def __init__(self, indices: Sequence[int], q_matrix, q_vector=0.0, constant: float = 0.0):
        self.indices = _index_array(indices, "objective indices")
        k = self.indices.shape[0]
        if np.unique(self.indices).size != k:
            raise StructuralError("quadratic objective repeats an index")
        self.q_matrix = np.asarray(q_matrix, dtype=np.float64)
        if self.q_matrix.shape != (k, k):
            raise DimensionMismatchError(f"Q must be {k}x{k}, got {self.q_matrix.shape}")
        if not np.allclose(self.q_matrix, self.q_matrix.T, rtol=0.0, atol=1e-12):
            raise StructuralError("Q must be symmetric")
        self.q_vector = np.broadcast_to(np.asarray(q_vector, dtype=np.float64), (k,)).copy()
        self.constant = float(constant)
        local_rows, local_cols = np.nonzero(np.tril(self.q_matrix))
        self._local = (local_rows, local_cols)
        rows, cols = self.indices[local_rows], self.indices[local_cols]
        self.hess_rows = np.maximum(rows, cols)
        self.hess_cols = np.minimum(rows, cols)

    @property
    def max_index(self) -> int:
        return int(self.indices.max()) if self.indices.size else -1

    def value(self, x: RealVec) -> float:
        xi = x[self.indices]
        return float(0.5 * xi @ self.q_matrix @ xi + self.q_vector @ xi) + self.constant

    def gradient(self, x: RealVec) -> RealVec:
        grad = np.zeros_like(x)
        grad[self.indices] = self.q_matrix @ x[self.indices] + self.q_vector
        return grad

    def hessian_values(self, x: RealVec) -> RealVec:
        return self.q_matrix[self._local]


# ============================================================================
# Timing
# ============================================================================

class TimingAccumulator:
    """Wall-time per oracle category, safe to update from several threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self._totals = dict.fromkeys(TIMING_CATEGORIES, 0.0)

    def add(self, category: str, seconds: float) -> None:
        if category not in self._totals:
            raise KeyError(f"unknown timing category '{category}'")
        with self._lock:
            self._totals[category] += seconds

    @contextmanager
    def measure(self, category: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(category, time.perf_counter() - start)

    def snapshot(self) -> dict[str, float]:
        with self._lock:
            return dict(self._totals)

    def reset(self) -> None:
        with self._lock:
            self._totals = dict.fromkeys(TIMING_CATEGORIES, 0.0)

    @property
    def total(self) -> float:
        return sum(self.snapshot().values())


# ============================================================================
# Problem
# ============================================================================

class NlpProblem:
    """
    min f(x) s.t. g(x) = 0, x >= lower.

    Built incrementally (variables, blocks, objective); treated as immutable
    once handed to the solver.
    """

    def __init__(self, name: str = "nlp"):
        self.name = name
        self.variables: list[VarSpec] = []
        self.blocks: list[ConstraintBlock] = []
        self.objective: Objective = ZeroObjective()
        self.groups: dict[str, IndexArray] = {}
        self.timing = TimingAccumulator()
        self._offsets: list[int] = []
        self._n_con = 0

    # -- dimensions -----------------------------------------------------------

    @property
    def n_var(self) -> int:
        return len(self.variables)

    @property
    def n_con(self) -> int:
        return self._n_con

    @property
    def pure(self) -> bool:
        return all(block.pure for block in self.blocks)

    # -- building -------------------------------------------------------------

    def add_variable(self, name: str, lower: float = -math.inf, init: float = 0.0) -> int:
        self.variables.append(VarSpec(name, float(lower), float(init)))
        return self.n_var - 1

    def add_variables(self, prefix: str, count: int, lower=-math.inf, init=0.0) -> IndexArray:
        """Append `count` variables named prefix[i] and register them as a group."""
        if prefix in self.groups:
            raise StructuralError(f"variable group '{prefix}' already exists")
        lowers = np.broadcast_to(np.asarray(lower, dtype=np.float64), (count,))
        inits = np.broadcast_to(np.asarray(init, dtype=np.float64), (count,))
        start = self.n_var
        for i in range(count):
            self.variables.append(VarSpec(f"{prefix}[{i}]", float(lowers[i]), float(inits[i])))
        indices = np.arange(start, start + count, dtype=np.intp)
        self.groups[prefix] = indices
        return indices

    def add_block(self, block: ConstraintBlock) -> range:
        if not block.is_equality:
            raise StructuralError(
                f"block '{block.name}' has inequality rows; use add_inequality_as_slack"
            )
        if block.deps.size and block.deps.max() >= self.n_var:
            raise StructuralError(
                f"block '{block.name}' depends on variable {block.deps.max()} "
                f"but the problem has {self.n_var}"
            )
        if any(existing.name == block.name for existing in self.blocks):
            raise StructuralError(f"duplicate block name '{block.name}'")
        self.blocks.append(block)
        self._offsets.append(self._n_con)
        self._n_con += block.arity
        logger.debug("[NLP] %s: added block '%s' rows=%d deps=%d", self.name, block.name,
                     block.arity, block.deps.size)
        return range(self._offsets[-1], self._n_con)

    def set_objective(self, objective: Objective) -> None:
        self.objective = objective

    # -- vectors --------------------------------------------------------------

    def lower_bounds(self) -> RealVec:
        return np.array([v.lower for v in self.variables], dtype=np.float64)

    def initial_point(self) -> RealVec:
        return np.array([v.init for v in self.variables], dtype=np.float64)

    def bounded_mask(self) -> np.ndarray:
        return np.isfinite(self.lower_bounds())

    # -- patterns -------------------------------------------------------------

    def jacobian_pattern(self) -> tuple[IndexArray, IndexArray]:
        rows = [offset + b.jac_rows for offset, b in zip(self._offsets, self.blocks)]
        cols = [b.deps[b.jac_cols] for b in self.blocks]
        if not rows:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
        return np.concatenate(rows), np.concatenate(cols)

    def hessian_pattern(self) -> tuple[IndexArray, IndexArray]:
        """Global lower-triangular positions (objective first, then blocks); may repeat."""
        rows = [self.objective.hess_rows]
        cols = [self.objective.hess_cols]
        for block in self.blocks:
            r, c = block.deps[block.hess_rows], block.deps[block.hess_cols]
            rows.append(np.maximum(r, c))
            cols.append(np.minimum(r, c))
        return np.concatenate(rows).astype(np.intp), np.concatenate(cols).astype(np.intp)

    def jacobian_nnz(self) -> int:
        return _unique_positions(*self.jacobian_pattern())

    def hessian_nnz(self) -> int:
        return _unique_positions(*self.hessian_pattern())

    # -- evaluation -----------------------------------------------------------

    def _check_x(self, x) -> RealVec:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_var,):
            raise DimensionMismatchError(
                f"x has shape {x.shape}, problem has {self.n_var} variables"
            )
        if self.objective.max_index >= self.n_var:
            raise StructuralError("objective references a variable beyond n_var")
        return x

    def _check_lam(self, lam) -> RealVec:
        lam = np.asarray(lam, dtype=np.float64)
        if lam.shape != (self.n_con,):
            raise DimensionMismatchError(
                f"lambda has shape {lam.shape}, problem has {self.n_con} constraints"
            )
        return lam

    def constraint_values(self, x) -> RealVec:
        x = self._check_x(x)
        g = np.empty(self.n_con)
        for offset, block in zip(self._offsets, self.blocks):
            values = _checked(block.residual(x[block.deps]), block.arity, block.name, "residual")
            g[offset: offset + block.arity] = values - block.rhs
        return g

    def constraint_jacobian(self, x) -> Triplets:
        x = self._check_x(x)
        rows, cols = self.jacobian_pattern()
        vals = [
            _checked(b.jacobian_values(x[b.deps]), b.jac_nnz, b.name, "Jacobian")
            for b in self.blocks
        ]
        vals = np.concatenate(vals) if vals else np.zeros(0)
        return Triplets(rows, cols, vals, (self.n_con, self.n_var))

    def constraint_hessian(self, x, lam) -> Triplets:
        """sum_i lam_i Hess(g_i), lower triangle, without the objective."""
        x = self._check_x(x)
        lam = self._check_lam(lam)
        rows, cols, vals = [], [], []
        for offset, block in zip(self._offsets, self.blocks):
            if not block.hess_nnz:
                continue
            r, c = block.deps[block.hess_rows], block.deps[block.hess_cols]
            rows.append(np.maximum(r, c))
            cols.append(np.minimum(r, c))
            multipliers = lam[offset: offset + block.arity]
            vals.append(_checked(block.hessian_values(x[block.deps], multipliers),
                                 block.hess_nnz, block.name, "Hessian"))
        if not rows:
            empty = np.zeros(0, dtype=np.intp)
            return Triplets(empty, empty, np.zeros(0), (self.n_var, self.n_var))
        return Triplets(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                        (self.n_var, self.n_var))


def _checked(values, expected: int, block_id: str, what: str) -> RealVec:
    array = np.asarray(values, dtype=np.float64).reshape(-1)
    if array.shape[0] != expected:
        raise ContractViolationError(
            f"{what} oracle returned {array.shape[0]} values for {expected} declared positions",
            block_id=block_id,
        )
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{what} oracle produced NaN or Inf", block_id=block_id)
    return array


def add_inequality_as_slack(problem: NlpProblem, block: ConstraintBlock) -> NlpProblem:
    """
    Add an inequality block by introducing one slack s >= 0 per inequality row.

    Slacks start at the value that makes the row hold at the current initial
    point (clipped at 0); the solver pushes them inside the bound.
    """
    inequality_rows = [i for i, s in enumerate(block.senses) if s is not Sense.EQ]
    x0 = problem.initial_point()
    h0 = np.asarray(block.residual(x0[block.deps]), dtype=np.float64)
    init = []
    for i in inequality_rows:
        gap = block.rhs[i] - h0[i] if block.senses[i] is Sense.LE else h0[i] - block.rhs[i]
        init.append(max(float(gap), 0.0))
    slacks = problem.add_variables(f"{block.name}.slack", len(inequality_rows), lower=0.0,
                                   init=np.asarray(init))
    problem.add_block(SlackedBlock(block, slacks))
    return problem


# ============================================================================
# Aggregated evaluation
# ============================================================================

@dataclass
class EvalResult:
    """Everything the solver needs at one point."""
    f: float
    grad: RealVec
    g: RealVec
    jac: Triplets
    hess: Triplets


def eval_functions(
    problem: NlpProblem, x, timing: Optional[TimingAccumulator] = None
) -> tuple[float, RealVec]:
    """Objective and constraint values only (line-search trial points)."""
    timing = timing or problem.timing
    x = problem._check_x(x)
    with timing.measure("function"):
        f = float(problem.objective.value(x))
        if not math.isfinite(f):
            raise NumericError("objective value is NaN or Inf", block_id="objective")
        g = problem.constraint_values(x)
    return f, g


def eval_all(
    problem: NlpProblem, x, lam, timing: Optional[TimingAccumulator] = None
) -> EvalResult:
    """
    f, grad f, g, Jacobian triplets and Lagrangian-Hessian triplets at (x, lambda).

    The Hessian is the lower triangle of Hess f + sum_i lam_i Hess g_i with
    the objective entries first. Wall time goes to `timing` (default: the
    problem's own accumulator).
    """
    timing = timing or problem.timing
    x = problem._check_x(x)
    lam = problem._check_lam(lam)

    f, g = eval_functions(problem, x, timing)

    with timing.measure("jacobian"):
        grad = _checked(problem.objective.gradient(x), problem.n_var, "objective", "gradient")
        jac = problem.constraint_jacobian(x)

    with timing.measure("hessian"):
        objective = problem.objective
        obj_vals = _checked(objective.hessian_values(x), objective.hess_rows.shape[0],
                            "objective", "Hessian")
        con = problem.constraint_hessian(x, lam)
        hess = Triplets(
            np.concatenate([objective.hess_rows, con.rows]).astype(np.intp),
            np.concatenate([objective.hess_cols, con.cols]).astype(np.intp),
            np.concatenate([obj_vals, con.vals]),
            (problem.n_var, problem.n_var),
        )

    return EvalResult(f=f, grad=grad, g=g, jac=jac, hess=hess)
