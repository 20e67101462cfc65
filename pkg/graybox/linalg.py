"""
Graybox NLP - Linear Algebra Kernel
Symmetric indefinite LDL^T factorization (Bunch-Kaufman pivoting) with inertia
reporting, plus leaf-pivot condensation of sparse symmetric systems.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import lapack, ldl

from .errors import DimensionMismatchError, NumericError, SingularityError, StructuralError

logger = logging.getLogger(__name__)

RealVec = NDArray[np.float64]
RealMat = NDArray[np.float64]
IndexArray = NDArray[np.intp]

# Zero-pivot threshold, relative to max|A|.
PIVOT_TOLERANCE = 1e-11
SYMMETRY_TOLERANCE = 1e-12
MAX_LEAF_LEVELS = 8


@dataclass(frozen=True)
class Inertia:
    """Counts of positive, negative and zero eigenvalues."""
    n_pos: int
    n_neg: int
    n_zero: int

    @property
    def dimension(self) -> int:
        return self.n_pos + self.n_neg + self.n_zero

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.n_pos, self.n_neg, self.n_zero)


# ============================================================================
# Dense factorization
# ============================================================================

@dataclass(frozen=True)
class LdltFactorization:
    """
    Factored form A = P^T L D L^T P of a symmetric matrix.

    `factor` and `ipiv` are LAPACK's compact ?sytrf output (lower storage,
    1-based pivot indices); `pivots` lists the size of each diagonal block.
    The explicit `lower`, `diagonal` and `perm` factors are only built on
    request.
    """
    matrix: RealMat
    factor: RealMat
    ipiv: NDArray[np.int32]
    pivots: tuple[int, ...]
    inertia: Inertia
    zero_threshold: float

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def _explicit(self) -> tuple[RealMat, RealMat, IndexArray]:
        lu, d, perm = ldl(self.matrix, lower=True, hermitian=True, check_finite=False)
        return lu[perm], d, np.asarray(perm, dtype=np.intp)

    @property
    def lower(self) -> RealMat:
        """Unit lower-triangular L in pivot order."""
        return self._explicit[0]

    @property
    def diagonal(self) -> RealMat:
        """Block diagonal D with 1x1 and 2x2 blocks."""
        return self._explicit[1]

    @property
    def perm(self) -> IndexArray:
        """Row order with (P v) = v[perm]."""
        return self._explicit[2]

    def reconstruct(self) -> RealMat:
        """Rebuild P^T L D L^T P; matches the input up to rounding."""
        core = self.lower @ self.diagonal @ self.lower.T
        out = np.empty_like(core)
        out[np.ix_(self.perm, self.perm)] = core
        return out

    def multiply(self, x: RealVec) -> RealVec:
        return self.matrix @ x

    def apply_inverse(self, b: RealVec) -> RealVec:
        if self.dimension == 0:
            return np.zeros(0)
        x, info = lapack.dsytrs(self.factor, self.ipiv, b, lower=1)
        if info != 0:
            raise NumericError(f"?sytrs failed with info={info}")
        return x


def _as_square_symmetric(a) -> RealMat:
    matrix = np.asarray(a, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise StructuralError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NumericError("matrix contains NaN or Inf entries")
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    asymmetry = float(np.max(np.abs(matrix - matrix.T))) if matrix.size else 0.0
    if asymmetry > SYMMETRY_TOLERANCE * scale:
        raise StructuralError(f"matrix is not symmetric (max |A - A^T| = {asymmetry:.3e})")
    return matrix


def _block_inertia(
    factor: RealMat, ipiv: NDArray[np.int32], threshold: float
) -> tuple[tuple[int, ...], Inertia]:
    # negative ipiv entries come in consecutive pairs, one pair per 2x2 block
    two = ipiv < 0
    first = two & (np.cumsum(two) % 2 == 1)
    second = two & ~first
    diag = np.diagonal(factor)
    eig = [diag[~two]]
    if first.any():
        k = np.flatnonzero(first)
        a, b, c = diag[k], factor[k + 1, k], diag[k + 1]
        mid = 0.5 * (a + c)
        radius = np.hypot(0.5 * (a - c), b)
        eig += [mid + radius, mid - radius]
    values = np.concatenate(eig)
    inertia = Inertia(
        int(np.sum(values > threshold)),
        int(np.sum(values < -threshold)),
        int(np.sum(np.abs(values) <= threshold)),
    )
    pivots = tuple(int(size) for size in np.where(two, 2, 1)[~second])
    return pivots, inertia


def ldlt_factor(a, zero_threshold: Optional[float] = None) -> LdltFactorization:
    """
    Factor a symmetric (possibly indefinite) matrix and count its inertia.

    Uses LAPACK's Bunch-Kaufman ?sytrf. By Sylvester's law the eigenvalue
    signs of A equal those of D; a pivot block eigenvalue with magnitude at
    most `zero_threshold` (default 1e-11 * max|A|) counts as zero.
    """
    matrix = _as_square_symmetric(a)
    n = matrix.shape[0]
    if n == 0:
        empty = np.zeros((0, 0))
        return LdltFactorization(
            matrix, empty, np.zeros(0, dtype=np.int32), (), Inertia(0, 0, 0), 0.0
        )

    work, _ = lapack.dsytrf_lwork(n, lower=1)
    factor, ipiv, info = lapack.dsytrf(matrix, lower=1, lwork=max(int(work), 1))
    if info < 0:
        raise NumericError(f"?sytrf rejected argument {-info}")
    if zero_threshold is None:
        zero_threshold = PIVOT_TOLERANCE * float(np.max(np.abs(matrix)))
    pivots, inertia = _block_inertia(factor, ipiv, zero_threshold)
    logger.debug("[LDLT] n=%d inertia=%s two-by-two=%d", n, inertia.as_tuple(), pivots.count(2))
    return LdltFactorization(
        matrix=matrix,
        factor=factor,
        ipiv=ipiv,
        pivots=pivots,
        inertia=inertia,
        zero_threshold=zero_threshold,
    )


# ============================================================================
# Leaf condensation
# ============================================================================

@dataclass(frozen=True)
class LeafPlan:
    """
    Elimination order for 1x1 pivots that touch at most one other index.

    Indices in levels[k] have, at their turn, one remaining neighbour
    parent[i] (or none, -1) and never neighbour each other. `core` is what
    is left for the dense factorization.
    """
    dimension: int
    levels: tuple[IndexArray, ...]
    parent: IndexArray
    core: IndexArray

    @property
    def n_eliminated(self) -> int:
        return self.dimension - self.core.shape[0]


def leaf_plan(
    dimension: int,
    rows: Sequence[int],
    cols: Sequence[int],
    sign: Sequence[int],
    seed: Sequence[bool],
    max_levels: int = MAX_LEAF_LEVELS,
) -> LeafPlan:
    """
    Peel leaves off the graph of a symmetric sparsity pattern.

    rows/cols list off-diagonal positions (either triangle, duplicates and
    diagonal entries ignored). sign[i] is the sign the pivot of i is known
    to have, 0 if unknown; seed[i] marks pivots that are nonzero on their
    own. An index is eliminated once it has at most one remaining neighbour,
    a known sign, and is a seed or has absorbed a child of opposite sign,
    so every planned pivot is a same-sign sum and never cancels to zero.
    """
    n = int(dimension)
    rows = np.asarray(rows, dtype=np.intp).reshape(-1)
    cols = np.asarray(cols, dtype=np.intp).reshape(-1)
    off = rows != cols
    if off.any():
        both = np.concatenate([np.stack([rows[off], cols[off]], axis=1),
                               np.stack([cols[off], rows[off]], axis=1)])
        edges = np.unique(both, axis=0)
    else:
        edges = np.zeros((0, 2), dtype=np.intp)
    ei, ej = edges[:, 0], edges[:, 1]

    sign = np.array(sign, dtype=np.int8).reshape(-1)
    ready = np.array(seed, dtype=bool).reshape(-1)
    if sign.shape[0] != n or ready.shape[0] != n:
        raise DimensionMismatchError(f"sign and seed must have length {n}")
    remaining = np.ones(n, dtype=bool)
    parent = np.full(n, -1, dtype=np.intp)
    levels: list[IndexArray] = []

    for _ in range(max_levels):
        alive = remaining[ei] & remaining[ej]
        degree = np.bincount(ei[alive], minlength=n)
        candidate = remaining & (degree <= 1) & (sign != 0) & ready
        if not candidate.any():
            break
        attached = alive & candidate[ei]
        neighbour = np.full(n, -1, dtype=np.intp)
        neighbour[ei[attached]] = ej[attached]

        idx = np.flatnonzero(candidate)
        p = neighbour[idx]
        # two leaves that only see each other: the lower index goes first
        clash = (p >= 0) & candidate[np.maximum(p, 0)] & (idx > p)
        idx, p = idx[~clash], p[~clash]

        parent[idx] = p
        remaining[idx] = False
        has = p >= 0
        ready[p[has]] = True
        mixed = has & (sign[np.maximum(p, 0)] != -sign[idx])
        sign[p[mixed]] = 0
        levels.append(idx)

    core = np.flatnonzero(remaining)
    logger.debug("[LDLT] leaf plan: %d of %d eliminated in %d level(s)",
                 n - core.shape[0], n, len(levels))
    return LeafPlan(n, tuple(levels), parent, core)


@dataclass(frozen=True)
class CondensedLdlt:
    """Leaf pivots of a LeafPlan followed by a dense LDL^T of the remaining core."""
    plan: LeafPlan
    pivots: RealVec
    link: RealVec
    core: LdltFactorization
    inertia: Inertia
    operator: Callable[[RealVec], RealVec]

    @property
    def dimension(self) -> int:
        return self.plan.dimension

    def multiply(self, x: RealVec) -> RealVec:
        return self.operator(x)

    def apply_inverse(self, b: RealVec) -> RealVec:
        plan = self.plan
        work = np.array(b, dtype=np.float64)
        for level in plan.levels:
            p = plan.parent[level]
            has = p >= 0
            update = self.link[level] * work[level] / self.pivots[level]
            np.subtract.at(work, p[has], update[has])

        x = np.zeros(plan.dimension)
        x[plan.core] = self.core.apply_inverse(work[plan.core])
        for level in reversed(plan.levels):
            p = plan.parent[level]
            coupled = np.where(p >= 0, self.link[level] * x[np.maximum(p, 0)], 0.0)
            x[level] = (work[level] - coupled) / self.pivots[level]
        return x


def ldlt_factor_condensed(
    plan: LeafPlan,
    diagonal,
    link,
    core_offdiag,
    operator: Callable[[RealVec], RealVec],
    zero_threshold: float,
) -> CondensedLdlt:
    """
    Eliminate the planned leaf pivots, then factor the core densely.

    `diagonal` is the full diagonal of A, link[i] = A[i, parent[i]] and
    `core_offdiag` is A restricted to plan.core with its diagonal ignored.
    `operator` multiplies by A (used for iterative refinement). Inertia adds
    the leaf pivot signs to the core inertia. Raises SingularityError when a
    leaf pivot vanishes.
    """
    work = np.array(diagonal, dtype=np.float64)
    link = np.asarray(link, dtype=np.float64)
    n_pos = n_neg = 0
    for level in plan.levels:
        d = work[level]
        if not np.all(np.isfinite(d)) or np.any(d == 0.0):
            raise SingularityError("leaf pivot vanished")
        p = plan.parent[level]
        has = p >= 0
        np.subtract.at(work, p[has], link[level][has] ** 2 / d[has])
        n_pos += int(np.sum(d > 0.0))
        n_neg += int(np.sum(d < 0.0))

    k = plan.core.shape[0]
    core_diag = work[plan.core]
    if not np.all(np.isfinite(core_diag)):
        raise SingularityError("leaf elimination overflowed the core diagonal")
    core = np.array(core_offdiag, dtype=np.float64).reshape(k, k)
    core[np.diag_indices(k)] = core_diag
    inner = ldlt_factor(core, zero_threshold=zero_threshold)
    inertia = Inertia(n_pos + inner.inertia.n_pos, n_neg + inner.inertia.n_neg,
                      inner.inertia.n_zero)
    return CondensedLdlt(plan, work, link, inner, inertia, operator)


Factorization = Union[LdltFactorization, CondensedLdlt]


def ldlt_solve(fact: Factorization, b) -> RealVec:
    """Solve A x = b with one step of iterative refinement."""
    rhs = np.asarray(b, dtype=np.float64)
    if rhs.ndim != 1 or rhs.shape[0] != fact.dimension:
        raise DimensionMismatchError(
            f"right-hand side has shape {rhs.shape}, expected ({fact.dimension},)"
        )
    if fact.inertia.n_zero > 0:
        raise SingularityError(f"factorization has {fact.inertia.n_zero} zero pivot(s)")
    if fact.dimension == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(rhs)):
        raise NumericError("right-hand side contains NaN or Inf entries")

    x = fact.apply_inverse(rhs)
    residual = rhs - fact.multiply(x)
    x += fact.apply_inverse(residual)
    return x
