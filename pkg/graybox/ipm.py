"""
Graybox NLP - Interior-Point Solver
Primal-dual barrier method with inertia correction, fraction-to-boundary
stepping, an l1 merit line search and a feasibility restoration fallback.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial
from typing import Optional

import numpy as np
from pydantic import BaseModel, field_validator
from scipy import sparse

from .config import Settings, get_settings
from .errors import GrayboxError, LinAlgFailureError, NumericError, SingularityError
from .linalg import (
    PIVOT_TOLERANCE,
    Factorization,
    Inertia,
    LeafPlan,
    RealMat,
    RealVec,
    ldlt_factor,
    ldlt_factor_condensed,
    ldlt_solve,
    leaf_plan,
)
from .model import (
    EvalResult,
    NlpProblem,
    Objective,
    TimingAccumulator,
    Triplets,
    VarSpec,
    eval_all,
    eval_functions,
)

logger = logging.getLogger(__name__)

# Multiplier-scaling floor used in the KKT error.
S_MAX = 100.0
# Bound-multiplier safeguard against drifting away from mu / s.
KAPPA_SIGMA = 1e10
DUAL_REGULARIZATION = 1e-8
PENALTY_RHO_HAT = 0.1
REGULARIZATION_WARN = 1e4


class IpmOptions(BaseModel):
    """Solver knobs; defaults match the documented configuration."""
    tol: float = 1e-6
    max_iter: int = 3000
    mu_init: float = 0.1
    mu_shrink: float = 0.2
    mu_power: float = 1.5
    tau: float = 0.995
    reg_init: float = 1e-4
    reg_growth: float = 10.0
    reg_max: float = 1e40
    armijo: float = 1e-4
    time_limit_s: Optional[float] = None
    kappa_eps: float = 10.0
    min_step: float = 1e-14
    restoration_max_iter: int = 30
    allow_restoration: bool = True
    condense_kkt: bool = True

    @field_validator("tau")
    @classmethod
    def _tau_open_unit(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        return v

    @field_validator("mu_shrink")
    @classmethod
    def _shrink_open_unit(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("mu_shrink must lie in (0, 1)")
        return v

    @field_validator("tol", "mu_init", "reg_init", "reg_max", "armijo", "kappa_eps", "min_step")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError("must be positive")
        return v

    @field_validator("mu_power", "reg_growth")
    @classmethod
    def _above_one(cls, v: float) -> float:
        if not v > 1.0:
            raise ValueError("must be greater than 1")
        return v

    @field_validator("max_iter", "restoration_max_iter")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @classmethod
    def from_settings(cls, settings: Optional[Settings] = None, **overrides) -> "IpmOptions":
        """Seed tol, max_iter and the time limit from the environment settings."""
        settings = settings or get_settings()
        values = {
            "tol": settings.tol,
            "max_iter": settings.max_iter,
            "time_limit_s": settings.time_limit_s,
        }
        values.update(overrides)
        return cls(**values)


class IpmStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    TIME_LIMIT = "TimeLimit"
    INFEASIBLE = "Infeasible"
    LINALG_FAILURE = "LinAlgFailure"


# ============================================================================
# Result types
# ============================================================================

@dataclass
class TimingBreakdown:
    """Four-way split of solve wall time; solver_s is everything outside the oracles."""
    function_s: float = 0.0
    jacobian_s: float = 0.0
    hessian_s: float = 0.0
    solver_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.function_s + self.jacobian_s + self.hessian_s + self.solver_s

    def percentages(self) -> dict[str, float]:
        total = self.total_s
        if total <= 0.0:
            return {"function": 0.0, "jacobian": 0.0, "hessian": 0.0, "solver": 100.0}
        return {
            "function": 100.0 * self.function_s / total,
            "jacobian": 100.0 * self.jacobian_s / total,
            "hessian": 100.0 * self.hessian_s / total,
            "solver": 100.0 * self.solver_s / total,
        }

    def dominant(self) -> str:
        shares = self.percentages()
        return max(shares, key=shares.get)

    def to_dict(self) -> dict:
        return {
            "function_s": self.function_s,
            "jacobian_s": self.jacobian_s,
            "hessian_s": self.hessian_s,
            "solver_s": self.solver_s,
            "total_s": self.total_s,
        }


@dataclass(frozen=True)
class IterationRecord:
    """One line of the iteration trace."""
    iteration: int
    mu: float
    objective: float
    primal_inf: float
    dual_inf: float
    kkt_error: float
    alpha_primal: float
    alpha_dual: float
    delta_w: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mu": self.mu,
            "objective": self.objective,
            "primal_inf": self.primal_inf,
            "dual_inf": self.dual_inf,
            "kkt_error": self.kkt_error,
            "alpha_primal": self.alpha_primal,
            "alpha_dual": self.alpha_dual,
            "delta_w": self.delta_w,
        }


@dataclass
class IpmResult:
    """Outcome of one solve."""
    status: IpmStatus
    x: RealVec
    lam: RealVec
    z: RealVec
    iterations: int
    objective: float
    kkt_error: float
    timing: TimingBreakdown
    trace: list[IterationRecord] = field(default_factory=list)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is IpmStatus.OPTIMAL

    @property
    def time_per_iter_s(self) -> float:
        return self.timing.total_s / max(self.iterations, 1)

    def to_dict(self, include_trace: bool = False) -> dict:
        data = {
            "status": self.status.value,
            "x": self.x.tolist(),
            "lambda": self.lam.tolist(),
            "z": self.z.tolist(),
            "iterations": self.iterations,
            "objective": self.objective,
            "kkt_error": self.kkt_error,
            "timing": self.timing.to_dict(),
            "message": self.message,
        }
        if include_trace:
            data["trace"] = [record.to_dict() for record in self.trace]
        return data


@dataclass(frozen=True)
class KktResiduals:
    """Unscaled and scaled optimality measures at a point."""
    dual_inf: float
    primal_inf: float
    complementarity: float
    bound_violation: float
    scale_dual: float
    scale_compl: float
    mu: float

    @property
    def kkt_error(self) -> float:
        return max(
            self.dual_inf / self.scale_dual,
            self.primal_inf,
            self.complementarity / self.scale_compl,
        )

    def to_dict(self) -> dict:
        return {
            "dual_inf": self.dual_inf,
            "primal_inf": self.primal_inf,
            "complementarity": self.complementarity,
            "bound_violation": self.bound_violation,
            "kkt_error": self.kkt_error,
        }


# ============================================================================
# KKT residuals
# ============================================================================

def _residuals(
    ev: EvalResult, x: RealVec, lam: RealVec, z: RealVec, lower: RealVec, bounded: np.ndarray,
    mu: float,
) -> KktResiduals:
    n, m = x.shape[0], lam.shape[0]
    dual = ev.grad + ev.jac.rmatvec(lam) - z
    slack = np.where(bounded, x - lower, 0.0)
    compl = (slack * z - mu)[bounded]
    z_norm = float(np.sum(np.abs(z)))
    scale_dual = max(S_MAX, (float(np.sum(np.abs(lam))) + z_norm) / max(n + m, 1)) / S_MAX
    scale_compl = max(S_MAX, z_norm / max(n, 1)) / S_MAX
    violation = 0.0
    if bounded.any():
        violation = float(np.max(np.maximum(lower[bounded] - x[bounded], 0.0)))
    return KktResiduals(
        dual_inf=float(np.max(np.abs(dual))) if n else 0.0,
        primal_inf=float(np.max(np.abs(ev.g))) if m else 0.0,
        complementarity=float(np.max(np.abs(compl))) if compl.size else 0.0,
        bound_violation=violation,
        scale_dual=scale_dual,
        scale_compl=scale_compl,
        mu=mu,
    )


def compute_kkt_residuals(
    problem: NlpProblem, x, lam, z, mu: float = 0.0
) -> KktResiduals:
    """Recompute the KKT residuals from fresh oracle calls; no solver state involved."""
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    ev = eval_all(problem, x, lam, timing=TimingAccumulator())
    lower = problem.lower_bounds()
    return _residuals(ev, x, lam, z, lower, np.isfinite(lower), mu)


# ============================================================================
# KKT system
# ============================================================================

@dataclass(frozen=True)
class Regularization:
    delta_w: float = 0.0
    delta_c: float = 0.0


@dataclass
class KktSystem:
    """
    Unregularized Newton matrix [[H + Sigma, J^T], [J, 0]] with its right-hand side.

    `hess` holds the lower triangle of H + Sigma and `jac` the constraint
    Jacobian, both as triplets. Regularized matrices and factorizations are
    produced on demand; the stored parts stay clean.
    """
    hess: Triplets
    jac: Triplets
    rhs: RealVec
    delta_w: float = 0.0
    delta_c: float = 0.0
    _condensed: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def from_dense(cls, matrix, n_var: int, rhs=None) -> "KktSystem":
        """Split a dense symmetric KKT matrix into its Hessian and Jacobian blocks."""
        matrix = np.asarray(matrix, dtype=np.float64)
        dimension = matrix.shape[0]
        hr, hc = np.nonzero(np.tril(matrix[:n_var, :n_var]))
        jr, jc = np.nonzero(matrix[n_var:, :n_var])
        hess = Triplets(hr, hc, matrix[hr, hc], (n_var, n_var))
        jac = Triplets(jr, jc, matrix[n_var + jr, jc], (dimension - n_var, n_var))
        rhs = np.zeros(dimension) if rhs is None else np.asarray(rhs, dtype=np.float64)
        return cls(hess, jac, rhs)

    @property
    def n_var(self) -> int:
        return self.hess.shape[0]

    @property
    def n_con(self) -> int:
        return self.jac.shape[0]

    @property
    def dimension(self) -> int:
        return self.n_var + self.n_con

    @property
    def required_inertia(self) -> Inertia:
        return Inertia(self.n_var, self.n_con, 0)

    def regularized(self, delta_w: float, delta_c: float = 0.0) -> RealMat:
        n = self.n_var
        out = np.zeros((self.dimension, self.dimension))
        out[:n, :n] = self.hess.to_symmetric_dense()
        if self.n_con:
            jd = self.jac.to_dense()
            out[n:, :n] = jd
            out[:n, n:] = jd.T
        idx = np.arange(n)
        out[idx, idx] += delta_w
        if self.n_con and delta_c:
            jdx = np.arange(n, self.dimension)
            out[jdx, jdx] -= delta_c
        return out

    def with_regularization(self, delta_w: float, delta_c: float = 0.0) -> "KktSystem":
        return replace(self, delta_w=delta_w, delta_c=delta_c)

    def effective_matrix(self) -> RealMat:
        return self.regularized(self.delta_w, self.delta_c)

    def matvec(self, v: RealVec, delta_w: float = 0.0, delta_c: float = 0.0) -> RealVec:
        n = self.n_var
        x, y = v[:n], v[n:]
        top = self.hess.symmetric_matvec(x) + self.jac.rmatvec(y) + delta_w * x
        bottom = self.jac.matvec(x) - delta_c * y
        return np.concatenate([top, bottom])

    def hessian_quadratic(self, dx: RealVec) -> float:
        """dx^T (H + Sigma) dx."""
        h = self.hess
        terms = h.vals * dx[h.rows] * dx[h.cols]
        return float(2.0 * terms.sum() - terms[h.rows == h.cols].sum())

    def _condensed_parts(self, plan: LeafPlan) -> tuple[RealVec, RealVec, RealMat, float]:
        if self._condensed is not None and self._condensed[0] is plan:
            return self._condensed[1]
        n, m = self.n_var, self.n_con
        h, j = self.hess, self.jac
        on_diag = h.rows == h.cols
        off = ~on_diag
        diagonal = np.zeros(n + m)
        diagonal[:n] = np.bincount(h.rows[on_diag], weights=h.vals[on_diag], minlength=n)

        ei = np.concatenate([h.rows[off], h.cols[off], n + j.rows, j.cols])
        ej = np.concatenate([h.cols[off], h.rows[off], j.cols, n + j.rows])
        val = np.concatenate([h.vals[off], h.vals[off], j.vals, j.vals])
        linked = plan.parent[ei] == ej
        link = np.bincount(ei[linked], weights=val[linked], minlength=n + m)

        k = plan.core.shape[0]
        position = np.full(n + m, -1, dtype=np.intp)
        position[plan.core] = np.arange(k)
        pi, pj = position[ei], position[ej]
        inside = (pi >= 0) & (pj >= 0)
        core = np.bincount(pi[inside] * k + pj[inside], weights=val[inside],
                           minlength=k * k).reshape(k, k)
        scale = float(np.max(np.abs(val))) if val.size else 0.0
        parts = (diagonal, link, core, scale)
        self._condensed = (plan, parts)
        return parts

    def factor(
        self, delta_w: float, delta_c: float = 0.0, plan: Optional[LeafPlan] = None
    ) -> Factorization:
        """LDL^T of the regularized matrix, eliminating the planned leaf pivots first."""
        if plan is not None and plan.dimension == self.dimension:
            diagonal, link, core, scale = self._condensed_parts(plan)
            shifted = diagonal.copy()
            shifted[:self.n_var] += delta_w
            shifted[self.n_var:] -= delta_c
            if shifted.size:
                scale = max(scale, float(np.max(np.abs(shifted))))
            operator = partial(self.matvec, delta_w=delta_w, delta_c=delta_c)
            try:
                return ldlt_factor_condensed(plan, shifted, link, core, operator,
                                             PIVOT_TOLERANCE * scale)
            except SingularityError as exc:
                logger.debug("[IPM] Leaf elimination failed (%s); factoring densely", exc)
        return ldlt_factor(self.regularized(delta_w, delta_c))


def kkt_leaf_plan(hess: Triplets, jac: Triplets, bounded: np.ndarray) -> LeafPlan:
    """
    Leaf elimination order for the KKT matrix of a problem.

    Variables without a Hessian diagonal entry have a pivot that is positive
    (Sigma, delta_w or absorbed constraint rows); bounded ones are positive on
    their own. Constraint rows pivot negative once they absorb a variable.
    The plan depends on sparsity patterns only and is reused across iterations.
    """
    n, m = hess.shape[0], jac.shape[0]
    has_diag = np.zeros(n, dtype=bool)
    has_diag[hess.rows[hess.rows == hess.cols]] = True
    sign = np.concatenate([np.where(has_diag, 0, 1), np.full(m, -1)])
    seed = np.concatenate([np.asarray(bounded, dtype=bool) & ~has_diag, np.zeros(m, dtype=bool)])
    off = hess.rows != hess.cols
    rows = np.concatenate([hess.rows[off], n + jac.rows])
    cols = np.concatenate([hess.cols[off], jac.cols])
    return leaf_plan(n + m, rows, cols, sign, seed)


def assemble_kkt(
    hess: Triplets,
    jac: Triplets,
    x,
    z,
    mu: float,
    delta: float = 0.0,
    *,
    lower=None,
    grad=None,
    lam=None,
    g=None,
    delta_c: float = 0.0,
) -> KktSystem:
    """
    Newton system of the barrier problem.

    (1,1) block: Hess L + diag(z / (x - lower)) over bounded variables + delta I;
    (2,2) block: -delta_c I. Right-hand side: -(grad f + J^T lam - mu / (x - lower), g).
    Missing `lower` means x >= 0; missing grad/lam/g count as zero.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    m = jac.shape[0]
    lower = np.zeros(n) if lower is None else np.asarray(lower, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    grad = np.zeros(n) if grad is None else np.asarray(grad, dtype=np.float64)
    lam = np.zeros(m) if lam is None else np.asarray(lam, dtype=np.float64)
    g = np.zeros(m) if g is None else np.asarray(g, dtype=np.float64)

    bounded = np.isfinite(lower)
    slack = np.where(bounded, x - lower, 1.0)
    barrier = np.where(bounded, mu / slack, 0.0)
    idx = np.flatnonzero(bounded)
    barrier_hess = Triplets(
        np.concatenate([hess.rows, idx]),
        np.concatenate([hess.cols, idx]),
        np.concatenate([hess.vals, z[idx] / slack[idx]]),
        (n, n),
    )
    dual = grad + jac.rmatvec(lam) - barrier
    rhs = -np.concatenate([dual, g])
    return KktSystem(barrier_hess, jac, rhs).with_regularization(delta, delta_c)


def inertia_correct(
    kkt: KktSystem, opts: IpmOptions, previous_delta: float = 0.0,
    plan: Optional[LeafPlan] = None,
) -> tuple[Factorization, Regularization]:
    """
    Factor the KKT matrix, adding delta_w I to the Hessian block until the
    inertia is (n_var, n_con, 0).

    The first attempt is unregularized. Escalation starts from reg_init (or a
    third of the previously used delta) and grows geometrically. Zero pivots
    that delta_w cannot remove switch on delta_c once.
    """
    required = kkt.required_inertia
    delta_c = kkt.delta_c
    fact = kkt.factor(kkt.delta_w, delta_c, plan)
    if fact.inertia == required:
        return fact, Regularization(kkt.delta_w, delta_c)

    delta_w = max(opts.reg_init, previous_delta / 3.0, kkt.delta_w)
    dual_applied = delta_c > 0.0
    warned = False
    while delta_w <= opts.reg_max:
        fact = kkt.factor(delta_w, delta_c, plan)
        inertia = fact.inertia
        if inertia == required:
            return fact, Regularization(delta_w, delta_c)
        if inertia.n_zero > 0 and inertia.n_pos >= required.n_pos and not dual_applied:
            delta_c = DUAL_REGULARIZATION
            dual_applied = True
            continue
        if delta_w > REGULARIZATION_WARN and not warned:
            logger.warning("[IPM] Inertia correction escalated to delta_w=%.1e (inertia %s)",
                           delta_w, inertia.as_tuple())
            warned = True
        delta_w *= opts.reg_growth

    if not dual_applied and fact.inertia.n_zero > 0:
        fact = kkt.factor(opts.reg_max, DUAL_REGULARIZATION, plan)
        if fact.inertia == required:
            return fact, Regularization(opts.reg_max, DUAL_REGULARIZATION)
    raise LinAlgFailureError(
        f"no regularization up to {opts.reg_max:.1e} gives inertia {required.as_tuple()}"
    )


# ============================================================================
# Steps
# ============================================================================

def fraction_to_boundary(v, dv, tau: float) -> float:
    """Largest alpha in (0, 1] with v + alpha dv >= (1 - tau) v for positive v."""
    v = np.asarray(v, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    shrinking = dv < 0.0
    if not np.any(shrinking):
        return 1.0
    return float(min(1.0, np.min(-tau * v[shrinking] / dv[shrinking])))


@dataclass
class IpmState:
    """Current iterate with its oracle values."""
    x: RealVec
    lam: RealVec
    z: RealVec
    mu: float
    rho: float
    ev: EvalResult


@dataclass
class Direction:
    dx: RealVec
    dlam: RealVec
    dz: RealVec
    regularization: Regularization
    curvature: float


@dataclass
class StepInfo:
    alpha_primal: float = 0.0
    alpha_dual: float = 0.0
    merit_before: float = 0.0
    merit_after: float = 0.0
    backtracks: int = 0
    accepted: bool = False


@dataclass
class _Context:
    """Per-solve constants shared by the step routines."""
    problem: NlpProblem
    opts: IpmOptions
    lower: RealVec
    bounded: np.ndarray
    timing: TimingAccumulator
    plan: Optional[LeafPlan] = None


def _barrier_merit(ctx: _Context, f: float, g: RealVec, x: RealVec, mu: float, rho: float) -> float:
    slack = x[ctx.bounded] - ctx.lower[ctx.bounded]
    return f - mu * float(np.sum(np.log(slack))) + rho * float(np.sum(np.abs(g)))


def _compute_direction(
    ctx: _Context, state: IpmState, previous_delta: float, forced_delta: float = 0.0
) -> tuple[Direction, KktSystem]:
    ev = state.ev
    kkt = assemble_kkt(
        ev.hess, ev.jac, state.x, state.z, state.mu, forced_delta,
        lower=ctx.lower, grad=ev.grad, lam=state.lam, g=ev.g,
    )
    fact, reg = inertia_correct(kkt, ctx.opts, previous_delta, ctx.plan)
    solution = ldlt_solve(fact, kkt.rhs)
    n = ctx.problem.n_var
    dx, dlam = solution[:n], solution[n:]
    slack = np.where(ctx.bounded, state.x - ctx.lower, 1.0)
    dz = np.where(ctx.bounded, state.mu / slack - state.z - state.z / slack * dx, 0.0)
    curvature = kkt.hessian_quadratic(dx) + reg.delta_w * float(dx @ dx)
    return Direction(dx, dlam, dz, reg, curvature), kkt


def step_and_update(
    ctx: _Context, state: IpmState, direction: Direction
) -> tuple[Optional[IpmState], StepInfo]:
    """
    Fraction-to-boundary step caps, penalty update and Armijo backtracking on
    the l1 barrier merit. Returns (None, info) when the step shrinks below
    opts.min_step.
    """
    opts = ctx.opts
    b = ctx.bounded
    dx, dlam, dz = direction.dx, direction.dlam, direction.dz
    slack = state.x[b] - ctx.lower[b]
    alpha_max = fraction_to_boundary(slack, dx[b], opts.tau)
    alpha_dual = fraction_to_boundary(state.z[b], dz[b], opts.tau)

    ev = state.ev
    infeas = float(np.sum(np.abs(ev.g)))
    barrier_grad = ev.grad.copy()
    barrier_grad[b] -= state.mu / slack
    slope_barrier = float(barrier_grad @ dx)

    rho = state.rho
    needed = float(np.max(np.abs(state.lam + dlam))) if dlam.size else 0.0
    if infeas > 0.0:
        curvature = max(direction.curvature, 0.0)
        needed = max(needed, (slope_barrier + 0.5 * curvature) / ((1.0 - PENALTY_RHO_HAT) * infeas))
    if rho < needed:
        rho = 1.1 * needed

    merit = _barrier_merit(ctx, ev.f, ev.g, state.x, state.mu, rho)
    slope = slope_barrier - rho * infeas
    info = StepInfo(merit_before=merit, alpha_dual=alpha_dual)

    eps = np.finfo(float).eps
    tiny = not dx.size or np.max(np.abs(dx)) <= 10.0 * eps * (1.0 + np.max(np.abs(state.x)))
    slack_tol = 10.0 * eps * max(1.0, abs(merit))

    alpha = alpha_max
    while alpha >= opts.min_step:
        x_trial = state.x + alpha * dx
        if np.all(x_trial[b] > ctx.lower[b]):
            try:
                f_trial, g_trial = eval_functions(ctx.problem, x_trial, ctx.timing)
                trial_merit = _barrier_merit(ctx, f_trial, g_trial, x_trial, state.mu, rho)
            except NumericError:
                trial_merit = math.inf
            if tiny or trial_merit <= merit + opts.armijo * alpha * min(slope, 0.0) + slack_tol:
                info.alpha_primal = alpha
                info.merit_after = trial_merit
                info.accepted = True
                break
        alpha *= 0.5
        info.backtracks += 1

    if not info.accepted:
        return None, info

    return _advance(ctx, state, direction, alpha, alpha_dual, rho), info


def _advance(
    ctx: _Context, state: IpmState, direction: Direction, alpha: float, alpha_dual: float,
    rho: float,
) -> IpmState:
    b = ctx.bounded
    x = state.x + alpha * direction.dx
    lam = state.lam + alpha * direction.dlam
    z = state.z + alpha_dual * direction.dz
    slack = x[b] - ctx.lower[b]
    z[b] = np.clip(z[b], state.mu / (KAPPA_SIGMA * slack), KAPPA_SIGMA * state.mu / slack)
    z[~b] = 0.0
    ev = eval_all(ctx.problem, x, lam, ctx.timing)
    return IpmState(x=x, lam=lam, z=z, mu=state.mu, rho=rho, ev=ev)


# ============================================================================
# Restoration
# ============================================================================

class _FeasibilityObjective(Objective):
    """1/2 ||g(x)||^2 of another problem, with the exact Hessian J^T J + sum g_i Hess g_i."""

    def __init__(self, source: NlpProblem):
        self.source = source
        jr, jc = source.jacobian_pattern()
        ones = sparse.coo_matrix(
            (np.ones(jr.shape[0]), (jr, jc)), shape=(source.n_con, source.n_var)
        ).tocsr()
        gram = (ones.T @ ones).tocoo()
        hr, hc = source.hessian_pattern()
        keep = gram.row >= gram.col
        rows = np.concatenate([gram.row[keep], hr])
        cols = np.concatenate([gram.col[keep], hc])
        positions = np.unique(np.stack([rows, cols], axis=1), axis=0) if rows.size else \
            np.zeros((0, 2), dtype=np.intp)
        self.hess_rows = positions[:, 0].astype(np.intp)
        self.hess_cols = positions[:, 1].astype(np.intp)

    @property
    def max_index(self) -> int:
        return self.source.n_var - 1

    def value(self, x: RealVec) -> float:
        g = self.source.constraint_values(x)
        return 0.5 * float(g @ g)

    def gradient(self, x: RealVec) -> RealVec:
        g = self.source.constraint_values(x)
        return self.source.constraint_jacobian(x).to_sparse().T @ g

    def hessian_values(self, x: RealVec) -> RealVec:
        g = self.source.constraint_values(x)
        jac = self.source.constraint_jacobian(x).to_sparse()
        combined = (jac.T @ jac) + self.source.constraint_hessian(x, g).to_sparse()
        lower = sparse.tril(combined).tocsr()
        if not self.hess_rows.size:
            return np.zeros(0)
        return np.asarray(lower[self.hess_rows, self.hess_cols]).ravel()


def _restore(ctx: _Context, state: IpmState) -> Optional[IpmState]:
    """Minimize 1/2 ||g||^2 over the bounds; succeed if ||g||_2 at least halves."""
    source = ctx.problem
    before = float(np.linalg.norm(state.ev.g))
    logger.warning("[IPM] Entering restoration (||g||_2=%.3e, mu=%.1e)", before, state.mu)

    restoration = NlpProblem(name=f"{source.name}.restoration")
    restoration.variables = [
        VarSpec(v.name, v.lower, float(xi)) for v, xi in zip(source.variables, state.x)
    ]
    restoration.set_objective(_FeasibilityObjective(source))
    inner_opts = ctx.opts.model_copy(update={
        "max_iter": ctx.opts.restoration_max_iter,
        "mu_init": max(state.mu, ctx.opts.tol),
        "allow_restoration": False,
    })
    inner = _solve(restoration, inner_opts, ctx.timing, time.perf_counter())
    after = float(np.linalg.norm(source.constraint_values(inner.x)))
    if not after <= 0.5 * before:
        logger.warning("[IPM] Restoration stalled: ||g||_2 %.3e -> %.3e", before, after)
        return None

    x = inner.x
    b = ctx.bounded
    z = np.zeros_like(x)
    z[b] = state.mu / (x[b] - ctx.lower[b])
    lam = np.zeros(source.n_con)
    ev = eval_all(source, x, lam, ctx.timing)
    logger.info("[IPM] Restoration reduced ||g||_2 from %.3e to %.3e", before, after)
    return IpmState(x=x, lam=lam, z=z, mu=state.mu, rho=state.rho, ev=ev)


# ============================================================================
# Main loop
# ============================================================================

def _initial_state(ctx: _Context) -> IpmState:
    problem, opts = ctx.problem, ctx.opts
    x = problem.initial_point()
    b = ctx.bounded
    floor = ctx.lower[b] + 1e-2 * np.maximum(1.0, np.abs(ctx.lower[b]))
    x[b] = np.maximum(x[b], floor)
    mu = opts.mu_init
    z = np.zeros_like(x)
    z[b] = np.maximum(1.0, mu / (x[b] - ctx.lower[b]))
    lam = np.zeros(problem.n_con)
    ev = eval_all(problem, x, lam, ctx.timing)
    return IpmState(x=x, lam=lam, z=z, mu=mu, rho=0.0, ev=ev)


def _next_mu(mu: float, opts: IpmOptions) -> float:
    return max(opts.tol / 10.0, min(opts.mu_shrink * mu, mu ** opts.mu_power))


def _result(
    ctx: _Context, state: Optional[IpmState], status: IpmStatus, iterations: int,
    trace: list[IterationRecord], started: float, message: str = "",
) -> IpmResult:
    oracle = ctx.timing.snapshot()
    elapsed = time.perf_counter() - started
    oracle_total = sum(oracle.values())
    timing = TimingBreakdown(
        function_s=oracle["function"],
        jacobian_s=oracle["jacobian"],
        hessian_s=oracle["hessian"],
        solver_s=max(elapsed - oracle_total, 0.0),
    )
    if state is None:
        n, m = ctx.problem.n_var, ctx.problem.n_con
        return IpmResult(status, np.full(n, np.nan), np.zeros(m), np.zeros(n), iterations,
                         math.nan, math.inf, timing, trace, message)
    error = _residuals(state.ev, state.x, state.lam, state.z, ctx.lower, ctx.bounded, 0.0).kkt_error
    return IpmResult(
        status=status,
        x=state.x.copy(),
        lam=state.lam.copy(),
        z=state.z.copy(),
        iterations=iterations,
        objective=state.ev.f,
        kkt_error=error,
        timing=timing,
        trace=trace,
        message=message,
    )


def _solve(
    problem: NlpProblem, opts: IpmOptions, timing: TimingAccumulator, started: float
) -> IpmResult:
    lower = problem.lower_bounds()
    ctx = _Context(problem, opts, lower, np.isfinite(lower), timing)
    trace: list[IterationRecord] = []
    try:
        state = _initial_state(ctx)
    except GrayboxError as exc:
        return _result(ctx, None, IpmStatus.LINALG_FAILURE, 0, trace, started, str(exc))
    if opts.condense_kkt:
        ctx.plan = kkt_leaf_plan(state.ev.hess, state.ev.jac, ctx.bounded)
        logger.debug("[IPM] %s: %d of %d KKT pivots eliminated as leaves",
                     problem.name, ctx.plan.n_eliminated, ctx.plan.dimension)

    previous_delta = 0.0
    iteration = 0
    alpha_primal = alpha_dual = 0.0
    while True:
        res0 = _residuals(state.ev, state.x, state.lam, state.z, lower, ctx.bounded, 0.0)
        trace.append(IterationRecord(
            iteration=iteration,
            mu=state.mu,
            objective=state.ev.f,
            primal_inf=res0.primal_inf,
            dual_inf=res0.dual_inf,
            kkt_error=res0.kkt_error,
            alpha_primal=alpha_primal,
            alpha_dual=alpha_dual,
            delta_w=previous_delta,
        ))
        logger.debug(
            "[IPM] it=%d mu=%.2e f=%.8e inf_pr=%.2e inf_du=%.2e a_p=%.2e a_d=%.2e dw=%.1e",
            iteration, state.mu, state.ev.f, res0.primal_inf, res0.dual_inf,
            alpha_primal, alpha_dual, previous_delta,
        )
        if res0.kkt_error <= opts.tol:
            return _result(ctx, state, IpmStatus.OPTIMAL, iteration, trace, started)
        if iteration >= opts.max_iter:
            return _result(ctx, state, IpmStatus.MAX_ITER, iteration, trace, started)
        if opts.time_limit_s is not None and time.perf_counter() - started > opts.time_limit_s:
            return _result(ctx, state, IpmStatus.TIME_LIMIT, iteration, trace, started)

        while state.mu > opts.tol / 10.0:
            res_mu = _residuals(state.ev, state.x, state.lam, state.z, lower, ctx.bounded, state.mu)
            if res_mu.kkt_error > opts.kappa_eps * state.mu:
                break
            state.mu = _next_mu(state.mu, opts)

        try:
            direction, _ = _compute_direction(ctx, state, previous_delta)
            new_state, info = step_and_update(ctx, state, direction)
            if new_state is None:
                logger.warning("[IPM] Line search failed at iteration %d; retrying with "
                               "regularization", iteration)
                forced = max(10.0 * direction.regularization.delta_w, opts.reg_init)
                direction, _ = _compute_direction(ctx, state, previous_delta, forced)
                new_state, info = step_and_update(ctx, state, direction)
        except GrayboxError as exc:
            logger.warning("[IPM] Direction computation failed at iteration %d: %s", iteration, exc)
            return _result(ctx, state, IpmStatus.LINALG_FAILURE, iteration, trace, started,
                           str(exc))

        if new_state is None:
            if res0.primal_inf <= opts.tol:
                # already feasible: take the capped step
                b = ctx.bounded
                alpha = fraction_to_boundary(state.x[b] - lower[b], direction.dx[b], opts.tau)
                alpha_z = fraction_to_boundary(state.z[b], direction.dz[b], opts.tau)
                new_state = _advance(ctx, state, direction, alpha, alpha_z, state.rho)
                info = StepInfo(alpha_primal=alpha, alpha_dual=alpha_z, accepted=True)
            elif opts.allow_restoration:
                try:
                    new_state = _restore(ctx, state)
                except GrayboxError as exc:
                    logger.warning("[IPM] Restoration failed: %s", exc)
                    new_state = None
                if new_state is None:
                    return _result(ctx, state, IpmStatus.INFEASIBLE, iteration, trace, started,
                                   "restoration did not halve the constraint violation")
                info = StepInfo(accepted=True)
            else:
                return _result(ctx, state, IpmStatus.INFEASIBLE, iteration, trace, started,
                               "line search failed")

        previous_delta = direction.regularization.delta_w
        alpha_primal, alpha_dual = info.alpha_primal, info.alpha_dual
        state = new_state
        iteration += 1


def solve(problem: NlpProblem, opts: Optional[IpmOptions] = None) -> IpmResult:
    """
    Solve min f(x) s.t. g(x) = 0, x >= lower.

    Never raises for solver outcomes: MaxIter, TimeLimit, Infeasible and
    LinAlgFailure come back as the result status.
    """
    opts = opts or IpmOptions()
    timing = TimingAccumulator()
    started = time.perf_counter()
    logger.debug("[IPM] %s: n_var=%d n_con=%d", problem.name, problem.n_var, problem.n_con)
    result = _solve(problem, opts, timing, started)
    shares = result.timing.percentages()
    logger.info(
        "[IPM] %s: %s after %d iterations, f=%.8g, kkt=%.2e, %.3fs "
        "(function %.0f%%, jacobian %.0f%%, hessian %.0f%%, solver %.0f%%)",
        problem.name, result.status.value, result.iterations, result.objective,
        result.kkt_error, result.timing.total_s, shares["function"], shares["jacobian"],
        shares["hessian"], shares["solver"],
    )
    return result
