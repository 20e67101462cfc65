"""
Graybox NLP - Test Oracles
Slow, independent reference computations the tests compare against.
"""

from typing import Callable

import numpy as np

from graybox.model import NlpProblem
from graybox.nn import NeuralNet, forward, jacobian, lagrangian_hessian


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=np.float64)
    columns = []
    for j in range(x.shape[0]):
        step = np.zeros_like(x)
        step[j] = h
        columns.append((np.asarray(fun(x + step)) - np.asarray(fun(x - step))) / (2.0 * h))
    return np.stack(columns, axis=-1)


def fd_gradient(fun: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    return fd_jacobian(lambda v: np.array([fun(v)]), x, h)[0]


def fd_output_hessians(nn: NeuralNet, x, h: float = 1e-4) -> np.ndarray:
    """m x n x n stack of per-output Hessians from central differences of the Jacobian."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros((nn.output_dim, n, n))
    for j in range(n):
        step = np.zeros(n)
        step[j] = h
        out[:, :, j] = (jacobian(nn, x + step) - jacobian(nn, x - step)) / (2.0 * h)
    return 0.5 * (out + out.transpose(0, 2, 1))


def fd_contraction(nn: NeuralNet, x, lam, h: float = 1e-4) -> np.ndarray:
    """sum_i lam_i H_i with every H_i from finite differences."""
    return np.einsum("i,ijk->jk", np.asarray(lam, dtype=np.float64), fd_output_hessians(nn, x, h))


def materialized_contraction(nn: NeuralNet, x, lam) -> np.ndarray:
    """Naive route: build each output Hessian exactly (m oracle calls), then contract."""
    lam = np.asarray(lam, dtype=np.float64)
    m = nn.output_dim
    hessians = np.stack([lagrangian_hessian(nn, x, np.eye(m)[i]) for i in range(m)])
    return np.einsum("i,ijk->jk", lam, hessians)


def dense_reference(problem: NlpProblem, x, lam, h: float = 1e-5):
    """
    Gradient, Jacobian and Lagrangian Hessian of a problem by finite differences of
    its objective and constraint values only.
    """
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)

    def lagrangian_gradient(v):
        grad = fd_gradient(problem.objective.value, v, h)
        if problem.n_con:
            grad = grad + fd_jacobian(problem.constraint_values, v, h).T @ lam
        return grad

    grad = fd_gradient(problem.objective.value, x, h)
    jac = fd_jacobian(problem.constraint_values, x, h) if problem.n_con else np.zeros((0, x.size))
    hess = fd_jacobian(lagrangian_gradient, x, 1e-4)
    return grad, jac, 0.5 * (hess + hess.T)


def naive_kkt(hess_dense, jac_dense, x, z, lower, mu, delta_w=0.0, delta_c=0.0):
    """Entry-by-entry KKT matrix builder."""
    n = len(x)
    m = jac_dense.shape[0]
    k = np.zeros((n + m, n + m))
    for i in range(n):
        for j in range(n):
            k[i, j] = hess_dense[i, j]
        if np.isfinite(lower[i]):
            k[i, i] += z[i] / (x[i] - lower[i])
        k[i, i] += delta_w
    for r in range(m):
        for j in range(n):
            k[n + r, j] = jac_dense[r, j]
            k[j, n + r] = jac_dense[r, j]
        k[n + r, n + r] = -delta_c
    return k


def equality_qp_solution(q, c, a, b):
    """Closed-form solution of min 1/2 x'Qx - c'x s.t. Ax = b."""
    n, m = q.shape[0], a.shape[0]
    kkt = np.block([[q, a.T], [a, np.zeros((m, m))]])
    sol = np.linalg.solve(kkt, np.concatenate([c, b]))
    return sol[:n]


def forward_fd_jacobian(nn: NeuralNet, x, h: float = 1e-5) -> np.ndarray:
    return fd_jacobian(lambda v: forward(nn, v), x, h)
