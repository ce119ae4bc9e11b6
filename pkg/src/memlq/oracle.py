"""Independent brute-force references certifying the production solvers.

These deliberately avoid the operator assemblies of the other modules: the
dense minimizer sees the cost only through point evaluations, the classical
memoryless Riccati integrator builds its own matrix exponential, and the
refined quadratures integrate the defining displays on subdivided grids.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .model import ControlSystem, ControlTrajectory, StatePoint, TimeGrid
from .openloop import cost_eval
from .propagator import DiscreteOperators

__all__ = [
    "brute_force_minimize",
    "classical_dre",
    "scalar_riccati_closed_form",
    "refined_convolution",
]

MAX_BRUTE_FORCE_UNKNOWNS = 2000


def brute_force_minimize(ops: DiscreteOperators, X0: StatePoint) -> ControlTrajectory:
    """Minimize the discrete cost through point evaluations alone.

    The cost is exactly quadratic in the stacked control samples, so unit-step
    second differences recover the Hessian and gradient without truncation
    error; the dense symmetric solve then yields the minimizer.
    """
    grid, sys = ops.grid, ops.sys
    s = X0.s_index
    K = grid.N + 1 - s
    dim = K * sys.m
    if dim > MAX_BRUTE_FORCE_UNKNOWNS:
        raise ValueError(f"problem has {dim} unknowns, oracle cap is {MAX_BRUTE_FORCE_UNKNOWNS}")

    def J(vec: np.ndarray) -> float:
        traj = ControlTrajectory(grid, s, vec.reshape(K, sys.m))
        return cost_eval(ops, X0, traj)

    J0 = J(np.zeros(dim))
    Jp = np.empty(dim)
    Jm = np.empty(dim)
    eye = np.eye(dim)
    for i in range(dim):
        Jp[i] = J(eye[i])
        Jm[i] = J(-eye[i])
    b = (Jp - Jm) / 4.0
    Q = np.empty((dim, dim))
    diag = (Jp + Jm - 2.0 * J0) / 2.0
    np.fill_diagonal(Q, diag)
    for i in range(dim):
        for j in range(i + 1, dim):
            qij = (J(eye[i] + eye[j]) - Jp[i] - Jp[j] + J0) / 2.0
            Q[i, j] = Q[j, i] = qij
    u = np.linalg.solve(Q, -b)
    return ControlTrajectory(grid, s, u.reshape(K, sys.m))


def classical_dre(sys: ControlSystem, grid: TimeGrid) -> np.ndarray:
    """Memoryless differential Riccati equation, integrated backward.

    P' = -C*C - P A - A*P + P B B* P with P(T) = 0, by the same
    predictor-corrector (reverse-time Heun) used for the coupled system, with
    the linear part propagated by this module's own matrix exponential.
    Requires a zero kernel.
    """
    if not sys.kernel.is_zero:
        raise ValueError("classical DRE applies to the memoryless case only")
    n, N, h = sys.n, grid.N, grid.h
    E1 = scipy.linalg.expm(sys.A * h)
    BBt = sys.B @ sys.B.T
    CtC = sys.C.T @ sys.C

    def q(P):
        return CtC - P @ BBt @ P

    trace = np.zeros((N + 1, n, n))
    for lev in range(N, 0, -1):
        P = trace[lev]
        qn = q(P)
        P_pred = E1.T @ (P + h * qn) @ E1
        trace[lev - 1] = E1.T @ (P + 0.5 * h * qn) @ E1 + 0.5 * h * q(P_pred)
    return trace


def scalar_riccati_closed_form(a: float, b: float, c: float, T: float,
                               t: np.ndarray) -> np.ndarray:
    """Closed form of the scalar memoryless Riccati problem.

    Solves p' = -c^2 - 2 a p + b^2 p^2, p(T) = 0 (the Bernoulli / linear
    fractional substitution): with beta = sqrt(a^2 + b^2 c^2),

        p(t) = c^2 (1 - E) / ((beta - a) + (beta + a) E),  E = exp(-2 beta (T - t)).
    """
    t = np.asarray(t, dtype=float)
    beta = np.sqrt(a * a + b * b * c * c)
    if beta == 0.0:
        return np.zeros_like(t)
    E = np.exp(-2.0 * beta * (T - t))
    return c * c * (1.0 - E) / ((beta - a) + (beta + a) * E)


def refined_convolution(sys: ControlSystem, t: float, q: float, s: float,
                        n_sub: int = 640) -> np.ndarray:
    """Composite-Simpson evaluation of int_s^t e^{A(t-sigma)} k(sigma-q) B dsigma.

    Independent of the lambda table: fresh matrix exponentials on a fine
    subdivision.  n_sub must be even.
    """
    if n_sub % 2:
        raise ValueError("Simpson needs an even subdivision")
    if not q <= s <= t:
        raise ValueError("need q <= s <= t")
    if t == s:
        return np.zeros((sys.n, sys.m))
    sigma = np.linspace(s, t, n_sub + 1)
    wgt = np.ones(n_sub + 1)
    wgt[1:-1:2] = 4.0
    wgt[2:-1:2] = 2.0
    wgt *= (t - s) / n_sub / 3.0
    acc = np.zeros((sys.n, sys.m))
    for sg, w in zip(sigma, wgt):
        acc += w * (scipy.linalg.expm(sys.A * (t - sg)) @ sys.kernel_matrix(sg - q) @ sys.B)
    return acc
