"""Cost evaluation, the quadratic rewriting of the cost, and the open-loop solve.

On grid samples the cost over [s, T] is an exactly quadratic function of the
stacked control vector,

    J(u) = (M X0, X0) + 2 <N X0, u> + <Lambda u, u>,
    Lambda = I + (L+H)* C*C (L+H),

with all quadrature weights folded in, so the discrete problem is itself a
genuine LQ problem: Lambda is symmetric with spectrum >= 1, the optimality
condition Lambda u + N X0 = 0 is solved by one Cholesky factorization, and
the representation through psi/Z operator tables reproduces the solve to
machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import ControlTrajectory, StatePoint, StateTrajectory
from .propagator import DiscreteOperators, mild_solution

__all__ = [
    "cost_eval",
    "QuadraticForm",
    "assemble_quadratic_form",
    "solve_open_loop",
    "PsiZTables",
    "build_psi_z",
    "open_loop_from_psi_z",
]


def cost_eval(ops: DiscreteOperators, X0: StatePoint, u: ControlTrajectory) -> float:
    """Trapezoid quadrature of int_s^T ||C w||^2 + ||u||^2 dt along the mild solution."""
    s = X0.s_index
    w = mild_solution(ops, X0, u)
    Cw = w.values @ ops.sys.C.T
    wq = ops.grid.trapezoid_weights(s, ops.grid.N)
    dens = np.einsum("ij,ij->i", Cw, Cw) + np.einsum("ij,ij->i", u.values, u.values)
    return float(ops.grid.h * wq @ dens)


class _Workspace:
    """Per-initial-time assembly shared by the quadratic form and psi/Z builds.

    Everything is expressed in half-weighted coordinates (samples scaled by
    sqrt(h * trapezoid weight)), in which the discrete adjoint is the plain
    matrix transpose.
    """

    def __init__(self, ops: DiscreteOperators, s: int):
        grid, sys = ops.grid, ops.sys
        if not 0 <= s < grid.N:
            raise ValueError("initial time must be a grid node strictly before T")
        self.ops = ops
        self.s = s
        self.K = grid.N + 1 - s
        wq = grid.trapezoid_weights(s, grid.N)
        self.du = np.sqrt(grid.h * wq)            # per-node scale, control side
        self.dx = self.du                          # same trapezoid rule, state side
        self.Smat = ops.lh_matrix(s)
        n, m, K = sys.n, sys.m, self.K
        scale_x = np.repeat(self.dx, n)
        scale_u = np.repeat(self.du, m)
        G = (self.Smat * scale_x[:, None]) / scale_u[None, :]
        # C applied blockwise to the weighted forward map
        self.CG = (G.reshape(K, n, K * m).transpose(0, 2, 1) @ sys.C.T).transpose(0, 2, 1).reshape(K * sys.p, K * m)
        self.LambdaOp = np.eye(K * m) + self.CG.T @ self.CG
        self.factor = scipy.linalg.cho_factor(self.LambdaOp)

    def weighted_states(self, F: np.ndarray) -> np.ndarray:
        """Stacked, half-weighted, C-observed version of a state sample array."""
        return ((F * self.dx[:, None]) @ self.ops.sys.C.T).ravel()

    def solve_columns(self, rhs_states: np.ndarray) -> np.ndarray:
        """-Lambda^{-1} (L+H)* C*C applied to state columns, in raw samples.

        rhs_states: (K, n, ncol) of state-sample columns; returns (K, m, ncol).
        """
        K, m = self.K, self.ops.sys.m
        ncol = rhs_states.shape[2]
        Cx = np.einsum("pn,inc->ipc", self.ops.sys.C, rhs_states * self.dx[:, None, None])
        rhs = self.CG.T @ Cx.reshape(K * self.ops.sys.p, ncol)
        sol = -scipy.linalg.cho_solve(self.factor, rhs)
        return sol.reshape(K, m, ncol) / self.du[:, None, None]

    def lambda_min(self) -> float:
        return float(scipy.linalg.eigvalsh(self.LambdaOp)[0])


@dataclass
class QuadraticForm:
    """J(u) = M_val + 2 <N_vec, u~> + <LambdaOp u~, u~> in half-weighted samples u~."""

    work: _Workspace
    X0: StatePoint
    N_vec: np.ndarray
    M_val: float

    @property
    def LambdaOp(self) -> np.ndarray:
        return self.work.LambdaOp

    def lambda_min(self) -> float:
        return self.work.lambda_min()

    def weight_control(self, u_samples: np.ndarray) -> np.ndarray:
        return (u_samples * self.work.du[:, None]).ravel()

    def unweight_control(self, u_tilde: np.ndarray) -> np.ndarray:
        return u_tilde.reshape(self.work.K, self.work.ops.sys.m) / self.work.du[:, None]

    def cost_of(self, u_samples: np.ndarray) -> float:
        ut = self.weight_control(u_samples)
        return float(self.M_val + 2.0 * self.N_vec @ ut + ut @ (self.LambdaOp @ ut))


def assemble_quadratic_form(ops: DiscreteOperators, X0: StatePoint) -> QuadraticForm:
    """Build (M, N, Lambda) at X0's initial time, quadrature weights folded in."""
    work = _Workspace(ops, X0.s_index)
    F = ops.free_states(X0)
    CF = work.weighted_states(F)
    N_vec = work.CG.T @ CF
    M_val = float(CF @ CF)
    return QuadraticForm(work=work, X0=X0, N_vec=N_vec, M_val=M_val)


def solve_open_loop(qf: QuadraticForm) -> tuple[ControlTrajectory, dict]:
    """Solve Lambda u = -N X0; returns the minimizer and a small report."""
    ut = -scipy.linalg.cho_solve(qf.work.factor, qf.N_vec)
    u = qf.unweight_control(ut)
    cost = float(qf.M_val + qf.N_vec @ ut)
    traj = ControlTrajectory(qf.work.ops.grid, qf.work.s, u)
    return traj, {"cost": cost, "lambda_min": qf.lambda_min()}


@dataclass
class PsiZTables:
    """psi/Z operator tables at one initial time s.

    psi1[t] (m x n) and z1[t] (n x n) act on w0; psi2[p][t] (m x m) and
    z2[p][t] (n x m) act on the history value at node p, p = 0..s (the p = s
    slice is the diagonal column lambda(., s, s) needed by the cost operators).
    """

    s: int
    psi1: np.ndarray   # (K, m, n)
    z1: np.ndarray     # (K, n, n)
    psi2: np.ndarray   # (s+1, K, m, m)
    z2: np.ndarray     # (s+1, K, n, m)


def build_psi_z(ops: DiscreteOperators, s: int, work: _Workspace | None = None) -> PsiZTables:
    """psi1 = -Lambda^{-1}(L+H)* C*C e^{A(.-s)}, psi2 likewise on lambda(., p, s);
    Z1 = e^{A(.-s)} + (L+H) psi1, Z2 = lambda + (L+H) psi2."""
    if work is None:
        work = _Workspace(ops, s)
    sys, grid = ops.sys, ops.grid
    n, m, K = sys.n, sys.m, work.K
    Ecols = ops.semigroup.E[:K]                                   # (K, n, n)
    i = np.arange(K)[:, None]
    p = np.arange(s + 1)[None, :]
    lamcols = ops.lam.table[i + (s - p), np.broadcast_to(s - p, (K, s + 1))]  # (K, s+1, n, m)
    lam_flat = lamcols.transpose(0, 2, 1, 3).reshape(K, n, (s + 1) * m)
    rhs = np.concatenate([Ecols, lam_flat], axis=2)
    sol = work.solve_columns(rhs)                                 # (K, m, n + (s+1)m)
    psi1 = sol[:, :, :n]
    psi2 = sol[:, :, n:].reshape(K, m, s + 1, m).transpose(2, 0, 1, 3)
    Sflat = work.Smat
    z1 = Ecols + (Sflat @ psi1.reshape(K * m, n)).reshape(K, n, n)
    z2 = lamcols.transpose(1, 0, 2, 3) + (
        Sflat @ psi2.transpose(1, 2, 0, 3).reshape(K * m, (s + 1) * m)
    ).reshape(K, n, s + 1, m).transpose(2, 0, 1, 3)
    return PsiZTables(s=s, psi1=psi1, z1=z1, psi2=psi2, z2=z2)


def open_loop_from_psi_z(ops: DiscreteOperators, tab: PsiZTables, X0: StatePoint
                         ) -> tuple[ControlTrajectory, StateTrajectory]:
    """Optimal pair via u = psi1 w0 + int_0^s psi2 eta, w = Z1 w0 + int_0^s Z2 eta."""
    s = X0.s_index
    if s != tab.s:
        raise ValueError("tables were built for a different initial time")
    u = tab.psi1 @ X0.w0
    w = tab.z1 @ X0.w0
    if s > 0:
        hw = ops.grid.h * ops.grid.history_weights(s)
        u = u + np.einsum("p,pkim,pm->ki", hw, tab.psi2[:s], X0.eta)
        w = w + np.einsum("p,pkim,pm->ki", hw, tab.z2[:s], X0.eta)
    return ControlTrajectory(ops.grid, s, u), StateTrajectory(ops.grid, s, w)
