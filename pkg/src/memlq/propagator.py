"""Semigroup action, the lambda kernel table, and the discrete forward maps.

The convolution response of the memory term is reduced to the two-offset
table  Lam(alpha, beta) = int_beta^alpha e^{A(alpha-tau)} k(tau) B dtau,
so that  lambda(t, q, s) = Lam(t-q, s-q): O(N^2) storage and the translation
identity lambda(t,q,s) = lambda(t+d, q+d, s+d) holds by construction.

All time integrals are node quadratures on the shared grid; the adjoints of
the discrete forward maps are their exact matrix transposes with respect to
the quadrature-weighted inner products (discretize-then-optimize), so every
adjoint identity holds to machine precision at any resolution.  The
continuous adjoint formulas are provided as a second code path used only for
cross-validation.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg

from .model import ControlSystem, ControlTrajectory, StatePoint, StateTrajectory, TimeGrid

__all__ = [
    "SemigroupTable",
    "LambdaTable",
    "DiscreteOperators",
    "build_tables",
    "semigroup_apply",
    "mild_solution",
    "weighted_inner",
]


class SemigroupTable:
    """E_j = e^{A j h} for j = 0..N, plus the half-step e^{A h/2}.

    Uses spectral data when the system carries it, otherwise one
    scaling-and-squaring exponential of A*h repeatedly multiplied.
    """

    def __init__(self, sys: ControlSystem, grid: TimeGrid):
        if abs(sys.T - grid.T) > 1e-12 * max(sys.T, 1.0):
            raise ValueError("grid horizon differs from system horizon")
        self.sys = sys
        self.grid = grid
        n, N, h = sys.n, grid.N, grid.h
        E = np.empty((N + 1, n, n))
        if sys.eigen is not None:
            vals, V = sys.eigen
            phases = np.exp(np.outer(np.arange(N + 1) * h, vals))  # (N+1, n)
            E = np.einsum("ik,jk,lk->jil", V, phases, V, optimize=True)
            self.E_half = (V * np.exp(vals * h / 2)) @ V.T
        else:
            E1 = scipy.linalg.expm(sys.A * h)
            E[0] = np.eye(n)
            for j in range(1, N + 1):
                E[j] = E1 @ E[j - 1]
            self.E_half = scipy.linalg.expm(sys.A * (h / 2))
        self.E = np.ascontiguousarray(E)
        self.EB = self.E @ sys.B  # (N+1, n, m)

    def apply(self, j: int, x: np.ndarray) -> np.ndarray:
        return self.E[j] @ x

    def semigroup_defect(self) -> float:
        """max_j ||E_{j+1} - E_1 E_j||, the grid semigroup-law residual."""
        prod = np.einsum("ij,kjl->kil", self.E[1], self.E[:-1])
        return float(np.max(np.abs(self.E[1:] - prod)))


def semigroup_apply(sys: ControlSystem, grid: TimeGrid, t: float, x: np.ndarray,
                    table: SemigroupTable | None = None) -> np.ndarray:
    """e^{At} x for a grid time t."""
    j = grid.node_index(t)
    if table is None:
        table = SemigroupTable(sys, grid)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != sys.n:
        raise ValueError("state dimension mismatch")
    return table.apply(j, x)


class LambdaTable:
    """Grid table of Lam(alpha, beta) = int_beta^alpha e^{A(alpha-tau)} k(tau) B dtau.

    Entries are accumulated cell by cell with the midpoint value on each grid
    cell (single-interval entries are therefore exactly the midpoint rule),
    which keeps the splitting identity
        Lam(a, b) = E_{a-c} Lam(c, b) + Lam(a, c),   b <= c <= a,
    exact on the grid -- the property the dynamic-programming embedding of
    the discrete problem rests on.
    """

    def __init__(self, sys: ControlSystem, grid: TimeGrid, semigroup: SemigroupTable):
        self.sys = sys
        self.grid = grid
        n, m, N, h = sys.n, sys.m, grid.N, grid.h
        lam = np.zeros((N + 1, N + 1, n, m))
        if not sys.kernel.is_zero:
            E1 = semigroup.E[1]
            base = np.empty((N, n, m))
            for c in range(N):
                base[c] = h * (semigroup.E_half @ sys.kernel_matrix((c + 0.5) * h) @ sys.B)
            for a in range(1, N + 1):
                lam[a, :a] = np.einsum("ij,bjm->bim", E1, lam[a - 1, :a]) + base[a - 1]
        self.table = lam
        # k(d h) B at integer offsets, used by the coupled-system solvers
        self.kb = np.zeros((N + 1, n, m))
        if not sys.kernel.is_zero:
            for d in range(N + 1):
                self.kb[d] = sys.kernel_matrix(d * h) @ sys.B

    def value(self, i_t: int, i_q: int, i_s: int) -> np.ndarray:
        """lambda(t, q, s) for node indices q <= s <= t."""
        if not 0 <= i_q <= i_s <= i_t <= self.grid.N:
            raise ValueError(f"need q <= s <= t on the grid, got ({i_t}, {i_q}, {i_s})")
        return self.table[i_t - i_q, i_s - i_q]

    @property
    def diagonal_column(self) -> np.ndarray:
        """lambda(t, q, q) as a function of the offset t - q (beta = 0 column)."""
        return self.table[:, 0]


def build_tables(sys: ControlSystem, grid: TimeGrid) -> tuple[SemigroupTable, LambdaTable]:
    semigroup = SemigroupTable(sys, grid)
    return semigroup, LambdaTable(sys, grid, semigroup)


def weighted_inner(grid: TimeGrid, start: int, F: np.ndarray, G: np.ndarray) -> float:
    """Trapezoid L^2(t_start, T) inner product of two node-sample arrays."""
    if F.shape != G.shape:
        raise ValueError("sample arrays differ in shape")
    w = grid.trapezoid_weights(start, grid.N)
    return float(grid.h * np.einsum("i,ij,ij->", w, F, G))


class DiscreteOperators:
    """Forward maps L_s, H_s, K_s on grid samples, and their exact adjoints.

    Sample conventions: controls/states on [s, T] hold nodes s..N; a history
    holds nodes 0..s-1 with the half-first-sample weights of
    TimeGrid.history_weights.
    """

    def __init__(self, sys: ControlSystem, grid: TimeGrid,
                 semigroup: SemigroupTable | None = None,
                 lam: LambdaTable | None = None):
        self.sys = sys
        self.grid = grid
        if semigroup is None or lam is None:
            semigroup, lam = build_tables(sys, grid)
        self.semigroup = semigroup
        self.lam = lam

    # -- assembly helpers ---------------------------------------------------

    def _tri_weights(self, K: int) -> np.ndarray:
        """W[i, j]: trapezoid weight of node j in the range [0, i] (j <= i)."""
        W = np.tril(np.ones((K, K)))
        W[:, 0] *= 0.5
        idx = np.arange(K)
        W[idx, idx] *= 0.5
        W[0, 0] = 0.0
        return W

    def _causal_blocks(self, K: int, per_offset: np.ndarray) -> np.ndarray:
        """Blocks[i, j] = weight(i,j) * per_offset[i-j], lower triangular."""
        idx = np.arange(K)
        offs = np.subtract.outer(idx, idx)
        blocks = per_offset[offs.clip(min=0)] * self._tri_weights(K)[:, :, None, None]
        return self.grid.h * blocks

    @lru_cache(maxsize=4)
    def l_blocks(self, s: int) -> np.ndarray:
        K = self.grid.N + 1 - s
        return self._causal_blocks(K, self.semigroup.EB)

    @lru_cache(maxsize=4)
    def h_blocks(self, s: int) -> np.ndarray:
        K = self.grid.N + 1 - s
        return self._causal_blocks(K, self.lam.diagonal_column)

    @lru_cache(maxsize=4)
    def k_blocks(self, s: int) -> np.ndarray:
        """Blocks[i', j] mapping history sample j to the state at node s+i'."""
        if s < 1:
            raise ValueError("K_s is undefined for s = 0; the state space is plain H there")
        K = self.grid.N + 1 - s
        i = np.arange(K)[:, None]
        j = np.arange(s)[None, :]
        a = i + (s - j)
        b = np.broadcast_to(s - j, a.shape)
        blocks = self.lam.table[a, b] * self.grid.history_weights(s)[None, :, None, None]
        return self.grid.h * blocks

    def lh_matrix(self, s: int) -> np.ndarray:
        """Dense matrix of L_s + H_s: stacked control samples -> stacked states."""
        K = self.grid.N + 1 - s
        blocks = self.l_blocks(s) + self.h_blocks(s)
        return blocks.transpose(0, 2, 1, 3).reshape(K * self.sys.n, K * self.sys.m)

    def k_matrix(self, s: int) -> np.ndarray:
        K = self.grid.N + 1 - s
        return self.k_blocks(s).transpose(0, 2, 1, 3).reshape(K * self.sys.n, s * self.sys.m)

    def free_states(self, X0: StatePoint) -> np.ndarray:
        """Zero-control evolution of the embedded datum: e^{A(t-s)} w0 + K_s eta."""
        s = X0.s_index
        K = self.grid.N + 1 - s
        F = self.semigroup.E[:K] @ X0.w0
        if s > 0:
            F = F + np.einsum("ijnm,jm->in", self.k_blocks(s), X0.eta)
        return F

    # -- forward maps ---------------------------------------------------------

    def _check_control(self, s: int, u: ControlTrajectory):
        if u.grid != self.grid:
            raise ValueError("trajectory grid mismatch")
        if u.start != s or len(u) != self.grid.N + 1 - s:
            raise ValueError("control must cover nodes s..N")
        if u.values.shape[1] != self.sys.m:
            raise ValueError("control dimension mismatch")

    def apply_L(self, s: int, u: ControlTrajectory) -> StateTrajectory:
        self._check_control(s, u)
        W = np.einsum("ijnm,jm->in", self.l_blocks(s), u.values)
        return StateTrajectory(self.grid, s, W)

    def apply_H(self, s: int, u: ControlTrajectory) -> StateTrajectory:
        self._check_control(s, u)
        W = np.einsum("ijnm,jm->in", self.h_blocks(s), u.values)
        return StateTrajectory(self.grid, s, W)

    def apply_K(self, s: int, eta: np.ndarray) -> StateTrajectory:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        if eta.shape != (s, self.sys.m):
            raise ValueError(f"history must be ({s}, {self.sys.m})")
        W = np.einsum("ijnm,jm->in", self.k_blocks(s), eta)
        return StateTrajectory(self.grid, s, W)

    # -- exact discrete adjoints ----------------------------------------------

    def _adjoint_apply(self, s: int, blocks: np.ndarray, F: np.ndarray,
                       out_weights: np.ndarray) -> np.ndarray:
        """Transpose of a block map w.r.t. the weighted inner products."""
        wx = self.grid.trapezoid_weights(s, self.grid.N)
        raw = np.einsum("ijnm,i,in->jm", blocks, wx, F)
        safe = np.where(out_weights > 0, out_weights, 1.0)
        return raw / safe[:, None]

    def apply_L_star(self, s: int, f: StateTrajectory) -> ControlTrajectory:
        F = self._coerce_state(s, f)
        wu = self.grid.trapezoid_weights(s, self.grid.N)
        U = self._adjoint_apply(s, self.l_blocks(s), F, wu)
        return ControlTrajectory(self.grid, s, U)

    def apply_H_star(self, s: int, f: StateTrajectory) -> ControlTrajectory:
        F = self._coerce_state(s, f)
        wu = self.grid.trapezoid_weights(s, self.grid.N)
        U = self._adjoint_apply(s, self.h_blocks(s), F, wu)
        return ControlTrajectory(self.grid, s, U)

    def apply_K_star(self, s: int, f: StateTrajectory) -> np.ndarray:
        """Adjoint of K_s, landing in the history space (nodes 0..s-1)."""
        F = self._coerce_state(s, f)
        weta = self.grid.history_weights(s)
        return self._adjoint_apply(s, self.k_blocks(s), F, weta)

    def _coerce_state(self, s: int, f: StateTrajectory) -> np.ndarray:
        if f.grid != self.grid or f.start != s or len(f) != self.grid.N + 1 - s:
            raise ValueError("state trajectory must cover nodes s..N on this grid")
        if f.values.shape[1] != self.sys.n:
            raise ValueError("state dimension mismatch")
        return f.values

    # -- continuous-formula adjoints (cross-validation only) -------------------

    def apply_L_star_continuous(self, s: int, f: StateTrajectory) -> ControlTrajectory:
        """Quadrature of (L*f)(t) = int_t^T B^T e^{A^T(sigma-t)} f(sigma) dsigma."""
        F = self._coerce_state(s, f)
        K = len(F)
        U = np.zeros((K, self.sys.m))
        for j in range(K):
            w = self.grid.trapezoid_weights(s + j, self.grid.N)
            U[j] = self.grid.h * np.einsum("inm,i,in->m", self.semigroup.EB[: K - j], w, F[j:])
        return ControlTrajectory(self.grid, s, U)

    def apply_H_star_continuous(self, s: int, f: StateTrajectory) -> ControlTrajectory:
        """Quadrature of (H*z)(q) = int_q^T lambda(t,q,q)^T z(t) dt."""
        F = self._coerce_state(s, f)
        K = len(F)
        U = np.zeros((K, self.sys.m))
        lam0 = self.lam.diagonal_column
        for j in range(K):
            w = self.grid.trapezoid_weights(s + j, self.grid.N)
            U[j] = self.grid.h * np.einsum("inm,i,in->m", lam0[: K - j], w, F[j:])
        return ControlTrajectory(self.grid, s, U)

    def apply_K_star_continuous(self, s: int, f: StateTrajectory) -> np.ndarray:
        """Quadrature of (K*xi)(q) = int_s^T lambda(t,q,s)^T xi(t) dt, q in [0,s)."""
        F = self._coerce_state(s, f)
        K = len(F)
        w = self.grid.trapezoid_weights(s, self.grid.N)
        out = np.zeros((s, self.sys.m))
        for j in range(s):
            a = np.arange(K) + (s - j)
            out[j] = self.grid.h * np.einsum("inm,i,in->m", self.lam.table[a, s - j], w, F)
        return out


def mild_solution(ops: DiscreteOperators, X0: StatePoint, u: ControlTrajectory) -> StateTrajectory:
    """w(t) = e^{A(t-s)} w0 + (L_s + H_s) u (t) + K_s eta (t)."""
    s = X0.s_index
    if X0.w0.shape[0] != ops.sys.n:
        raise ValueError("initial state dimension mismatch")
    ops._check_control(s, u)
    W = ops.free_states(X0)
    W = W + np.einsum("ijnm,jm->in", ops.l_blocks(s) + ops.h_blocks(s), u.values)
    return StateTrajectory(ops.grid, s, W)
