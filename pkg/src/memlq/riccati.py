"""The optimal-cost operator triplet (P0, P1, P2) by three independent routes.

Routes:
  * definitional quadrature of the psi/Z displays (variant v1) or of the
    semigroup/lambda displays (variant v2, with the alternative P1 expression
    as a cross-fill);
  * backward integration of the coupled differential system from the zero
    final conditions, with the stiff linear part propagated by the exact
    semigroup and a trapezoidal predictor-corrector (second order) on the
    rest;
  * Picard iteration on the integral form, marched over short windows where
    the map contracts.

All routes store grid samples P0[i] (n x n), P1[i][j] (n x m, j <= i) and
P2[i][j][l] (m x m, j, l <= i) with P2[i][j][l] = P2[i][l][j]^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ControlSystem, StatePoint, TimeGrid
from .openloop import build_psi_z
from .propagator import DiscreteOperators

__all__ = [
    "RiccatiTriplet",
    "GainTables",
    "BlockOperatorBundle",
    "riccati_by_quadrature",
    "riccati_backward",
    "riccati_picard",
    "dre_residual",
    "build_gains",
    "cost_from_triplet",
    "triplet_distance",
]


@dataclass
class RiccatiTriplet:
    """Grid-sampled cost operators with zero final conditions.

    The triangular index domains are embedded in full arrays (entries outside
    j, l <= i stay zero).
    """

    grid: TimeGrid
    P0: np.ndarray              # (N+1, n, n)
    P1: np.ndarray              # (N+1, N+1, n, m)
    P2: np.ndarray              # (N+1, N+1, N+1, m, m)
    method: str
    meta: dict = field(default_factory=dict)

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.P0 - self.P0.transpose(0, 2, 1))))

    def transpose_defect(self) -> float:
        """max |P2(t,p,q) - P2(t,q,p)^T|."""
        return float(np.max(np.abs(self.P2 - self.P2.transpose(0, 2, 1, 4, 3))))

    def psd_floor(self) -> float:
        """Smallest eigenvalue of any P0 sample (symmetrized for the solve only)."""
        sym = 0.5 * (self.P0 + self.P0.transpose(0, 2, 1))
        return float(min(np.linalg.eigvalsh(sym)[:, 0]))

    def final_conditions_zero(self) -> bool:
        N = self.grid.N
        return (not self.P0[N].any()) and (not self.P1[N].any()) and (not self.P2[N].any())


def triplet_distance(a: RiccatiTriplet, b: RiccatiTriplet) -> float:
    """Sup distance over all three tables."""
    return max(
        float(np.max(np.abs(a.P0 - b.P0))),
        float(np.max(np.abs(a.P1 - b.P1))),
        float(np.max(np.abs(a.P2 - b.P2))),
    )


def _alloc(grid: TimeGrid, n: int, m: int):
    N = grid.N
    return (np.zeros((N + 1, n, n)), np.zeros((N + 1, N + 1, n, m)),
            np.zeros((N + 1, N + 1, N + 1, m, m)))


# ---------------------------------------------------------------------------
# Quadrature routes
# ---------------------------------------------------------------------------

def riccati_by_quadrature(ops: DiscreteOperators, variant: str = "v1") -> RiccatiTriplet:
    """Triplet by direct quadrature of its defining displays.

    v1 integrates Z^T C*C Z + psi^T psi pairings; v2 integrates the
    semigroup/lambda pairings and cross-fills P1 by its third expression,
    recording the maximal discrepancy between the two P1 routes.
    """
    if variant not in ("v1", "v2"):
        raise ValueError("variant must be 'v1' or 'v2'")
    sys, grid = ops.sys, ops.grid
    n, m, N, h = sys.n, sys.m, grid.N, grid.h
    P0, P1, P2 = _alloc(grid, n, m)
    p1_gap = 0.0
    for s in range(N):
        tab = build_psi_z(ops, s)
        K = N + 1 - s
        w = grid.trapezoid_weights(s, N)
        Y1 = np.einsum("pn,tnk->tpk", sys.C, tab.z1)
        Y2 = np.einsum("pn,qtnm->qtpm", sys.C, tab.z2)
        if variant == "v1":
            P0[s] = h * (np.einsum("t,tpi,tpj->ij", w, Y1, Y1)
                         + np.einsum("t,tmi,tmj->ij", w, tab.psi1, tab.psi1))
            P1[s, : s + 1] = h * (np.einsum("t,tpi,qtpm->qim", w, Y1, Y2)
                                  + np.einsum("t,tmi,qtmk->qik", w, tab.psi1, tab.psi2))
            P2[s, : s + 1, : s + 1] = h * (np.einsum("t,qtca,ptcb->pqab", w, Y2, Y2)
                                           + np.einsum("t,qtca,ptcb->pqab", w, tab.psi2, tab.psi2))
        else:
            i = np.arange(K)[:, None]
            p = np.arange(s + 1)[None, :]
            lamcols = ops.lam.table[i + (s - p), np.broadcast_to(s - p, (K, s + 1))]
            Ylam = np.einsum("pn,tqnm->qtpm", sys.C, lamcols)
            YE = np.einsum("pn,tnk->tpk", sys.C, ops.semigroup.E[:K])
            P0[s] = h * np.einsum("t,tpi,tpj->ij", w, YE, Y1)
            P1[s, : s + 1] = h * np.einsum("t,tpi,qtpm->qim", w, YE, Y2)
            P2[s, : s + 1, : s + 1] = h * np.einsum("t,qtca,ptcb->pqab", w, Ylam, Y2)
            p1_v3 = h * np.einsum("t,tpi,qtpm->qim", w, Y1, Ylam)
            p1_gap = max(p1_gap, float(np.max(np.abs(P1[s, : s + 1] - p1_v3))))
    meta = {"variant": variant}
    if variant == "v2":
        meta["p1_route_gap"] = p1_gap
    return RiccatiTriplet(grid, P0, P1, P2, method=f"quadrature-{variant}", meta=meta)


# ---------------------------------------------------------------------------
# The coupled-system right-hand side (shared by backward, Picard, residual)
# ---------------------------------------------------------------------------

class BlockOperatorBundle:
    """Structured actions of the block objects of the coupled system.

    The quadratic term couples only through the diagonal slices P1(t,t) and
    P2(.,.,t) (the point-evaluation selectors of the block form), so the
    bundle works directly on triplet slices and never materializes operators
    on the product grid space.
    """

    def __init__(self, ops: DiscreteOperators):
        self.sys = ops.sys
        self.grid = ops.grid
        self.E = ops.semigroup.E
        self.kb = ops.lam.kb      # k(d h) B over offsets d
        self.ctc = ops.sys.ctc()

    def gain_row(self, P0_r: np.ndarray, P1_diag_r: np.ndarray) -> np.ndarray:
        """B* P0(r) + P1(r,r)*  (m x n)."""
        return self.sys.B.T @ P0_r + P1_diag_r.T

    def coupling_cols(self, P1_r: np.ndarray, P2_diag_r: np.ndarray) -> np.ndarray:
        """B* P1(r,p) + P2(r,p,r) for all stored p  ((p+1) x m x m)."""
        return np.einsum("nm,pnl->pml", self.sys.B, P1_r) + P2_diag_r

    def integrand(self, r: int, P0_r, P1_r, P2_r):
        """The bracket [Q + P K1 + K2 P - P I1 B I2 P] at level r, componentwise.

        P1_r holds slices p = 0..r; P2_r the (p, q) block up to r.  Returns
        (Q0, R, S2): the P0 integrand (n x n), the P1 integrand per p
        ((r+1) x n x m), and the P2 integrand per (p, q).
        """
        G = self.gain_row(P0_r, P1_r[r])
        X = self.coupling_cols(P1_r, P2_r[:, r])
        kbr = self.kb[r::-1]                       # kb[r - p], p = 0..r
        Q0 = self.ctc - G.T @ G
        R = np.einsum("ij,pjm->pim", P0_r, kbr) - np.einsum("mi,pmk->pik", G, X)
        S2 = (np.einsum("qna,pnb->pqab", kbr, P1_r)
              + np.einsum("qna,pnb->pqab", P1_r, kbr)
              - np.einsum("qua,pub->pqab", X, X))
        return Q0, R, S2


# ---------------------------------------------------------------------------
# Backward integration
# ---------------------------------------------------------------------------

def riccati_backward(ops: DiscreteOperators) -> RiccatiTriplet:
    """Integrate the coupled system backward from the zero final conditions.

    Reverse-time Heun (trapezoidal predictor-corrector), with the A-conjugation
    propagated by the exact one-step semigroup so the stiff modes of a
    parabolic model cannot destabilize the march.
    """
    sys, grid = ops.sys, ops.grid
    n, m, N, h = sys.n, sys.m, grid.N, grid.h
    P0, P1, P2 = _alloc(grid, n, m)
    bundle = BlockOperatorBundle(ops)
    E1 = ops.semigroup.E[1]
    for lev in range(N, 0, -1):
        P1c = P1[lev, : lev + 1]
        P2c = P2[lev, : lev + 1, : lev + 1]
        Q0, R, S2 = bundle.integrand(lev, P0[lev], P1c, P2c)
        # predictor at the earlier level, exponential Euler
        P0p = E1.T @ (P0[lev] + h * Q0) @ E1
        P1p = np.einsum("ji,pjm->pim", E1, P1c + h * R)[:lev]
        P2p = (P2c + h * S2)[:lev, :lev]
        Q0p, Rp, S2p = bundle.integrand(lev - 1, P0p, P1p, P2p)
        P0[lev - 1] = E1.T @ (P0[lev] + 0.5 * h * Q0) @ E1 + 0.5 * h * Q0p
        P1[lev - 1, :lev] = (np.einsum("ji,pjm->pim", E1, P1c + 0.5 * h * R)[:lev]
                             + 0.5 * h * Rp)
        P2[lev - 1, :lev, :lev] = P2c[:lev, :lev] + 0.5 * h * (S2[:lev, :lev] + S2p)
        if not np.all(np.isfinite(P0[lev - 1])):
            raise ValueError(f"backward sweep produced non-finite values at node {lev - 1}; refine N")
    return RiccatiTriplet(grid, P0, P1, P2, method="backward", meta={"scheme": "exponential-heun"})


# ---------------------------------------------------------------------------
# Picard iteration on the integral form
# ---------------------------------------------------------------------------

def _picard_window_sweep(bundle: BlockOperatorBundle, grid: TimeGrid,
                         P0, P1, P2, a: int, b: int, tails):
    """One application of the integral map to the levels a..b-1.

    tails = (tail0, tail1, tail2): frozen integrals over [b, T], already
    weighted; replaced by zeros for b = N.
    """
    h, E = grid.h, bundle.E
    tail0, tail1, tail2 = tails
    # integrand slices for r in [a, b] from the current iterate
    rows = range(a, b + 1)
    Q0s, Rs, S2s = {}, {}, {}
    for r in rows:
        Q0s[r], Rs[r], S2s[r] = bundle.integrand(r, P0[r], P1[r, : r + 1], P2[r, : r + 1, : r + 1])
    new0 = np.empty_like(P0[a:b])
    new1 = np.zeros_like(P1[a:b])
    new2 = np.zeros_like(P2[a:b])
    for lev in range(a, b):
        w = grid.trapezoid_weights(lev, b)
        acc0 = np.zeros_like(P0[0])
        acc1 = np.zeros((lev + 1,) + P1.shape[2:])
        acc2 = np.zeros((lev + 1, lev + 1) + P2.shape[3:])
        for r in range(lev, b + 1):
            Er = E[r - lev]
            wr = h * w[r - lev]
            acc0 += wr * (Er.T @ Q0s[r] @ Er)
            acc1 += wr * np.einsum("ji,pjm->pim", Er, Rs[r][: lev + 1])
            acc2 += wr * S2s[r][: lev + 1, : lev + 1]
        Eb = E[b - lev]
        acc0 += Eb.T @ tail0 @ Eb
        if tail1 is not None:
            acc1 += np.einsum("ji,pjm->pim", Eb, tail1[: lev + 1])
            acc2 += tail2[: lev + 1, : lev + 1]
        new0[lev - a] = acc0
        new1[lev - a, : lev + 1] = acc1
        new2[lev - a, : lev + 1, : lev + 1] = acc2
    diff = max(float(np.max(np.abs(new0 - P0[a:b]))) if b > a else 0.0,
               float(np.max(np.abs(new1 - P1[a:b]))) if b > a else 0.0,
               float(np.max(np.abs(new2 - P2[a:b]))) if b > a else 0.0)
    P0[a:b], P1[a:b], P2[a:b] = new0, new1, new2
    return diff


def _picard_tails(bundle: BlockOperatorBundle, grid: TimeGrid, P0, P1, P2, b: int):
    """Frozen integrals over [b, T] of the three integrands, for all p, q < b."""
    N, h, E = grid.N, grid.h, bundle.E
    n, m = bundle.sys.n, bundle.sys.m
    tail0 = np.zeros((n, n))
    if b >= N:
        return tail0, np.zeros((b, n, m)), np.zeros((b, b, m, m))
    w = grid.trapezoid_weights(b, N)
    tail1 = np.zeros((b, n, m))
    tail2 = np.zeros((b, b, m, m))
    for r in range(b, N + 1):
        Q0, R, S2 = bundle.integrand(r, P0[r], P1[r, : r + 1], P2[r, : r + 1, : r + 1])
        Er = E[r - b]
        wr = h * w[r - b]
        tail0 += wr * (Er.T @ Q0 @ Er)
        tail1 += wr * np.einsum("ji,pjm->pim", Er, R[:b])
        tail2 += wr * S2[:b, :b]
    return tail0, tail1, tail2


def _run_windows(bundle, grid, window: int, tol: float, max_iter: int,
                 probe_only: bool = False):
    """March windows [T-w, T], [T-2w, T-w], ... of the Picard fixed point."""
    sys = bundle.sys
    P0, P1, P2 = _alloc(grid, sys.n, sys.m)
    N = grid.N
    iteration_log = []
    b = N
    while b > 0:
        a = max(0, b - window)
        # initial guess: extend the boundary level backward
        for lev in range(a, b):
            P0[lev] = P0[b]
            P1[lev, : lev + 1] = P1[b, : lev + 1]
            P2[lev, : lev + 1, : lev + 1] = P2[b, : lev + 1, : lev + 1]
        tails = _picard_tails(bundle, grid, P0, P1, P2, b)
        diffs = []
        for it in range(max_iter):
            diff = _picard_window_sweep(bundle, grid, P0, P1, P2, a, b, tails)
            diffs.append(diff)
            if diff < tol:
                break
        else:
            raise RuntimeError(
                f"Picard did not converge in {max_iter} iterations on window [{a}, {b}]; "
                "shrink the window")
        iteration_log.append({"window": [a, b], "iterations": len(diffs), "diffs": diffs})
        if probe_only:
            return P0, P1, P2, iteration_log
        b = a
    return P0, P1, P2, iteration_log


def _contraction_factor(diffs, tol) -> float:
    """Worst late-stage ratio of successive Picard increments."""
    useful = [d for d in diffs if d > 10 * tol]
    if len(useful) < 2:
        return 0.0
    ratios = [useful[k + 1] / useful[k] for k in range(len(useful) - 1)]
    return max(ratios[1:]) if len(ratios) > 1 else ratios[0]


def riccati_picard(ops: DiscreteOperators, window: int | None = None,
                   tol: float = 1e-9, max_iter: int = 60) -> RiccatiTriplet:
    """Fixed point of the integral form by successive substitution on windows.

    With window=None the window length is auto-selected: trial doubling from
    4 nodes, keeping the largest window whose measured contraction factor
    stays below 0.5.
    """
    if window is not None and window < 1:
        raise ValueError("window must cover at least one node")
    grid = ops.grid
    bundle = BlockOperatorBundle(ops)
    if window is None:
        window = 4
        while 2 * window <= grid.N:
            try:
                _, _, _, log = _run_windows(bundle, grid, 2 * window, tol, max_iter,
                                            probe_only=True)
            except RuntimeError:
                break
            if _contraction_factor(log[0]["diffs"], tol) > 0.5:
                break
            window *= 2
    P0, P1, P2, log = _run_windows(bundle, grid, window, tol, max_iter)
    meta = {"window": window, "tol": tol,
            "iterations": [entry["iterations"] for entry in log]}
    return RiccatiTriplet(grid, P0, P1, P2, method="picard", meta=meta)


# ---------------------------------------------------------------------------
# Residuals, gains, cost form
# ---------------------------------------------------------------------------

def dre_residual(ops: DiscreteOperators, trip: RiccatiTriplet) -> dict:
    """Finite-difference residuals of the three coupled equations.

    Central differences in t at interior nodes, coupling terms evaluated on
    the triplet itself; the max-abs residual is reported per equation
    (equivalent to testing against the canonical bases).
    """
    grid, sys = ops.grid, ops.sys
    N, h = grid.N, grid.h
    A = sys.A
    bundle = BlockOperatorBundle(ops)
    res0 = res1 = res2 = 0.0
    for i in range(1, N):
        G = bundle.gain_row(trip.P0[i], trip.P1[i, i])
        dP0 = (trip.P0[i + 1] - trip.P0[i - 1]) / (2 * h)
        r0 = dP0 + A.T @ trip.P0[i] + trip.P0[i] @ A + bundle.ctc - G.T @ G
        res0 = max(res0, float(np.max(np.abs(r0))))
        P1c = trip.P1[i, :i]
        X = bundle.coupling_cols(P1c, trip.P2[i, :i, i])
        kbr = bundle.kb[i:0:-1]                   # kb[i - p], p = 0..i-1
        dP1 = (trip.P1[i + 1, :i] - trip.P1[i - 1, :i]) / (2 * h)
        r1 = (dP1 + np.einsum("ji,pjm->pim", A, P1c)
              + np.einsum("ij,pjm->pim", trip.P0[i], kbr)
              - np.einsum("mi,pmk->pik", G, X))
        res1 = max(res1, float(np.max(np.abs(r1))))
        dP2 = (trip.P2[i + 1, :i, :i] - trip.P2[i - 1, :i, :i]) / (2 * h)
        r2 = (dP2 + np.einsum("qna,pnb->pqab", kbr, P1c)
              + np.einsum("qna,pnb->pqab", P1c, kbr)
              - np.einsum("qua,pub->pqab", X, X))
        res2 = max(res2, float(np.max(np.abs(r2))))
    return {"p0": res0, "p1": res1, "p2": res2}


@dataclass
class GainTables:
    """Feedback gain slices of a triplet."""

    G0: np.ndarray      # (N+1, m, n)   B* P0(t)
    G1: np.ndarray      # (N+1, N+1, m, m)   B* P1(t, p)
    FeedA: np.ndarray   # (N+1, m, n)   B* P0(t) + P1(t,t)*
    FeedB: np.ndarray   # (N+1, N+1, m, m)   B* P1(t,p) + P2(t,p,t)


def build_gains(sys: ControlSystem, trip: RiccatiTriplet) -> GainTables:
    if not (np.all(np.isfinite(trip.P0)) and np.all(np.isfinite(trip.P1))
            and np.all(np.isfinite(trip.P2))):
        raise ValueError("triplet has non-finite entries")
    N = trip.grid.N
    G0 = np.einsum("nm,inj->imj", sys.B, trip.P0)
    G1 = np.einsum("nm,ipnk->ipmk", sys.B, trip.P1)
    FeedA = G0 + trip.P1[np.arange(N + 1), np.arange(N + 1)].transpose(0, 2, 1)
    FeedB = G1 + trip.P2[np.arange(N + 1), :, np.arange(N + 1)]
    return GainTables(G0=G0, G1=G1, FeedA=FeedA, FeedB=FeedB)


def cost_from_triplet(trip: RiccatiTriplet, X0: StatePoint) -> float:
    """(P(s) X0, X0): the optimal-cost quadratic form of the embedded datum."""
    s = X0.s_index
    grid = trip.grid
    val = float(X0.w0 @ trip.P0[s] @ X0.w0)
    if s > 0:
        hw = grid.h * grid.history_weights(s)
        val += 2.0 * float(np.einsum("p,n,pnm,pm->", hw, X0.w0, trip.P1[s, :s], X0.eta))
        P2s = trip.P2[s, :s, :s]
        val += float(np.einsum("p,q,pqab,pb,qa->", hw, hw, P2s, X0.eta, X0.eta))
    return val
