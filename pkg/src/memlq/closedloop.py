"""Forward simulation of the feedback law and the dynamic-programming check.

The feedback law expresses the control at time t through the current state
and the stored input history theta (= eta before the initial time, the
closed-loop control after it):

    u(t) = -[B* P0(t) + P1(t,t)*] w(t) - int_0^t [B* P1(t,p) + P2(t,p,t)] theta(p) dp.

The simulation holds the control constant over each step (zero-order hold):
the state advances through the discrete mild-solution row with the not yet
available endpoint sample frozen at the current value, and the history
integral weights the current step's left endpoint (theta(t_i) is not defined
when u(t_i) is computed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ControlTrajectory, StatePoint, StateTrajectory
from .openloop import assemble_quadratic_form, cost_eval, solve_open_loop
from .propagator import DiscreteOperators, mild_solution
from .riccati import GainTables

__all__ = ["FeedbackRun", "simulate_closed_loop", "dp_consistency_check"]


@dataclass
class FeedbackRun:
    """Traces of one closed-loop simulation."""

    control: ControlTrajectory
    state: StateTrajectory
    theta: np.ndarray            # history samples at nodes 0..N-1
    state_gain_log: np.ndarray   # per-step -FeedA w contribution
    history_gain_log: np.ndarray  # per-step -int FeedB theta contribution
    cost: float


def simulate_closed_loop(ops: DiscreteOperators, gains: GainTables,
                         X0: StatePoint) -> FeedbackRun:
    """Step the feedback law from (s, X0) to T on the shared grid."""
    grid, sys = ops.grid, ops.sys
    s, N, h = X0.s_index, grid.N, grid.h
    if gains.FeedA.shape[0] != N + 1:
        raise ValueError("gains were built on a different grid")
    K = N + 1 - s
    lh = ops.l_blocks(s) + ops.h_blocks(s)
    free = ops.free_states(X0)
    theta = np.zeros((N, sys.m))
    if s > 0:
        theta[:s] = X0.eta
    u_fb = np.zeros((K, sys.m))
    w_fb = np.zeros((K, sys.n))
    w_fb[0] = X0.w0
    state_log = np.zeros((K, sys.m))
    hist_log = np.zeros((K, sys.m))
    for step, i in enumerate(range(s, N + 1)):
        state_term = -gains.FeedA[i] @ w_fb[step]
        if i > 0:
            hw = grid.history_weights(i)
            hist_term = -h * np.einsum("j,jab,jb->a", hw, gains.FeedB[i, :i], theta[:i])
        else:
            hist_term = np.zeros(sys.m)
        u = state_term + hist_term
        u_fb[step] = u
        state_log[step] = state_term
        hist_log[step] = hist_term
        if i < N:
            theta[i] = u
            # mild-solution row at the next node, endpoint sample frozen (ZOH)
            u_known = np.vstack([u_fb[: step + 1], u[None, :]])
            w_next = free[step + 1] + np.einsum("jnm,jm->n", lh[step + 1, : step + 2], u_known)
            if not np.all(np.isfinite(w_next)):
                raise ValueError(f"feedback state blew up at node {i + 1}; gains inconsistent with grid")
            w_fb[step + 1] = w_next
    control = ControlTrajectory(grid, s, u_fb)
    state = StateTrajectory(grid, s, w_fb)
    cost = cost_eval(ops, X0, control)
    return FeedbackRun(control=control, state=state, theta=theta,
                       state_gain_log=state_log, history_gain_log=hist_log, cost=cost)


def dp_consistency_check(ops: DiscreteOperators, X0: StatePoint, s_prime: int) -> dict:
    """Re-root the solved problem at a later node and compare the optimal controls.

    Solves from (s, X0), forms X0' = (w(s'), theta restricted to [0, s')), solves
    from (s', X0'), and reports the sup distance between the restriction of the
    first control and the second.
    """
    grid = ops.grid
    s = X0.s_index
    if not s <= s_prime < grid.N:
        raise ValueError("need s <= s' < N on the grid")
    u_hat, info = solve_open_loop(assemble_quadratic_form(ops, X0))
    if s_prime == s:
        return {"distance": 0.0, "cost_parent": info["cost"], "cost_child": info["cost"]}
    w_hat = mild_solution(ops, X0, u_hat)
    cut = s_prime - s
    if s > 0:
        theta = np.vstack([X0.eta, u_hat.values[:cut]])
    else:
        theta = u_hat.values[:cut].copy()
    X0p = StatePoint(s_index=s_prime, w0=w_hat.values[cut], eta=theta)
    u_re, info_re = solve_open_loop(assemble_quadratic_form(ops, X0p))
    distance = float(np.max(np.abs(u_hat.values[cut:] - u_re.values)))
    return {"distance": distance, "cost_parent": info["cost"],
            "cost_child": info_re["cost"]}
