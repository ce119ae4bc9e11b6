import numpy as np
import memlq as mq

rng = np.random.default_rng(0)

# default acceptance config
kern = mq.MemoryKernel("scalar-exponential", a=0.5, b=1.0)
sys_ = mq.build_heat_model(8, kern, 1.0)
grid = mq.TimeGrid(1.0, 64)
ops = mq.DiscreteOperators(sys_, grid)

print("semigroup defect:", ops.semigroup.semigroup_defect())

# adjoint identity
s = 16
K = grid.N + 1 - s
u = mq.ControlTrajectory(grid, s, rng.standard_normal((K, 1)))
f = mq.StateTrajectory(grid, s, rng.standard_normal((K, 8)))
from memlq.propagator import weighted_inner
lhs = weighted_inner(grid, s, ops.apply_L(s, u).values, f.values)
rhs = grid.h * (grid.trapezoid_weights(s, grid.N) * np.einsum('ij,ij->i', u.values, ops.apply_L_star(s, f).values)).sum()
print("adjoint L identity:", abs(lhs - rhs))
lhs = weighted_inner(grid, s, ops.apply_H(s, u).values, f.values)
rhs = grid.h * (grid.trapezoid_weights(s, grid.N) * np.einsum('ij,ij->i', u.values, ops.apply_H_star(s, f).values)).sum()
print("adjoint H identity:", abs(lhs - rhs))
eta = rng.standard_normal((s, 1))
lhs = weighted_inner(grid, s, ops.apply_K(s, eta).values, f.values)
Ks = ops.apply_K_star(s, f)
rhs = grid.h * (grid.history_weights(s)[:, None] * eta * Ks).sum()
print("adjoint K identity:", abs(lhs - rhs))

# lambda splitting identity (cocycle): lam(t,q,s) = E_{t-c} lam(c,q,s) + lam(t,q,c)
i_t, i_q, i_s, i_c = 40, 5, 12, 25
lhs = ops.lam.value(i_t, i_q, i_s)
rhs = ops.semigroup.E[i_t - i_c] @ ops.lam.value(i_c, i_q, i_s) + ops.lam.value(i_t, i_q, i_c)
print("lambda cocycle:", np.max(np.abs(lhs - rhs)))

# open loop at s=0
X0 = mq.StatePoint(0, np.eye(8)[0])
qf = mq.assemble_quadratic_form(ops, X0)
uhat, info = mq.solve_open_loop(qf)
print("lambda_min:", info["lambda_min"], "cost:", info["cost"])
print("cost_eval(uhat):", mq.cost_eval(ops, X0, uhat))
ucheck = rng.standard_normal((grid.N + 1, 1))
print("qf invariant:", abs(qf.cost_of(ucheck) - mq.cost_eval(ops, X0, mq.ControlTrajectory(grid, 0, ucheck))))

# psi/z representation
tab = mq.build_psi_z(ops, 0)
u2, w2 = mq.open_loop_from_psi_z(ops, tab, X0)
print("u representation:", np.max(np.abs(u2.values - uhat.values)))
w1 = mq.mild_solution(ops, X0, uhat)
print("w representation:", np.max(np.abs(w2.values - w1.values)))

# s>0 with history
s = 16
X0s = mq.StatePoint(s, np.eye(8)[0], 0.5 * np.ones((s, 1)))
qfs = mq.assemble_quadratic_form(ops, X0s)
uhs, infos = mq.solve_open_loop(qfs)
tabs = mq.build_psi_z(ops, s)
u2s, w2s = mq.open_loop_from_psi_z(ops, tabs, X0s)
print("u rep s>0:", np.max(np.abs(u2s.values - uhs.values)))

# DP consistency from s=0
rep = mq.dp_consistency_check(ops, X0, 32)
print("dp distance (s=0 root):", rep["distance"])

import time
t0 = time.time()
trip1 = mq.riccati_by_quadrature(ops, "v1")
t1 = time.time()
trip2 = mq.riccati_by_quadrature(ops, "v2")
t2 = time.time()
print(f"quadrature v1 {t1-t0:.2f}s v2 {t2-t1:.2f}s")
print("v1-v2 distance:", mq.triplet_distance(trip1, trip2))
print("v2 p1 route gap:", trip2.meta["p1_route_gap"])
print("P0 symmetry v1:", trip1.symmetry_defect(), " v2:", trip2.symmetry_defect())
print("P2 transpose v1:", trip1.transpose_defect())
print("psd floor v1:", trip1.psd_floor())

t0 = time.time()
tripb = mq.riccati_backward(ops)
print(f"backward {time.time()-t0:.2f}s, dist to v1: {mq.triplet_distance(trip1, tripb)}")
res = mq.dre_residual(ops, tripb)
print("backward residuals:", res)
res1 = mq.dre_residual(ops, trip1)
print("v1 residuals:", res1)

# cost identity
print("cost identity v1 s=0:", abs(info["cost"] - mq.cost_from_triplet(trip1, X0)) / info["cost"])
print("cost identity v1 s=16:", abs(infos["cost"] - mq.cost_from_triplet(trip1, X0s)) / infos["cost"])
print("cost identity backward s=0:", abs(info["cost"] - mq.cost_from_triplet(tripb, X0)) / info["cost"])
print("cost identity backward s=16:", abs(infos["cost"] - mq.cost_from_triplet(tripb, X0s)) / infos["cost"])

t0 = time.time()
tripp = mq.riccati_picard(ops)
print(f"picard {time.time()-t0:.2f}s window={tripp.meta['window']} iters={tripp.meta['iterations'][:4]}...")
print("picard-backward dist:", mq.triplet_distance(tripp, tripb))
print("picard-v2 dist:", mq.triplet_distance(tripp, trip2))

# feedback
gains = mq.build_gains(sys_, trip1)
run = mq.simulate_closed_loop(ops, gains, X0)
gap = np.max(np.abs(run.control.values - uhat.values)) / np.max(np.abs(uhat.values))
print("feedback rel gap s=0:", gap, "cost_fb:", run.cost, ">= cost_ol:", run.cost >= info["cost"])
runs = mq.simulate_closed_loop(ops, gains, X0s)
gaps = np.max(np.abs(runs.control.values - uhs.values)) / np.max(np.abs(uhs.values))
print("feedback rel gap s=16:", gaps, "cost ok:", runs.cost >= infos["cost"])

# memoryless collapse
sys0 = mq.build_heat_model(8, mq.MemoryKernel("zero"), 1.0)
ops0 = mq.DiscreteOperators(sys0, grid)
trip0 = mq.riccati_by_quadrature(ops0, "v1")
print("memoryless P1, P2 sup:", np.max(np.abs(trip0.P1)), np.max(np.abs(trip0.P2)))
from memlq.oracle import classical_dre
cd = classical_dre(sys0, grid)
print("P0 vs classical dre:", np.max(np.abs(trip0.P0 - cd)))

# brute force scalar benchmark
k2 = mq.MemoryKernel("scalar-exponential", a=1.0, b=1.0)
sys2 = mq.ControlSystem(A=np.array([[-1.0]]), B=np.array([[1.0]]), C=np.array([[1.0]]), kernel=k2, T=1.0)
g2 = mq.TimeGrid(1.0, 32)
ops2 = mq.DiscreteOperators(sys2, g2)
X02 = mq.StatePoint(0, np.array([1.0]))
u_bf = mq.brute_force_minimize(ops2, X02)
u_ol, _ = mq.solve_open_loop(mq.assemble_quadratic_form(ops2, X02))
print("brute force agreement:", np.max(np.abs(u_bf.values - u_ol.values)) / np.max(np.abs(u_ol.values)))
