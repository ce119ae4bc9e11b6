import numpy as np
import memlq as mq
from memlq.riccati import BlockOperatorBundle, _picard_tails, _picard_window_sweep

kern = mq.MemoryKernel("scalar-exponential", a=0.5, b=1.0)
sys_ = mq.build_heat_model(8, kern, 1.0)
grid = mq.TimeGrid(1.0, 64)
ops = mq.DiscreteOperators(sys_, grid)
X0 = mq.StatePoint(0, np.eye(8)[0])

trip1 = mq.riccati_by_quadrature(ops, "v1")
tripb = mq.riccati_backward(ops)
tripp = mq.riccati_picard(ops)

for name, a, b in [("v1-backward", trip1, tripb), ("v1-picard", trip1, tripp), ("backward-picard", tripb, tripp)]:
    d0 = np.max(np.abs(a.P0 - b.P0)); d1 = np.max(np.abs(a.P1 - b.P1)); d2 = np.max(np.abs(a.P2 - b.P2))
    print(f"{name}: P0 {d0:.3e} P1 {d1:.3e} P2 {d2:.3e}")

# where is the P0 diff between v1 and picard?
D = np.abs(trip1.P0 - tripp.P0)
i, r, c = np.unravel_index(np.argmax(D), D.shape)
print("max P0 v1-picard at level", i, "entry", (r, c), "value v1", trip1.P0[i, r, c], "picard", tripp.P0[i, r, c])
D = np.abs(trip1.P1 - tripp.P1)
idx = np.unravel_index(np.argmax(D), D.shape)
print("max P1 v1-picard at", idx, trip1.P1[idx], tripp.P1[idx])

# apply one full-window sweep of the picard map to each triplet, measure self-consistency
def map_residual(trip):
    P0 = trip.P0.copy(); P1 = trip.P1.copy(); P2 = trip.P2.copy()
    bundle = BlockOperatorBundle(ops)
    tails = _picard_tails(bundle, grid, P0, P1, P2, grid.N)
    diff = _picard_window_sweep(bundle, grid, P0, P1, P2, 0, grid.N, tails)
    return diff

print("picard map residual of v1 triplet:", map_residual(trip1))
print("picard map residual of backward triplet:", map_residual(tripb))
print("picard map residual of picard triplet:", map_residual(tripp))

# feedback law residual on the open-loop pair
qf = mq.assemble_quadratic_form(ops, X0)
uhat, info = mq.solve_open_loop(qf)
what = mq.mild_solution(ops, X0, uhat)
gains = mq.build_gains(sys_, trip1)
N = grid.N
res = np.zeros(N + 1)
for i in range(N + 1):
    r = uhat.values[i] + gains.FeedA[i] @ what.values[i]
    if i > 0:
        hw = grid.history_weights(i)
        r += grid.h * np.einsum("j,jab,jb->a", hw, gains.FeedB[i, :i], uhat.values[:i])
    res[i] = np.abs(r).max()
print("feedback law residual on open-loop pair: max", res.max(), "at node", res.argmax())
print("residual profile:", np.array2string(res[::8], precision=4))
print("u scale:", np.abs(uhat.values).max())
print("u profile:", np.array2string(uhat.values[::8, 0], precision=4))
