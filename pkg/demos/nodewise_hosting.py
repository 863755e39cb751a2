"""Node-wise re-hosting on a crossing pattern, then on a random 32-instance
exchange, with the modelled All-to-All time before and after."""

import numpy as np

from orchsim import ClusterTopology, MiniBatch, Rearrangement, SeqItem, nodewise_rearrange, plan_exchange, simulate_exchange
from orchsim.topology import volume_matrix
from orchsim.verify import random_rearrangement

topo = ClusterTopology(d=4, c=2, intra_bw=10.0, inter_bw=1.0)
batches = [MiniBatch(i, (SeqItem(i, "x", 10, i),)) for i in range(4)]
# every instance's item is destined for the other node
crossing = Rearrangement(4, {(0, 0): (2, 0), (1, 0): (3, 0), (2, 0): (0, 0), (3, 0): (1, 0)})

print(volume_matrix(batches, crossing))
nw = nodewise_rearrange(batches, crossing, topo)
print("max node egress", nw.baseline_max_egress, "->", nw.max_egress)
for re in (crossing, nw.rearrangement):
    _, rep = simulate_exchange(plan_exchange(batches, re), topo)
    print(f"modelled time {rep.modeled_time:.1f} ({rep.bottleneck})")

rng = np.random.default_rng(0)
topo = ClusterTopology(d=32, c=8)
items = [SeqItem(k, "x", int(rng.integers(50, 2000)), int(rng.integers(32))) for k in range(512)]
origin = [MiniBatch(i, tuple(it for it in items if it.origin_instance == i)) for i in range(32)]
re = random_rearrangement(rng, [len(b) for b in origin], 32)
nw = nodewise_rearrange(origin, re, topo)
print(f"d=32, c=8: max node egress {nw.baseline_max_egress} -> {nw.max_egress} "
      f"({nw.max_egress / nw.baseline_max_egress:.2f}x)")
print("hosting", nw.hosting.tolist())
