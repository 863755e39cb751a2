"""Two-level cluster topology, communication-volume accounting and the
node-wise permutation of destination batches."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix

from .core import ConfigError, ContractError, MiniBatch, Rearrangement

log = logging.getLogger(__name__)

NODE = "node"
INSTANCE = "instance"


@dataclass(frozen=True)
class ClusterTopology:
    """``d`` data-parallel instances, ``c`` per node; bandwidths in volume
    units per time unit."""

    d: int
    c: int
    intra_bw: float = 10.0
    inter_bw: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.c < 1:
            raise ConfigError("d and c must be positive")
        if self.d % self.c:
            raise ConfigError(f"d={self.d} is not divisible by c={self.c}")
        if not self.inter_bw > 0:
            raise ConfigError("inter_bw must be positive")
        if self.intra_bw < self.inter_bw:
            raise ConfigError("intra_bw must be >= inter_bw")

    @property
    def nodes(self) -> int:
        return self.d // self.c

    def node_of(self, instance: int) -> int:
        return instance // self.c

    def identity_hosting(self) -> np.ndarray:
        return np.arange(self.d) // self.c


def volume_matrix(batches: Sequence[MiniBatch], re: Rearrangement) -> np.ndarray:
    """``V[i, j]``: total length moving from source instance ``i`` into
    destination batch ``j``. Items that stay put land on the diagonal."""
    V = np.zeros((re.d, re.d), dtype=np.int64)
    for b in batches:
        for j, it in enumerate(b.items):
            V[b.instance, re[(b.instance, j)][0]] += it.length
    return V


def _check_hosting(hosting, topo: ClusterTopology) -> np.ndarray:
    hosting = np.asarray(hosting, dtype=np.int64)
    if hosting.shape != (topo.d,):
        raise ContractError(f"hosting must have {topo.d} entries")
    counts = np.bincount(hosting, minlength=topo.nodes)
    if len(counts) != topo.nodes or np.any(counts != topo.c):
        raise ContractError(f"every node must host exactly c={topo.c} batches, got {counts.tolist()}")
    return hosting


def instance_egress(V: np.ndarray, topo: ClusterTopology, hosting=None) -> np.ndarray:
    """Volume each source instance sends to batches hosted on other nodes."""
    hosting = topo.identity_hosting() if hosting is None else _check_hosting(hosting, topo)
    src_node = np.arange(topo.d) // topo.c
    off = src_node[:, None] != hosting[None, :]
    return (np.asarray(V) * off).sum(axis=1)


def inter_node_egress(V: np.ndarray, topo: ClusterTopology, hosting=None) -> np.ndarray:
    """Per-node volume leaving the node, given which node hosts each batch."""
    per_instance = instance_egress(V, topo, hosting)
    return per_instance.reshape(topo.nodes, topo.c).sum(axis=1)


def max_egress(V, topo: ClusterTopology, hosting=None, granularity: str = NODE) -> int:
    if granularity == NODE:
        return int(inter_node_egress(V, topo, hosting).max())
    if granularity == INSTANCE:
        return int(instance_egress(V, topo, hosting).max())
    raise ContractError(f"unknown granularity {granularity!r}")


def hosting_to_instances(hosting: Sequence[int], topo: ClusterTopology) -> list[int]:
    """Instance for each batch: batches on a node fill its instances in batch order."""
    fill = [0] * topo.nodes
    out = []
    for node in hosting:
        out.append(int(node) * topo.c + fill[node])
        fill[node] += 1
    return out


def solve_hosting(V: np.ndarray, topo: ClusterTopology, granularity: str = NODE,
                  time_limit: float | None = None) -> np.ndarray:
    """Exact min-max egress hosting via a 0/1 program.

    Variables ``z[b, n]`` say node ``n`` hosts batch ``b``; each batch has one
    host, each node hosts ``c`` batches, and every node (or instance) must have
    egress at most ``t``, which is minimised.
    """
    d, m, c = topo.d, topo.nodes, topo.c
    if m == 1:
        return np.zeros(d, dtype=np.int64)
    V = np.asarray(V, dtype=float)
    src_node = np.arange(d) // c
    nz = d * m
    rows, cols, vals = [], [], []
    lo, hi = [], []
    r = 0
    for b in range(d):
        for n in range(m):
            rows.append(r); cols.append(b * m + n); vals.append(1.0)
        lo.append(1); hi.append(1); r += 1
    for n in range(m):
        for b in range(d):
            rows.append(r); cols.append(b * m + n); vals.append(1.0)
        lo.append(c); hi.append(c); r += 1
    if granularity == NODE:
        groups = [np.flatnonzero(src_node == n) for n in range(m)]
    else:
        groups = [np.array([i]) for i in range(d)]
    for members in groups:
        n = src_node[members[0]]
        recv = V[members].sum(axis=0)
        # total - sum_b recv[b] z[b, n] <= t
        for b in range(d):
            if recv[b]:
                rows.append(r); cols.append(b * m + n); vals.append(-recv[b])
        rows.append(r); cols.append(nz); vals.append(-1.0)
        lo.append(-np.inf); hi.append(-recv.sum()); r += 1
    A = coo_matrix((vals, (rows, cols)), shape=(r, nz + 1)).tocsr()
    objective = np.zeros(nz + 1)
    objective[-1] = 1.0
    integrality = np.ones(nz + 1)
    integrality[-1] = 0
    options = {"mip_rel_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(objective, constraints=LinearConstraint(A, lo, hi), integrality=integrality,
               bounds=Bounds(np.zeros(nz + 1), np.r_[np.ones(nz), np.inf]), options=options)
    if res.x is None:
        raise ContractError(f"hosting program failed: {res.message}")
    if res.status != 0:
        log.warning("hosting program stopped early: %s", res.message)
    z = res.x[:nz].reshape(d, m)
    return _check_hosting(z.argmax(axis=1), topo)


@lru_cache(maxsize=32)
def all_hostings(d: int, c: int) -> np.ndarray:
    """Every assignment of ``d`` batches to ``d // c`` nodes with ``c`` per node."""
    m = d // c
    out = []
    hosting = [0] * d

    def place(node: int, free: tuple[int, ...]):
        if node == m - 1:
            for b in free:
                hosting[b] = node
            out.append(list(hosting))
            return
        for chosen in itertools.combinations(free, c):
            for b in chosen:
                hosting[b] = node
            place(node + 1, tuple(b for b in free if b not in chosen))

    place(0, tuple(range(d)))
    return np.array(out, dtype=np.int64)


def exhaustive_hosting(V: np.ndarray, topo: ClusterTopology,
                       granularity: str = NODE) -> tuple[np.ndarray, int]:
    """Brute-force optimum over every balanced hosting; for small ``d`` only."""
    if topo.d > 12:
        raise ContractError("exhaustive hosting search is limited to d <= 12")
    H = all_hostings(topo.d, topo.c)
    V = np.asarray(V, dtype=np.int64)
    src_node = np.arange(topo.d) // topo.c
    off = src_node[None, :, None] != H[:, None, :]  # hostings x source x batch
    per_instance = (off * V[None]).sum(axis=2)
    if granularity == NODE:
        scores = per_instance.reshape(len(H), topo.nodes, topo.c).sum(axis=2).max(axis=1)
    else:
        scores = per_instance.max(axis=1)
    k = int(np.argmin(scores))
    return H[k], int(scores[k])


@dataclass(frozen=True)
class NodewiseResult:
    rearrangement: Rearrangement
    max_egress: int
    baseline_max_egress: int
    hosting: np.ndarray
    instance_of: list[int]

    def __iter__(self):
        return iter((self.rearrangement, self.max_egress))


def nodewise_rearrange(batches: Sequence[MiniBatch] | None, re: Rearrangement,
                       topo: ClusterTopology, *, V: np.ndarray | None = None,
                       granularity: str = NODE) -> NodewiseResult:
    """Re-host the destination batches of ``re`` so that the busiest node (or
    instance) sends as little as possible across nodes.

    Pass ``V`` directly when the traffic is not just ``batches`` moved by ``re``
    (e.g. the LLM phase, whose inputs come from several exchanges).
    """
    if re.d != topo.d:
        raise ContractError(f"rearrangement has d={re.d}, topology d={topo.d}")
    if V is None:
        if batches is None:
            raise ContractError("need batches or a volume matrix")
        V = volume_matrix(batches, re)
    base = topo.identity_hosting()
    base_value = max_egress(V, topo, base, granularity)
    hosting = base
    value = base_value
    if base_value > 0:
        candidate = solve_hosting(V, topo, granularity)
        cand_value = max_egress(V, topo, candidate, granularity)
        if cand_value < base_value:
            hosting, value = candidate, cand_value
    instance_of = hosting_to_instances(hosting, topo)
    return NodewiseResult(re.relabel(instance_of), value, base_value, hosting, instance_of)


def permutation_invariance_check(before: Sequence[MiniBatch], after: Sequence[MiniBatch],
                                 cost_fn: Callable[[Sequence[int]], float]) -> bool:
    """True iff both arrangements have the same multiset of per-batch costs."""
    return sorted(cost_fn(b.lengths) for b in before) == sorted(cost_fn(b.lengths) for b in after)
