"""Simulated data movement between data-parallel instances.

The time model is deliberately simple: every instance pushes its inter-node and
intra-node traffic serially over two channels, and the exchange finishes when
the slowest instance does. Raw volumes are reported next to modelled times so
other models can be layered on top.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import ContractError, MiniBatch, Rearrangement, apply
from .topology import ClusterTopology, volume_matrix


class ExchangeMode(str, enum.Enum):
    ALL_TO_ALL = "AllToAll"
    ALL_GATHER = "AllGather"


INTER_NODE = "InterNode"
INTRA_NODE = "IntraNode"


@dataclass(frozen=True)
class ExchangePlan:
    rearrangement: Rearrangement
    batches: tuple[MiniBatch, ...]
    volumes: np.ndarray
    mode: ExchangeMode = ExchangeMode.ALL_TO_ALL


def batch_volumes(batches: Sequence[MiniBatch], d: int) -> np.ndarray:
    out = np.zeros(d, dtype=np.int64)
    for b in batches:
        out[b.instance] += sum(b.lengths)
    return out


def plan_exchange(batches: Sequence[MiniBatch], re: Rearrangement,
                  mode: ExchangeMode | str = ExchangeMode.ALL_TO_ALL) -> ExchangePlan:
    mode = ExchangeMode(mode)
    if mode == ExchangeMode.ALL_TO_ALL:
        V = volume_matrix(batches, re)
    else:
        # every batch is replicated to every instance
        V = np.repeat(batch_volumes(batches, re.d)[:, None], re.d, axis=1)
    return ExchangePlan(re, tuple(batches), V, mode)


@dataclass(frozen=True)
class ExchangeCostReport:
    mode: str
    modeled_time: float
    bound_time: float
    bottleneck: str
    total_inter_volume: int
    total_intra_volume: int
    sent_volume: int
    received_volume: int
    per_node_egress: list[int]
    max_node_egress: int
    peak_resident: int

    @property
    def round_trip_inter_volume(self) -> int:
        # the backward pass mirrors every forward exchange
        return 2 * self.total_inter_volume

    def to_dict(self) -> dict:
        out = asdict(self)
        out["round_trip_inter_volume"] = self.round_trip_inter_volume
        return out


def _channel_volumes(V: np.ndarray, topo: ClusterTopology):
    node = np.arange(topo.d) // topo.c
    same_node = node[:, None] == node[None, :]
    off_diag = ~np.eye(topo.d, dtype=bool)
    inter = (V * ~same_node).sum(axis=1)
    intra = (V * (same_node & off_diag)).sum(axis=1)
    return inter, intra


def exchange_report(plan: ExchangePlan, topo: ClusterTopology,
                    protocol_constant: float = 1.0) -> ExchangeCostReport:
    V = np.asarray(plan.volumes, dtype=np.int64)
    if V.shape != (topo.d, topo.d):
        raise ContractError(f"volume matrix shape {V.shape} does not match d={topo.d}")
    inter, intra = _channel_volumes(V, topo)
    source = batch_volumes(plan.batches, topo.d)
    largest = int(source.max()) if len(source) else 0
    off = V * ~np.eye(topo.d, dtype=bool)
    sent, received = off.sum(axis=1), off.sum(axis=0)
    egress = inter.reshape(topo.nodes, topo.c).sum(axis=1)

    if plan.mode == ExchangeMode.ALL_GATHER:
        # ring algorithm: d - 1 steps, each bounded by the largest batch
        modeled = (topo.d - 1) * largest / topo.inter_bw
        bottleneck = INTER_NODE if topo.nodes > 1 else INTRA_NODE
        peak = int(source.sum())
    else:
        t_inter = protocol_constant * inter / topo.inter_bw
        t_intra = protocol_constant * intra / topo.intra_bw
        per_instance = t_inter + t_intra
        slowest = int(np.argmax(per_instance))
        modeled = float(per_instance[slowest])
        bottleneck = INTER_NODE if t_inter[slowest] > 0 and t_inter[slowest] >= t_intra[slowest] else INTRA_NODE
        local = np.diag(V)
        peak = int((local + np.maximum(sent, received)).max())
    bound = protocol_constant * largest / topo.inter_bw
    return ExchangeCostReport(
        mode=plan.mode.value,
        modeled_time=float(modeled),
        bound_time=float(bound),
        bottleneck=bottleneck,
        total_inter_volume=int(inter.sum()),
        total_intra_volume=int(intra.sum()),
        sent_volume=int(sent.sum()),
        received_volume=int(received.sum()),
        per_node_egress=[int(x) for x in egress],
        max_node_egress=int(egress.max()),
        peak_resident=peak,
    )


def simulate_exchange(plan: ExchangePlan, topo: ClusterTopology,
                      protocol_constant: float = 1.0) -> tuple[list[MiniBatch], ExchangeCostReport]:
    """Move the plan's batches and report the modelled cost.

    All-Gather replicates everything, but the batches each instance ends up
    *keeping* are the same as under All-to-All.
    """
    if plan.rearrangement.d != topo.d:
        raise ContractError("plan and topology disagree on d")
    if plan.mode == ExchangeMode.ALL_TO_ALL:
        expected = volume_matrix(plan.batches, plan.rearrangement)
        if not np.array_equal(expected, plan.volumes):
            raise ContractError("plan volumes do not match its batches and rearrangement")
    moved = apply(plan.rearrangement, plan.batches)
    return moved, exchange_report(plan, topo, protocol_constant)


@dataclass(frozen=True)
class GatherResult:
    views: list[tuple[tuple[int, int, int], ...]]
    metadata_entries: int


def gather_lengths(local: Sequence[Sequence[int]]) -> GatherResult:
    """All-Gather of length metadata: every instance ends with every
    ``(instance, slot, length)`` triple."""
    table = tuple((i, j, int(x)) for i, lengths in enumerate(local) for j, x in enumerate(lengths))
    d = len(local)
    return GatherResult([table for _ in range(d)], (d - 1) * len(table))


def inverse(re: Rearrangement) -> Rearrangement:
    return Rearrangement(re.d, {dst: src for src, dst in re.moves.items()})


def compose(outer: Rearrangement, inner: Rearrangement) -> Rearrangement:
    """``outer ∘ inner⁻¹``: take every item from where ``inner`` put it straight
    to where ``outer`` sends it. Both must be defined on the same source slots."""
    if outer.d != inner.d:
        raise ContractError(f"instance counts differ: {outer.d} vs {inner.d}")
    if outer.moves.keys() != inner.moves.keys():
        raise ContractError("rearrangements are defined over different slots")
    return Rearrangement(outer.d, {inner[src]: outer[src] for src in inner.moves})
