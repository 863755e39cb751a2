"""Global orchestration of one multimodal training iteration.

Each encoder phase balances its own modality's metadata; the LLM phase
balances whole examples by interleaved length. Encoded subsequences then travel
from wherever their encoder ran straight to the LLM destination of their
example, using the composition of the LLM rearrangement with the inverse of the
encoder rearrangement (one exchange per encoder instead of two).
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .balancers import BalancePolicy, PolicyKind, balance
from .core import (
    LLM,
    TEXT,
    ConfigError,
    CostModel,
    Example,
    MiniBatch,
    PaddingMode,
    Rearrangement,
    SeqItem,
    apply,
    encoded_length,
    group_by_origin,
)
from .exchange import (
    ExchangeMode,
    ExchangePlan,
    batch_volumes,
    compose,
    exchange_report,
    inverse,
    plan_exchange,
    simulate_exchange,
)
from .topology import NODE, ClusterTopology, max_egress, nodewise_rearrange, volume_matrix

log = logging.getLogger(__name__)

COMPOSED = "composed"
REFERENCE = "reference"
NAIVE = "naive"


@dataclass(frozen=True)
class PhaseSpec:
    name: str
    modality: str
    policy: BalancePolicy = field(default_factory=BalancePolicy)
    cost_model: CostModel = field(default_factory=CostModel)
    downsample_rate: int = 1

    def __post_init__(self):
        if self.downsample_rate < 1:
            raise ConfigError(f"phase {self.name!r}: downsample_rate must be >= 1")


def default_phases() -> list[PhaseSpec]:
    """Vision runs packed, audio runs padded (convolutional front end), the LLM
    backbone runs packed. Quadratic coefficients sit in the regime where the
    linear term dominates, which is what the padded/unpadded balancers assume."""
    return [
        PhaseSpec("vision", "vision", BalancePolicy(PolicyKind.GREEDY_UNPADDED),
                  CostModel(1.0, 1e-5, PaddingMode.UNPADDED), downsample_rate=4),
        PhaseSpec("audio", "audio", BalancePolicy(PolicyKind.BINARY_PADDED),
                  CostModel(1.0, 1e-5, PaddingMode.PADDED), downsample_rate=4),
        PhaseSpec("llm", LLM, BalancePolicy(PolicyKind.GREEDY_UNPADDED),
                  CostModel(1.0, 5e-6, PaddingMode.UNPADDED)),
    ]


@dataclass(frozen=True)
class SolverTimeModel:
    """Deterministic stand-in for dispatcher CPU time, so reports are
    reproducible. ``measured=True`` uses wall-clock time instead."""

    balancer_op_seconds: float = 2e-8
    ilp_var_seconds: float = 5e-8
    measured: bool = False

    def balancer(self, n: int) -> float:
        return self.balancer_op_seconds * n * math.log2(max(n, 2))

    def nodewise(self, topo: ClusterTopology) -> float:
        return self.ilp_var_seconds * topo.d * topo.d / topo.c


@dataclass(frozen=True)
class OrchestratorOptions:
    balance_encoders: bool = True
    balance_llm: bool = True
    nodewise: bool = True
    communicator: ExchangeMode = ExchangeMode.ALL_TO_ALL
    delivery: str = COMPOSED
    nodewise_granularity: str = NODE
    protocol_constant: float = 1.0
    seconds_per_cost_unit: float = 1e-6
    # exchange times are volume / bandwidth; this converts them to seconds
    seconds_per_exchange_unit: float = 1e-6
    solver_time: SolverTimeModel = field(default_factory=SolverTimeModel)

    def __post_init__(self):
        object.__setattr__(self, "communicator", ExchangeMode(self.communicator))
        if self.delivery not in (COMPOSED, REFERENCE, NAIVE):
            raise ConfigError(f"unknown delivery path {self.delivery!r}")


@dataclass
class PhaseRecord:
    name: str
    modality: str
    items: int
    pre_max: float
    pre_mean: float
    post_max: float
    post_mean: float
    balancer_fell_back: bool
    baseline_max_egress: int
    max_egress: int
    exchange: dict

    @property
    def pre_ratio(self) -> float:
        return _ratio(self.pre_max, self.pre_mean)

    @property
    def post_ratio(self) -> float:
        return _ratio(self.post_max, self.post_mean)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pre_ratio"] = self.pre_ratio
        out["post_ratio"] = self.post_ratio
        return out


@dataclass(frozen=True)
class IterationTiming:
    phase_compute: tuple[float, ...]
    phase_exchange: tuple[float, ...]
    prefetch_solver: float

    @property
    def forward_span(self) -> float:
        return float(sum(self.phase_compute) + sum(self.phase_exchange))


@dataclass
class IterationState:
    """Where everything ended up; what :func:`verify_assembly` audits."""

    examples: list[Example]
    llm_origin: list[MiniBatch]
    llm_batches: list[MiniBatch]
    pi_m: Rearrangement
    delivered: dict[str, list[MiniBatch]]
    encoded: dict[tuple[int, int], int]
    encoder_rearrangements: dict[str, Rearrangement] = field(default_factory=dict)


@dataclass
class IterationReport:
    per_phase: list[PhaseRecord]
    deliveries: dict[str, dict]
    composed_exchanges: int
    reference_exchanges: int
    timing: IterationTiming
    overlap_ok: bool
    multiset_ok: bool
    assembly_ok: bool
    state: IterationState | None = field(default=None, repr=False)

    def phase(self, name: str) -> PhaseRecord:
        for rec in self.per_phase:
            if rec.name == name:
                return rec
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "per_phase": [p.to_dict() for p in self.per_phase],
            "deliveries": self.deliveries,
            "composed_exchanges": self.composed_exchanges,
            "reference_exchanges": self.reference_exchanges,
            "forward_span": self.timing.forward_span,
            "solver_time": self.timing.prefetch_solver,
            "overlap_ok": self.overlap_ok,
            "multiset_ok": self.multiset_ok,
            "assembly_ok": self.assembly_ok,
        }


def _ratio(mx: float, mean: float) -> float:
    return mx / mean if mean > 0 else 1.0


def _costs(model: CostModel, batches: Sequence[MiniBatch]) -> list[float]:
    return [model.of_lengths(b.lengths) for b in batches]


def _stats(costs: list[float]) -> tuple[float, float]:
    return max(costs), sum(costs) / len(costs)


def _multiset(batches: Sequence[MiniBatch]) -> Counter:
    return Counter((it.key, it.length) for b in batches for it in b.items)


def lift(pi_m: Rearrangement, llm_origin: Sequence[MiniBatch],
         part_batches: Sequence[MiniBatch]) -> Rearrangement:
    """Extend an example-level rearrangement to the parts of one modality.

    Parts land on their example's destination instance, ordered by the
    example's destination slot and then by part index.
    """
    dest = {}
    for b in llm_origin:
        for j, it in enumerate(b.items):
            dest[it.example_id] = pi_m[(b.instance, j)]
    per_instance = defaultdict(list)
    for b in part_batches:
        for j, it in enumerate(b.items):
            inst, slot = dest[it.example_id]
            per_instance[inst].append(((slot, it.part), (b.instance, j)))
    moves = {}
    for inst, entries in per_instance.items():
        entries.sort()
        for rank, (_, src) in enumerate(entries):
            moves[src] = (inst, rank)
    return Rearrangement(pi_m.d, moves)


def _naive_delivery(pi_part: Rearrangement, located: Sequence[MiniBatch], d: int) -> list[MiniBatch]:
    # Deliberately wrong: treats current encoder-side slots as origin slots.
    out: list[list[tuple[tuple[int, int], SeqItem]]] = [[] for _ in range(d)]
    for b in located:
        for j, it in enumerate(b.items):
            inst, slot = pi_part.moves.get((b.instance, j), (b.instance, j))
            out[inst].append(((slot, j), it))
    return [MiniBatch(i, tuple(it for _, it in sorted(entries, key=lambda e: e[0])))
            for i, entries in enumerate(out)]


def _validate_phases(phases: Sequence[PhaseSpec]) -> tuple[list[PhaseSpec], PhaseSpec]:
    llm = [p for p in phases if p.modality == LLM]
    if len(llm) != 1:
        raise ConfigError(f"exactly one LLM phase required, got {len(llm)}")
    encoders = [p for p in phases if p.modality != LLM]
    mods = [p.modality for p in encoders]
    if len(set(mods)) != len(mods):
        raise ConfigError("each encoder modality may have only one phase")
    if TEXT in mods:
        raise ConfigError("text has no encoder phase")
    return encoders, llm[0]


def _phase_run(policy: BalancePolicy, model: CostModel, items: list[SeqItem],
               origin: list[MiniBatch], topo: ClusterTopology, enabled: bool,
               opts: OrchestratorOptions) -> tuple[Rearrangement, bool, float]:
    """Pick the phase rearrangement; never worse than staying put under the
    phase's own cost model."""
    d = topo.d
    ident = Rearrangement.identity(origin, d)
    if not enabled or not items:
        return ident, False, 0.0
    started = time.perf_counter()
    res = balance(policy, d, items)
    spent = time.perf_counter() - started
    if not opts.solver_time.measured:
        spent = opts.solver_time.balancer(len(items))
    re = res.rearrangement
    candidate = apply(re, origin)
    if max(_costs(model, candidate)) > max(_costs(model, origin)):
        return ident, True, spent
    return re, res.fell_back, spent


def run_iteration(examples: Sequence[Example], phases: Sequence[PhaseSpec],
                  topo: ClusterTopology, options: OrchestratorOptions | None = None,
                  origins: Sequence[int] | None = None) -> IterationReport:
    """Simulate one iteration over the global batch ``examples``.

    Examples are placed on ``origins`` (round-robin by default).
    """
    opts = OrchestratorOptions() if options is None else options
    d = topo.d
    encoders, llm_phase = _validate_phases(phases)
    rates = {p.modality: p.downsample_rate for p in encoders}
    rates[TEXT] = 1
    examples = list(examples)
    for ex in examples:
        for part in ex.parts:
            if part.modality not in rates:
                raise ConfigError(f"example {ex.example_id} uses unregistered modality {part.modality!r}")
    if origins is None:
        origins = [k % d for k in range(len(examples))]
    if len(origins) != len(examples):
        raise ConfigError("need one origin instance per example")

    encoded = {}
    for ex in examples:
        for k, part in enumerate(ex.parts):
            encoded[(ex.example_id, k)] = encoded_length(part.metadata_length, rates[part.modality])

    records: list[PhaseRecord] = []
    deliveries: dict[str, dict] = {}
    solver_total = 0.0
    multiset_ok = True
    encoder_side: dict[str, tuple[list[MiniBatch], Rearrangement, list[MiniBatch]]] = {}
    compute_spans: list[float] = []
    exchange_spans: list[float] = []

    def part_items(modality: str, use_encoded: bool) -> list[SeqItem]:
        out = []
        for ex, origin in zip(examples, origins):
            for k, part in enumerate(ex.parts):
                if part.modality == modality:
                    length = encoded[(ex.example_id, k)] if use_encoded else part.metadata_length
                    out.append(SeqItem(ex.example_id, modality, length, origin, k))
        return out

    for phase in encoders:
        items = part_items(phase.modality, use_encoded=False)
        if not items:
            continue
        mode = phase.cost_model.padding_mode
        origin = group_by_origin(items, d, mode)
        re, fell_back, spent = _phase_run(phase.policy, phase.cost_model, items, origin, topo,
                                          opts.balance_encoders, opts)
        solver_total += spent
        baseline = max_egress(volume_matrix(origin, re), topo, granularity=opts.nodewise_granularity)
        egress = baseline
        if opts.nodewise:
            nw = nodewise_rearrange(origin, re, topo, granularity=opts.nodewise_granularity)
            re, egress = nw.rearrangement, nw.max_egress
            solver_total += opts.solver_time.nodewise(topo)
        plan = plan_exchange(origin, re, opts.communicator)
        moved, report = simulate_exchange(plan, topo, opts.protocol_constant)
        moved = [b.with_mode(mode) for b in moved]
        multiset_ok &= _multiset(origin) == _multiset(moved)
        pre_max, pre_mean = _stats(_costs(phase.cost_model, origin))
        post_max, post_mean = _stats(_costs(phase.cost_model, moved))
        records.append(PhaseRecord(phase.name, phase.modality, len(items), pre_max, pre_mean,
                                   post_max, post_mean, fell_back, baseline, egress, report.to_dict()))
        compute_spans.append(post_max * opts.seconds_per_cost_unit)
        exchange_spans.append(report.modeled_time * opts.seconds_per_exchange_unit)
        # encoder outputs stay where the encoder ran, now at encoded length
        located = [MiniBatch(b.instance, tuple(
            SeqItem(it.example_id, it.modality, encoded[(it.example_id, it.part)],
                    it.origin_instance, it.part) for it in b.items)) for b in moved]
        encoder_side[phase.modality] = (group_by_origin(part_items(phase.modality, True), d), re, located)

    # LLM phase: whole examples by interleaved length
    llm_items = [SeqItem(ex.example_id, LLM, sum(encoded[(ex.example_id, k)] for k in range(len(ex.parts))),
                         origin, 0) for ex, origin in zip(examples, origins)]
    llm_mode = llm_phase.cost_model.padding_mode
    llm_origin = group_by_origin(llm_items, d, llm_mode)
    pi_m, llm_fell_back, spent = _phase_run(llm_phase.policy, llm_phase.cost_model, llm_items,
                                            llm_origin, topo, opts.balance_llm, opts)
    solver_total += spent

    text_origin = group_by_origin(part_items(TEXT, True), d)

    def delivery_volume(pi: Rearrangement) -> np.ndarray:
        V = volume_matrix(text_origin, lift(pi, llm_origin, text_origin))
        for origin_parts, re_e, located in encoder_side.values():
            V = V + volume_matrix(located, compose(lift(pi, llm_origin, origin_parts), re_e))
        return V

    V = delivery_volume(pi_m)
    llm_baseline = max_egress(V, topo, granularity=opts.nodewise_granularity)
    llm_egress = llm_baseline
    if opts.nodewise:
        nw = nodewise_rearrange(None, pi_m, topo, V=V, granularity=opts.nodewise_granularity)
        pi_m, llm_egress = nw.rearrangement, nw.max_egress
        V = delivery_volume(pi_m)
        solver_total += opts.solver_time.nodewise(topo)

    delivered: dict[str, list[MiniBatch]] = {}
    composed = reference = 0
    delivery_time = 0.0
    sources = list(text_origin)

    text_plan = plan_exchange(text_origin, lift(pi_m, llm_origin, text_origin), opts.communicator)
    delivered[TEXT], rep = simulate_exchange(text_plan, topo, opts.protocol_constant)
    deliveries[TEXT] = rep.to_dict()
    delivery_time += rep.modeled_time
    multiset_ok &= _multiset(text_origin) == _multiset(delivered[TEXT])

    for modality, (origin_parts, re_e, located) in encoder_side.items():
        pi_part = lift(pi_m, llm_origin, origin_parts)
        sources.extend(located)
        reference += 2
        if opts.delivery == COMPOSED:
            plan = plan_exchange(located, compose(pi_part, re_e), opts.communicator)
            out, rep = simulate_exchange(plan, topo, opts.protocol_constant)
            composed += 1
            deliveries[modality] = rep.to_dict()
            delivery_time += rep.modeled_time
        elif opts.delivery == REFERENCE:
            back, rep1 = simulate_exchange(plan_exchange(located, inverse(re_e), opts.communicator),
                                           topo, opts.protocol_constant)
            out, rep2 = simulate_exchange(plan_exchange(back, pi_part, opts.communicator),
                                          topo, opts.protocol_constant)
            composed += 2
            deliveries[modality] = rep2.to_dict()
            deliveries[modality + ":reset"] = rep1.to_dict()
            delivery_time += rep1.modeled_time + rep2.modeled_time
        else:
            out = _naive_delivery(pi_part, located, d)
            composed += 1
        delivered[modality] = out
        multiset_ok &= _multiset(located) == _multiset(out)

    llm_batches = apply(pi_m, llm_origin)
    multiset_ok &= _multiset(llm_origin) == _multiset(llm_batches)

    if opts.communicator == ExchangeMode.ALL_GATHER:
        V = np.repeat(batch_volumes(sources, d)[:, None], d, axis=1)
    llm_report = exchange_report(ExchangePlan(pi_m, tuple(sources), V, opts.communicator),
                                 topo, opts.protocol_constant)
    pre_max, pre_mean = _stats(_costs(llm_phase.cost_model, llm_origin))
    post_max, post_mean = _stats(_costs(llm_phase.cost_model, llm_batches))
    records.append(PhaseRecord(llm_phase.name, LLM, len(llm_items), pre_max, pre_mean, post_max,
                               post_mean, llm_fell_back, llm_baseline, llm_egress, llm_report.to_dict()))
    compute_spans.append(post_max * opts.seconds_per_cost_unit)
    exchange_spans.append(delivery_time * opts.seconds_per_exchange_unit)

    state = IterationState(examples, llm_origin, llm_batches, pi_m, delivered, encoded,
                           {m: re_e for m, (_, re_e, _) in encoder_side.items()})
    timing = IterationTiming(tuple(compute_spans), tuple(exchange_spans), solver_total)
    return IterationReport(
        per_phase=records,
        deliveries=deliveries,
        composed_exchanges=composed,
        reference_exchanges=reference,
        timing=timing,
        overlap_ok=overlap_schedule([timing]).ok,
        multiset_ok=bool(multiset_ok),
        assembly_ok=verify_assembly(state),
        state=state,
    )


def verify_assembly(state: IterationState) -> bool:
    """Check every example's parts sit on its LLM instance, in order.

    On each instance, each modality's delivered batch must list exactly the
    parts of that instance's LLM examples, ordered by the example's LLM slot and
    then by part index, so the interleaved sequence can be assembled by reading
    them front to back.
    """
    by_id = {ex.example_id: ex for ex in state.examples}
    dest = {}
    for b in state.llm_origin:
        for j, it in enumerate(b.items):
            dest[it.example_id] = state.pi_m[(b.instance, j)]
    for inst, batch in enumerate(state.llm_batches):
        expected = sorted((slot, ex_id) for ex_id, (i, slot) in dest.items() if i == inst)
        if [it.example_id for it in batch.items] != [ex_id for _, ex_id in expected]:
            return False
        for modality, delivered in state.delivered.items():
            want = [
                (ex_id, k, state.encoded[(ex_id, k)])
                for _, ex_id in expected
                for k, part in enumerate(by_id[ex_id].parts)
                if part.modality == modality
            ]
            got = [(it.example_id, it.part, it.length) for it in delivered[inst].items]
            if got != want:
                return False
    for ex in state.examples:
        inst, slot = dest[ex.example_id]
        llm_item = state.llm_batches[inst].items[slot]
        # walking the parts in interleave order must rebuild the full sequence
        total = sum(state.encoded[(ex.example_id, k)] for k in ex.interleave_order)
        if llm_item.length != total:
            return False
    return True


@dataclass(frozen=True)
class OverlapResult:
    ok: bool
    excess: list[float]
    events: list[tuple[str, str, float, float]]


def overlap_schedule(timeline: Sequence[IterationTiming]) -> OverlapResult:
    """Lay out a compute lane (forward pass with exchanges at phase boundaries)
    and a prefetch lane (dispatcher solves for the next iteration).

    Overlap holds when every iteration's prefetch work finishes inside that
    iteration's forward span.
    """
    events = []
    excess = []
    clock = 0.0
    for t, it in enumerate(timeline):
        start = clock
        for p, (ex, comp) in enumerate(zip(it.phase_exchange, it.phase_compute)):
            events.append(("compute", f"iter{t}/phase{p}/exchange", clock, clock + ex))
            clock += ex
            events.append(("compute", f"iter{t}/phase{p}/forward", clock, clock + comp))
            clock += comp
        events.append(("prefetch", f"iter{t}/solve-next", start, start + it.prefetch_solver))
        excess.append(max(0.0, it.prefetch_solver - (clock - start)))
    return OverlapResult(all(e == 0.0 for e in excess), excess, events)
