"""Post-balancing algorithms.

Every balancer takes the instance count ``d`` and a flat list of
:class:`~orchsim.core.SeqItem`. The *origin* mini-batches are the items grouped
by ``origin_instance`` in list order, so item ``k`` sits at slot
``(origin_instance, rank among items with that origin)``. The returned
:class:`BalanceResult` carries the rearrangement from those origin slots to the
new batches.

With ``guard=True`` (the default) a balancer never returns something worse than
leaving the batches where they are: if the identity arrangement scores strictly
better under the policy objective, the identity is returned instead.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Callable, Sequence

from .core import (
    ConfigError,
    ContractError,
    CostModel,
    CostVariant,
    MiniBatch,
    PaddingMode,
    Rearrangement,
    SeqItem,
)


class PolicyKind(str, enum.Enum):
    GREEDY_UNPADDED = "GreedyUnpadded"
    BINARY_PADDED = "BinaryPadded"
    QUADRATIC_TOLERANCE = "QuadraticTolerance"
    CONV_TRANSFORMER = "ConvTransformer"


@dataclass(frozen=True)
class BalancePolicy:
    kind: PolicyKind = PolicyKind.GREEDY_UNPADDED
    tolerance_v: int = 0
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.tolerance_v < 0:
            raise ConfigError("tolerance_v must be >= 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")

    def objective_model(self) -> CostModel:
        """The cost function whose per-batch maximum this policy minimises
        (linear coefficient normalised to 1)."""
        if self.kind == PolicyKind.GREEDY_UNPADDED:
            return CostModel(1.0, 0.0, PaddingMode.UNPADDED, CostVariant.LINEAR_ONLY)
        if self.kind == PolicyKind.BINARY_PADDED:
            return CostModel(1.0, 0.0, PaddingMode.PADDED, CostVariant.LINEAR_ONLY)
        if self.kind == PolicyKind.QUADRATIC_TOLERANCE:
            return CostModel(1.0, self.lam, PaddingMode.UNPADDED, CostVariant.TRANSFORMER_QUADRATIC)
        return CostModel(1.0, self.lam, PaddingMode.UNPADDED, CostVariant.CONV_TRANSFORMER_PADDED)


@dataclass(frozen=True)
class BalanceResult:
    rearrangement: Rearrangement
    new_batches: list[MiniBatch]
    objective_value: float
    cost_model: CostModel
    bound: int | None = None
    fell_back: bool = False


def origin_slots(d: int, items: Sequence[SeqItem]) -> list[tuple[int, int]]:
    counts = [0] * d
    slots = []
    for it in items:
        if not 0 <= it.origin_instance < d:
            raise ContractError(f"origin_instance {it.origin_instance} outside [0, {d})")
        slots.append((it.origin_instance, counts[it.origin_instance]))
        counts[it.origin_instance] += 1
    return slots


def _check_d(d: int):
    if d < 1:
        raise ContractError(f"instance count must be >= 1, got {d}")


def _build(d, items, groups, model, bound=None, fell_back=False) -> BalanceResult:
    slots = origin_slots(d, items)
    moves = {}
    batches = []
    for i, group in enumerate(groups):
        for j, k in enumerate(group):
            moves[slots[k]] = (i, j)
        batches.append(MiniBatch(i, tuple(items[k] for k in group), model.padding_mode))
    objective = max((model.of_lengths(b.lengths) for b in batches), default=0.0)
    return BalanceResult(Rearrangement(d, moves), batches, objective, model, bound, fell_back)


def identity_result(d: int, items: Sequence[SeqItem], model: CostModel) -> BalanceResult:
    groups: list[list[int]] = [[] for _ in range(d)]
    for k, it in enumerate(items):
        groups[it.origin_instance].append(k)
    return _build(d, items, groups, model)


def _guarded(d, items, result: BalanceResult, guard: bool) -> BalanceResult:
    if not guard:
        return result
    ident = identity_result(d, items, result.cost_model)
    if ident.objective_value < result.objective_value:
        return BalanceResult(ident.rearrangement, ident.new_batches, ident.objective_value,
                             ident.cost_model, result.bound, fell_back=True)
    return result


def _descending(items: Sequence[SeqItem]) -> list[int]:
    return sorted(range(len(items)), key=lambda k: -items[k].length)


def greedy_groups(d: int, items: Sequence[SeqItem]) -> list[list[int]]:
    """Longest-first list scheduling onto the batch with the smallest length sum
    (ties go to the lowest instance index)."""
    heap = [(0, i) for i in range(d)]
    groups: list[list[int]] = [[] for _ in range(d)]
    for k in _descending(items):
        total, i = heapq.heappop(heap)
        groups[i].append(k)
        heapq.heappush(heap, (total + items[k].length, i))
    return groups


def balance_greedy_unpadded(d: int, items: Sequence[SeqItem], *, guard: bool = True) -> BalanceResult:
    _check_d(d)
    model = BalancePolicy(PolicyKind.GREEDY_UNPADDED).objective_model()
    return _guarded(d, items, _build(d, items, greedy_groups(d, items), model), guard)


def get_least_batches(lengths: Sequence[int], bound: int) -> list[list[int]]:
    """Pack ascending-sorted ``lengths`` front to back, opening a new batch once
    ``(size + 1) * length`` would exceed ``bound``. Returns positions."""
    batches: list[list[int]] = [[]]
    for pos, length in enumerate(lengths):
        if (len(batches[-1]) + 1) * length > bound:
            batches.append([])
        batches[-1].append(pos)
    return batches


def padded_feasible(lengths: Sequence[int], d: int, bound: int) -> bool:
    """Whether ``get_least_batches`` fits ``lengths`` in at most ``d`` batches
    whose padded length stays within ``bound``."""
    ordered = sorted(lengths)
    if not ordered or bound < ordered[-1]:
        return False
    return len(get_least_batches(ordered, bound)) <= d


def balance_binary_padded(d: int, items: Sequence[SeqItem], *, guard: bool = True) -> BalanceResult:
    _check_d(d)
    if not items:
        raise ContractError("padded balancing needs at least one item")
    order = sorted(range(len(items)), key=lambda k: items[k].length)
    lengths = [items[k].length for k in order]
    n = len(lengths)
    left = lengths[-1]
    # floor(n/d) + 1 >= ceil(n/d) items fit per batch, so ``right`` is feasible
    right = lengths[-1] * (n // d + 1)
    while left < right:
        mid = (left + right) // 2
        if len(get_least_batches(lengths, mid)) <= d:
            right = mid
        else:
            left = mid + 1
    packed = get_least_batches(lengths, left)
    groups = [[order[p] for p in batch] for batch in packed]
    groups += [[] for _ in range(d - len(groups))]
    model = BalancePolicy(PolicyKind.BINARY_PADDED).objective_model()
    return _guarded(d, items, _build(d, items, groups, model, bound=left), guard)


def _tolerance_less(v: int):
    def less(a: tuple[int, int], b: tuple[int, int]) -> bool:
        if abs(a[0] - b[0]) < v:
            return a[1] < b[1]
        return a[0] < b[0]
    return less


def balance_quadratic_tolerance(
    d: int, items: Sequence[SeqItem], lam: float = 0.0, tolerance_v: int = 0,
    *, guard: bool = True,
    less: Callable[[tuple[int, int], tuple[int, int]], bool] | None = None,
) -> BalanceResult:
    """Greedy longest-first placement where batches whose length sums differ by
    less than ``tolerance_v`` are ranked by their sum of squared lengths.

    The comparator is not transitive, so the target batch is found by a linear
    scan in instance order rather than a heap.
    """
    _check_d(d)
    policy = BalancePolicy(PolicyKind.QUADRATIC_TOLERANCE, tolerance_v, lam)
    less = _tolerance_less(tolerance_v) if less is None else less
    state = [(0, 0)] * d
    groups: list[list[int]] = [[] for _ in range(d)]
    for k in _descending(items):
        best = 0
        for i in range(1, d):
            if less(state[i], state[best]):
                best = i
        length = items[k].length
        groups[best].append(k)
        state[best] = (state[best][0] + length, state[best][1] + length * length)
    return _guarded(d, items, _build(d, items, groups, policy.objective_model()), guard)


def balance_convtransformer(d: int, items: Sequence[SeqItem], lam: float = 0.0,
                            *, guard: bool = True) -> BalanceResult:
    """Balancer for encoders whose attention runs padded while the rest of the
    network runs on the packed sequence.

    Longest-first items are first grouped into at most ``d`` similar-length
    batches whose padded length stays under the greedy max-sum bound; whatever
    does not fit is then spread by smallest length sum.
    """
    _check_d(d)
    if not items:
        raise ContractError("ConvTransformer balancing needs at least one item")
    greedy = greedy_groups(d, items)
    bound = max(sum(items[k].length for k in g) for g in greedy)

    order = _descending(items)
    seeded: list[list[int]] = [[]]
    rest_from = len(order)
    for pos, k in enumerate(order):
        current = seeded[-1]
        head = items[current[0]].length if current else items[k].length
        if (len(current) + 1) * head > bound:
            if len(seeded) >= d:
                rest_from = pos
                break
            seeded.append([])
        seeded[-1].append(k)
    seeded += [[] for _ in range(d - len(seeded))]

    heap = [(sum(items[k].length for k in g), i) for i, g in enumerate(seeded)]
    heapq.heapify(heap)
    for k in order[rest_from:]:
        total, i = heapq.heappop(heap)
        seeded[i].append(k)
        heapq.heappush(heap, (total + items[k].length, i))

    model = BalancePolicy(PolicyKind.CONV_TRANSFORMER, lam=lam).objective_model()
    return _guarded(d, items, _build(d, items, seeded, model, bound=bound), guard)


def balance(policy: BalancePolicy, d: int, items: Sequence[SeqItem], *,
            guard: bool = True) -> BalanceResult:
    """Dispatch to the balancer selected by ``policy``."""
    kind = policy.kind
    if kind == PolicyKind.GREEDY_UNPADDED:
        return balance_greedy_unpadded(d, items, guard=guard)
    if kind == PolicyKind.BINARY_PADDED:
        return balance_binary_padded(d, items, guard=guard)
    if kind == PolicyKind.QUADRATIC_TOLERANCE:
        return balance_quadratic_tolerance(d, items, policy.lam, policy.tolerance_v, guard=guard)
    return balance_convtransformer(d, items, policy.lam, guard=guard)
