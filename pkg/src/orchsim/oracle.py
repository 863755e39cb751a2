"""Exhaustive min-max partition oracle for small instances.

Shares nothing with the balancers beyond the cost model, so it can be used to
check them.
"""

from __future__ import annotations

import math
from typing import Sequence

from .core import ContractError, CostModel, CostVariant, PaddingMode, SeqItem


class SizeCapError(ContractError):
    pass


def oracle_optimal(
    d: int,
    items: Sequence[SeqItem] | Sequence[int],
    cost_model: CostModel,
    *,
    max_items: int = 14,
    max_instances: int = 4,
) -> tuple[list[int], float]:
    """Return ``(assignment, optimum)`` where ``assignment[k]`` is the batch of
    input item ``k`` in one optimal partition into at most ``d`` batches.

    Depth-first search over assignments, longest items first. Batches are
    canonically ordered (an item may open at most one new batch, and batches
    with identical contents are tried once). Branches are cut as soon as one
    batch already costs at least the incumbent; this is sound because every
    cost variant is monotone in adding items.
    """
    lengths = [it.length if isinstance(it, SeqItem) else int(it) for it in items]
    n = len(lengths)
    if d < 1:
        raise ContractError("d must be >= 1")
    if n > max_items or d > max_instances:
        raise SizeCapError(
            f"oracle limited to n <= {max_items}, d <= {max_instances} (got n={n}, d={d})"
        )
    if n == 0:
        return [], 0.0

    order = sorted(range(n), key=lambda k: -lengths[k])
    seq = [lengths[k] for k in order]
    price = cost_model.of_lengths

    # Proven lower bound lets the search stop early once it is reached.
    lower = max(price([x]) for x in seq)
    if (cost_model.variant == CostVariant.LINEAR_ONLY
            and cost_model.padding_mode == PaddingMode.UNPADDED):
        lower = max(lower, cost_model.alpha * math.ceil(sum(seq) / d))

    batches: list[list[int]] = []
    costs: list[float] = []
    where = [0] * n
    best = [math.inf]
    best_where: list[int] = []

    def search(k: int, current: float) -> bool:
        if k == n:
            best[0] = current
            best_where[:] = where
            return current <= lower
        x = seq[k]
        tried = set()
        for j in range(len(batches)):
            sig = tuple(batches[j])
            if sig in tried:
                continue
            tried.add(sig)
            batches[j].append(x)
            c = price(batches[j])
            if c < best[0]:
                old = costs[j]
                costs[j] = c
                where[k] = j
                done = search(k + 1, max(current, c))
                costs[j] = old
                if done:
                    batches[j].pop()
                    return True
            batches[j].pop()
        if len(batches) < d:
            c = price([x])
            if c < best[0]:
                batches.append([x])
                costs.append(c)
                where[k] = len(batches) - 1
                done = search(k + 1, max(current, c))
                batches.pop()
                costs.pop()
                if done:
                    return True
        return False

    search(0, 0.0)
    assignment = [0] * n
    for pos, k in enumerate(order):
        assignment[k] = best_where[pos]
    return assignment, best[0]
