"""Randomised checks of the balancers, node-wise hosting and delivery
composition against independent oracles.

Each check returns a :class:`CheckResult`; a violation carries enough of the
instance to replay it by hand.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .balancers import (
    BalancePolicy,
    PolicyKind,
    balance_binary_padded,
    balance_greedy_unpadded,
    balance_quadratic_tolerance,
    padded_feasible,
)
from .core import MiniBatch, Rearrangement, SeqItem, apply
from .exchange import compose, inverse
from .oracle import oracle_optimal
from .topology import ClusterTopology, exhaustive_hosting, nodewise_rearrange

log = logging.getLogger(__name__)

APPROX_RATIO = Fraction(4, 3)

# Test hook: a comparator that always prefers the *heavier* batch.
FAULTY_COMPARATORS: dict[str, Callable] = {
    "reversed": lambda a, b: a[0] > b[0],
}


@dataclass
class CheckResult:
    name: str
    trials: int
    violations: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ok"] = self.ok
        return out


@dataclass
class VerifyReport:
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": [c.to_dict() for c in self.checks]}


def _vacuous(result: CheckResult) -> CheckResult:
    msg = f"{result.name}: 0 trials requested, check passes vacuously"
    log.warning(msg)
    result.warnings.append(msg)
    return result


def _items(lengths: Sequence[int], d: int) -> list[SeqItem]:
    return [SeqItem(k, "x", int(x), k % d) for k, x in enumerate(lengths)]


def _greedy_objective(d: int, lengths: Sequence[int], fault: str | None) -> int:
    items = _items(lengths, d)
    if fault is None:
        res = balance_greedy_unpadded(d, items, guard=False)
    else:
        res = balance_quadratic_tolerance(d, items, guard=False, less=FAULTY_COMPARATORS[fault])
    return max(sum(b.lengths) for b in res.new_batches)


def _approx_case(d: int, lengths: list[int], fault: str | None) -> dict | None:
    model = BalancePolicy(PolicyKind.GREEDY_UNPADDED).objective_model()
    got = _greedy_objective(d, lengths, fault)
    _, opt = oracle_optimal(d, lengths, model)
    if got > APPROX_RATIO * Fraction(int(opt)):
        return {"d": d, "lengths": lengths, "greedy": got, "optimum": int(opt)}
    return None


def small_multisets(max_n: int, max_len: int):
    """Every non-empty multiset of lengths in ``[1, max_len]`` with at most
    ``max_n`` elements, longest first."""
    for n in range(1, max_n + 1):
        for combo in itertools.combinations_with_replacement(range(max_len, 0, -1), n):
            yield list(combo)


def check_approximation(trials: int, seed: int = 0, *, max_items: int = 12,
                        max_len: int = 50, instances: Sequence[int] = (2, 3, 4),
                        exhaustive_n: int = 0, exhaustive_len: int = 6,
                        fault: str | None = None) -> CheckResult:
    """Greedy unpadded max-sum is within 4/3 of the optimum."""
    result = CheckResult("approximation_bound", 0)
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        d = int(rng.choice(instances))
        n = int(rng.integers(1, max_items + 1))
        lengths = [int(x) for x in rng.integers(1, max_len + 1, size=n)]
        result.trials += 1
        bad = _approx_case(d, lengths, fault)
        if bad:
            result.violations.append(bad)
    if exhaustive_n:
        for lengths in small_multisets(exhaustive_n, exhaustive_len):
            for d in instances:
                result.trials += 1
                bad = _approx_case(d, lengths, fault)
                if bad:
                    result.violations.append(bad)
    return result if result.trials else _vacuous(result)


def check_padded_minimality(trials: int, seed: int = 0, *, max_items: int = 10,
                            max_len: int = 50, max_instances: int = 3) -> CheckResult:
    """Binary-search bound is feasible, one less is not, and the packing
    matches the exhaustive optimum of the max padded batch length."""
    result = CheckResult("padded_minimality", 0)
    rng = np.random.default_rng(seed)
    model = BalancePolicy(PolicyKind.BINARY_PADDED).objective_model()
    for _ in range(trials):
        d = int(rng.integers(1, max_instances + 1))
        n = int(rng.integers(1, max_items + 1))
        lengths = [int(x) for x in rng.integers(1, max_len + 1, size=n)]
        result.trials += 1
        res = balance_binary_padded(d, _items(lengths, d), guard=False)
        got = max(len(b.items) * max(b.lengths, default=0) for b in res.new_batches)
        _, opt = oracle_optimal(d, lengths, model)
        problems = []
        if not padded_feasible(lengths, d, res.bound):
            problems.append("bound infeasible")
        if res.bound > 1 and padded_feasible(lengths, d, res.bound - 1):
            problems.append("bound - 1 feasible")
        if got > res.bound:
            problems.append("packing exceeds bound")
        if got > APPROX_RATIO * Fraction(int(opt)):
            problems.append("packing beyond 4/3 of optimum")
        if problems:
            result.violations.append({"d": d, "lengths": lengths, "bound": res.bound,
                                      "packed": got, "optimum": int(opt), "problems": problems})
    return result if result.trials else _vacuous(result)


def _topologies(max_d: int) -> list[tuple[int, int]]:
    return [(d, c) for d in range(2, max_d + 1) for c in range(1, d) if d % c == 0]


def check_nodewise_optimality(trials: int, seed: int = 0, *, max_d: int = 8,
                              max_volume: int = 100, granularity: str = "node") -> CheckResult:
    """Program-based hosting matches exhaustive search and never beats the
    identity hosting in the wrong direction."""
    result = CheckResult("nodewise_optimality", 0)
    rng = np.random.default_rng(seed)
    shapes = _topologies(max_d)
    for _ in range(trials):
        d, c = shapes[int(rng.integers(len(shapes)))]
        topo = ClusterTopology(d, c)
        V = rng.integers(0, max_volume + 1, size=(d, d))
        V[rng.random((d, d)) < 0.3] = 0
        result.trials += 1
        nw = nodewise_rearrange(None, Rearrangement.identity([1] * d, d), topo, V=V,
                                granularity=granularity)
        _, best = exhaustive_hosting(V, topo, granularity)
        if nw.max_egress != best or nw.max_egress > nw.baseline_max_egress:
            result.violations.append({"d": d, "c": c, "V": V.tolist(), "solver": nw.max_egress,
                                      "exhaustive": best, "baseline": nw.baseline_max_egress})
    return result if result.trials else _vacuous(result)


def random_rearrangement(rng: np.random.Generator, sizes: Sequence[int], d: int) -> Rearrangement:
    """Uniformly shuffled bijection from the slots described by ``sizes`` onto
    ``d`` contiguous destination batches of random sizes."""
    slots = [(i, j) for i, s in enumerate(sizes) for j in range(s)]
    order = rng.permutation(len(slots))
    counts = rng.multinomial(len(slots), [1.0 / d] * d) if slots else [0] * d
    moves = {}
    pos = 0
    for dst, count in enumerate(counts):
        for j in range(int(count)):
            moves[slots[order[pos]]] = (dst, j)
            pos += 1
    return Rearrangement(d, moves)


def _placement(batches: Sequence[MiniBatch]) -> list[tuple]:
    return [tuple(it.key for it in b.items) for b in batches]


def check_composition(trials: int, seed: int = 0, *, max_d: int = 6,
                      max_items: int = 24) -> CheckResult:
    """A single exchange under ``compose(pi_m, pi_e)`` lands every item where
    resetting and then applying ``pi_m`` would, in half the exchanges."""
    result = CheckResult("composition_equivalence", 0)
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        d = int(rng.integers(1, max_d + 1))
        n = int(rng.integers(0, max_items + 1))
        origin_of = rng.integers(0, d, size=n)
        items = [SeqItem(k, "x", int(rng.integers(1, 100)), int(o)) for k, o in enumerate(origin_of)]
        origin = [MiniBatch(i, tuple(it for it in items if it.origin_instance == i)) for i in range(d)]
        sizes = [len(b) for b in origin]
        pi_e = random_rearrangement(rng, sizes, d)
        pi_m = random_rearrangement(rng, sizes, d)
        located = apply(pi_e, origin)
        composed = apply(compose(pi_m, pi_e), located)
        reference = apply(pi_m, apply(inverse(pi_e), located))
        result.trials += 1
        composed_exchanges, reference_exchanges = 1, 2
        if _placement(composed) != _placement(reference) or 2 * composed_exchanges != reference_exchanges:
            result.violations.append({"d": d, "sizes": sizes,
                                      "pi_e": sorted(pi_e.moves.items()),
                                      "pi_m": sorted(pi_m.moves.items())})
    return result if result.trials else _vacuous(result)


def run_all(*, trials: int = 300, max_items: int = 10, padded_trials: int = 300,
            nodewise_trials: int = 100, composition_trials: int = 100,
            exhaustive_n: int = 0, seed: int = 0, fault: str | None = None) -> VerifyReport:
    checks = [
        check_approximation(trials, seed, max_items=max_items, exhaustive_n=exhaustive_n, fault=fault),
        check_padded_minimality(padded_trials, seed, max_items=max_items),
        check_nodewise_optimality(nodewise_trials, seed),
        check_composition(composition_trials, seed),
    ]
    for c in checks:
        log.info("%s: %d trials, %d violations", c.name, c.trials, len(c.violations))
    return VerifyReport(checks)
