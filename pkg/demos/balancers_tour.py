"""Balance one small batch four ways and compare with the exhaustive optimum."""

from orchsim import (
    BalancePolicy,
    PolicyKind,
    SeqItem,
    balance,
    oracle_optimal,
)

d = 3
lengths = [41, 37, 30, 22, 19, 18, 12, 9, 7, 4]
# everything starts piled on the first two instances
items = [SeqItem(k, "x", x, origin_instance=k % 2) for k, x in enumerate(lengths)]

policies = [
    BalancePolicy(PolicyKind.GREEDY_UNPADDED),
    BalancePolicy(PolicyKind.BINARY_PADDED),
    BalancePolicy(PolicyKind.QUADRATIC_TOLERANCE, tolerance_v=10, lam=0.01),
    BalancePolicy(PolicyKind.CONV_TRANSFORMER, lam=0.01),
]

for policy in policies:
    res = balance(policy, d, items)
    _, best = oracle_optimal(d, lengths, res.cost_model)
    print(f"{policy.kind.value:>18}: objective {res.objective_value:8.2f}  optimum {best:8.2f}  "
          f"ratio {res.objective_value / best:.3f}")
    for b in res.new_batches:
        print(f"{'':>20}instance {b.instance}: {b.lengths}")

# which slot went where: (origin instance, slot) -> (destination instance, slot)
res = balance(policies[0], d, items)
for src, dst in sorted(res.rearrangement.moves.items()):
    print(src, "->", dst)
