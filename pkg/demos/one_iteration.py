"""Walk one global batch through the encoder phases and the LLM phase."""

from orchsim import ClusterTopology, default_phases, default_profiles, generate, run_iteration
from orchsim.workload import composition_stats

examples = generate(default_profiles(), (0.5, 0.25, 0.25), n=256, seed=0)

stats = composition_stats(examples)
for m in sorted(stats.mean):
    print(f"{m:>6} share of interleaved length: mean {stats.mean[m]:.2f}, variance {stats.variance[m]:.3f}")
    print(f"{'':>6} histogram {stats.histogram[m].tolist()}")

topo = ClusterTopology(d=8, c=4)
report = run_iteration(examples, default_phases(), topo)
for p in report.per_phase:
    print(f"{p.name:>6}: {p.items:4d} items, imbalance {p.pre_ratio:.3f} -> {p.post_ratio:.3f}, "
          f"max node egress {p.baseline_max_egress} -> {p.max_egress}")
print("exchanges for encoder outputs:", report.composed_exchanges, "instead of", report.reference_exchanges)
print("every part delivered next to its example:", report.assembly_ok)
print("solver time", f"{report.timing.prefetch_solver:.2e}", "forward span", f"{report.timing.forward_span:.2e}")
