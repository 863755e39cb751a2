"""``orchsim`` command line: generate traces, simulate runs, verify the
algorithms against their oracles.

Exit codes: 0 success, 2 configuration error, 3 verification failure,
4 I/O error (including malformed trace files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import verify
from .config import RunConfig, Switches, VerifyCaps, load_config
from .core import ConfigError, Example, OrchSimError
from .orchestrator import IterationTiming, overlap_schedule, run_iteration
from .workload import TraceParseError, generate, load_trace, save_trace

log = logging.getLogger("orchsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_IO = 4

SWITCH_FLAGS = [f.replace("_", "-") for f in Switches.__dataclass_fields__]

CSV_COLUMNS = [
    "iteration", "phase", "items", "pre_ratio", "post_ratio", "pre_max", "post_max",
    "baseline_max_egress", "max_egress", "exchange_time", "inter_volume", "peak_resident",
    "fell_back",
]


def _dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_examples(cfg: RunConfig) -> list[Example]:
    if cfg.trace is not None:
        return load_trace(cfg.trace, cfg.rates)
    gen = cfg.generation
    return generate(gen.profiles, gen.weights, gen.n, cfg.seed, cfg.rates)


def cmd_generate(cfg: RunConfig, out: Path) -> Path:
    if cfg.generation is None:
        raise ConfigError("generate needs generation profiles, not a trace path")
    examples = load_examples(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trace.jsonl"
    save_trace(examples, path)
    return path


def _iteration_count(cfg: RunConfig, n: int) -> int:
    if cfg.iterations is not None:
        return cfg.iterations
    return max(1, n // cfg.global_batch)


def simulate(cfg: RunConfig, examples: Sequence[Example]) -> dict:
    """Run the configured iterations and build the report dictionary."""
    gb = cfg.global_batch
    count = _iteration_count(cfg, len(examples))
    if (count - 1) * gb >= len(examples):
        raise ConfigError(f"{count} iterations need more than the {len(examples)} examples available")
    phases = cfg.effective_phases()
    opts = cfg.options()
    reports = []
    for t in range(count):
        batch = examples[t * gb:(t + 1) * gb]
        log.info("iteration %d: %d examples", t, len(batch))
        reports.append(run_iteration(batch, phases, cfg.topology, opts))

    # the dispatcher solves iteration t + 1 while iteration t runs forward
    timeline = [
        IterationTiming(r.timing.phase_compute, r.timing.phase_exchange,
                        reports[t + 1].timing.prefetch_solver if t + 1 < count else 0.0)
        for t, r in enumerate(reports)
    ]
    overlap = overlap_schedule(timeline)

    iterations = []
    for t, r in enumerate(reports):
        entry = r.to_dict()
        entry["iteration"] = t
        entry["overlap_ok"] = overlap.excess[t] == 0.0
        iterations.append(entry)

    names = [p["name"] for p in iterations[0]["per_phase"]]
    per_phase = {}
    for name in names:
        recs = [p for it in iterations for p in it["per_phase"] if p["name"] == name]
        per_phase[name] = {
            "mean_pre_ratio": sum(p["pre_ratio"] for p in recs) / len(recs),
            "mean_post_ratio": sum(p["post_ratio"] for p in recs) / len(recs),
            "max_post_ratio": max(p["post_ratio"] for p in recs),
            "sum_post_max": sum(p["post_max"] for p in recs),
            "sum_baseline_max_egress": sum(p["baseline_max_egress"] for p in recs),
            "sum_max_egress": sum(p["max_egress"] for p in recs),
            "sum_exchange_time": sum(p["exchange"]["modeled_time"] for p in recs),
            "sum_inter_volume": sum(p["exchange"]["total_inter_volume"] for p in recs),
            "max_peak_resident": max(p["exchange"]["peak_resident"] for p in recs),
        }
    summary = {
        "iterations": count,
        "examples": min(len(examples), count * gb),
        "per_phase": per_phase,
        "summed_max_cost": sum(v["sum_post_max"] for v in per_phase.values()),
        "overlap_ok": overlap.ok,
        "multiset_ok": all(it["multiset_ok"] for it in iterations),
        "assembly_ok": all(it["assembly_ok"] for it in iterations),
    }
    return {"config": cfg.to_dict(), "iterations": iterations, "summary": summary}


def _csv_rows(report: dict):
    for it in report["iterations"]:
        for p in it["per_phase"]:
            ex = p["exchange"]
            yield [it["iteration"], p["name"], p["items"], p["pre_ratio"], p["post_ratio"],
                   p["pre_max"], p["post_max"], p["baseline_max_egress"], p["max_egress"],
                   ex["modeled_time"], ex["total_inter_volume"], ex["peak_resident"],
                   int(p["balancer_fell_back"])]


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    report = simulate(cfg, load_examples(cfg))
    out.mkdir(parents=True, exist_ok=True)
    _dump(report, out / "report.json")
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(_csv_rows(report))
    return report


def cmd_verify(cfg: RunConfig, out: Path | None = None, fault: str | None = None) -> verify.VerifyReport:
    caps = cfg.verify
    result = verify.run_all(trials=caps.trials, max_items=caps.max_items,
                            padded_trials=caps.padded_trials, nodewise_trials=caps.nodewise_trials,
                            composition_trials=caps.composition_trials,
                            exhaustive_n=caps.exhaustive_n, seed=cfg.seed, fault=fault)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _dump(result.to_dict(), out / "verify.json")
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orchsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "simulate", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--trace", type=Path, help="trace file (replaces generation profiles)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--iterations", type=int)
        pad = p.add_mutually_exclusive_group()
        pad.add_argument("--all-pad", action="store_true", default=None)
        pad.add_argument("--all-rmpad", action="store_true", default=None)
        for flag in SWITCH_FLAGS:
            if flag not in ("all-pad", "all-rmpad"):
                p.add_argument(f"--{flag}", action="store_true", default=None)
        if name == "verify":
            p.add_argument("--trials", type=int, help="override every trial count")
            p.add_argument("--inject-fault", choices=sorted(verify.FAULTY_COMPARATORS),
                           help=argparse.SUPPRESS)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.trace is not None:
        changes.update(trace=str(args.trace), generation=None)
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    flips = {}
    for flag in SWITCH_FLAGS:
        value = getattr(args, flag.replace("-", "_"))
        if value:
            flips[flag.replace("-", "_")] = True
    if flips:
        merged = {**cfg.switches.__dict__, **flips}
        if flips.get("all_pad"):
            merged["all_rmpad"] = False
        if flips.get("all_rmpad"):
            merged["all_pad"] = False
        changes["switches"] = Switches(**merged)
    if getattr(args, "trials", None) is not None:
        t = args.trials
        changes["verify"] = VerifyCaps(t, cfg.verify.max_items, t, t, t, cfg.verify.exhaustive_n)
    return replace(cfg, **changes) if changes else cfg


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("ORCHSIM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            path = cmd_generate(cfg, args.out)
            print(f"wrote {path}")
        elif args.command == "simulate":
            report = cmd_simulate(cfg, args.out)
            s = report["summary"]
            for name, p in s["per_phase"].items():
                print(f"{name}: imbalance {p['mean_pre_ratio']:.3f} -> {p['mean_post_ratio']:.3f}")
            print(f"wrote {args.out / 'report.json'} and {args.out / 'summary.csv'}")
        else:
            result = cmd_verify(cfg, args.out, args.inject_fault)
            for c in result.checks:
                print(f"{'PASS' if c.ok else 'FAIL'} {c.name} ({c.trials} trials)")
                for w in c.warnings:
                    print(f"  warning: {w}")
            if not result.ok:
                for c in result.checks:
                    for v in c.violations[:3]:
                        print(f"counterexample {c.name}: {json.dumps(v)}", file=sys.stderr)
                return EXIT_VERIFY
    except TraceParseError as exc:
        print(f"error: trace: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OrchSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
