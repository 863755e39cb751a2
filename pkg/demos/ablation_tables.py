"""Turn ``summary.csv`` files from several ``orchsim simulate`` runs into
plain-text comparison tables.

    python demos/ablation_tables.py full=out/full no_balance=out/none ...

Each argument is ``label=DIR``; ``DIR/summary.csv`` is read. With ``--run``
the default ablation grid is simulated first into ``out/ablations``.
"""

import csv
import sys
from collections import defaultdict
from pathlib import Path

GRID = {
    "full": [],
    "no_balance": ["--no-balance"],
    "llm_only_balance": ["--llm-only-balance"],
    "all_pad": ["--all-pad"],
    "all_rmpad": ["--all-rmpad"],
    "disable_nodewise": ["--disable-nodewise"],
    "allgather": ["--allgather-communicator"],
}


def read(path):
    rows = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows[row["phase"]].append(row)
    return rows


def mean(rows, key):
    return sum(float(r[key]) for r in rows) / len(rows)


def table(title, header, body):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    print(title)
    for line in [header] + body:
        print("  ".join(str(x).rjust(w) for x, w in zip(line, widths)))
    print()


def main(args):
    if args and args[0] == "--run":
        from orchsim.cli import main as cli
        root = Path("out/ablations")
        for label, flags in GRID.items():
            cli(["simulate", "--out", str(root / label), *flags])
        args = [f"{label}={root / label}" for label in GRID]
    runs = {}
    for arg in args:
        label, _, folder = arg.partition("=")
        runs[label] = read(Path(folder) / "summary.csv")
    phases = list(next(iter(runs.values())))

    table("imbalance ratio (max / mean cost) after balancing",
          ["run"] + phases,
          [[label] + [f"{mean(r[p], 'post_ratio'):.3f}" for p in phases] for label, r in runs.items()])

    table("summed per-phase max cost (lower is faster)",
          ["run", "total"] + phases,
          [[label, f"{sum(sum(float(x['post_max']) for x in r[p]) for p in phases):.0f}"]
           + [f"{sum(float(x['post_max']) for x in r[p]):.0f}" for p in phases]
           for label, r in runs.items()])

    table("max node egress, node-wise hosting vs. identity hosting",
          ["run"] + phases,
          [[label] + [f"{sum(float(x['max_egress']) for x in r[p]) / max(1.0, sum(float(x['baseline_max_egress']) for x in r[p])):.3f}"
                      for p in phases] for label, r in runs.items()])

    table("modelled exchange time",
          ["run"] + phases,
          [[label] + [f"{sum(float(x['exchange_time']) for x in r[p]):.0f}" for p in phases]
           for label, r in runs.items()])


if __name__ == "__main__":
    main(sys.argv[1:] or ["--run"])
