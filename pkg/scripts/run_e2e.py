#!/usr/bin/env python3
"""Train and evaluate the learned policies on the synthetic diurnal trace.

    python3 scripts/run_e2e.py --seeds 0 1 2 --out runs/e2e

Writes rows/summary/CDF files per seed plus a ratios.json overview.
"""
import argparse
import json
from dataclasses import fields
from pathlib import Path

from mirage.experiments import DiurnalSetup, run_diurnal
from mirage.harness import emit_report


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/e2e")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a DiurnalSetup field, e.g. --set dqn_episodes=400")
    args = ap.parse_args()

    kinds = {f.name: type(getattr(DiurnalSetup(), f.name)) for f in fields(DiurnalSetup)}
    over = {}
    for item in args.set:
        key, _, raw = item.partition("=")
        if key not in kinds:
            ap.error(f"unknown setup field {key!r}")
        over[key] = json.loads(raw) if kinds[key] in (tuple, list, bool) else kinds[key](raw)
        if kinds[key] is tuple:
            over[key] = tuple(over[key])
    setup = DiurnalSetup(**over)

    out = Path(args.out)
    summary = {}
    for seed in args.seeds:
        res = run_diurnal(seed, setup, verbose=True)
        emit_report(res.pop("report"), out / f"seed{seed}")
        summary[seed] = {k: v for k, v in res.items() if k != "summary"}
    out.mkdir(parents=True, exist_ok=True)
    (out / "ratios.json").write_text(json.dumps(summary, indent=2) + "\n")
    for seed, r in summary.items():
        print(f"seed {seed}: dqn-moe {r['dqn-moe_ratio']:.3f}  pg {r['pg_ratio']:.3f}  avg {r['avg_ratio']:.3f}"
              f"  ({r['heavy_episodes']} heavy episodes, {r['seconds']:.0f}s)")


if __name__ == "__main__":
    main()
