"""Run the push and grab ablation matrices and print the ordering checks.

    python3 scripts/run_ablation.py [--kind hit_and_push|dual_arm_grab|both] [--seeds 5] [--jobs 1] [--out runs/ablation]
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from tirs import harness, plots
from tirs.task import DUAL_ARM_GRAB, HIT_AND_PUSH

log = logging.getLogger("run_ablation")


def run(kind: str, seeds: int, jobs: int, out: Path) -> bool:
    t0 = time.perf_counter()
    summary = harness.run_ablation(harness.AblationMatrix(kind=kind, seeds=seeds), jobs=jobs)
    elapsed = time.perf_counter() - t0
    summary.write(out / kind)
    for g in harness.GROUPINGS:
        svg = plots.bar_chart_svg(summary.tables[g], title=f"{kind}: by {g}")
        plots.write_svg(svg, out / kind / f"by_{g.replace('_m', '')}.svg")
    log.info("%s: %d rollouts in %.1f s, failed cells %s", kind, len(summary.rollouts), elapsed, summary.failed_cells)
    for v, m in summary.overall().items():
        log.info("  %-14s %.3f", v, m)
    report = harness.ordering_report(summary.tables)
    for name, ok, detail in report:
        log.info("  %s %s (%s)", "PASS" if ok else "FAIL", name, detail)
    return all(ok for _, ok, _ in report) and not summary.failed_cells


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--kind", choices=[HIT_AND_PUSH, DUAL_ARM_GRAB, "both"], default="both")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs/ablation")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    kinds = [HIT_AND_PUSH, DUAL_ARM_GRAB] if args.kind == "both" else [args.kind]
    ok = all([run(k, args.seeds, args.jobs, Path(args.out)) for k in kinds])
    return 0 if ok else 3


if __name__ == "__main__":
    sys.exit(main())
