"""Trace figures for one scenario: velocity with reference per robot, and the
target acceleration of all four variants aligned at the first detection.

    python3 scripts/make_figures.py scripts/configs/push_catfood.json [--out runs/figures]
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from tirs import harness, plots
from tirs.controller import VARIANTS
from tirs.scenarios import ScenarioConfig

log = logging.getLogger("make_figures")


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("scenario")
    p.add_argument("--out", default="runs/figures")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    base = ScenarioConfig.load(args.scenario)
    out = Path(args.out) / Path(args.scenario).stem
    logs = {}
    for variant in VARIANTS:
        rl = harness.run_rollout(dataclasses.replace(base, variant=variant))
        logs[variant] = rl
        log.info("%-14s max target accel %.3f, modes %s", variant, rl.max_target_accel(), "/".join(rl.mode_sequence()))
        for i in range(rl.q.shape[1]):
            plots.write_svg(plots.velocity_svg(rl, robot=i, title=f"{variant}: robot {i + 1} velocity"),
                            out / f"velocity_{variant}_robot{i + 1}.svg")
    plots.write_svg(plots.target_accel_svg(logs, title=f"{base.kind}: target acceleration"), out / "target_accel.svg")
    log.info("figures written to %s", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
