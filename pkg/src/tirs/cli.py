"""Command-line entry point: ``tirs {gen-impact-map,rollout,ablation,plot}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 ordering check failed (``ablation --check``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import harness, plots
from .impact_map import ConditioningError, DatasetError, generate_dataset, grid_offsets
from .scenarios import LAYOUTS, ScenarioConfig, build_system, build_task

log = logging.getLogger("tirs")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "TIRS_OUTPUT_ROOT"


class ConfigError(Exception):
    pass


def _output_dir(arg: str | None, *parts: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")).joinpath(*parts)


def _load_scenario(path: str) -> ScenarioConfig:
    try:
        return ScenarioConfig.load(path)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _load_matrix(path: str) -> harness.AblationMatrix:
    try:
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ValueError("matrix file must hold a JSON object")
        return harness.AblationMatrix.from_dict(data)
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_gen_impact_map(args) -> int:
    cfg = _load_scenario(args.scenario)
    system = build_system(cfg.kind, cfg.object_name, cfg.robot_mass_scale)
    task = build_task(cfg.kind, system.obj, cfg.fields)
    if args.samples is not None:
        try:
            grid_offsets(task.n_robots, args.samples, 0.1)
        except ValueError as exc:
            raise ConfigError(f"--samples {args.samples}: {exc}") from exc
    try:
        data = generate_dataset(system, task, args.samples, guesses=LAYOUTS[cfg.kind].elbow_guess,
                                meta={"kind": cfg.kind, "object": cfg.object_name})
        data.predictor()
    except (DatasetError, ConditioningError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    out = Path(args.out) if args.out else _output_dir(None, "maps", f"{cfg.kind}_{cfg.object_name}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save(out)
    log.info("wrote %d samples to %s", len(data.samples), out)
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = _load_scenario(args.scenario)
    rl = harness.run_rollout(cfg)
    out = _output_dir(args.out, "rollouts", cfg.digest())
    harness.write_rollout(rl, out)
    if rl.first_detection_step is not None:
        plots.write_svg(plots.velocity_svg(rl), out / "velocity.svg")
        plots.write_svg(plots.target_accel_svg({cfg.variant: rl}), out / "target_accel.svg")
    log.info("rollout %s: max target accel %.3f, modes %s -> %s",
             cfg.variant, rl.max_target_accel(), "/".join(rl.mode_sequence()), out)
    if rl.failed:
        log.error("rollout failed at step %s: %s", rl.failure_step, rl.failure)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_ablation(args) -> int:
    matrix = _load_matrix(args.matrix)
    t0 = time.perf_counter()
    summary = harness.run_ablation(matrix, jobs=args.jobs)
    out = _output_dir(args.out, "ablation", matrix.kind)
    summary.write(out)
    for g in harness.GROUPINGS:
        plots.write_svg(plots.bar_chart_svg(summary.tables[g], title=f"{matrix.kind}: by {g}"), out / f"by_{g.replace('_m', '')}.svg")
    log.info("%d rollouts in %.1f s -> %s", len(summary.rollouts), time.perf_counter() - t0, out)
    for v, m in summary.overall().items():
        log.info("  %-14s %.3f", v, m)
    if summary.failed_cells:
        log.error("failed cells: %s", summary.failed_cells)
    if args.check:
        report = harness.ordering_report(summary.tables)
        for name, ok, detail in report:
            log.info("%s %s (%s)", "PASS" if ok else "FAIL", name, detail)
        if not all(ok for _, ok, _ in report):
            return EXIT_CHECK
    return EXIT_RUNTIME if summary.failed_cells else EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.input)
    out = _output_dir(args.out, "plots", src.name)
    if (src / "rollout.json").exists():
        rl = harness.load_rollout(src)
        plots.write_svg(plots.velocity_svg(rl), out / "velocity.svg")
        plots.write_svg(plots.target_accel_svg({rl.config.variant: rl}), out / "target_accel.svg")
    else:
        found = sorted(src.glob("by_*.csv"))
        if not found:
            raise ConfigError(f"{src} holds neither a rollout nor ablation tables")
        for path in found:
            plots.write_svg(plots.bar_chart_svg(harness.read_aggregate(path), title=path.stem), out / f"{path.stem}.svg")
    log.info("plots written to %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tirs", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-impact-map", help="sample the impact map for a scenario")
    g.add_argument("scenario")
    g.add_argument("--samples", type=int, default=None)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_impact_map)

    r = sub.add_parser("rollout", help="simulate one scenario")
    r.add_argument("scenario")
    r.add_argument("--out")
    r.set_defaults(func=cmd_rollout)

    a = sub.add_parser("ablation", help="run a variant x object x displacement x seed matrix")
    a.add_argument("matrix")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out")
    a.add_argument("--check", action="store_true", help="exit 3 unless the ordering holds")
    a.set_defaults(func=cmd_ablation)

    pl = sub.add_parser("plot", help="render SVGs from a rollout or ablation directory")
    pl.add_argument("input")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError) as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
