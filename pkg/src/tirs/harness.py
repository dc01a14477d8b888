"""Rollouts, the four-way ablation batch and CSV output."""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .controller import INTERIM, POST, VARIANTS, RSController
from .dynamics import ContactSolverError, arm_terms, box_contact, step
from .impact_map import ImpactDataset, generate_dataset
from .scenarios import (
    DISPLACEMENTS, INIT_IDS, LAYOUTS, OBJECT_MASSES, Scenario, ScenarioConfig, build_scenario, build_system,
    build_task,
)

# initial transient excluded from the peak metric (rollouts start at rest, off the field)
SETTLE_TIME = 0.3
MODE_CODES = {"ante": 0, "interim": 1, "post": 2}
# a closed contact: the speculative step leaves the gap at about 1e-8 m
CONTACT_GAP = 1e-6

STEP_COLUMNS_DOC = """\
Per-step log columns:
  time_s, mode (0 ante / 1 interim / 2 post), target_accel_norm,
  per robot i: q{i}_{k}_rad, dq{i}_{k}_rad_s, tau{i}_{k}_Nm, ee{i}_x_m, ee{i}_y_m, ee{i}_theta_rad,
               ee{i}_vx_m_s, ee{i}_vy_m_s, ee{i}_omega_rad_s, ref{i}_vx_m_s, ref{i}_vy_m_s, ref{i}_omega_rad_s,
               gap{i}_m
  obj_x_m, obj_y_m, obj_theta_rad, obj_vx_m_s, obj_vy_m_s, obj_omega_rad_s
"""


@dataclass
class RolloutLog:
    config: ScenarioConfig
    time: np.ndarray
    mode: np.ndarray
    target_accel: np.ndarray      # (N, 3 * robots)
    q: np.ndarray                 # (N, robots, n)
    dq: np.ndarray
    tau: np.ndarray
    ee_pose: np.ndarray           # (N, robots, 3)
    ee_twist: np.ndarray
    ref_twist: np.ndarray
    gap: np.ndarray               # (N, robots)
    obj_pose: np.ndarray          # (N, 3)
    obj_twist: np.ndarray
    qp_ok: np.ndarray
    flag_step: list = field(default_factory=list)
    report_step: list = field(default_factory=list)
    contact_step: list = field(default_factory=list)
    switch_step: int | None = None
    post_step: int | None = None
    p_o_plus: np.ndarray | None = None
    v_o_est_plus: np.ndarray | None = None
    failed: bool = False
    failure_step: int | None = None
    failure: str = ""
    dt: float = 0.001

    def __len__(self) -> int:
        return len(self.time)

    @property
    def target_norm(self) -> np.ndarray:
        return np.linalg.norm(self.target_accel, axis=1)

    def max_target_accel(self, settle: float = SETTLE_TIME) -> float:
        keep = self.time >= settle - 1e-12
        return float(self.target_norm[keep].max()) if keep.any() else float("nan")

    @property
    def first_detection_step(self) -> int | None:
        steps = [s for s in self.report_step if s is not None]
        return min(steps) if steps else None

    def mode_sequence(self) -> list[str]:
        names = {v: k for k, v in MODE_CODES.items()}
        seq = []
        for m in self.mode:
            if not seq or seq[-1] != names[int(m)]:
                seq.append(names[int(m)])
        return seq

    def step_rows(self) -> tuple[list[str], list[list[float]]]:
        R, n = self.q.shape[1], self.q.shape[2]
        header = ["time_s", "mode", "target_accel_norm"]
        for i in range(R):
            header += [f"q{i + 1}_{k + 1}_rad" for k in range(n)]
            header += [f"dq{i + 1}_{k + 1}_rad_s" for k in range(n)]
            header += [f"tau{i + 1}_{k + 1}_Nm" for k in range(n)]
            header += [f"ee{i + 1}_{c}" for c in ("x_m", "y_m", "theta_rad", "vx_m_s", "vy_m_s", "omega_rad_s")]
            header += [f"ref{i + 1}_{c}" for c in ("vx_m_s", "vy_m_s", "omega_rad_s")]
            header += [f"gap{i + 1}_m"]
        header += ["obj_x_m", "obj_y_m", "obj_theta_rad", "obj_vx_m_s", "obj_vy_m_s", "obj_omega_rad_s"]
        norms = self.target_norm
        rows = []
        for k in range(len(self.time)):
            row = [self.time[k], int(self.mode[k]), norms[k]]
            for i in range(R):
                row += list(self.q[k, i]) + list(self.dq[k, i]) + list(self.tau[k, i])
                row += list(self.ee_pose[k, i]) + list(self.ee_twist[k, i]) + list(self.ref_twist[k, i])
                row.append(self.gap[k, i])
            row += list(self.obj_pose[k]) + list(self.obj_twist[k])
            rows.append(row)
        return header, rows

    def to_csv(self) -> str:
        header, rows = self.step_rows()
        return _csv_text(header, rows)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


@lru_cache(maxsize=16)
def _cached_dataset(kind: str, object_name: str, mass_scale: float, fields_json: str) -> ImpactDataset:
    import json
    system = build_system(kind, object_name, mass_scale)
    task = build_task(kind, system.obj, json.loads(fields_json))
    return generate_dataset(system, task, guesses=LAYOUTS[kind].elbow_guess,
                            meta={"kind": kind, "object": object_name})


def impact_dataset_for(config: ScenarioConfig) -> ImpactDataset:
    """The impact map a rollout uses: from file if given, otherwise generated (and cached)."""
    if config.impact_map_path:
        return ImpactDataset.load(config.impact_map_path)
    return _cached_dataset(*config.map_key())


def run_rollout(config: ScenarioConfig, dataset: ImpactDataset | None = None) -> RolloutLog:
    """Closed-loop simulation of one scenario; failures are recorded, not raised."""
    sc = build_scenario(config)
    predictor = None
    if sc.controller.variant in ("proposed", "no_interim"):
        predictor = (dataset or impact_dataset_for(config)).predictor()
    ctl = RSController(sc.controller_robots, sc.task, sc.controller, predictor)
    return _simulate(sc, ctl)


def _simulate(sc: Scenario, ctl: RSController) -> RolloutLog:
    dt = sc.controller.dt
    n_steps = int(round(sc.config.duration_s / dt))
    system = sc.system
    R = len(system.robots)
    n = system.robots[0].n_links
    buf = {
        "time": np.zeros(n_steps), "mode": np.zeros(n_steps, dtype=int),
        "target_accel": np.zeros((n_steps, 3 * R)),
        "q": np.zeros((n_steps, R, n)), "dq": np.zeros((n_steps, R, n)), "tau": np.zeros((n_steps, R, n)),
        "ee_pose": np.zeros((n_steps, R, 3)), "ee_twist": np.zeros((n_steps, R, 3)),
        "ref_twist": np.zeros((n_steps, R, 3)), "gap": np.zeros((n_steps, R)),
        "obj_pose": np.zeros((n_steps, 3)), "obj_twist": np.zeros((n_steps, 3)),
        "qp_ok": np.zeros(n_steps, dtype=bool),
    }
    contact_step = [None] * R
    world = sc.world0
    failed, failure_step, failure = False, None, ""
    k_done = n_steps
    for k in range(n_steps):
        try:
            out = ctl.step(world.q, world.dq)
        except Exception as exc:  # controller failures end the rollout but keep the log
            failed, failure_step, failure, k_done = True, k, f"controller: {exc}", k
            break
        buf["time"][k] = k * dt
        buf["mode"][k] = MODE_CODES[out.mode]
        buf["target_accel"][k] = out.target_accel
        buf["qp_ok"][k] = out.qp_status == "optimal"
        buf["obj_pose"][k] = world.obj_pose
        buf["obj_twist"][k] = world.obj_twist
        for i, model in enumerate(system.robots):
            t = arm_terms(model, world.q[i], world.dq[i])
            buf["q"][k, i] = world.q[i]
            buf["dq"][k, i] = world.dq[i]
            buf["tau"][k, i] = out.torques[i]
            buf["ee_pose"][k, i] = (t.p[0], t.p[1], t.theta)
            buf["ee_twist"][k, i] = t.J @ world.dq[i]
            buf["ref_twist"][k, i] = out.ref_twists[i]
            gap = box_contact(t.p, model.ee_radius, world.obj_pose, system.obj.half_extents)[2]
            buf["gap"][k, i] = gap
            if contact_step[i] is None and gap <= CONTACT_GAP:
                contact_step[i] = k
        try:
            world = step(world, system, out.torques, dt)
        except ContactSolverError as exc:
            failed, failure_step, failure, k_done = True, k, f"contact solver: {exc}", k + 1
            break
    if k_done < n_steps:
        buf = {key: v[:k_done] for key, v in buf.items()}
    st = ctl.state
    return RolloutLog(
        config=sc.config, **buf,
        flag_step=list(st.flag_step), report_step=list(st.report_step), contact_step=contact_step,
        switch_step=st.switch_step, post_step=st.post_step,
        p_o_plus=st.p_o_plus, v_o_est_plus=st.v_o_est_plus,
        failed=failed, failure_step=failure_step, failure=failure, dt=dt,
    )


# --- ablation -----------------------------------------------------------------


@dataclass
class AblationMatrix:
    """Cells are variant x object x displacement x seed; the start pose cycles with the seed."""

    kind: str = "hit_and_push"
    variants: tuple = VARIANTS
    objects: tuple = tuple(OBJECT_MASSES)
    displacements_m: tuple | None = None
    seeds: int = 5
    duration_s: float = 2.0
    controller: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.displacements_m is None:
            self.displacements_m = DISPLACEMENTS[self.kind]
        self.variants = tuple(self.variants)
        self.objects = tuple(self.objects)
        self.displacements_m = tuple(self.displacements_m)
        if self.seeds < 1:
            raise ValueError("need at least one seed per cell")

    def cells(self) -> list[ScenarioConfig]:
        out = []
        for variant, obj, disp, seed in itertools.product(self.variants, self.objects, self.displacements_m,
                                                          range(self.seeds)):
            out.append(ScenarioConfig(
                kind=self.kind, object_name=obj, init_id=INIT_IDS[seed % len(INIT_IDS)],
                displacement_m=disp, variant=variant, seed=seed, duration_s=self.duration_s,
                controller=dict(self.controller),
            ))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AblationMatrix":
        return cls(**d)


ROLLOUT_COLUMNS = [
    "cell", "variant", "kind", "object", "init", "displacement_m", "seed", "max_target_accel",
    "first_detection_s", "switch_s", "post_s", "flag_order", "failed", "failure",
]
AGGREGATE_COLUMNS = ["variant", "group_key", "mean_max_target_accel", "n", "std"]
GROUPINGS = ("object", "init", "displacement_m")


@dataclass
class RolloutSummary:
    cell: int
    config: ScenarioConfig
    max_target_accel: float
    first_detection_s: float | None
    switch_s: float | None
    post_s: float | None
    flag_order: str
    failed: bool
    failure: str
    contact_steps: tuple = ()
    flag_steps: tuple = ()


def summarize(cell: int, log: RolloutLog) -> RolloutSummary:
    dt = log.dt
    flags = [(s, i + 1) for i, s in enumerate(log.flag_step) if s is not None]
    order = "-".join(str(i) for _, i in sorted(flags))
    det = log.first_detection_step
    return RolloutSummary(
        cell=cell, config=log.config, max_target_accel=log.max_target_accel(),
        first_detection_s=None if det is None else det * dt,
        switch_s=None if log.switch_step is None else log.switch_step * dt,
        post_s=None if log.post_step is None else log.post_step * dt,
        flag_order=order, failed=log.failed, failure=log.failure,
        contact_steps=tuple(log.contact_step), flag_steps=tuple(log.flag_step),
    )


def _run_cell(args) -> RolloutSummary:
    cell, config = args
    return summarize(cell, run_rollout(config))


@dataclass
class AblationSummary:
    rollouts: list
    tables: dict

    def rollout_csv(self) -> str:
        rows = []
        for r in self.rollouts:
            c = r.config
            rows.append([
                r.cell, c.variant, c.kind, c.object_name, c.init_id, f"{c.displacement_m:.3f}", c.seed,
                r.max_target_accel, "" if r.first_detection_s is None else r.first_detection_s,
                "" if r.switch_s is None else r.switch_s, "" if r.post_s is None else r.post_s,
                r.flag_order, int(r.failed), r.failure,
            ])
        return _csv_text(ROLLOUT_COLUMNS, rows)

    def aggregate_csv(self, grouping: str) -> str:
        rows = [[v, g, m, n, s] for (v, g), (m, n, s) in sorted(self.tables[grouping].items(), key=_agg_order)]
        return _csv_text(AGGREGATE_COLUMNS, rows)

    def overall(self) -> dict:
        out = {}
        for v in sorted({r.config.variant for r in self.rollouts}, key=_variant_rank):
            vals = [r.max_target_accel for r in self.rollouts if r.config.variant == v and not r.failed]
            out[v] = float(np.mean(vals)) if vals else float("nan")
        return out

    @property
    def failed_cells(self) -> list[int]:
        return [r.cell for r in self.rollouts if r.failed]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "rollouts.csv"]
        paths[0].write_text(self.rollout_csv())
        for g in GROUPINGS:
            p = out / f"by_{g.replace('_m', '')}.csv"
            p.write_text(self.aggregate_csv(g))
            paths.append(p)
        return paths


def _variant_rank(v: str) -> int:
    return VARIANTS.index(v) if v in VARIANTS else len(VARIANTS)


def _agg_order(item):
    (v, g), _ = item
    return (_variant_rank(v), g)


def _group_value(config: ScenarioConfig, grouping: str) -> str:
    if grouping == "object":
        return config.object_name
    if grouping == "init":
        return config.init_id
    return f"{config.displacement_m * 1000:+.0f}mm"


def aggregate(rollouts: Sequence[RolloutSummary]) -> dict:
    tables = {}
    for g in GROUPINGS:
        groups: dict = {}
        for r in rollouts:
            if r.failed or not math.isfinite(r.max_target_accel):
                continue
            groups.setdefault((r.config.variant, _group_value(r.config, g)), []).append(r.max_target_accel)
        tables[g] = {
            key: (float(np.mean(v)), len(v), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
            for key, v in groups.items()
        }
    return tables


def run_ablation(matrix: AblationMatrix, jobs: int = 1) -> AblationSummary:
    """Run every cell; results are ordered by cell index whatever the completion order."""
    cells = list(enumerate(matrix.cells()))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells, chunksize=4))
    else:
        results = [_run_cell(c) for c in cells]
    results.sort(key=lambda r: r.cell)
    return AblationSummary(results, aggregate(results))


# --- persistence ---------------------------------------------------------------


def rollout_meta(log: RolloutLog) -> dict:
    return {
        "config": asdict(log.config),
        "dt_s": log.dt,
        "steps": len(log),
        "flag_step": log.flag_step,
        "report_step": log.report_step,
        "contact_step": log.contact_step,
        "switch_step": log.switch_step,
        "post_step": log.post_step,
        "mode_sequence": log.mode_sequence(),
        "max_target_accel": log.max_target_accel(),
        "failed": log.failed,
        "failure_step": log.failure_step,
        "failure": log.failure,
    }


def write_rollout(log: RolloutLog, out_dir) -> list[Path]:
    import json
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = out / "steps.csv"
    steps.write_text(log.to_csv())
    meta = out / "rollout.json"
    meta.write_text(json.dumps(rollout_meta(log), indent=2, sort_keys=True) + "\n")
    return [steps, meta]


def load_rollout(out_dir) -> RolloutLog:
    """Rebuild a log from the files written by :func:`write_rollout`."""
    import json
    out = Path(out_dir)
    meta = json.loads((out / "rollout.json").read_text())
    with open(out / "steps.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader])
    if data.size == 0:
        raise ValueError(f"{out / 'steps.csv'} has no records")
    col = {name: i for i, name in enumerate(header)}
    R = sum(1 for h in header if h.startswith("gap"))
    n = sum(1 for h in header if h.startswith("q1_"))

    def block(fmt, names):
        return np.stack([np.stack([data[:, col[fmt.format(i=i + 1, c=c)]] for c in names], axis=1) for i in range(R)], axis=1)

    joints = [str(k + 1) for k in range(n)]
    ee = block("ee{i}_{c}", ("x_m", "y_m", "theta_rad", "vx_m_s", "vy_m_s", "omega_rad_s"))
    norm = data[:, col["target_accel_norm"]]
    return RolloutLog(
        config=ScenarioConfig(**meta["config"]),
        time=data[:, col["time_s"]],
        mode=data[:, col["mode"]].astype(int),
        # only the norm survives in the CSV
        target_accel=norm[:, None],
        q=block("q{i}_{c}_rad", joints), dq=block("dq{i}_{c}_rad_s", joints), tau=block("tau{i}_{c}_Nm", joints),
        ee_pose=ee[:, :, :3], ee_twist=ee[:, :, 3:],
        ref_twist=block("ref{i}_{c}", ("vx_m_s", "vy_m_s", "omega_rad_s")),
        gap=np.stack([data[:, col[f"gap{i + 1}_m"]] for i in range(R)], axis=1),
        obj_pose=data[:, [col[c] for c in ("obj_x_m", "obj_y_m", "obj_theta_rad")]],
        obj_twist=data[:, [col[c] for c in ("obj_vx_m_s", "obj_vy_m_s", "obj_omega_rad_s")]],
        qp_ok=np.ones(len(data), dtype=bool),
        flag_step=meta["flag_step"], report_step=meta["report_step"], contact_step=meta["contact_step"],
        switch_step=meta["switch_step"], post_step=meta["post_step"],
        failed=meta["failed"], failure_step=meta["failure_step"], failure=meta["failure"], dt=meta["dt_s"],
    )


def read_aggregate(path) -> dict:
    """Parse an aggregate CSV back into {(variant, group): (mean, n, std)}."""
    table = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            table[(row["variant"], row["group_key"])] = (
                float(row["mean_max_target_accel"]), int(row["n"]), float(row["std"]))
    return table


def ordering_report(tables: dict, ratio_required: float = 2.0) -> list[tuple[str, bool, str]]:
    """Check that proposed is lowest in every group and no_rs is far above it overall.

    Ties count as lowest; relative tolerance 1e-9.
    """
    checks = []
    for grouping, table in tables.items():
        groups = sorted({g for _, g in table})
        for g in groups:
            vals = {v: m for (v, gg), (m, _, _) in table.items() if gg == g}
            if "proposed" not in vals:
                continue
            best = min(vals.values())
            ok = vals["proposed"] <= best * (1 + 1e-9)
            detail = ", ".join(f"{v}={vals[v]:.3f}" for v in sorted(vals, key=_variant_rank))
            checks.append((f"{grouping}:{g} proposed lowest", ok, detail))
    overall = _overall_from_tables(tables)
    if "proposed" in overall and "no_rs" in overall:
        ratio = overall["no_rs"] / overall["proposed"]
        checks.append(("no_rs / proposed overall", ratio >= ratio_required, f"ratio={ratio:.3f}"))
    return checks


def _overall_from_tables(tables: dict) -> dict:
    # every grouping partitions the same rollouts, so any one gives the overall mean
    table = tables[next(iter(tables))]
    acc: dict = {}
    for (v, _), (m, n, _) in table.items():
        s, k = acc.get(v, (0.0, 0))
        acc[v] = (s + m * n, k + n)
    return {v: s / k for v, (s, k) in acc.items() if k}
