"""Simulation-sampled impact map with Gaussian RBF interpolation.

Each sample poses the arm(s) touching the object at a grid of positions along the
target face(s), moving with the approach field's velocity, and records the object
twist after one short impact event.  Queries use the projected contact coordinate
per arm; for two arms the key is the pair of coordinates.
"""

from __future__ import annotations

import hashlib
import io
import itertools
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fields
from .dynamics import SystemModel, arm_terms, inverse_kinematics, simulate_impact_event
from .task import TaskSpec

RIDGE = 1e-10
COND_LIMIT = 1e12
# shape parameter as a multiple of the inverse nearest-neighbour spacing
SHAPE_FACTOR = 0.6
MIN_RETAINED = 0.8
DEFAULT_SAMPLES = {1: 25, 2: 49}


class ConditioningError(RuntimeError):
    """The RBF system is too ill-conditioned; spread the keys or raise rho."""


class DatasetError(RuntimeError):
    """Too many samples could not be generated."""


class ExtrapolationWarning(UserWarning):
    """Query lies far from every key, where the Gaussian basis fades to zero."""


@dataclass
class ImpactSample:
    projected_position: np.ndarray
    v_o_plus: np.ndarray

    def __post_init__(self):
        self.projected_position = np.atleast_1d(np.asarray(self.projected_position, dtype=float))
        self.v_o_plus = np.asarray(self.v_o_plus, dtype=float).reshape(3)


@dataclass
class ImpactDataset:
    samples: list
    arm_count: int
    rho: float | None = None
    meta: dict = field(default_factory=dict)
    weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.arm_count not in (1, 2):
            raise ValueError("arm_count must be 1 or 2")
        if not self.samples:
            raise ValueError("dataset needs at least one sample")
        for s in self.samples:
            if s.projected_position.size != self.arm_count:
                raise ValueError("sample key size does not match arm_count")
        K = self.keys
        if len(K) > 1:
            d = _pairwise(K)
            np.fill_diagonal(d, np.inf)
            if d.min() <= 1e-9:
                raise ValueError("sample keys must be pairwise distinct")
        if self.rho is None:
            self.rho = default_rho(K)

    @property
    def keys(self) -> np.ndarray:
        return np.array([s.projected_position for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s.v_o_plus for s in self.samples])

    def predictor(self):
        """Callable mapping a key to the interpolated object twist."""
        if self.weights is None:
            build_weights(self)
        return lambda key: interpolate(self, key)

    def subset(self, keep: Sequence[int]) -> "ImpactDataset":
        return ImpactDataset([self.samples[i] for i in keep], self.arm_count, self.rho, dict(self.meta))

    # --- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def to_text(self) -> str:
        cols = [f"s{i + 1}_m" for i in range(self.arm_count)] + ["vx_m_s", "vy_m_s", "omega_rad_s"]
        lines = [f"# arm_count={self.arm_count}", f"# rho_1_m={self.rho!r}", f"# n_exp={len(self.samples)}"]
        lines += [f"# {k}={v}" for k, v in sorted(self.meta.items())]
        lines.append(",".join(cols))
        for s in self.samples:
            row = list(s.projected_position) + list(s.v_o_plus)
            lines.append(",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path) -> "ImpactDataset":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> "ImpactDataset":
        header = {}
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k] = v
            elif line.strip():
                body.append(line)
        arm_count = int(header.pop("arm_count"))
        rho = float(header.pop("rho_1_m"))
        n_exp = int(header.pop("n_exp"))
        data = np.loadtxt(io.StringIO("\n".join(body[1:])), delimiter=",", ndmin=2)
        if data.shape[0] != n_exp:
            raise ValueError(f"file lists {data.shape[0]} samples, header says {n_exp}")
        samples = [ImpactSample(r[:arm_count], r[arm_count:]) for r in data]
        return cls(samples, arm_count, rho, header)


def _pairwise(K: np.ndarray) -> np.ndarray:
    return np.linalg.norm(K[:, None, :] - K[None, :, :], axis=-1)


def default_rho(keys: np.ndarray) -> float:
    """Shape parameter scaled to the nearest-neighbour spacing of the keys."""
    K = np.asarray(keys, dtype=float)
    if len(K) < 2:
        return 1.0
    d = _pairwise(K)
    np.fill_diagonal(d, np.inf)
    spacing = float(np.median(d.min(axis=1)))
    return SHAPE_FACTOR / spacing


def basis(r, rho: float):
    return np.exp(-((rho * np.asarray(r)) ** 2))


def build_weights(dataset: ImpactDataset) -> np.ndarray:
    """Solve (Phi + ridge*I) W = V for the RBF weights (one column per twist component)."""
    K = dataset.keys
    Phi = basis(_pairwise(K), dataset.rho)
    # judge the kernel itself; the ridge would otherwise cap the condition number
    cond = np.linalg.cond(Phi)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ConditioningError(
            f"RBF matrix condition {cond:.3g} exceeds {COND_LIMIT:.0e}; increase rho or spread the keys"
        )
    dataset.weights = np.linalg.solve(Phi + RIDGE * np.eye(len(K)), dataset.values)
    return dataset.weights


def interpolate(dataset: ImpactDataset, query) -> np.ndarray:
    """Predicted object twist at a projected impact position."""
    if dataset.weights is None:
        build_weights(dataset)
    q = np.atleast_1d(np.asarray(query, dtype=float))
    if q.size != dataset.arm_count:
        raise ValueError(f"query needs {dataset.arm_count} coordinate(s)")
    if len(dataset.samples) == 1:
        # one node defines no length scale: the map is that sample everywhere
        return dataset.samples[0].v_o_plus.copy()
    r = np.linalg.norm(dataset.keys - q, axis=1)
    if r.min() > 2.0 / dataset.rho:
        warnings.warn(f"query {q} is {r.min():.3g} m from the nearest key", ExtrapolationWarning, stacklevel=2)
    return basis(r, dataset.rho) @ dataset.weights


def leave_one_out_errors(dataset: ImpactDataset) -> np.ndarray:
    """Relative error on ||v_o+|| of each sample predicted from all the others."""
    errs = []
    for j in range(len(dataset.samples)):
        rest = dataset.subset([i for i in range(len(dataset.samples)) if i != j])
        rest.rho = dataset.rho
        pred = interpolate(rest, dataset.samples[j].projected_position)
        true = dataset.samples[j].v_o_plus
        errs.append(abs(np.linalg.norm(pred) - np.linalg.norm(true)) / np.linalg.norm(true))
    return np.array(errs)


# --- generation -------------------------------------------------------------


def contact_pose(system: SystemModel, task: TaskSpec, offsets: Sequence[float], guesses=None):
    """Joint positions and velocities for arms touching their faces at the given offsets.

    Returns None if any pose is unreachable.  Velocities realise the approach
    field at the contact point with zero angular rate and the first joint at rest.
    """
    qs, dqs = [], []
    for i, (model, face, ante) in enumerate(zip(system.robots, task.faces, task.ante)):
        p = face.center + offsets[i] * face.tangent + model.ee_radius * face.normal
        guess = None if guesses is None else guesses[i]
        q, ok = inverse_kinematics(model, p, ante.theta_d, ante.xi_d, guess)
        if not ok:
            return None
        t = arm_terms(model, q, np.zeros(model.n_links))
        v = fields.ante_velocity(p, ante)
        target = np.array([v[0], v[1], 0.0])
        dq = np.zeros(model.n_links)
        if model.n_links >= 4:
            dq[1:] = np.linalg.lstsq(t.J[:, 1:], target, rcond=None)[0]
        else:
            dq = np.linalg.lstsq(t.J, target, rcond=None)[0]
        qs.append(q)
        dqs.append(dq)
    return qs, dqs


def grid_offsets(arm_count: int, n_samples: int, face_extent: float) -> list[tuple]:
    """Uniform grid over [-face_extent/2, face_extent/2] per arm."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if arm_count == 1:
        return [(s,) for s in np.linspace(-face_extent / 2, face_extent / 2, n_samples)] if n_samples > 1 else [(0.0,)]
    side = int(round(np.sqrt(n_samples)))
    if side * side != n_samples:
        raise ValueError("two-arm grids need a square sample count")
    axis = np.linspace(-face_extent / 2, face_extent / 2, side) if side > 1 else np.array([0.0])
    return list(itertools.product(axis, axis))


def generate_dataset(system: SystemModel, task: TaskSpec, n_samples: int | None = None,
                     face_extent: float | None = None, guesses=None, meta: dict | None = None) -> ImpactDataset:
    """Sample the impact map over a grid of contact positions along the target faces."""
    arm_count = task.n_robots
    n_samples = DEFAULT_SAMPLES[arm_count] if n_samples is None else n_samples
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if face_extent is None:
        face_extent = 0.8 * 2.0 * min(_face_half_width(system, task, i) for i in range(arm_count))
    samples = []
    for offsets in grid_offsets(arm_count, n_samples, face_extent):
        pose = contact_pose(system, task, offsets, guesses)
        if pose is None:
            warnings.warn(f"contact pose at {offsets} is unreachable; sample skipped", stacklevel=2)
            continue
        twist = simulate_impact_event(system, pose[0], pose[1], np.r_[task.p_o_nominal, 0.0])
        samples.append(ImpactSample(np.array(offsets), twist))
    if len(samples) < MIN_RETAINED * n_samples:
        raise DatasetError(f"only {len(samples)} of {n_samples} samples could be generated")
    info = {"face_extent_m": repr(float(face_extent))}
    info.update(meta or {})
    return ImpactDataset(samples, arm_count, meta=info)


def _face_half_width(system: SystemModel, task: TaskSpec, i: int) -> float:
    face = task.faces[i]
    return float(abs(face.tangent @ system.obj.half_extents))


def dataset_digest(dataset: ImpactDataset) -> str:
    return hashlib.sha256(dataset.to_text().encode()).hexdigest()[:16]
