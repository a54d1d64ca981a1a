"""Shared workspace: furniture, two arms, a walking human, and the labeled
point clouds an overhead sensor plus segmentation network would produce.

The segmentation network is replaced by ground-truth labels with optional
random label flips.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import ArmModel, DhRow, Transform, integrate_joints, joint_origins, load_dh_table, sample_link_points

LINK_SAMPLES = 100


class SemanticClass(enum.IntEnum):
    Table = 0
    Human = 1
    Box = 2
    Robot = 3
    Cube = 4


@dataclass(frozen=True)
class AABB:
    """Axis-aligned solid box given by its center and full side lengths."""

    center: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=float).reshape(3))

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.extents / 2

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.extents / 2

    def face_areas(self) -> np.ndarray:
        ex, ey, ez = self.extents
        # -x, +x, -y, +y, -z, +z
        return np.array([ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey])

    @property
    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def moved_to(self, center) -> "AABB":
        return AABB(center, self.extents)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` points uniform over the box surface."""
        areas = self.face_areas()
        faces = rng.choice(6, size=n, p=areas / areas.sum())
        uv = rng.random((n, 3))
        pts = self.lo + uv * self.extents
        axis = faces // 2
        side = faces % 2
        rows = np.arange(n)
        pts[rows, axis] = np.where(side == 1, self.hi[axis], self.lo[axis])
        return pts

    def closest_surface_point(self, p: np.ndarray) -> np.ndarray:
        """Closest point on the box boundary to each row of ``p`` (``(n, 3)``)."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        lo, hi = self.lo, self.hi
        out = np.clip(p, lo, hi)
        inside = np.all((p > lo) & (p < hi), axis=1)
        if np.any(inside):
            pin = p[inside]
            gaps = np.concatenate([pin - lo, hi - pin], axis=1)
            k = np.argmin(gaps, axis=1)
            proj = pin.copy()
            rows = np.arange(len(pin))
            ax = k % 3
            proj[rows, ax] = np.where(k < 3, lo[ax], hi[ax])
            out[inside] = proj
        return out


@dataclass(frozen=True)
class HumanTrajectory:
    """Piecewise-linear walk traversed back and forth forever."""

    waypoints: np.ndarray
    segment_speeds: np.ndarray

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        sp = np.asarray(self.segment_speeds, dtype=float).reshape(-1)
        if len(wp) < 2 or len(sp) != len(wp) - 1:
            raise ValueError("need >= 2 waypoints and one speed per segment")
        if np.any(sp <= 0):
            raise ValueError("segment speeds must be positive")
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "segment_speeds", sp)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)

    @property
    def one_way_time(self) -> float:
        return float(np.sum(self.segment_lengths / self.segment_speeds))

    @property
    def period(self) -> float:
        return 2.0 * self.one_way_time


def advance_human(traj: HumanTrajectory, t: float) -> np.ndarray:
    """Position after walking for ``t`` seconds from the first waypoint."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    one_way = traj.one_way_time
    if one_way == 0.0:
        return traj.waypoints[0].copy()
    u = math.fmod(t, 2.0 * one_way)
    if u > one_way:
        u = 2.0 * one_way - u
    durations = traj.segment_lengths / traj.segment_speeds
    for k, dur in enumerate(durations):
        if u <= dur or k == len(durations) - 1:
            frac = 0.0 if dur == 0 else min(u / dur, 1.0)
            a, b = traj.waypoints[k], traj.waypoints[k + 1]
            return a + frac * (b - a)
        u -= dur
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class GoalBox:
    box: AABB
    goal_height: float = 0.05

    @property
    def goal(self) -> np.ndarray:
        """Goal point above the center of the open top face."""
        return self.box.center + np.array([0.0, 0.0, self.box.extents[2] / 2 + self.goal_height])


@dataclass(frozen=True)
class WorldState:
    time: float
    arms: tuple[ArmModel, ArmModel]
    joints: tuple[np.ndarray, np.ndarray]
    table: AABB
    boxes: tuple[GoalBox, GoalBox]
    human: HumanTrajectory | None = None
    human_shape: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 1.8]))
    human_phase: float = 0.0
    cubes: tuple[AABB, ...] = ()
    rng_seed: int = 0

    @property
    def human_enabled(self) -> bool:
        return self.human is not None

    @property
    def human_position(self) -> np.ndarray | None:
        if self.human is None:
            return None
        return advance_human(self.human, self.time + self.human_phase)

    def human_box(self) -> AABB | None:
        pos = self.human_position
        return None if pos is None else AABB(pos, self.human_shape)


def advance_world(w: WorldState, actions, dt: float) -> WorldState:
    """Step both arms by their velocity commands and the human along its path."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    joints = tuple(
        integrate_joints(arm, q, np.asarray(a, dtype=float), dt)
        for arm, q, a in zip(w.arms, w.joints, actions)
    )
    return replace(w, time=w.time + dt, joints=joints)


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray
    frame_tag: str = "world"

    def __len__(self) -> int:
        return len(self.points)

    def of_class(self, cls: SemanticClass) -> np.ndarray:
        return self.points[self.labels == int(cls)]


def scene_primitives(w: WorldState) -> list[tuple[AABB, SemanticClass]]:
    prims = [(w.table, SemanticClass.Table)]
    prims += [(gb.box, SemanticClass.Box) for gb in w.boxes]
    hb = w.human_box()
    if hb is not None:
        prims.append((hb, SemanticClass.Human))
    prims += [(c, SemanticClass.Cube) for c in w.cubes]
    return prims


def arm_link_points(arm: ArmModel, q, n: int = LINK_SAMPLES) -> list[np.ndarray]:
    """Central-line samples along the arm's two longest links."""
    origins = joint_origins(arm, q)
    return [sample_link_points(origins[k], origins[k + 1], n) for k in arm.longest_links(2)]


def expected_cloud_size(w: WorldState, density: float) -> int:
    n = sum(math.ceil(prim.surface_area * density) for prim, _ in scene_primitives(w))
    return n + 2 * LINK_SAMPLES * len(w.arms)


def synth_cloud(
    w: WorldState,
    density: float,
    noise_sd: float,
    label_flip_rate: float,
    rng: np.random.Generator,
) -> LabeledPointCloud:
    """Sample every scene surface at ``density`` points/m^2 with labels."""
    if not density > 0:
        raise ValueError("density must be positive")
    if not 0 <= label_flip_rate < 1:
        raise ValueError("label_flip_rate must lie in [0, 1)")
    chunks, labels = [], []
    for prim, cls in scene_primitives(w):
        n = math.ceil(prim.surface_area * density)
        chunks.append(prim.sample_surface(n, rng))
        labels.append(np.full(n, int(cls)))
    for arm, q in zip(w.arms, w.joints):
        for seg in arm_link_points(arm, q):
            chunks.append(seg)
            labels.append(np.full(len(seg), int(SemanticClass.Robot)))
    points = np.concatenate(chunks)
    lab = np.concatenate(labels)
    if noise_sd > 0:
        points = points + rng.normal(0.0, noise_sd, points.shape)
    present = np.unique(lab)
    if label_flip_rate > 0 and len(present) > 1:
        # mislabel as some other class that is actually in the scene
        flip = rng.random(len(lab)) < label_flip_rate
        shift = rng.integers(1, len(present), size=int(flip.sum()))
        pos = np.searchsorted(present, lab[flip])
        lab = lab.copy()
        lab[flip] = present[(pos + shift) % len(present)]
    return LabeledPointCloud(points, lab, "world")


def write_cloud_csv(path: str | Path, points: np.ndarray, column: list, name: str = "label", header_lines=()) -> None:
    """Write ``x,y,z,<name>`` rows; ``column`` holds the last field per point."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "z", name])
        for p, c in zip(points, column):
            writer.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", c])


def dump_cloud(path: str | Path, cloud: LabeledPointCloud, header_lines=()) -> None:
    names = [SemanticClass(int(c)).name for c in cloud.labels]
    write_cloud_csv(path, cloud.points, names, "label", header_lines)


def load_cloud(path: str | Path) -> LabeledPointCloud:
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
    lab = np.array([int(SemanticClass[r["label"]]) for r in rows], dtype=int)
    return LabeledPointCloud(pts, lab, "world")


def _default_bases():
    return ((-1.1, 0.0, 0.8, math.pi), (1.1, 0.0, 0.8, 0.0))


HOME = (0.0, -math.pi / 2, math.pi / 2, -math.pi / 2, -math.pi / 2, 0.0)


@dataclass(frozen=True)
class HumanConfig:
    # layout values are not taken from any published setup
    enabled: bool = True
    waypoints: tuple = ((-0.9, 3.2, 0.9), (-0.9, 2.2, 0.9), (-0.9, 1.2, 0.9))
    speeds: tuple = (0.8, 0.3)
    shape: tuple = (0.5, 0.5, 1.8)
    random_phase: bool = True


@dataclass(frozen=True)
class SceneConfig:
    """Workspace layout. Robot 2's side is robot 1's rotated half a turn about z."""

    dh_file: str = ""
    robot_bases: tuple = field(default_factory=_default_bases)
    home_joints: tuple = (HOME, HOME)
    vel_limit: float = 1.0
    joint_limit: float = 2 * math.pi
    monitored_joints: tuple = (1, 2, 3, 5)
    table_center: tuple = (0.0, 0.0, 0.4)
    table_extents: tuple = (1.6, 0.8, 0.8)
    box_centers: tuple = ((-0.8, 0.75, 0.65), (0.8, -0.75, 0.65))
    box_extents: tuple = (0.4, 0.4, 0.3)
    goal_height: float = 0.05
    cube_size: float = 0.04
    cube_positions: tuple = (
        (-0.3, 0.1, 0.82), (-0.1, -0.15, 0.82), (0.1, 0.2, 0.82), (0.3, -0.05, 0.82),
        (0.0, 0.0, 0.82), (-0.2, -0.25, 0.82), (0.2, 0.05, 0.82), (0.35, 0.25, 0.82),
    )
    density: float = 400.0
    noise_sd: float = 0.005
    label_flip_rate: float = 0.01
    include_table_obstacle: bool = False
    human: HumanConfig = field(default_factory=HumanConfig)


def build_arms(cfg: SceneConfig) -> tuple[ArmModel, ArmModel]:
    rows: list[DhRow] = load_dh_table(cfg.dh_file or None)
    lim = np.tile([-cfg.joint_limit, cfg.joint_limit], (6, 1))
    return tuple(
        ArmModel(
            dh=tuple(rows),
            base=Transform.from_xyz_yaw(b[:3], b[3]),
            joint_limits=lim,
            vel_limits=np.full(6, cfg.vel_limit),
            monitored_joints=tuple(cfg.monitored_joints),
        )
        for b in cfg.robot_bases
    )


def build_world(cfg: SceneConfig, human_phase: float = 0.0, rng_seed: int = 0) -> WorldState:
    arms = build_arms(cfg)
    human = None
    if cfg.human.enabled:
        human = HumanTrajectory(np.array(cfg.human.waypoints), np.array(cfg.human.speeds))
    return WorldState(
        time=0.0,
        arms=arms,
        joints=tuple(np.array(h, dtype=float) for h in cfg.home_joints),
        table=AABB(cfg.table_center, cfg.table_extents),
        boxes=tuple(GoalBox(AABB(c, cfg.box_extents), cfg.goal_height) for c in cfg.box_centers),
        human=human,
        human_shape=np.array(cfg.human.shape, dtype=float),
        human_phase=human_phase,
        cubes=tuple(AABB(p, (cfg.cube_size,) * 3) for p in cfg.cube_positions),
        rng_seed=rng_seed,
    )
