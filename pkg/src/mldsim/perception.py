"""From labeled clouds to per-agent obstacle sets.

Every obstacle is summarised by four points, the member closest to each of
the master arm's monitored joints, expressed in the master's base frame.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import ArmModel, Transform, monitored_joint_positions
from .scene import LINK_SAMPLES, SemanticClass, LabeledPointCloud, WorldState, arm_link_points

DEFAULT_WEIGHTS = (0.1, 0.2, 0.3, 0.4)


class ObstacleKind(enum.IntEnum):
    # order doubles as the tie-break rank when sorting entries
    dynamic = 0
    static = 1
    robot = 2


@dataclass
class Cluster:
    id: int
    member_points: np.ndarray
    indices: np.ndarray


@dataclass
class ObstacleEntry:
    nearest_points: np.ndarray  # (4, 3), master base frame
    distances: np.ndarray  # (4,)
    weighted_distance: float
    kind: ObstacleKind
    id: int = 0

    def features(self) -> np.ndarray:
        return self.nearest_points.reshape(12)


def dbscan(points, eps: float, min_pts: int) -> tuple[list[Cluster], np.ndarray]:
    """Density clustering with Euclidean neighbourhoods ``|p - q| <= eps``.

    Neighbour counts include the point itself. Clusters are numbered in the
    order a sequential scan would discover them (by lowest core index), and
    a border point reachable from several clusters goes to the earliest one.
    Returns the clusters and the ``(m, 3)`` array of noise points.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return [], pts.copy()

    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    i, j = (pairs[:, 0], pairs[:, 1]) if len(pairs) else (np.zeros(0, int), np.zeros(0, int))
    degree = np.bincount(np.concatenate([i, j]), minlength=n) + 1
    core = degree >= min_pts

    labels = np.full(n, -1)
    core_idx = np.flatnonzero(core)
    if len(core_idx):
        both = core[i] & core[j]
        pos = np.full(n, -1)
        pos[core_idx] = np.arange(len(core_idx))
        adj = coo_matrix(
            (np.ones(both.sum()), (pos[i[both]], pos[j[both]])),
            shape=(len(core_idx), len(core_idx)),
        )
        _, comp = connected_components(adj, directed=False)
        # relabel components by first appearance in index order
        _, first = np.unique(comp, return_index=True)
        rank = np.empty(len(first), dtype=int)
        rank[np.argsort(first)] = np.arange(len(first))
        labels[core_idx] = rank[comp]

        # border points: non-core with a core neighbour -> earliest cluster
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        m = ~core[src] & core[dst]
        if np.any(m):
            s, lab = src[m], labels[dst[m]]
            order = np.lexsort((lab, s))
            s, lab = s[order], lab[order]
            first = np.r_[True, s[1:] != s[:-1]]
            labels[s[first]] = lab[first]

    clusters = []
    for cid in range(labels.max() + 1):
        idx = np.flatnonzero(labels == cid)
        clusters.append(Cluster(cid, pts[idx], idx))
    return clusters, pts[labels < 0]


def _entry(points_world, joints_world, to_master_base: Transform, weights, kind, eid) -> ObstacleEntry:
    """Pick, per joint, the closest of ``points_world`` and build the entry."""
    diff = points_world[:, None, :] - joints_world[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    nearest = points_world[np.argmin(d2, axis=0)]
    return _make_entry(nearest, joints_world, to_master_base, weights, kind, eid)


def _make_entry(nearest_world, joints_world, to_master_base, weights, kind, eid) -> ObstacleEntry:
    nearest = to_master_base.apply(nearest_world)
    joints = to_master_base.apply(joints_world)
    dist = np.linalg.norm(nearest - joints, axis=1)
    return ObstacleEntry(nearest, dist, float(np.dot(weights, dist)), ObstacleKind(kind), eid)


def cluster_humans(cloud: LabeledPointCloud, eps: float, min_pts: int) -> list[Cluster]:
    clusters, _ = dbscan(cloud.of_class(SemanticClass.Human), eps, min_pts)
    return clusters


def obstacles_from_clusters(
    clusters: list[Cluster],
    master: ArmModel,
    q,
    to_master_base: Transform,
    weights=DEFAULT_WEIGHTS,
) -> list[ObstacleEntry]:
    joints = monitored_joint_positions(master, q)
    w = np.asarray(weights, dtype=float)
    return [
        _entry(c.member_points, joints, to_master_base, w, ObstacleKind.dynamic, c.id)
        for c in clusters
    ]


def extract_dynamic_obstacles(
    cloud: LabeledPointCloud,
    master: ArmModel,
    q,
    eps: float,
    min_pts: int,
    to_master_base: Transform,
    weights=DEFAULT_WEIGHTS,
) -> list[ObstacleEntry]:
    """Cluster the Human-labeled points; one entry per cluster."""
    clusters = cluster_humans(cloud, eps, min_pts)
    return obstacles_from_clusters(clusters, master, q, to_master_base, weights)


def partner_robot_obstacles(
    partner: ArmModel,
    q_partner,
    master: ArmModel,
    q_master,
    to_master_base: Transform,
    weights=DEFAULT_WEIGHTS,
    n_samples: int = LINK_SAMPLES,
) -> list[ObstacleEntry]:
    """One entry per sampled long link of the partner arm."""
    joints = monitored_joint_positions(master, q_master)
    w = np.asarray(weights, dtype=float)
    return [
        _entry(seg, joints, to_master_base, w, ObstacleKind.robot, k)
        for k, seg in enumerate(arm_link_points(partner, q_partner, n_samples))
    ]


def static_obstacles(
    w: WorldState,
    master: ArmModel,
    q,
    to_master_base: Transform,
    weights=DEFAULT_WEIGHTS,
    include_table: bool = False,
) -> list[ObstacleEntry]:
    """Analytic closest points on each destination box (and optionally the table)."""
    joints = monitored_joint_positions(master, q)
    wts = np.asarray(weights, dtype=float)
    boxes = [gb.box for gb in w.boxes] + ([w.table] if include_table else [])
    return [
        _make_entry(box.closest_surface_point(joints), joints, to_master_base, wts, ObstacleKind.static, k)
        for k, box in enumerate(boxes)
    ]


def base_frame_of(arm: ArmModel) -> Transform:
    """World-to-base transform for ``arm``."""
    return arm.base.inverse()

