"""Hybrid metric/topological semantic map.

A particle holds a sampled topology (nodes, edges, typed regions) plus a
Gaussian over node poses maintained as a pose graph: means per node and an
information matrix derived from the edge constraints, anchored at node 0.
Conditioning recomposes chains exactly and falls back to Gauss-Newton when
loop constraints exist.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from wayfinder.config import FilterConfig
from wayfinder.geometry import Rect, se2_between, se2_compose, wrap_angle
from wayfinder.relations import ConstraintDensity

VISITED = "visited"
HYPOTHESIZED = "hypothesized"

_ANCHOR_INFO = 1e12          # zero-pose prior strength on node 0
_EXTENT_PAD = 0.75           # visited-region bbox padding, meters
_DEFAULT_HYP_RADIUS = 1.5


class NonPSDCovarianceError(ValueError):
    pass


def _check_cov(cov):
    cov = np.asarray(cov, float)
    if cov.shape != (3, 3) or not np.allclose(cov, cov.T, atol=1e-9):
        raise NonPSDCovarianceError("odometry covariance must be symmetric 3x3")
    if np.min(np.linalg.eigvalsh(cov)) < -1e-9:
        raise NonPSDCovarianceError("odometry covariance must be PSD")
    return cov


@dataclass
class Node:
    id: int
    region_id: int
    step: int


@dataclass
class Edge:
    id: int
    kind: str                  # odometry | region-transition | language-relation
    a: int                     # node id, or region id for language edges
    b: int
    mean: Optional[tuple] = None       # SE(2) displacement for pose constraints
    cov: Optional[np.ndarray] = None
    relation: Optional[str] = None     # language edges
    density: Optional[ConstraintDensity] = None
    loglik: Optional[float] = None     # figure placement log-density at sampling
    pose: Optional[tuple] = None       # robot pose when the relation was uttered


@dataclass
class Region:
    id: int
    rtype: str
    status: str = VISITED
    node_ids: list = field(default_factory=list)
    center: Optional[np.ndarray] = None     # hypothesized extent
    radius: float = _DEFAULT_HYP_RADIUS
    rect: Optional[Rect] = None             # visited extent
    label_counts: dict = field(default_factory=dict)
    validity: float = 0.8                   # prior that a hypothesis is real
    pinned: bool = False                    # extent given a priori, never refit

    @property
    def is_hypothesized(self):
        return self.status == HYPOTHESIZED

    def observe_label(self, label):
        self.label_counts[label] = self.label_counts.get(label, 0) + 1
        # region type = mode of observed labels, earliest-alphabetical ties
        self.rtype = min(self.label_counts,
                         key=lambda k: (-self.label_counts[k], k))

    def extent_center(self):
        if self.rect is not None:
            return self.rect.center
        return np.asarray(self.center, float)

    def extent_radius(self):
        if self.rect is not None:
            return self.rect.circumradius
        return self.radius

    def geom(self):
        from wayfinder.relations import Geom
        if self.rect is not None:
            return Geom(tuple(self.rect.center), self.rect.circumradius, self.rect)
        return Geom(tuple(np.asarray(self.center, float)), self.radius)


class Particle:
    """One sampled topology with Gaussian poses and an importance log-weight."""

    def __init__(self, particle_id=0):
        self.id = particle_id
        self.nodes: list[Node] = []
        self.edges: list[Edge] = []
        self.regions: dict[int, Region] = {}
        self.means: list[np.ndarray] = []    # per-node (x, y, theta)
        self.log_weight = 0.0
        self.flagged = False                 # singular conditioning happened
        self.next_region_id = 0
        self.mods_this_step: list = []

    # -- construction --------------------------------------------------------

    @classmethod
    def initial(cls, pose, region_type, particle_id=0, step=0):
        p = cls(particle_id)
        region = Region(id=p.alloc_region_id(), rtype=region_type, status=VISITED)
        p.regions[region.id] = region
        node = Node(id=0, region_id=region.id, step=step)
        p.nodes.append(node)
        region.node_ids.append(0)
        p.means.append(np.asarray(pose, float).copy())
        region.observe_label(region_type)
        p.update_region_extent(region.id)
        return p

    def alloc_region_id(self):
        rid = self.next_region_id
        self.next_region_id += 1
        return rid

    def copy(self, new_id=None) -> "Particle":
        q = Particle(self.id if new_id is None else new_id)
        q.nodes = [copy.copy(n) for n in self.nodes]
        q.edges = [copy.copy(e) for e in self.edges]
        q.regions = {}
        for rid, r in self.regions.items():
            q.regions[rid] = Region(
                id=r.id, rtype=r.rtype, status=r.status,
                node_ids=list(r.node_ids),
                center=None if r.center is None else np.array(r.center),
                radius=r.radius,
                rect=None if r.rect is None else Rect(*r.rect.as_list()),
                label_counts=dict(r.label_counts),
                validity=r.validity,
                pinned=r.pinned,
            )
        q.means = [m.copy() for m in self.means]
        q.log_weight = self.log_weight
        q.flagged = self.flagged
        q.next_region_id = self.next_region_id
        q.mods_this_step = list(self.mods_this_step)
        return q

    # -- views ---------------------------------------------------------------

    @property
    def pose(self):
        return self.means[-1].copy()

    def node_region(self, node_id):
        return self.regions[self.nodes[node_id].region_id]

    @property
    def current_region(self) -> Region:
        return self.node_region(self.nodes[-1].id)

    def visited_regions(self):
        return [r for r in self.regions.values() if r.status == VISITED]

    def hypothesized_regions(self):
        return [r for r in self.regions.values() if r.status == HYPOTHESIZED]

    def language_edges(self):
        return [e for e in self.edges if e.kind == "language-relation"]

    def odometry_edges(self):
        return [e for e in self.edges if e.kind == "odometry"]

    # -- mutations -----------------------------------------------------------

    def update_region_extent(self, region_id):
        """Visited-region extent: padded bbox of member poses, clipped so
        visited extents never overlap each other."""
        region = self.regions[region_id]
        if region.is_hypothesized or region.pinned or not region.node_ids:
            return
        pts = np.array([self.means[n][:2] for n in region.node_ids])
        x0, y0 = pts.min(axis=0) - _EXTENT_PAD
        x1, y1 = pts.max(axis=0) + _EXTENT_PAD
        rect = Rect(x0, y0, x1, y1)
        for other in self.visited_regions():
            if other.id == region_id or other.rect is None:
                continue
            rect = _clip_away(rect, other.rect, pts)
            if rect is None:
                rect = Rect(pts[:, 0].min() - 0.1, pts[:, 1].min() - 0.1,
                            pts[:, 0].max() + 0.1, pts[:, 1].max() + 0.1)
        region.rect = rect


def _clip_away(rect: Rect, other: Rect, own_pts) -> Optional[Rect]:
    """Shrink rect minimally along one axis so its interior misses other."""
    if not rect.interior_overlaps(other):
        return rect
    # candidate one-axis clips; keep those still covering the member points
    cands = []
    if other.x0 > rect.x0:
        cands.append(Rect(rect.x0, rect.y0, other.x0, rect.y1))
    if other.x1 < rect.x1:
        cands.append(Rect(other.x1, rect.y0, rect.x1, rect.y1))
    if other.y0 > rect.y0:
        cands.append(Rect(rect.x0, rect.y0, rect.x1, other.y0))
    if other.y1 < rect.y1:
        cands.append(Rect(rect.x0, other.y1, rect.x1, rect.y1))
    best = None
    for c in cands:
        if all(c.contains(p) for p in own_pts):
            area = c.width * c.height
            if best is None or area > best.width * best.height:
                best = c
    return best


# -- pose-graph operations ----------------------------------------------------

def add_node_with_odometry(particle: Particle, mean, cov, step) -> Particle:
    """Append a node linked to the last one by an odometry constraint."""
    cov = _check_cov(cov)
    if not particle.nodes:
        raise ValueError("particle has no nodes")
    prev = particle.nodes[-1]
    nid = len(particle.nodes)
    node = Node(id=nid, region_id=prev.region_id, step=step)
    particle.nodes.append(node)
    particle.regions[prev.region_id].node_ids.append(nid)
    particle.edges.append(Edge(id=len(particle.edges), kind="odometry",
                               a=prev.id, b=nid, mean=tuple(mean), cov=cov))
    particle.means.append(np.asarray(se2_compose(particle.means[-1], mean), float))
    particle.update_region_extent(prev.region_id)
    return particle


def pose_constraints(particle: Particle):
    return [e for e in particle.edges
            if e.kind == "odometry" and e.mean is not None]


def is_pure_chain(particle: Particle) -> bool:
    cons = pose_constraints(particle)
    return all(e.b == e.a + 1 for e in cons) and \
        len(cons) == len(particle.nodes) - 1


def information_matrix(particle: Particle) -> np.ndarray:
    """Joint information (3n x 3n) from constraints linearized at the mean,
    with the anchor prior on node 0."""
    n = len(particle.nodes)
    H = np.zeros((3 * n, 3 * n))
    H[0:3, 0:3] += np.eye(3) * _ANCHOR_INFO
    for e in pose_constraints(particle):
        J_i, J_j = _edge_jacobians(particle.means[e.a], particle.means[e.b])
        omega = np.linalg.inv(e.cov + np.eye(3) * 1e-12)
        for (bi, Ji) in ((e.a, J_i), (e.b, J_j)):
            for (bj, Jj) in ((e.a, J_i), (e.b, J_j)):
                H[3 * bi:3 * bi + 3, 3 * bj:3 * bj + 3] += Ji.T @ omega @ Jj
    return H


def _edge_jacobians(xi, xj):
    """Jacobians of h(xi, xj) = displacement from xi to xj in xi's frame."""
    c, s = math.cos(xi[2]), math.sin(xi[2])
    RT = np.array([[c, s], [-s, c]])
    dRT = np.array([[-s, c], [-c, -s]])
    dt = np.asarray(xj[:2]) - np.asarray(xi[:2])
    J_i = np.zeros((3, 3))
    J_i[:2, :2] = -RT
    J_i[:2, 2] = dRT @ dt
    J_i[2, 2] = -1.0
    J_j = np.zeros((3, 3))
    J_j[:2, :2] = RT
    J_j[2, 2] = 1.0
    return J_i, J_j


def _residuals(particle):
    res = []
    for e in pose_constraints(particle):
        h = se2_between(particle.means[e.a], particle.means[e.b])
        r = np.array([h[0] - e.mean[0], h[1] - e.mean[1],
                      wrap_angle(h[2] - e.mean[2])])
        res.append((e, r))
    return res


def condition_pose_graph(particle: Particle,
                         config: FilterConfig = FilterConfig()) -> Particle:
    """Update pose means to the least-squares solution of the constraints.

    Pure odometry chains are recomposed exactly (the Gauss-Newton fixed
    point); otherwise one Gauss-Newton pass, or iteration to convergence
    when config.full_convergence is set.
    """
    if len(particle.nodes) <= 1:
        return particle
    if is_pure_chain(particle):
        cons = sorted(pose_constraints(particle), key=lambda e: e.a)
        for e in cons:
            particle.means[e.b] = np.asarray(
                se2_compose(particle.means[e.a], e.mean), float)
        _refresh_extents(particle)
        return particle

    iters = config.gn_max_iters if config.full_convergence else 1
    n = len(particle.nodes)
    for _ in range(iters):
        H = np.zeros((3 * n, 3 * n))
        g = np.zeros(3 * n)
        H[0:3, 0:3] += np.eye(3) * _ANCHOR_INFO
        g[0:3] += -_ANCHOR_INFO * np.array(
            [particle.means[0][0], particle.means[0][1],
             wrap_angle(particle.means[0][2])])
        for e, r in _residuals(particle):
            J_i, J_j = _edge_jacobians(particle.means[e.a], particle.means[e.b])
            omega = np.linalg.inv(e.cov + np.eye(3) * 1e-12)
            blocks = ((e.a, J_i), (e.b, J_j))
            for bi, Ji in blocks:
                g[3 * bi:3 * bi + 3] += -Ji.T @ omega @ r
                for bj, Jj in blocks:
                    H[3 * bi:3 * bi + 3, 3 * bj:3 * bj + 3] += Ji.T @ omega @ Jj
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            particle.flagged = True
            return particle
        if not np.all(np.isfinite(delta)):
            particle.flagged = True
            return particle
        for k in range(n):
            particle.means[k] = particle.means[k] + delta[3 * k:3 * k + 3]
            particle.means[k][2] = wrap_angle(particle.means[k][2])
        if np.max(np.abs(delta)) < config.gn_tol:
            break
    _refresh_extents(particle)
    return particle


def _refresh_extents(particle):
    for r in particle.visited_regions():
        particle.update_region_extent(r.id)


def marginal_covariance(particle: Particle, node_id: int) -> np.ndarray:
    """Marginal pose covariance of one node from the joint information."""
    H = information_matrix(particle)
    cov = np.linalg.inv(H)
    return cov[3 * node_id:3 * node_id + 3, 3 * node_id:3 * node_id + 3]


# -- belief -------------------------------------------------------------------

class Belief:
    """Particle set with normalized weights and a step counter."""

    def __init__(self, particles, step=0):
        self.particles: list[Particle] = list(particles)
        self.step = step
        self.next_particle_id = 1 + max((p.id for p in self.particles), default=-1)

    @classmethod
    def initial(cls, pose, region_type, num_particles):
        parts = [Particle.initial(pose, region_type, particle_id=i)
                 for i in range(num_particles)]
        return cls(parts)

    def weights(self):
        lw = np.array([p.log_weight for p in self.particles])
        m = lw.max()
        w = np.exp(lw - m)
        return w / w.sum()

    def normalize(self, floor=1e-9):
        w = self.weights()
        w = np.maximum(w, floor)
        w = w / w.sum()
        for p, wi in zip(self.particles, w):
            p.log_weight = float(np.log(wi))
        return w

    def map_particle(self) -> Particle:
        w = self.weights()
        best = max(range(len(self.particles)),
                   key=lambda i: (w[i], -self.particles[i].id))
        return self.particles[best]


def map_estimate(belief: Belief) -> "SemanticMap":
    return SemanticMap.from_particle(belief.map_particle(), belief.step)


# -- snapshot -----------------------------------------------------------------

@dataclass
class MapRegion:
    id: int
    rtype: str
    status: str
    rect: Optional[Rect]
    center: tuple
    radius: float

    def geom(self):
        from wayfinder.relations import Geom
        if self.rect is not None:
            return Geom(tuple(self.rect.center), self.rect.circumradius, self.rect)
        return Geom(self.center, self.radius)


class SemanticMap:
    """Immutable snapshot of one particle's topology for grounding/planning."""

    def __init__(self, regions, node_poses, node_regions, adjacency, step,
                 particle_id=0, relation_edges=()):
        self.regions: list[MapRegion] = list(regions)
        self.node_poses = [np.asarray(p, float) for p in node_poses]
        self.node_regions = list(node_regions)
        self.adjacency = [tuple(e) for e in adjacency]     # node-id pairs
        self.step = step
        self.particle_id = particle_id
        self.relation_edges = list(relation_edges)          # (rel, lm_rid, fig_rid)

    @classmethod
    def from_particle(cls, particle: Particle, step) -> "SemanticMap":
        regions = [
            MapRegion(r.id, r.rtype, r.status,
                      None if r.rect is None else Rect(*r.rect.as_list()),
                      tuple(r.extent_center()), r.extent_radius())
            for r in sorted(particle.regions.values(), key=lambda r: r.id)
        ]
        adj = [(e.a, e.b) for e in particle.odometry_edges()]
        rel = [(e.relation, e.a, e.b) for e in particle.language_edges()]
        return cls(regions, [m.copy() for m in particle.means],
                   [n.region_id for n in particle.nodes], adj, step,
                   particle.id, rel)

    def region_by_id(self, rid) -> MapRegion:
        for r in self.regions:
            if r.id == rid:
                return r
        raise KeyError(f"no region {rid}")

    def objects(self):
        """(region_id, type) pairs, stable order."""
        return [(r.id, r.rtype) for r in self.regions]

    @property
    def robot_pose(self):
        return self.node_poses[-1].copy() if self.node_poses else np.zeros(3)

    def to_json(self):
        return {
            "step": self.step,
            "particle_id": self.particle_id,
            "regions": [
                {"id": r.id, "type": r.rtype, "status": r.status,
                 "rect": None if r.rect is None else r.rect.as_list(),
                 "center": [float(c) for c in r.center],
                 "radius": float(r.radius)}
                for r in self.regions
            ],
            "nodes": [
                {"id": i, "pose": [float(x) for x in p], "region": rid}
                for i, (p, rid) in enumerate(zip(self.node_poses,
                                                 self.node_regions))
            ],
            "adjacency": [list(e) for e in self.adjacency],
            "relation_edges": [list(e) for e in self.relation_edges],
        }
