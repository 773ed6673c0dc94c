"""Deterministic 2D worlds: typed rectangular regions joined by doorways,
robot motion along waypoint paths, and noisy sensor emission."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from wayfinder.assets import load_json
from wayfinder.config import SimConfig
from wayfinder.geometry import Rect, se2_between
from wayfinder.rbpf import AppearanceObservation


class InvalidPathError(ValueError):
    pass


class WorldValidationError(ValueError):
    pass


@dataclass(frozen=True)
class WorldRegion:
    id: int
    rtype: str
    rect: Rect


@dataclass(frozen=True)
class Doorway:
    a: int
    b: int
    at: tuple                    # midpoint (x, y)
    width: float = 1.0


@dataclass(frozen=True)
class FrontierPoint:
    """Unexplored doorway adjacent to explored space.

    Node ids are negative so that, under cost ties, the policy's
    lowest-target-id rule prefers frontiers in doorway order over
    backtracking to old trajectory nodes.
    """

    node_id: int
    doorway_index: int
    position: tuple
    from_region: int             # the explored side


@dataclass
class SensorConfig:
    """Ground-truth emission model for labels and odometry."""

    label_validity: float = 0.9              # p(v=1 | R)
    odom_sigma_xy: float = 0.05              # per sqrt-meter, see noise_cov
    odom_sigma_theta: float = 0.02
    inventory: tuple = ()                    # label confusion support

    def __post_init__(self):
        if not 0.0 < self.label_validity <= 1.0:
            raise WorldValidationError("label validity must be in (0, 1]")
        if not self.inventory:
            from wayfinder.grounding.symbols import SymbolSpace
            self.inventory = tuple(SymbolSpace.default().object_types)

    def noise_cov(self, length_m: float) -> np.ndarray:
        scale = max(length_m, 1e-6)
        return np.diag([self.odom_sigma_xy ** 2 * scale,
                        self.odom_sigma_xy ** 2 * scale,
                        self.odom_sigma_theta ** 2 * scale])


class WorldSpec:
    """Axis-aligned rectangular regions, doorway adjacency, start, and the
    ground-truth goal used only for evaluation."""

    def __init__(self, name, regions: Sequence[WorldRegion],
                 doorways: Sequence[Doorway], start_pose, goal_region: int):
        self.name = name
        self.regions = list(regions)
        self.doorways = list(doorways)
        self.start_pose = tuple(float(x) for x in start_pose)
        self.goal_region = int(goal_region)
        self._by_id = {r.id: r for r in self.regions}
        self.validate()

    # -- schema ---------------------------------------------------------------

    @classmethod
    def from_json(cls, obj: dict) -> "WorldSpec":
        regions = [WorldRegion(int(r["id"]), r["type"], Rect(*r["rect"]))
                   for r in obj["regions"]]
        doorways = [Doorway(int(d["a"]), int(d["b"]), tuple(d["at"]),
                            float(d.get("width", 1.0)))
                    for d in obj["doorways"]]
        return cls(obj.get("name", "world"), regions, doorways,
                   obj["start"], obj["goal"])

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "regions": [{"id": r.id, "type": r.rtype,
                         "rect": r.rect.as_list()} for r in self.regions],
            "doorways": [{"a": d.a, "b": d.b, "at": list(d.at),
                          "width": d.width} for d in self.doorways],
            "start": list(self.start_pose),
            "goal": self.goal_region,
        }

    def validate(self):
        for i, r in enumerate(self.regions):
            for s in self.regions[i + 1:]:
                ix = min(r.rect.x1, s.rect.x1) - max(r.rect.x0, s.rect.x0)
                iy = min(r.rect.y1, s.rect.y1) - max(r.rect.y0, s.rect.y0)
                if ix > 1e-9 and iy > 1e-9:
                    raise WorldValidationError(
                        f"regions {r.id} and {s.id} overlap")
        for d in self.doorways:
            for end in (d.a, d.b):
                if end not in self._by_id:
                    raise WorldValidationError(f"doorway references {end}")
            for end in (d.a, d.b):
                if not self._by_id[end].rect.contains(d.at, tol=1e-6):
                    raise WorldValidationError(
                        f"doorway at {d.at} not on region {end} boundary")
        if len(self.regions) > 1:
            seen = {self.regions[0].id}
            frontier = [self.regions[0].id]
            while frontier:
                cur = frontier.pop()
                for d in self.doorways:
                    for nxt in ((d.b if d.a == cur else None),
                                (d.a if d.b == cur else None)):
                        if nxt is not None and nxt not in seen:
                            seen.add(nxt)
                            frontier.append(nxt)
            if seen != set(self._by_id):
                raise WorldValidationError("adjacency graph not connected")
        if self.region_at(self.start_pose[:2]) is None:
            raise WorldValidationError("start pose outside every region")
        if self.goal_region not in self._by_id:
            raise WorldValidationError("goal region missing")

    # -- geometry queries -----------------------------------------------------

    def region(self, rid: int) -> WorldRegion:
        return self._by_id[rid]

    def region_center(self, rid: int) -> tuple:
        return tuple(self._by_id[rid].rect.center)

    def region_at(self, p, prefer: Optional[int] = None) -> Optional[int]:
        """Containing region id; boundary points resolve to `prefer` when it
        still contains the point, else first match in region order."""
        if prefer is not None and prefer in self._by_id \
                and self._by_id[prefer].rect.contains(p, tol=1e-9):
            return prefer
        for r in self.regions:
            if r.rect.contains(p, tol=1e-9):
                return r.id
        return None

    def doorways_of(self, rid: int):
        return [(i, d) for i, d in enumerate(self.doorways)
                if rid in (d.a, d.b)]

    def route_distance(self, p, q) -> float:
        """Shortest travel distance from p to q routing through doorway
        midpoints. Exact for convex rooms with door-aligned hallways."""
        rp, rq = self.region_at(p), self.region_at(q)
        if rp is None or rq is None:
            return float("inf")
        p = np.asarray(p, float)[:2]
        q = np.asarray(q, float)[:2]
        if rp == rq:
            return float(np.linalg.norm(q - p))
        mids = [np.asarray(d.at, float) for d in self.doorways]
        dist = {}
        heap = []
        for i, d in self.doorways_of(rp):
            w = float(np.linalg.norm(mids[i] - p))
            heapq.heappush(heap, (w, i))
        best = float("inf")
        while heap:
            w, i = heapq.heappop(heap)
            if i in dist:
                continue
            dist[i] = w
            d = self.doorways[i]
            if rq in (d.a, d.b):
                best = min(best, w + float(np.linalg.norm(q - mids[i])))
            for side in (d.a, d.b):
                for j, _ in self.doorways_of(side):
                    if j not in dist:
                        heapq.heappush(
                            heap, (w + float(np.linalg.norm(mids[j]
                                                            - mids[i])), j))
        return best

    def route_points(self, p, q, allowed=None, prefer_p: Optional[int] = None,
                     prefer_q: Optional[int] = None):
        """Waypoint polyline from p to q through doorway midpoints, restricted
        to regions in `allowed` (None admits all). Returns the points after p,
        ending at q, or None when q is unreachable under the restriction.

        Every leg stays inside one convex region, so the polyline never
        leaves the region union."""
        rp = self.region_at(p, prefer=prefer_p)
        rq = self.region_at(q, prefer=prefer_q)
        if rp is None or rq is None:
            return None
        if allowed is not None and (rp not in allowed or rq not in allowed):
            return None
        p = np.asarray(p, float)[:2]
        q = np.asarray(q, float)[:2]
        if rp == rq:
            return [tuple(q)]

        def usable(d):
            return allowed is None or (d.a in allowed and d.b in allowed)

        mids = [np.asarray(d.at, float) for d in self.doorways]
        dist, prev = {}, {}
        heap = []
        for i, d in self.doorways_of(rp):
            if usable(d):
                heapq.heappush(
                    heap, (float(np.linalg.norm(mids[i] - p)), i, None))
        best, best_i = float("inf"), None
        while heap:
            w, i, via = heapq.heappop(heap)
            if i in dist:
                continue
            dist[i], prev[i] = w, via
            d = self.doorways[i]
            if rq in (d.a, d.b):
                total = w + float(np.linalg.norm(q - mids[i]))
                if total < best:
                    best, best_i = total, i
            for side in (d.a, d.b):
                for j, dj in self.doorways_of(side):
                    if j not in dist and usable(dj):
                        heapq.heappush(
                            heap, (w + float(np.linalg.norm(mids[j]
                                                            - mids[i])),
                                   j, i))
        if best_i is None:
            return None
        chain = []
        i = best_i
        while i is not None:
            chain.append(tuple(mids[i]))
            i = prev[i]
        chain.reverse()
        chain.append(tuple(q))
        return chain

    def route_to_region(self, p, rid: int) -> float:
        """Shortest travel distance until the pose can sit inside region rid
        (0 when already there): the cheapest way in through its doorways."""
        if self.region_at(p) == rid:
            return 0.0
        best = float("inf")
        for _, d in self.doorways_of(rid):
            best = min(best, self.route_distance(p, d.at))
        return best


# -- robot stepping -----------------------------------------------------------

@dataclass
class StepResult:
    pose: tuple
    u: tuple                     # (relative displacement, covariance)
    z: AppearanceObservation
    path: tuple                  # remaining waypoints
    moved_m: float


def step_robot(world: WorldSpec, pose, path, sensors: SensorConfig, rng,
               config: SimConfig = SimConfig(),
               prev_region: Optional[int] = None) -> StepResult:
    """Advance one step quantum along the waypoint path.

    Emits odometry (true relative displacement plus sampled noise) and an
    appearance observation whose transition flag marks doorway crossings.
    The same (world, pose, path, seed) always yields the same stream.
    """
    waypoints = [np.asarray(w, float)[:2] for w in path]
    if not waypoints:
        raise InvalidPathError("empty path")
    pos = np.asarray(pose[:2], float)
    if prev_region is None:
        prev_region = world.region_at(pos)
    if prev_region is None:
        raise InvalidPathError("pose outside every region")

    remaining = config.step_m
    moved = 0.0
    heading = float(pose[2])
    idx = 0
    while remaining > 1e-9 and idx < len(waypoints):
        seg = waypoints[idx] - pos
        seg_len = float(np.linalg.norm(seg))
        if seg_len < 1e-9:
            idx += 1
            continue
        take = min(seg_len, remaining)
        direction = seg / seg_len
        pos = pos + take * direction
        heading = float(math.atan2(direction[1], direction[0]))
        moved += take
        remaining -= take
        if take >= seg_len - 1e-9:
            idx += 1
    new_region = world.region_at(pos, prefer=prev_region)
    if new_region is None:
        raise InvalidPathError(f"path leaves every region at {pos.tolist()}")
    if new_region != prev_region and not any(
            {d.a, d.b} == {prev_region, new_region} for d in world.doorways):
        raise InvalidPathError(
            f"path crosses {prev_region}->{new_region} without a doorway")
    new_pose = (float(pos[0]), float(pos[1]), heading)

    cov = sensors.noise_cov(moved)
    rel = se2_between(pose, new_pose)
    noise = rng.multivariate_normal(np.zeros(3), cov) if moved > 1e-12 \
        else np.zeros(3)
    u = (tuple(float(r + n) for r, n in zip(rel, noise)), cov)

    true_type = world.region(new_region).rtype
    if rng.random() < sensors.label_validity:
        observed = true_type
    else:
        observed = sensors.inventory[int(rng.integers(len(
            sensors.inventory)))]
    z = AppearanceObservation(observed_type=observed,
                              transition=new_region != prev_region,
                              pose=new_pose)
    left = tuple((float(w[0]), float(w[1])) for w in waypoints[idx:])
    return StepResult(new_pose, u, z, left, moved)


def expose_frontiers(world: WorldSpec, visited_regions) -> list:
    """One frontier per doorway with exactly one explored side, at the
    doorway midpoint. Node ids are negative, ascending in doorway order."""
    visited = set(visited_regions)
    out = []
    n = len(world.doorways)
    for i, d in enumerate(world.doorways):
        a_in, b_in = d.a in visited, d.b in visited
        if a_in == b_in:
            continue
        out.append(FrontierPoint(node_id=i - n, doorway_index=i,
                                 position=tuple(d.at),
                                 from_region=d.a if a_in else d.b))
    return out


# -- bundled worlds -----------------------------------------------------------

def load_world(ref: str) -> WorldSpec:
    """Load a world by bundled name (e.g. 'sim-3room') or JSON file path."""
    name = str(ref).replace("-", "_")
    try:
        return WorldSpec.from_json(load_json(f"worlds/{name}.json"))
    except FileNotFoundError:
        pass
    with open(ref) as f:
        return WorldSpec.from_json(json.load(f))
