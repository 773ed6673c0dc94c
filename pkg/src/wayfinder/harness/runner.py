"""One scenario end to end: perceive, ground, filter, act, repeat.

The runner owns the true world state (pose, region, sensor stream) and the
robot's belief, and advances both one motion quantum at a time. Action paths
execute over the true positions of trajectory nodes (places the robot has
physically been) while features and costs are computed in the belief frame.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from wayfinder import policy as pol
from wayfinder import rbpf
from wayfinder.assets import data_path
from wayfinder.config import RunConfig
from wayfinder.geometry import Rect
from wayfinder.relations import RelationLibrary
from wayfinder.semmap import (VISITED, Belief, Particle, Region, SemanticMap)
from wayfinder.sim import (InvalidPathError, SensorConfig, WorldSpec,
                           expose_frontiers, load_world, step_robot)

BASELINES = ("known-map", "with-language", "without-language")


@dataclass(frozen=True)
class Scenario:
    id: str
    world: str                       # bundled world name or JSON path
    text: str
    goal_region: Optional[int] = None    # defaults to the world's goal
    start_pose: Optional[tuple] = None   # defaults to the world's start


def load_directions(path=None) -> list:
    """The bundled direction corpus, or any corpus JSON with the same shape."""
    p = path or data_path("corpus_directions.json")
    with open(p) as fh:
        raw = json.load(fh)
    return [Scenario(d["id"], d["world"], d["text"], d.get("goal"),
                     tuple(d["start"]) if d.get("start") else None)
            for d in raw["directions"]]


@dataclass
class RunRecord:
    scenario_id: str
    baseline: str
    seed: int
    steps: int
    distance_m: float
    ending_error_m: float
    success: bool
    capped: bool
    wall_clock_s: float
    goal_region: int
    trace: Optional[list] = None

    def row(self):
        """runs.csv columns; wall clock is reported separately because it is
        not deterministic."""
        return [self.scenario_id, self.baseline, self.seed, self.steps,
                f"{self.distance_m:.6f}", f"{self.ending_error_m:.6f}",
                int(self.success), int(self.capped)]


RUNS_HEADER = ["scenario", "baseline", "seed", "steps", "distance_m",
               "ending_error_m", "success", "capped"]


# -- belief construction -------------------------------------------------------

def true_map_particle(world: WorldSpec, start_pose, particle_id=0) -> Particle:
    """Single particle whose map is the ground-truth world: every region
    visited with its true extent pinned."""
    p = Particle(particle_id)
    for r in sorted(world.regions, key=lambda r: r.id):
        p.regions[r.id] = Region(
            id=r.id, rtype=r.rtype, status=VISITED,
            rect=Rect(*r.rect.as_list()),
            label_counts={r.rtype: 1000}, validity=1.0, pinned=True)
    p.next_region_id = max(p.regions) + 1
    start_region = world.region_at(start_pose[:2])
    from wayfinder.semmap import Node
    p.nodes.append(Node(id=0, region_id=start_region, step=0))
    p.regions[start_region].node_ids.append(0)
    p.means.append(np.asarray(start_pose, float).copy())
    return p


def initial_belief(world, start_pose, baseline, num_particles,
                   start_label) -> Belief:
    if baseline == "known-map":
        return Belief([true_map_particle(world, start_pose)], step=0)
    parts = [Particle.initial(start_pose, start_label, particle_id=i)
             for i in range(num_particles)]
    return Belief(parts, step=0)


# -- goal derivation -----------------------------------------------------------

def goal_spec_from(behavior, map_estimate, annotations) -> pol.GoalSpec:
    """Policy goal: prefer the grounded behavior's goal region type, else the
    clause's primary annotation figure."""
    if behavior is not None and behavior.goal_region is not None:
        try:
            goal_type = map_estimate.region_by_id(behavior.goal_region).rtype
        except KeyError:
            goal_type = None
        relation = landmark_type = None
        if behavior.constraints:
            rel, rid = behavior.constraints[0]
            try:
                landmark_type = map_estimate.region_by_id(rid).rtype
                relation = rel
            except KeyError:
                pass
        if goal_type is not None:
            return pol.GoalSpec(goal_type, relation, landmark_type)
    for a in annotations:
        return pol.GoalSpec(a.figure, a.relation, a.landmark)
    return pol.GoalSpec(None)


def to_filter_annotations(result, step) -> tuple:
    """Grounded clause facts as filter observations."""
    return tuple(rbpf.AnnotationObservation(a.figure, a.relation, a.landmark,
                                            step=step)
                 for a in result.annotations)


# -- the loop ------------------------------------------------------------------

class Runner:
    """Stateful scenario execution shared by run_scenario, policy training,
    and the serve session."""

    def __init__(self, scenario: Scenario, baseline: str,
                 weights: pol.PolicyWeights, seed: int,
                 config: RunConfig = None, grounder=None, relations=None,
                 keep_trace=False, annotation_override=None):
        if baseline not in BASELINES:
            raise ValueError(f"unknown baseline {baseline!r}")
        self.scenario = scenario
        self.baseline = baseline
        self.weights = weights
        self.seed = int(seed)
        self.config = config or RunConfig()
        self.grounder = grounder
        self.relations = relations or RelationLibrary.default()
        self.keep_trace = keep_trace
        self.annotation_override = annotation_override
        self.world = load_world(scenario.world)
        self.goal_region = scenario.goal_region \
            if scenario.goal_region is not None else self.world.goal_region
        sim = self.config.sim
        fc = self.config.filter
        self.sensors = SensorConfig(label_validity=1.0 - sim.label_noise,
                                    odom_sigma_xy=fc.odom_sigma_xy,
                                    odom_sigma_theta=fc.odom_sigma_theta)
        self.reset()

    # -- lifecycle ------------------------------------------------------------

    def reset(self):
        self.sensor_rng = np.random.default_rng(
            (self.seed & 0xFFFFFFFF, 0xC0FFEE))
        start = self.scenario.start_pose or self.world.start_pose
        self.pose = tuple(float(x) for x in start)
        self.true_region = self.world.region_at(self.pose[:2])
        self.visited_world = {self.true_region}
        self.true_node_pos = [self.pose[:2]]
        self.distance_m = 0.0
        self.sim_steps = 0
        self.status = "running"          # running | stopped | capped
        self.queue = []                  # committed waypoints not yet driven
        self.trace = [] if self.keep_trace else None
        self.behavior = None
        self.goal_spec = pol.GoalSpec(None)
        self.last_action = None
        shortest = self.world.route_to_region(self.pose[:2], self.goal_region)
        per_step = self.config.sim.step_m
        base_steps = max(int(math.ceil(shortest / per_step)), 4)
        self.step_cap = self.config.step_cap_factor * base_steps
        self.shortest_m = shortest

        start_label = self._draw_label(
            self.world.region(self.true_region).rtype)
        self.belief = initial_belief(self.world, self.pose, self.baseline,
                                     self.config.filter.num_particles,
                                     start_label)
        self.grounded = self.grounder.annotate(self.scenario.text) \
            if self.grounder is not None and self.scenario.text else None
        self.clause = 0
        self.num_clauses = self.grounded.num_clauses if self.grounded else 1
        self._queue_clause_annotations()
        self._filter_step(None, None)
        self._ground_clause()

    def _draw_label(self, true_type):
        if self.sensor_rng.random() < self.sensors.label_validity:
            return true_type
        return self.sensors.inventory[
            int(self.sensor_rng.integers(len(self.sensors.inventory)))]

    def _clause_annotations(self, ci):
        if self.annotation_override is not None:
            return tuple(self.annotation_override[ci]) \
                if ci < len(self.annotation_override) else ()
        # known-map has nothing to hypothesize; without-language suppresses
        # the annotation stream entirely
        if self.baseline in ("without-language", "known-map") \
                or self.grounded is None:
            return ()
        return to_filter_annotations(self.grounded.annotations[ci],
                                     step=self.belief.step + 1)

    def _queue_clause_annotations(self):
        self.pending = self._clause_annotations(self.clause)

    def _filter_step(self, u, z):
        alpha = self.pending
        self.pending = ()
        rbpf.step(self.belief, u, z, alpha, seed=self.seed,
                  config=self.config.filter, relations=self.relations)
        if self.trace is not None:
            self.trace.append({
                "step": self.belief.step,
                "true_pose": [round(v, 9) for v in self.pose],
                "annotations": [
                    {"figure": a.figure, "relation": a.relation,
                     "landmark": a.landmark} for a in alpha],
                "belief": rbpf.trace_record(self.belief),
            })

    def _ground_clause(self):
        self.behavior = None
        snap = self.map_estimate()
        if self.grounded is not None:
            try:
                res = self.grounder.behave(self.grounded, snap,
                                           clause_index=self.clause)
                self.behavior = res.behavior
            except Exception:
                self.behavior = None
        anns = []
        if self.grounded is not None:
            anns = self.grounded.annotations[self.clause].annotations
        self.goal_spec = goal_spec_from(self.behavior, snap, anns)

    def inject_command(self, text: str):
        """Ground a direction received mid-run; its annotations enter the
        filter at the next step and the active goal switches to the new
        text's first clause. A stopped session resumes; a capped one does
        not. Returns the grounded direction."""
        if self.grounder is None:
            raise ValueError("session has no grounder")
        grounded = self.grounder.annotate(text)
        self.grounded = grounded
        self.clause = 0
        self.num_clauses = grounded.num_clauses
        self._queue_clause_annotations()
        self._ground_clause()
        if self.status == "stopped":
            self.status = "running"
        return grounded

    # -- belief views ---------------------------------------------------------

    def map_estimate(self) -> SemanticMap:
        return SemanticMap.from_particle(self.belief.map_particle(),
                                         self.belief.step)

    def belief_samples(self):
        ws = self.belief.weights()
        return [(float(w), SemanticMap.from_particle(p, self.belief.step))
                for w, p in zip(ws, self.belief.particles)]

    def frontiers(self):
        out = []
        for fp in expose_frontiers(self.world, self.visited_world):
            d = np.asarray(fp.position, float)
            anchor = min(range(len(self.true_node_pos)),
                         key=lambda i: (float(np.linalg.norm(
                             np.asarray(self.true_node_pos[i]) - d)), i))
            out.append((fp, anchor))
        return out

    def robot_state(self, map_estimate) -> pol.RobotState:
        fr = tuple(pol.Frontier(fp.node_id, fp.position, anchor)
                   for fp, anchor in self.frontiers())
        n = len(map_estimate.node_poses)
        return pol.RobotState(tuple(map_estimate.robot_pose), n - 1,
                              frozenset(range(n)), fr)

    def candidate_actions(self, state, map_estimate):
        """Frontier paths plus stop: interior trajectory targets are dominated
        and skipped to keep decisions cheap."""
        frontier_ids = {f.id for f in state.frontiers}
        acts = pol.enumerate_actions(state, map_estimate)
        return [a for a in acts if a.is_stop or a.target in frontier_ids]

    # -- frontier entry points -------------------------------------------------

    def _frontier_entry(self, fp) -> tuple:
        """Entry point of the region behind the doorway. Baselines that infer
        region types from noisy labels drive to the center, banking several
        label readings before the next decision so one flipped label cannot
        masquerade as the region's type at the moment the policy weighs
        stopping. The known-map baseline carries pinned types, needs no such
        look-around, and crosses just past the threshold."""
        d = self.world.doorways[fp.doorway_index]
        other = d.b if d.a == fp.from_region else d.a
        center = np.asarray(self.world.region_center(other), float)
        if self.baseline == "known-map":
            mid = np.asarray(fp.position, float)
            v = center - mid
            norm = float(np.linalg.norm(v))
            inside = mid + (0.75 / norm) * v if norm > 1e-9 else center
            return (float(inside[0]), float(inside[1]))
        return (float(center[0]), float(center[1]))

    def waypoints_for(self, action: pol.Action):
        """Waypoints that realize the action in the true frame. Frontier
        targets route through doorway midpoints of visited regions, so every
        leg crosses convex interiors and never clips a wall corner."""
        front = {fp.node_id: fp for fp, _ in self.frontiers()}
        fp = front.get(action.target)
        if fp is not None:
            pts = self.world.route_points(
                self.pose[:2], fp.position, allowed=self.visited_world,
                prefer_p=self.true_region, prefer_q=fp.from_region)
            if pts is None:
                raise InvalidPathError(
                    f"frontier {action.target} unreachable through visited "
                    "regions")
            pts.append(self._frontier_entry(fp))
            return pts
        return [tuple(self.true_node_pos[nid]) for nid in action.path[1:]]

    # -- decide / advance ------------------------------------------------------

    def decide(self) -> pol.Action:
        m = self.map_estimate()
        state = self.robot_state(m)
        if self.behavior is not None and self.behavior.action == "stop":
            return pol.Action("stop", state.node, (state.node,))
        acts = self.candidate_actions(state, m)
        if len(acts) == 1:
            return acts[0]
        samples = self.belief_samples()
        k = self.weights.moments_k
        costs = []
        for a in acts:
            F = pol.moment_embed(state, a, samples, self.goal_spec,
                                 self.relations, k)
            costs.append(pol.cost(self.weights.W, F))
        best = min(range(len(acts)), key=lambda i: (costs[i], i))
        return acts[best]

    def _move_quantum(self, pts):
        """One motion quantum along the waypoint polyline; returns the
        remaining waypoints."""
        res = step_robot(self.world, self.pose, pts, self.sensors,
                         self.sensor_rng, config=self.config.sim,
                         prev_region=self.true_region)
        self.pose = res.pose
        self.true_region = self.world.region_at(self.pose[:2],
                                                prefer=self.true_region)
        self.visited_world.add(self.true_region)
        self.true_node_pos.append(self.pose[:2])
        self.distance_m += res.moved_m
        self.sim_steps += 1
        self._filter_step(res.u, res.z)
        if self.sim_steps >= self.step_cap:
            self.status = "capped"
        return list(res.path)

    def _apply_stop(self) -> bool:
        if self.clause + 1 < self.num_clauses:
            self.clause += 1
            self._queue_clause_annotations()
            self._filter_step(None, None)
            self._ground_clause()
            return True
        self.status = "stopped"
        return False

    def advance(self, action: pol.Action) -> bool:
        """Apply one decision, driving path actions to completion; a decision
        is committed because the trajectory graph is a chain and re-deciding
        mid-retrace would walk in place. Returns False when the run ended."""
        self.last_action = action
        self.queue = []
        if action.is_stop:
            return self._apply_stop()
        pts = self.waypoints_for(action)
        while pts and self.status == "running":
            pts = self._move_quantum(pts)
        return self.status == "running"

    def tick(self) -> bool:
        """Quantum-level variant of advance used by the live session: decides
        when idle, then moves one quantum of the committed path."""
        if self.status != "running":
            return False
        if not self.queue:
            a = self.decide()
            self.last_action = a
            if a.is_stop:
                return self._apply_stop()
            self.queue = self.waypoints_for(a)
        if self.queue and self.status == "running":
            self.queue = self._move_quantum(self.queue)
        return self.status == "running"

    def run(self) -> RunRecord:
        t0 = time.perf_counter()
        while self.status == "running":
            if not self.advance(self.decide()):
                break
        center = np.asarray(self.world.region_center(self.goal_region))
        err = float(np.linalg.norm(np.asarray(self.pose[:2]) - center))
        success = self.true_region == self.goal_region \
            and self.status == "stopped"
        return RunRecord(self.scenario.id, self.baseline, self.seed,
                         self.sim_steps, self.distance_m, err, success,
                         self.status == "capped",
                         time.perf_counter() - t0, self.goal_region,
                         self.trace)


def run_scenario(scenario: Scenario, baseline: str,
                 weights: pol.PolicyWeights, seed: int,
                 config: RunConfig = None, grounder=None, relations=None,
                 keep_trace=False, annotation_override=None) -> RunRecord:
    return Runner(scenario, baseline, weights, seed, config, grounder,
                  relations, keep_trace, annotation_override).run()
