"""Belief-space action selection and imitation learning.

Actions are shortest in-graph paths to visited or frontier nodes plus an
explicit stop. Per-particle action features are aggregated into weighted
moments, and a linear cost over the stacked moments is trained with a
structured hinge loss, subgradient steps, and dataset aggregation.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from wayfinder.config import PolicyConfig

FEATURE_NAMES = (
    "path-length",
    "heading-change",
    "net-displacement",
    "landmark-area",
    "start-distance",
    "end-distance",
    "approach-delta",
    "bearing-alignment",
    "landmark-absent",
    "stop",
    "goal-region-match",
    "explore-target",
)
DIM = len(FEATURE_NAMES)

_IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


class UnreachableGoalError(ValueError):
    pass


@dataclass(frozen=True)
class Frontier:
    """Reachable node at the edge of explored space, hanging off a graph node."""

    id: int
    position: tuple
    anchor: int


@dataclass(frozen=True)
class RobotState:
    pose: tuple                     # (x, y, heading)
    node: int                       # current graph node
    visited: frozenset              # traversed graph node ids
    frontiers: tuple = ()           # Frontier instances

    def __post_init__(self):
        if self.node not in self.visited:
            raise ValueError("current node must be visited")
        if self.visited & {f.id for f in self.frontiers}:
            raise ValueError("visited and frontier ids must be disjoint")


@dataclass(frozen=True)
class Action:
    kind: str                       # "path" | "stop"
    target: int
    path: tuple = ()                # node ids, starts at the current node

    @property
    def is_stop(self):
        return self.kind == "stop"


@dataclass(frozen=True)
class GoalSpec:
    """What the policy is steering toward: a goal region type, optionally
    with the strongest relational constraint from the grounded behavior."""

    goal_type: Optional[str]
    relation: Optional[str] = None
    landmark_type: Optional[str] = None


# -- action enumeration --------------------------------------------------------

def node_positions(state: RobotState, map_estimate) -> dict:
    pos = {i: np.asarray(p[:2], float)
           for i, p in enumerate(map_estimate.node_poses)}
    for f in state.frontiers:
        pos[f.id] = np.asarray(f.position, float)
    return pos


def _graph_edges(state: RobotState, map_estimate):
    edges = {}

    def add(a, b, w):
        edges.setdefault(a, []).append((b, w))
        edges.setdefault(b, []).append((a, w))

    pos = node_positions(state, map_estimate)
    for a, b in map_estimate.adjacency:
        if a in state.visited and b in state.visited:
            add(a, b, float(np.linalg.norm(pos[a] - pos[b])))
    for f in state.frontiers:
        if f.anchor in state.visited:
            add(f.anchor, f.id, float(np.linalg.norm(pos[f.anchor]
                                                     - pos[f.id])))
    return edges


def shortest_paths(state: RobotState, map_estimate) -> dict:
    """Dijkstra tree from the current node: target -> (length, path tuple)."""
    edges = _graph_edges(state, map_estimate)
    dist = {state.node: 0.0}
    prev = {}
    heap = [(0.0, state.node)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in sorted(edges.get(u, ())):
            nd = d + w
            if v not in dist or nd < dist[v] - 1e-12:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    out = {}
    for v, d in dist.items():
        path = [v]
        while path[-1] != state.node:
            path.append(prev[path[-1]])
        out[v] = (d, tuple(reversed(path)))
    return out


def enumerate_actions(state: RobotState, map_estimate) -> list:
    """One shortest-path action per reachable visited or frontier node plus
    stop, ordered by target id with stop last."""
    reach = shortest_paths(state, map_estimate)
    targets = sorted(t for t in reach if t != state.node)
    acts = [Action("path", t, reach[t][1]) for t in targets]
    acts.append(Action("stop", state.node, (state.node,)))
    return acts


# -- features ------------------------------------------------------------------

def select_landmark(sample, goal: GoalSpec, pose, relations):
    """The goal-typed region this particle offers: highest constraint score
    when the behavior carries a relation, else nearest to the robot."""
    if goal is None or goal.goal_type is None:
        return None
    cands = [r for r in sample.regions if r.rtype == goal.goal_type]
    if not cands:
        return None
    if goal.relation is not None and relations is not None:
        lms = [r for r in sample.regions if r.rtype == goal.landmark_type]
        if lms:
            def score(c):
                return max(relations[goal.relation].score(c.geom(), lm.geom(),
                                                          pose)
                           for lm in lms)
            return max(cands, key=lambda c: (score(c), -c.id))
    p = np.asarray(pose[:2], float)
    return min(cands, key=lambda c: (float(np.linalg.norm(
        np.asarray(c.geom().center) - p)), c.id))


def _region_at(sample, point):
    for r in sample.regions:
        if r.rect is not None and r.rect.contains(point):
            return r
    return None


def features(state: RobotState, action: Action, sample, goal: GoalSpec,
             relations=None) -> np.ndarray:
    """Fixed-length features of one action against one map sample."""
    phi = np.zeros(DIM)
    pose = np.asarray(state.pose[:2], float)
    cur = _region_at(sample, pose)
    match = 1.0 if (goal is not None and cur is not None
                    and cur.rtype == goal.goal_type) else 0.0
    if action.is_stop:
        phi[_IDX["stop"]] = 1.0
        phi[_IDX["goal-region-match"]] = match
        return phi
    lm = select_landmark(sample, goal, state.pose, relations)
    if lm is None:
        phi[_IDX["landmark-absent"]] = 1.0
        return phi
    pts = _path_points(state, action, sample)
    length = sum(float(np.linalg.norm(pts[i + 1] - pts[i]))
                 for i in range(len(pts) - 1))
    heading = 0.0
    for i in range(1, len(pts) - 1):
        a = pts[i] - pts[i - 1]
        b = pts[i + 1] - pts[i]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na > 1e-9 and nb > 1e-9:
            cosang = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
            heading += abs(math.acos(cosang))
    end = pts[-1]
    net = float(np.linalg.norm(end - pts[0]))
    lm_geom = lm.geom()
    lm_center = np.asarray(lm_geom.center, float)
    area = (lm_geom.rect.width * lm_geom.rect.height
            if lm_geom.rect is not None else math.pi * lm_geom.radius ** 2)
    d_start = float(np.linalg.norm(lm_center - pts[0]))
    d_end = float(np.linalg.norm(lm_center - end))
    to_lm = lm_center - pts[0]
    disp = end - pts[0]
    nd, nl = np.linalg.norm(disp), np.linalg.norm(to_lm)
    align = float(disp @ to_lm / (nd * nl)) if nd > 1e-9 and nl > 1e-9 else 0.0
    phi[_IDX["path-length"]] = length
    phi[_IDX["heading-change"]] = heading
    phi[_IDX["net-displacement"]] = net
    phi[_IDX["landmark-area"]] = area
    phi[_IDX["start-distance"]] = d_start
    phi[_IDX["end-distance"]] = d_end
    phi[_IDX["approach-delta"]] = d_end - d_start
    phi[_IDX["bearing-alignment"]] = align
    phi[_IDX["goal-region-match"]] = match
    phi[_IDX["explore-target"]] = 1.0 if any(
        f.id == action.target for f in state.frontiers) else 0.0
    return phi


def _path_points(state: RobotState, action: Action, sample):
    frontier_pos = {f.id: np.asarray(f.position, float)
                    for f in state.frontiers}
    pts = [np.asarray(state.pose[:2], float)]
    for nid in action.path:
        if nid in frontier_pos:
            pts.append(frontier_pos[nid])
        elif hasattr(sample, "node_poses") and nid < len(sample.node_poses):
            pts.append(np.asarray(sample.node_poses[nid][:2], float))
    return pts


# -- moment embedding ----------------------------------------------------------

def moment_stack(phis: Sequence[np.ndarray], weights: Sequence[float],
                 k: int) -> np.ndarray:
    """[mean; centered 2nd moment; ...; centered k-th moment], entrywise."""
    phis = [np.asarray(p, float) for p in phis]
    w = np.asarray(weights, float)
    mean = sum(wi * p for wi, p in zip(w, phis))
    out = [mean]
    for m in range(2, k + 1):
        out.append(sum(wi * (p - mean) ** m for wi, p in zip(w, phis)))
    return np.concatenate(out)


def moment_embed(state: RobotState, action: Action, samples, goal: GoalSpec,
                 relations=None, k: int = 2) -> np.ndarray:
    """samples: sequence of (probability, map sample) pairs with normalized
    probabilities."""
    phis = [features(state, action, s, goal, relations) for _, s in samples]
    return moment_stack(phis, [p for p, _ in samples], k)


def cost(W: np.ndarray, F: np.ndarray) -> float:
    W = np.asarray(W, float)
    F = np.asarray(F, float)
    if W.shape != F.shape:
        raise ValueError(f"weight/moment dimension mismatch: "
                         f"{W.shape} vs {F.shape}")
    return float(W @ F)


def action_embeds(state: RobotState, map_estimate, samples, goal: GoalSpec,
                  relations=None, k: int = 2):
    acts = enumerate_actions(state, map_estimate)
    return acts, [moment_embed(state, a, samples, goal, relations, k)
                  for a in acts]


def select_action(W: np.ndarray, state: RobotState, map_estimate, samples,
                  goal: GoalSpec, relations=None, k: int = 2) -> Action:
    """Minimum-cost action; ties resolved by enumeration order (ascending
    target id, stop last)."""
    acts, embeds = action_embeds(state, map_estimate, samples, goal,
                                 relations, k)
    costs = [cost(W, F) for F in embeds]
    best = min(range(len(acts)), key=lambda i: (costs[i], i))
    return acts[best]


# -- structured hinge loss -----------------------------------------------------

def hinge_loss(W: np.ndarray, embeds: Sequence[np.ndarray], expert_index: int,
               lam: float = 0.0) -> float:
    """(lam/2)|W|^2 + W.F_expert - min_a [W.F_a - margin_a], margin 1 for
    non-expert actions."""
    if not 0 <= expert_index < len(embeds):
        raise ValueError("expert action not in the action set")
    W = np.asarray(W, float)
    scores = [cost(W, F) - (0.0 if i == expert_index else 1.0)
              for i, F in enumerate(embeds)]
    return (0.5 * lam * float(W @ W) + cost(W, embeds[expert_index])
            - min(scores))


def loss_augmented_argmin(W: np.ndarray, embeds: Sequence[np.ndarray],
                          expert_index: int) -> int:
    scores = [cost(W, F) - (0.0 if i == expert_index else 1.0)
              for i, F in enumerate(embeds)]
    return min(range(len(embeds)), key=lambda i: (scores[i], i))


def subgradient(W: np.ndarray, embeds: Sequence[np.ndarray], expert_index: int,
                lam: float = 0.0) -> np.ndarray:
    if not 0 <= expert_index < len(embeds):
        raise ValueError("expert action not in the action set")
    W = np.asarray(W, float)
    a_prime = loss_augmented_argmin(W, embeds, expert_index)
    return lam * W + np.asarray(embeds[expert_index], float) \
        - np.asarray(embeds[a_prime], float)


def update_weights(W: np.ndarray, g: np.ndarray, t: int, alpha0: float = 0.5,
                   gamma: float = 0.5) -> np.ndarray:
    if t < 1:
        raise ValueError("update step index starts at 1")
    return np.asarray(W, float) - (alpha0 / t ** gamma) * np.asarray(g, float)


# -- weights container ---------------------------------------------------------

def _schema_hash(names) -> str:
    return hashlib.sha256("|".join(names).encode()).hexdigest()[:16]


@dataclass
class PolicyWeights:
    W: np.ndarray
    moments_k: int = 2
    dim: int = DIM
    reg_lambda: float = 1e-3
    alpha0: float = 0.5
    decay_gamma: float = 0.5
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        self.W = np.asarray(self.W, float)
        if self.W.shape != (self.moments_k * self.dim,):
            raise ValueError("weight vector must have K*d entries")
        if self.reg_lambda < 0 or self.alpha0 <= 0 \
                or not 0 < self.decay_gamma <= 1:
            raise ValueError("invalid training hyperparameters")

    @classmethod
    def zeros(cls, moments_k: int = 2, **kw) -> "PolicyWeights":
        return cls(np.zeros(moments_k * DIM), moments_k=moments_k, **kw)

    def to_json(self) -> dict:
        return {
            "schema": _schema_hash(self.feature_names),
            "feature_names": list(self.feature_names),
            "moments_k": self.moments_k,
            "dim": self.dim,
            "reg_lambda": self.reg_lambda,
            "alpha0": self.alpha0,
            "decay_gamma": self.decay_gamma,
            "w": [float(x) for x in self.W],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PolicyWeights":
        names = tuple(obj["feature_names"])
        if obj.get("schema") != _schema_hash(names):
            raise ValueError("weights file schema hash mismatch")
        return cls(np.array(obj["w"], float), moments_k=int(obj["moments_k"]),
                   dim=int(obj["dim"]), reg_lambda=float(obj["reg_lambda"]),
                   alpha0=float(obj["alpha0"]),
                   decay_gamma=float(obj["decay_gamma"]), feature_names=names)


# -- expert --------------------------------------------------------------------

def expert_action(world, state: RobotState, map_estimate,
                  goal_region: int) -> Action:
    """Demonstration oracle: stop inside the goal region, otherwise take the
    enumerated action whose endpoint is closest to the goal by true-world
    route distance."""
    goal_center = world.region_center(goal_region)
    if world.region_at(state.pose[:2]) == goal_region:
        return Action("stop", state.node, (state.node,))
    pos = node_positions(state, map_estimate)
    best = None
    best_key = None
    for a in enumerate_actions(state, map_estimate):
        if a.is_stop:
            continue
        d = world.route_distance(tuple(pos[a.target]), tuple(goal_center))
        if not math.isfinite(d):
            continue
        key = (d, a.target)
        if best_key is None or key < best_key:
            best, best_key = a, key
    if best is None:
        raise UnreachableGoalError(f"no enumerated action approaches region "
                                   f"{goal_region}")
    return best


# -- imitation learning --------------------------------------------------------

@dataclass
class DaggerReport:
    agreement: list = field(default_factory=list)   # per iteration
    mean_loss: list = field(default_factory=list)
    num_states: int = 0


def dagger_train(envs, config: PolicyConfig = PolicyConfig(), seed: int = 0,
                 dim: int = DIM):
    """Iterate rollout, expert labeling, aggregation, and subgradient passes.

    Each env provides: reset(seed) -> state; embed_all(state) ->
    (actions, moment vectors); expert_index(state) -> int;
    step(state, action) -> next state or None; max_steps.
    Iteration 0 rolls out the expert, later iterations the current policy.
    Deterministic given the seed.
    """
    k = config.moments_k
    W = np.zeros(k * dim)
    dataset = []
    report = DaggerReport()
    rng = np.random.default_rng(seed)
    t = 1
    for it in range(config.dagger_iterations):
        for ei, env in enumerate(envs):
            state = env.reset(seed * 100003 + it * 1009 + ei)
            steps = 0
            while state is not None and steps < env.max_steps:
                acts, embeds = env.embed_all(state)
                exp_idx = env.expert_index(state)
                dataset.append((embeds, exp_idx))
                if it == 0:
                    choice = exp_idx
                else:
                    costs = [cost(W, F) for F in embeds]
                    choice = min(range(len(acts)),
                                 key=lambda i: (costs[i], i))
                state = env.step(state, acts[choice])
                steps += 1
        for _ in range(config.epochs_per_iteration):
            for idx in rng.permutation(len(dataset)):
                embeds, exp_idx = dataset[idx]
                g = subgradient(W, embeds, exp_idx, config.reg_lambda)
                W = update_weights(W, g, t, config.alpha0, config.decay_gamma)
                t += 1
        agree = 0
        total_loss = 0.0
        for embeds, exp_idx in dataset:
            costs = [cost(W, F) for F in embeds]
            if min(range(len(embeds)), key=lambda i: (costs[i], i)) == exp_idx:
                agree += 1
            total_loss += hinge_loss(W, embeds, exp_idx, config.reg_lambda)
        report.agreement.append(agree / len(dataset))
        report.mean_loss.append(total_loss / len(dataset))
    report.num_states = len(dataset)
    weights = PolicyWeights(W, moments_k=k, dim=dim,
                            reg_lambda=config.reg_lambda,
                            alpha0=config.alpha0,
                            decay_gamma=config.decay_gamma)
    return weights, report


def save_weights(path, weights: PolicyWeights):
    with open(path, "w") as f:
        json.dump(weights.to_json(), f, indent=1)


def load_weights(path) -> PolicyWeights:
    with open(path) as f:
        return PolicyWeights.from_json(json.load(f))
