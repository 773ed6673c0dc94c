"""Imitation-learning glue: scenario rollouts as training environments.

Each environment episode replays one direction through the full
perceive-ground-filter loop; the demonstration signal comes from true-world
route distances, which the learner never sees directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from wayfinder import policy as pol
from wayfinder.config import RunConfig
from wayfinder.relations import RelationLibrary
from wayfinder.sim import load_world

from wayfinder.harness.runner import Runner, Scenario

TRAINING_HEADER = ["iteration", "agreement", "mean_loss"]


@dataclass(frozen=True)
class _Obs:
    """What the learner sees at one decision point."""

    state: pol.RobotState
    map: object


class ScenarioEnv:
    """Adapter between one Scenario and the imitation-learning loop.

    reset(seed) starts a fresh run; embed_all / expert_index / step speak
    the rollout protocol. The expert is computed over the same candidate
    action list the learner scores, so its label is always a valid index.
    """

    def __init__(self, scenario: Scenario, grounder=None, relations=None,
                 config: RunConfig = None, baseline: str = "with-language",
                 map_only: bool = False):
        self.scenario = scenario
        self.grounder = grounder
        self.relations = relations or RelationLibrary.default()
        self.config = config or RunConfig()
        self.baseline = baseline
        self.map_only = map_only
        self.moments_k = 1 if map_only else self.config.policy.moments_k
        self.runner: Optional[Runner] = None

        world = load_world(scenario.world)
        # one environment step is one committed action; a run can visit each
        # doorway frontier once plus clause stops, so this bound is generous
        self.max_steps = (self.config.policy.rollout_cap_factor
                          * (len(world.doorways) + 2) + 4)

    def reset(self, seed: int) -> _Obs:
        self.runner = Runner(self.scenario, self.baseline,
                             pol.PolicyWeights.zeros(self.moments_k),
                             seed=seed, config=self.config,
                             grounder=self.grounder, relations=self.relations)
        return self._observe()

    def _observe(self) -> _Obs:
        m = self.runner.map_estimate()
        return _Obs(self.runner.robot_state(m), m)

    def _candidates(self, obs: _Obs):
        return self.runner.candidate_actions(obs.state, obs.map)

    def embed_all(self, obs: _Obs):
        r = self.runner
        acts = self._candidates(obs)
        samples = [(1.0, obs.map)] if self.map_only else r.belief_samples()
        embeds = [pol.moment_embed(obs.state, a, samples, r.goal_spec,
                                   self.relations, self.moments_k)
                  for a in acts]
        return acts, embeds

    def expert_index(self, obs: _Obs) -> int:
        """Stop inside the goal region, otherwise head for the candidate
        frontier closest to the goal by true-world route distance. Judged in
        the true frame; ties break toward the lowest target id."""
        r = self.runner
        acts = self._candidates(obs)
        stop_i = next(i for i, a in enumerate(acts) if a.is_stop)
        here = r.world.region_at(r.pose[:2], prefer=r.true_region)
        if here == r.goal_region:
            return stop_i
        goal_c = tuple(r.world.region_center(r.goal_region))
        front = {fp.node_id: fp for fp, _ in r.frontiers()}
        best, best_key = None, None
        for i, a in enumerate(acts):
            if a.is_stop:
                continue
            d = r.world.route_distance(tuple(front[a.target].position), goal_c)
            if not math.isfinite(d):
                continue
            key = (d, a.target)
            if best_key is None or key < best_key:
                best, best_key = i, key
        return stop_i if best is None else best

    def step(self, obs: _Obs, action: pol.Action) -> Optional[_Obs]:
        if not self.runner.advance(action):
            return None
        return self._observe()


def train_policy(scenarios, grounder=None, relations=None,
                 config: RunConfig = None, seed: int = 0,
                 map_only: bool = False, baseline: str = "with-language"):
    """Train navigation weights on a list of scenarios.

    map_only trains the single-sample variant: first-moment features of the
    maximum-weight map only, ignoring the rest of the belief.
    Returns (PolicyWeights, DaggerReport); bit-identical for a fixed seed.
    """
    config = config or RunConfig()
    relations = relations or RelationLibrary.default()
    envs = [ScenarioEnv(s, grounder, relations, config, baseline, map_only)
            for s in scenarios]
    pc = config.policy
    if map_only:
        pc = replace(pc, moments_k=1)
    return pol.dagger_train(envs, pc, seed=seed)


def training_log_rows(report: pol.DaggerReport):
    """training.csv rows matching TRAINING_HEADER."""
    return [[i, f"{a:.6f}", f"{l:.6f}"]
            for i, (a, l) in enumerate(zip(report.agreement,
                                           report.mean_loss))]
