"""Batch evaluation and cross-validation over the direction corpus.

CSV schemas
-----------
runs.csv      scenario, baseline, seed, steps, distance_m, ending_error_m,
              success, capped
summary.csv   baseline, runs, mean_distance_m, std_distance_m, mean_steps,
              std_steps, success_rate, mean_ending_error_m
training.csv  iteration, agreement, mean_loss
xval.csv      trial, variant, mean_normalized_error

Floats are written with six decimal places; wall-clock time is never
written, so identical seeds produce byte-identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from wayfinder.config import RunConfig
from wayfinder.relations import RelationLibrary
from wayfinder.sim import load_world

from wayfinder.harness.runner import (BASELINES, RUNS_HEADER, RunRecord,
                                      run_scenario)
from wayfinder.harness.training import train_policy

SUMMARY_HEADER = ["baseline", "runs", "mean_distance_m", "std_distance_m",
                  "mean_steps", "std_steps", "success_rate",
                  "mean_ending_error_m"]

XVAL_HEADER = ["trial", "variant", "mean_normalized_error"]


# -- evaluation ----------------------------------------------------------------

@dataclass
class Summary:
    baseline: str
    runs: int
    mean_distance_m: float
    std_distance_m: float
    mean_steps: float
    std_steps: float
    success_rate: float
    mean_ending_error_m: float

    def row(self):
        return [self.baseline, self.runs,
                f"{self.mean_distance_m:.6f}", f"{self.std_distance_m:.6f}",
                f"{self.mean_steps:.6f}", f"{self.std_steps:.6f}",
                f"{self.success_rate:.6f}", f"{self.mean_ending_error_m:.6f}"]


@dataclass
class EvalReport:
    records: list = field(default_factory=list)

    def summaries(self):
        return summarize(self.records)

    def by_baseline(self, baseline):
        return [r for r in self.records if r.baseline == baseline]


def evaluate(scenarios, weights, baselines=BASELINES, seeds=(0,),
             config: RunConfig = None, grounder=None, relations=None,
             keep_traces=False) -> EvalReport:
    """Run every scenario under every baseline and seed. `weights` is either
    one weight set shared by all baselines or a mapping baseline -> weights,
    since each baseline is normally trained in its own regime. Iteration
    order (scenario, baseline, seed) fixes row order."""
    relations = relations or RelationLibrary.default()
    report = EvalReport()
    for sc in scenarios:
        for b in baselines:
            w = weights[b] if isinstance(weights, dict) else weights
            for seed in seeds:
                report.records.append(run_scenario(
                    sc, b, w, seed, config=config, grounder=grounder,
                    relations=relations, keep_trace=keep_traces))
    return report


def summarize(records) -> list:
    """Per-baseline aggregates in BASELINES order. Population standard
    deviation; every value recomputable from the run records."""
    out = []
    for b in BASELINES:
        rs = [r for r in records if r.baseline == b]
        if not rs:
            continue
        dist = np.array([r.distance_m for r in rs], float)
        steps = np.array([r.steps for r in rs], float)
        err = np.array([r.ending_error_m for r in rs], float)
        succ = np.array([1.0 if r.success else 0.0 for r in rs])
        out.append(Summary(b, len(rs),
                           float(dist.mean()), float(dist.std()),
                           float(steps.mean()), float(steps.std()),
                           float(succ.mean()), float(err.mean())))
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def runs_to_csv(records, path):
    _write_csv(path, RUNS_HEADER, [r.row() for r in records])


def summary_to_csv(records, path):
    _write_csv(path, SUMMARY_HEADER, [s.row() for s in summarize(records)])


# -- cross-validation ----------------------------------------------------------

def xval_profile(num_particles=8, dagger_iterations=2,
                 epochs_per_iteration=2, rollout_cap_factor=2,
                 step_cap_factor=10) -> RunConfig:
    """Reduced-budget settings for repeated train/evaluate trials."""
    base = RunConfig()
    return replace(
        base,
        filter=replace(base.filter, num_particles=num_particles),
        policy=replace(base.policy, dagger_iterations=dagger_iterations,
                       epochs_per_iteration=epochs_per_iteration,
                       rollout_cap_factor=rollout_cap_factor),
        step_cap_factor=step_cap_factor)


@dataclass
class XvalTrial:
    trial: int
    belief_mean: float      # mean normalized ending error, K-moment belief
    map_only_mean: float    # same, single maximum-weight sample
    belief_errors: list = field(default_factory=list)
    map_only_errors: list = field(default_factory=list)

    def rows(self):
        return [[self.trial, "belief", f"{self.belief_mean:.6f}"],
                [self.trial, "map-only", f"{self.map_only_mean:.6f}"]]


@dataclass
class XvalReport:
    trials: list = field(default_factory=list)
    train_n: int = 0
    held_n: int = 0

    def belief_means(self):
        return [t.belief_mean for t in self.trials]

    def map_only_means(self):
        return [t.map_only_mean for t in self.trials]

    def quartiles(self, variant="belief"):
        vals = self.belief_means() if variant == "belief" \
            else self.map_only_means()
        q = np.percentile(np.array(vals, float), [25, 50, 75])
        return tuple(float(x) for x in q)

    def rows(self):
        return [row for t in self.trials for row in t.rows()]


def _normalizer(scenario):
    world = load_world(scenario.world)
    start = scenario.start_pose or world.start_pose
    goal = scenario.goal_region if scenario.goal_region is not None \
        else world.goal_region
    return max(world.route_to_region(tuple(start[:2]), goal), 1.0)


def cross_validate(scenarios, grounder=None, relations=None, trials=20,
                   train_n=28, seed=0, config: RunConfig = None) -> XvalReport:
    """Random train/held-out splits; each trial trains the belief variant and
    the map-only variant on the same split and compares mean held-out ending
    error normalized by route length."""
    relations = relations or RelationLibrary.default()
    config = config or xval_profile()
    scenarios = list(scenarios)
    norms = {sc.id: _normalizer(sc) for sc in scenarios}
    report = XvalReport(train_n=train_n,
                        held_n=max(len(scenarios) - train_n, 0))
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        perm = rng.permutation(len(scenarios))
        train = [scenarios[i] for i in perm[:train_n]]
        held = [scenarios[i] for i in perm[train_n:]]
        trial = XvalTrial(t, 0.0, 0.0)
        for variant, errors in (("belief", trial.belief_errors),
                                ("map-only", trial.map_only_errors)):
            weights, _ = train_policy(
                train, grounder, relations, config=config,
                seed=seed * 7919 + t, map_only=(variant == "map-only"))
            for i, sc in enumerate(held):
                rec = run_scenario(sc, "with-language", weights,
                                   seed=t * 1000003 + i * 101,
                                   config=config, grounder=grounder,
                                   relations=relations)
                errors.append(rec.ending_error_m / norms[sc.id])
        trial.belief_mean = float(np.mean(trial.belief_errors))
        trial.map_only_mean = float(np.mean(trial.map_only_errors))
        report.trials.append(trial)
    return report


def xval_to_csv(report: XvalReport, path):
    _write_csv(path, XVAL_HEADER, report.rows())
