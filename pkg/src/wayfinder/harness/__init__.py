"""Experiment harness: scenario runs, policy training, metrics, and the
live session server."""

from wayfinder.harness.runner import (BASELINES, RUNS_HEADER, RunRecord,
                                      Runner, Scenario, load_directions,
                                      run_scenario, true_map_particle)
from wayfinder.harness.training import (TRAINING_HEADER, ScenarioEnv,
                                        train_policy, training_log_rows)
from wayfinder.harness.metrics import (SUMMARY_HEADER, XVAL_HEADER,
                                       EvalReport, Summary, XvalReport,
                                       cross_validate, evaluate,
                                       runs_to_csv, summarize,
                                       summary_to_csv, xval_profile,
                                       xval_to_csv)
from wayfinder.harness.server import (Session, serve, snapshot_of,
                                      start_server, world_summary)

__all__ = [
    "BASELINES", "RUNS_HEADER", "RunRecord", "Runner", "Scenario",
    "load_directions", "run_scenario", "true_map_particle",
    "TRAINING_HEADER", "ScenarioEnv", "train_policy", "training_log_rows",
    "SUMMARY_HEADER", "XVAL_HEADER", "EvalReport", "Summary", "XvalReport",
    "cross_validate", "evaluate", "runs_to_csv", "summarize",
    "summary_to_csv", "xval_profile", "xval_to_csv",
    "Session", "serve", "snapshot_of", "start_server", "world_summary",
]
