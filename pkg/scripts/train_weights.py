#!/usr/bin/env python3
"""Regenerate the bundled weight files.

Produces, under src/wayfinder/data/weights/:
  grounding.json            grounding weights fit on the labeled corpus
  policy-<world>.json       per-baseline navigation weight bundles, one file
                            per world, each baseline trained in its own
                            regime on that world's full direction set

Everything is deterministic for a fixed seed, so reruns reproduce the
bundled files byte for byte.
"""

import argparse
import json
import time
from pathlib import Path

from wayfinder.config import RunConfig
from wayfinder.grounding import Grounder, load_corpus, train_weights
from wayfinder.harness import BASELINES, load_directions, train_policy
from wayfinder.harness.cli import save_policy_bundle
from wayfinder.relations import RelationLibrary


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir",
                    default=Path(__file__).resolve().parents[1]
                    / "src" / "wayfinder" / "data" / "weights")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.time()
    trained = train_weights(load_corpus())
    path = out / "grounding.json"
    path.write_text(json.dumps(trained.weights.to_json(), indent=1) + "\n")
    print(f"{path} (assignment accuracy {trained.report.map_accuracy:.3f}, "
          f"{time.time() - t0:.0f}s)", flush=True)

    grounder = Grounder(trained.weights)
    relations = RelationLibrary.default()
    config = RunConfig()
    directions = load_directions()
    for world in sorted({s.world for s in directions}):
        scenarios = [s for s in directions if s.world == world]
        bundle = {}
        for baseline in BASELINES:
            t1 = time.time()
            w, report = train_policy(scenarios, grounder=grounder,
                                     relations=relations, config=config,
                                     seed=args.seed, baseline=baseline)
            bundle[baseline] = w
            print(f"  {world}/{baseline}: {report.num_states} states, "
                  f"agreement {report.agreement[-1]:.3f} "
                  f"({time.time() - t1:.0f}s)", flush=True)
        path = out / f"policy-{world}.json"
        save_policy_bundle(path, bundle)
        print(f"{path}", flush=True)


if __name__ == "__main__":
    main()
