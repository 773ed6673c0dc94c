"""Command-line interface.

Subcommands:
  parse            print the bracketed constituency tree of a direction
  ground           print per-clause annotations of a direction
  train-grounding  fit grounding weights on the labeled corpus
  train-policy     fit navigation weights by imitation on direction scenarios
  run              execute one direction under a baseline, print the record
  eval             run a corpus under every baseline, write runs/summary CSVs
  xval             train/held-out comparison study, write xval.csv
  serve            live session endpoint for the operator console

Policy weights files hold either a single weight set or a bundle keyed by
baseline ({"baselines": {"known-map": {...}, ...}}), since each baseline is
normally trained in its own regime. Grounding weights are retrained from the
bundled labeled corpus on demand (a few seconds, deterministic) unless
`ground` is given an exported file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from wayfinder import policy as pol
from wayfinder.assets import data_path, load_json
from wayfinder.config import RunConfig
from wayfinder.grounding import (Grounder, GroundingWeights, SymbolSpace,
                                 load_corpus, train_weights)
from wayfinder.harness.metrics import (cross_validate, evaluate, runs_to_csv,
                                       summary_to_csv, xval_to_csv)
from wayfinder.harness.runner import (BASELINES, Runner, Scenario,
                                      load_directions, run_scenario)
from wayfinder.harness.training import train_policy, training_log_rows
from wayfinder.harness.server import serve
from wayfinder.relations import RelationLibrary


def _config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "particles", None):
        cfg = replace(cfg, filter=replace(cfg.filter,
                                          num_particles=args.particles))
    if getattr(args, "moments", None):
        cfg = replace(cfg, policy=replace(cfg.policy,
                                          moments_k=args.moments))
    return cfg


def _grounder(args=None) -> Grounder:
    path = getattr(args, "weights", None) if args is not None else None
    space = SymbolSpace.default()
    if path:
        with open(path) as f:
            return Grounder(GroundingWeights.from_json(json.load(f), space))
    try:
        return Grounder(GroundingWeights.from_json(
            load_json("weights", "grounding.json"), space))
    except FileNotFoundError:
        return Grounder(train_weights(load_corpus()).weights)


def load_policy_weights(path):
    """Single weight set, or {baseline: weights} when the file is a bundle."""
    with open(path) as f:
        obj = json.load(f)
    if "baselines" in obj:
        return {b: pol.PolicyWeights.from_json(w)
                for b, w in obj["baselines"].items()}
    return pol.PolicyWeights.from_json(obj)


def save_policy_bundle(path, weights_by_baseline: dict):
    with open(path, "w") as f:
        json.dump({"baselines": {b: w.to_json()
                                 for b, w in weights_by_baseline.items()}},
                  f, indent=1)


def _weights_for(args, cfg: RunConfig, world=None):
    if getattr(args, "weights", None):
        return load_policy_weights(args.weights)
    if world is not None:
        try:
            return load_policy_weights(data_path("weights",
                                                 f"policy-{world}.json"))
        except FileNotFoundError:
            pass
    print("note: no weights for this world, using zero weights",
          file=sys.stderr)
    return pol.PolicyWeights.zeros(cfg.policy.moments_k)


def _pick(weights, baseline):
    if isinstance(weights, dict):
        try:
            return weights[baseline]
        except KeyError:
            raise SystemExit(f"weights bundle has no entry for {baseline!r}")
    return weights


def _scenario(args, directions):
    byid = {s.id: s for s in directions}
    if args.direction in byid:
        return byid[args.direction]
    if not args.world:
        raise SystemExit(
            f"{args.direction!r} is not a corpus id; pass --world to run it "
            "as free text")
    return Scenario(id="cli", world=args.world, text=args.direction)


def _seeds(spec: str):
    return tuple(int(s) for s in spec.split(","))


# -- subcommands ---------------------------------------------------------------

def cmd_parse(args):
    g = _grounder()
    print(repr(g.parse(args.text)))
    return 0


def cmd_ground(args):
    g = _grounder(args)
    res = g.annotate(args.text)
    out = {
        "text": args.text,
        "clauses": res.num_clauses,
        "annotations": [[{"figure": a.figure, "relation": a.relation,
                          "landmark": a.landmark}
                         for a in clause.annotations]
                        for clause in res.annotations],
    }
    body = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(body + "\n")
    else:
        print(body)
    return 0


def cmd_train_grounding(args):
    corpus = load_corpus(args.corpus)
    trained = train_weights(corpus)
    obj = trained.weights.to_json()
    path = args.out or "grounding_weights.json"
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")
    print(f"wrote {path} ({len(corpus)} examples, "
          f"assignment accuracy {trained.report.map_accuracy:.3f})")
    return 0


def cmd_train_policy(args):
    cfg = _config(args)
    directions = load_directions(args.corpus)
    g = _grounder()
    rel = RelationLibrary.default()
    baselines = (args.baseline,) if args.baseline else BASELINES
    bundle = {}
    log_rows = []
    for b in baselines:
        w, report = train_policy(directions, grounder=g, relations=rel,
                                 config=cfg, seed=args.seed, baseline=b)
        bundle[b] = w
        log_rows.extend([[b] + row for row in training_log_rows(report)])
        print(f"{b}: {report.num_states} states, "
              f"final agreement {report.agreement[-1]:.3f}")
    path = args.out or "policy_weights.json"
    if args.baseline:
        pol.save_weights(path, bundle[args.baseline])
    else:
        save_policy_bundle(path, bundle)
    log_path = str(Path(path).with_suffix("")) + "_training.csv"
    with open(log_path, "w") as f:
        f.write("baseline,iteration,agreement,mean_loss\n")
        for row in log_rows:
            f.write(",".join(str(c) for c in row) + "\n")
    print(f"wrote {path} and {log_path}")
    return 0


def cmd_run(args):
    cfg = _config(args)
    g = _grounder()
    sc = _scenario(args, load_directions(args.corpus))
    w = _pick(_weights_for(args, cfg, world=sc.world), args.baseline)
    rec = run_scenario(sc, args.baseline, w, args.seed, config=cfg,
                       grounder=g, relations=RelationLibrary.default(),
                       keep_trace=bool(args.out))
    print(json.dumps({
        "scenario": rec.scenario_id, "baseline": rec.baseline,
        "seed": rec.seed, "steps": rec.steps,
        "distance_m": round(rec.distance_m, 6),
        "ending_error_m": round(rec.ending_error_m, 6),
        "success": rec.success, "capped": rec.capped,
    }, indent=1))
    if args.out:
        from wayfinder.rbpf import write_trace
        write_trace(args.out, rec.trace)
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


def cmd_eval(args):
    cfg = _config(args)
    g = _grounder()
    directions = load_directions(args.corpus)
    if args.world:
        directions = [s for s in directions if s.world == args.world]
    if not directions:
        raise SystemExit("no scenarios selected")
    rel = RelationLibrary.default()
    records = []
    # weights are per world unless one file was given explicitly
    for world in sorted({s.world for s in directions}):
        weights = _weights_for(args, cfg, world=world)
        subset = [s for s in directions if s.world == world]
        report = evaluate(subset, weights, seeds=_seeds(args.seed),
                          config=cfg, grounder=g, relations=rel)
        records.extend(report.records)
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    runs_to_csv(records, outdir / "runs.csv")
    summary_to_csv(records, outdir / "summary.csv")
    print(f"wrote {outdir / 'runs.csv'} and {outdir / 'summary.csv'} "
          f"({len(records)} runs)")
    return 0


def cmd_xval(args):
    cfg = _config(args) if (args.particles or args.moments) else None
    g = _grounder()
    directions = load_directions(args.corpus)
    report = cross_validate(directions, grounder=g,
                            relations=RelationLibrary.default(),
                            trials=args.trials, train_n=args.train_n,
                            seed=args.seed, config=cfg)
    path = args.out or "xval.csv"
    xval_to_csv(report, path)
    bq = report.quartiles("belief")
    mq = report.quartiles("map-only")
    print(f"wrote {path}: belief median {bq[1]:.4f}, "
          f"map-only median {mq[1]:.4f} over {args.trials} trials")
    return 0


def cmd_serve(args):
    cfg = _config(args)
    g = _grounder()
    w = _pick(_weights_for(args, cfg, world=args.world), args.baseline)
    serve(args.world, w, port=args.port, baseline=args.baseline,
          seed=args.seed, config=cfg, grounder=g,
          relations=RelationLibrary.default())
    return 0


# -- argument wiring -----------------------------------------------------------

def _add_common(p, *names):
    if "world" in names:
        p.add_argument("--world", help="bundled world name or world JSON path")
    if "corpus" in names:
        p.add_argument("--corpus", help="corpus JSON path (bundled default)")
    if "weights" in names:
        p.add_argument("--weights", help="weights JSON path")
    if "particles" in names:
        p.add_argument("--particles", type=int, metavar="N",
                       help="particle count override")
    if "moments" in names:
        p.add_argument("--moments", type=int, metavar="K",
                       help="moment order override")
    if "baseline" in names:
        p.add_argument("--baseline", choices=BASELINES,
                       default="with-language")
    if "seed" in names:
        p.add_argument("--seed", type=int, default=0)
    if "out" in names:
        p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="wayfinder",
        description="natural-language direction following in unknown worlds")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("parse", help="print a direction's constituency tree")
    p.add_argument("text")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("ground", help="print a direction's annotations")
    p.add_argument("text")
    _add_common(p, "weights", "out")
    p.set_defaults(fn=cmd_ground)

    p = sub.add_parser("train-grounding", help="fit grounding weights")
    _add_common(p, "corpus", "out")
    p.set_defaults(fn=cmd_train_grounding)

    p = sub.add_parser("train-policy", help="fit navigation weights")
    _add_common(p, "corpus", "particles", "moments", "seed", "out")
    p.add_argument("--baseline", choices=BASELINES, default=None,
                   help="train one baseline only (default: all three into "
                        "a bundle)")
    p.set_defaults(fn=cmd_train_policy)

    p = sub.add_parser("run", help="run one direction")
    p.add_argument("direction", help="corpus id (e.g. d16) or free text")
    _add_common(p, "world", "corpus", "weights", "particles", "moments",
                "baseline", "seed", "out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="evaluate a corpus under every baseline")
    _add_common(p, "world", "corpus", "weights", "particles", "moments",
                "out")
    p.add_argument("--seed", default="0",
                   help="comma-separated seed list (default 0)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("xval", help="train/held-out comparison study")
    _add_common(p, "corpus", "particles", "moments", "seed", "out")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--train-n", type=int, default=28, dest="train_n")
    p.set_defaults(fn=cmd_xval)

    p = sub.add_parser("serve", help="live session endpoint")
    _add_common(p, "weights", "particles", "moments", "baseline", "seed")
    p.add_argument("--world", required=True,
                   help="bundled world name or world JSON path")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
