"""Command-line entry points, exercised in-process through main()."""

import json

import pytest

from wayfinder.harness.cli import (build_parser, load_policy_weights, main,
                                   save_policy_bundle)
from wayfinder import policy as pol


class TestParser:
    def test_subcommands_wire(self):
        p = build_parser()
        for argv in (["parse", "x"],
                     ["ground", "x"],
                     ["train-grounding"],
                     ["train-policy", "--baseline", "known-map"],
                     ["run", "d01", "--seed", "2"],
                     ["eval", "--seed", "0,1"],
                     ["xval", "--trials", "3", "--train-n", "30"],
                     ["serve", "--world", "sim-3room", "--port", "0"]):
            args = p.parse_args(argv)
            assert callable(args.fn)

    def test_serve_requires_world(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["serve"])


class TestWeightFiles:
    def test_bundle_round_trip(self, tmp_path):
        w = pol.PolicyWeights.zeros(2)
        path = tmp_path / "bundle.json"
        save_policy_bundle(path, {"known-map": w, "with-language": w})
        loaded = load_policy_weights(path)
        assert set(loaded) == {"known-map", "with-language"}
        assert loaded["known-map"].w.shape == w.w.shape

    def test_single_round_trip(self, tmp_path):
        w = pol.PolicyWeights.zeros(3)
        path = tmp_path / "single.json"
        pol.save_weights(path, w)
        loaded = load_policy_weights(path)
        assert not isinstance(loaded, dict)
        assert loaded.w.shape == w.w.shape


class TestCommands:
    def test_parse_prints_tree(self, capsys):
        assert main(["parse", "go to the kitchen"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("(") and "kitchen" in out

    def test_ground_writes_annotations(self, tmp_path, capsys):
        out = tmp_path / "g.json"
        assert main(["ground", "go to the kitchen that is down the hallway",
                     "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert data["clauses"] == 1
        a, = data["annotations"][0]
        assert (a["figure"], a["relation"], a["landmark"]) == \
            ("kitchen", "down", "hallway")

    def test_run_by_corpus_id(self, capsys):
        assert main(["run", "d01", "--baseline", "known-map"]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["scenario"] == "d01" and rec["baseline"] == "known-map"
        assert rec["distance_m"] > 0

    def test_run_free_text_needs_world(self):
        with pytest.raises(SystemExit):
            main(["run", "go to the kitchen"])

    def test_eval_writes_csvs(self, tmp_path, capsys):
        corpus = tmp_path / "corpus.json"
        corpus.write_text(json.dumps({"directions": [
            {"id": "d01", "world": "sim-3room",
             "text": "go to the kitchen that is down the hallway"}]}))
        assert main(["eval", "--corpus", str(corpus), "--seed", "0,1",
                     "--out", str(tmp_path)]) == 0
        runs = (tmp_path / "runs.csv").read_text().splitlines()
        summary = (tmp_path / "summary.csv").read_text().splitlines()
        # 1 direction x 3 baselines x 2 seeds
        assert len(runs) == 1 + 6
        assert len(summary) == 1 + 3

    def test_train_grounding_exports(self, tmp_path, capsys):
        out = tmp_path / "gw.json"
        assert main(["train-grounding", "--out", str(out)]) == 0
        obj = json.loads(out.read_text())
        assert obj
