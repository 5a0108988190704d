import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stdout

import yaml

from src.fixtures import smoke_config
from src.kg_store import load_kg
from src.main import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main


def run_cli(*argv):
    out = io.StringIO()
    with redirect_stdout(out):
        code = main(list(argv))
    return code, out.getvalue()


class TestScenarios(unittest.TestCase):
    """End-to-end runs of the command-line front end on a small fixture pair."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.data = os.path.join(cls.tmp.name, "data")
        code, _ = run_cli("fixture", cls.data, "--seed", "4", "--entities", "60")
        assert code == EXIT_OK
        cls.alpha = os.path.join(cls.data, "alpha.tsv")
        cls.beta = os.path.join(cls.data, "beta.tsv")
        cls.config = os.path.join(cls.tmp.name, "duel.yaml")
        with open(cls.config, "w", encoding="utf-8") as f:
            yaml.safe_dump({
                "paths": {"kg_alpha": cls.alpha, "kg_beta": cls.beta},
                "duel": smoke_config(tm=7, alpha=7, beta=8).model_dump(mode="json"),
            }, f)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def test_scenario_a_one_triple_metrics(self):
        """A single triple: both entities appear in every triple."""
        kg = self.path("one.tsv")
        with open(kg, "w", encoding="utf-8") as f:
            f.write("a\tp\tb\n")
        code, out = run_cli("metrics", kg)
        self.assertEqual(code, EXIT_OK)
        lines = dict(line.split("\t") for line in out.strip().splitlines())
        self.assertEqual(lines["EE"], "0.000000")
        self.assertEqual(lines["RD"], "1.000000")
        self.assertEqual(lines["TN"], "1.000000")

    def test_scenario_b_dataset_tools(self):
        """common-kg of a file with itself keeps every triple; ablating nothing keeps the set."""
        common = self.path("common.tsv")
        self.assertEqual(run_cli("common-kg", self.alpha, self.alpha, common)[0], EXIT_OK)
        self.assertEqual(load_kg(common).num_triples, load_kg(self.alpha).num_triples)

        same = self.path("same.tsv")
        self.assertEqual(run_cli("ablate", self.beta, self.alpha, "--n", "0", "--out", same)[0], EXIT_OK)
        self.assertEqual(set(load_kg(same).name_triples()), set(load_kg(self.beta).name_triples()))

        smaller = self.path("smaller.tsv")
        self.assertEqual(run_cli("ablate", self.beta, self.alpha, "--n", "10", "--ratio", "4",
                                 "--out", smaller)[0], EXIT_OK)
        self.assertEqual(load_kg(smaller).num_triples, load_kg(self.beta).num_triples - 10)

    def test_scenario_c_full_duel(self):
        """A duel writes the exchange files, a manifest, and ends with a verdict line."""
        workdir = self.path("run_c")
        code, out = run_cli("duel", "--config", self.config, "--workdir", workdir)
        self.assertEqual(code, EXIT_OK)
        verdict_line = out.strip().splitlines()[-1]
        self.assertIn(verdict_line, {"verdict: alpha wins", "verdict: beta wins", "verdict: equal quality"})
        for name in ("tm.json", "em_alpha.json", "em_beta.json", "manifest.json", "scores.json",
                     os.path.join("set_00", "questions_alpha.json"), os.path.join("set_00", "score_beta.json")):
            self.assertTrue(os.path.isfile(os.path.join(workdir, name)), name)

        code, out = run_cli("inspect", os.path.join(workdir, "set_00", "questions_alpha.json"))
        self.assertEqual(code, EXIT_OK)
        summary = json.loads(out)
        self.assertTrue(summary["valid"])
        self.assertEqual(summary["questions"], 20)

    def test_scenario_d_reruns_are_deterministic(self):
        """Same config and seeds, two workdirs: identical score reports."""
        reports = []
        for run in ("run_d1", "run_d2"):
            workdir = self.path(run)
            code, out = run_cli("duel", "--config", self.config, "--workdir", workdir, "--format", "json")
            self.assertEqual(code, EXIT_OK)
            reports.append(json.loads(out))
        self.assertEqual(reports[0], reports[1])
        self.assertEqual(len(reports[0]["sets"]), 2)

    def test_scenario_e_bad_config(self):
        """An invalid eta is a config error, exit code 2."""
        code, _ = run_cli("duel", "--config", self.config, "--set", "duel.tuning.eta=[0.9, 0.1]")
        self.assertEqual(code, EXIT_CONFIG)
        code, _ = run_cli("duel", "--config", self.path("missing.yaml"))
        self.assertEqual(code, EXIT_CONFIG)

    def test_scenario_f_stage_failure(self):
        """A missing graph file fails its stage, exit code 3."""
        self.assertEqual(run_cli("metrics", self.path("nope.tsv"))[0], EXIT_STAGE)
        bad = self.path("bad.tsv")
        with open(bad, "w", encoding="utf-8") as f:
            f.write("only\ttwo\n")
        self.assertEqual(run_cli("metrics", bad)[0], EXIT_STAGE)
        junk = self.path("questions_alpha.json")
        with open(junk, "w", encoding="utf-8") as f:
            f.write('[{"qid": 0, "kind": "judgment", "fsg": [0.0], "candidates": []}]')
        self.assertEqual(run_cli("inspect", junk)[0], EXIT_STAGE)


if __name__ == '__main__':
    unittest.main()
