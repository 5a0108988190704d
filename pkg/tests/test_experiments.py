import math
import os
import tempfile
import unittest

import numpy as np

from src.duel import train_shared_tm
from src.experiments import ablation_study, candidate_count_trend, candidate_source_trend, feature_profile
from src.fixtures import fixture_pair, smoke_config
from src.kg_store import KnowledgeGraph
from src.party import Party, run_first_subgame
from src.questions import BLANK, DefectSubgraph, Question, QuestionKind
from src.tuner_state import RoundOutcome, TunerHistory

SLOW = os.environ.get("QEII_SLOW_TESTS") == "1"


def trained_party(n_entities=60, seed=0, config=None):
    config = config or smoke_config()
    kg_a, kg_b = fixture_pair(seed=seed, n_entities=n_entities)
    alpha = Party.create("alpha", kg_a, b"salt", 1)
    beta = Party.create("beta", kg_b, b"salt", 2)
    tm = train_shared_tm(alpha, beta, config)
    run_first_subgame(alpha, tm, config)
    return alpha, tm, config


class TestFeatureProfile(unittest.TestCase):
    def test_hand_example(self):
        g = KnowledgeGraph.from_name_triples("g", [("a", "p", "b"), ("b", "p", "c"), ("c", "p", "d"),
                                                   ("n", "q", "a"), ("z", "q", "w")])
        e = {x: g.entity_id(x) for x in "abcdnzw"}
        p = g.relation_id("p")
        sg = DefectSubgraph(nodes=(e["a"], e["b"], e["c"], BLANK),
                            edges=((0, p, 1), (1, p, 2), (2, p, 3)), blank_index=3, removed_entity=e["d"])
        q = Question(0, sg, (e["n"], e["d"], e["z"]), QuestionKind.CHOICE, 1)
        profile = feature_profile(RoundOutcome([q], []), TunerHistory(g, [q]))
        self.assertEqual(profile["wrong"], {"n": 0})
        self.assertEqual(profile["correct"]["n"], 1)
        self.assertAlmostEqual(profile["correct"]["mu1"], 1.0 / 3.0)
        self.assertEqual(profile["correct"]["mu2"], 3.0)
        self.assertAlmostEqual(profile["correct"]["mu3"], 0.5)


class TestTrends(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.party, cls.tm, cls.config = trained_party()

    def test_candidate_count_trend_shape(self):
        trend = candidate_count_trend(self.party, self.tm, 15, [2, 3], self.config, np.random.default_rng(0))
        self.assertEqual(sorted(trend), [2, 3])
        for acc in trend.values():
            self.assertTrue(0.0 <= acc <= 1.0)

    def test_candidate_source_trend_shape(self):
        trend = candidate_source_trend(self.party, self.tm, 15, self.config, np.random.default_rng(1))
        self.assertEqual(set(trend), {"random", "question", "neighbor"})
        for acc in trend.values():
            self.assertTrue(math.isnan(acc) or 0.0 <= acc <= 1.0)


class TestAblationStudy(unittest.TestCase):
    def test_one_row_per_removal(self):
        kg_a, kg_b = fixture_pair(seed=2, n_entities=60)
        config = smoke_config()
        config.evaluation.repeat_sets = 1
        with tempfile.TemporaryDirectory() as tmp:
            rows = ablation_study(kg_a, kg_b, [0, 10], ratio=4.0, repetitions=1, config=config, workdir=tmp)
            self.assertTrue(os.path.isfile(os.path.join(tmp, "removed_10", "rep_00", "tm.json")))
        self.assertEqual([r["removed"] for r in rows], [0, 10])
        for r in rows:
            self.assertEqual(r["alpha_std"], 0.0)
            self.assertTrue(0.0 <= r["alpha_mean"] <= 100.0)


@unittest.skipUnless(SLOW, "set QEII_SLOW_TESTS=1")
class TestDifficultyTrends(unittest.TestCase):
    def test_more_candidates_are_harder(self):
        config = smoke_config()
        config.embedding.dim = 32
        config.embedding.epochs_per_segment = 20
        config.answer_model.epochs = 20
        config.tuning.joint_size = 600
        config.questions.candidate_counts = [2, 3, 4, 5]
        party, tm, config = trained_party(n_entities=300, config=config)
        trend = candidate_count_trend(party, tm, 200, [2, 3, 4, 5], config, np.random.default_rng(0))
        accs = [trend[c] for c in (2, 3, 4, 5)]
        inversions = sum(b > a for a, b in zip(accs, accs[1:]))
        self.assertLessEqual(inversions, 1)

        by_source = candidate_source_trend(party, tm, 200, config, np.random.default_rng(1))
        self.assertLessEqual(by_source["neighbor"], by_source["random"])
        self.assertLessEqual(by_source["question"], by_source["random"])


if __name__ == '__main__':
    unittest.main()
