import os
import tempfile
import unittest
from collections import Counter

import numpy as np

from src.errors import SamplingError
from src.fixtures import synthetic_kg
from src.kg_store import KnowledgeGraph
from src.questions import (BLANK, CandidateSource, DefectSubgraph, Question, QuestionKind, difficulty_features,
                           is_accidentally_correct, load_question_set, make_question, relevance, sample_question_set,
                           sample_subgraph, sample_wrong_candidates, save_question_set)


def kg(*triples):
    return KnowledgeGraph.from_name_triples("kg", triples)


class TestDefectSubgraph(unittest.TestCase):
    def test_blank_index_must_point_at_blank(self):
        with self.assertRaises(ValueError):
            DefectSubgraph(nodes=(0, BLANK), edges=((0, 0, 1),), blank_index=0, removed_entity=1)

    def test_single_blank(self):
        with self.assertRaises(ValueError):
            DefectSubgraph(nodes=(BLANK, BLANK), edges=(), blank_index=0, removed_entity=1)

    def test_choice_truth_must_point_at_answer(self):
        sg = DefectSubgraph(nodes=(0, BLANK), edges=((0, 0, 1),), blank_index=1, removed_entity=1)
        with self.assertRaises(ValueError):
            Question(0, sg, (1, 2), QuestionKind.CHOICE, 1)
        with self.assertRaises(ValueError):
            Question(0, sg, (1,), QuestionKind.CHOICE, 0)


class TestSampleSubgraph(unittest.TestCase):
    def test_two_nodes_on_single_edge(self):
        g = kg(("a", "p", "b"))
        sg = sample_subgraph(g, 2, np.random.default_rng(0))
        self.assertEqual(len(sg.edges), 1)
        self.assertIn(sg.removed_entity, (g.entity_id("a"), g.entity_id("b")))

    def test_star_always_contains_hub(self):
        g = kg(*[("hub", "p", f"leaf{i}") for i in range(5)])
        hub = g.entity_id("hub")
        rng = np.random.default_rng(1)
        for _ in range(200):
            self.assertIn(hub, sample_subgraph(g, 3, rng).restored_nodes())

    def test_restored_edges_are_true(self):
        g = synthetic_kg(120, 5, 6, seed=2)
        rng = np.random.default_rng(2)
        for _ in range(50):
            sg = sample_subgraph(g, int(rng.integers(2, 7)), rng)
            restored = sg.restored_nodes()
            for i, p, j in sg.edges:
                self.assertIn((restored[i], p, restored[j]), g)
            self.assertTrue(sg.is_connected())
            self.assertGreaterEqual(len(sg.incident_edges()), 1)

    def test_unreachable_size_raises(self):
        g = kg(("a", "p", "b"), ("c", "p", "d"))
        with self.assertRaises(SamplingError):
            sample_subgraph(g, 3, np.random.default_rng(0), max_restarts=10)


class TestAccidentalCorrectness(unittest.TestCase):
    def setUp(self):
        self.g = kg(("s", "p", "o1"), ("s", "p", "o2"), ("t", "q", "o1"), ("t", "q", "o3"), ("x", "r", "y"))
        self.e = {n: self.g.entity_id(n) for n in ("s", "o1", "o2", "o3", "t", "x", "y")}
        self.p = self.g.relation_id("p")
        self.q = self.g.relation_id("q")

    def one_to_many(self):
        return DefectSubgraph(nodes=(self.e["s"], BLANK), edges=((0, self.p, 1),), blank_index=1,
                              removed_entity=self.e["o1"])

    def test_one_to_many_sibling_is_correct(self):
        self.assertTrue(is_accidentally_correct(self.g, self.one_to_many(), self.e["o2"]))

    def test_unrelated_candidate(self):
        self.assertFalse(is_accidentally_correct(self.g, self.one_to_many(), self.e["x"]))

    def test_all_incident_edges_must_hold(self):
        sg = DefectSubgraph(nodes=(self.e["s"], BLANK, self.e["t"]),
                            edges=((0, self.p, 1), (2, self.q, 1)), blank_index=1, removed_entity=self.e["o1"])
        # o2 satisfies (s, p, .) only; o3 satisfies (t, q, .) only
        self.assertFalse(is_accidentally_correct(self.g, sg, self.e["o2"]))
        self.assertFalse(is_accidentally_correct(self.g, sg, self.e["o3"]))

    def test_sibling_never_sampled_as_wrong(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = make_question(self.g, self.one_to_many(), 2, rng)
            self.assertNotIn(self.e["o2"], q.candidates)

    def test_question_pool_excludes_blank_and_siblings(self):
        sg = self.one_to_many()
        self.assertEqual(sample_wrong_candidates(self.g, sg, 1, np.random.default_rng(0),
                                                 source=CandidateSource.QUESTION), [self.e["s"]])
        with self.assertRaises(SamplingError):
            sample_wrong_candidates(self.g, sg, 2, np.random.default_rng(0), source=CandidateSource.QUESTION)


class TestMakeQuestion(unittest.TestCase):
    def setUp(self):
        self.g = synthetic_kg(100, 4, 5, seed=3)
        self.rng = np.random.default_rng(3)
        self.sg = sample_subgraph(self.g, 4, self.rng)

    def test_choice_has_one_correct_candidate(self):
        q = make_question(self.g, self.sg, 4, self.rng)
        self.assertEqual(q.kind, QuestionKind.CHOICE)
        self.assertEqual(q.candidates.count(self.sg.removed_entity), 1)
        self.assertEqual(q.candidates[q.truth], self.sg.removed_entity)
        self.assertEqual(len(set(q.candidates)), 4)

    def test_judgment_coin(self):
        seen = set()
        for _ in range(40):
            q = make_question(self.g, self.sg, 1, self.rng)
            self.assertEqual(q.kind, QuestionKind.JUDGMENT)
            self.assertEqual(q.truth, q.candidates[0] == self.sg.removed_entity)
            seen.add(q.truth)
        self.assertEqual(seen, {True, False})

    def test_wrong_candidates_fail_filter(self):
        for _ in range(30):
            q = make_question(self.g, self.sg, 5, self.rng)
            for c in q.wrong_candidates():
                self.assertFalse(is_accidentally_correct(self.g, self.sg, c))

    def test_neighbor_source_candidates_are_relevant(self):
        try:
            q = make_question(self.g, self.sg, 2, self.rng, source=CandidateSource.NEIGHBOR)
        except SamplingError:
            self.skipTest("subgraph has no usable neighbor")
        self.assertEqual(relevance(self.g, self.sg, q.wrong_candidates()[0]), 1)


class TestDifficultyFeatures(unittest.TestCase):
    def test_hand_example(self):
        """3 edges, 1 incident to the blank, wrong candidates {random, neighbor} -> (1/3, 3, 0.5)."""
        g = kg(("a", "p", "b"), ("b", "p", "c"), ("c", "p", "d"), ("n", "q", "a"), ("z", "q", "w"))
        e = {x: g.entity_id(x) for x in "abcdnzw"}
        p = g.relation_id("p")
        sg = DefectSubgraph(nodes=(e["a"], e["b"], e["c"], BLANK),
                            edges=((0, p, 1), (1, p, 2), (2, p, 3)), blank_index=3, removed_entity=e["d"])
        q = Question(0, sg, (e["n"], e["d"], e["z"]), QuestionKind.CHOICE, 1)
        mu1, mu2, mu3 = difficulty_features(g, q)
        self.assertAlmostEqual(mu1, 1.0 / 3.0)
        self.assertEqual(mu2, 3)
        self.assertAlmostEqual(mu3, 0.5)

    def test_single_edge_and_true_judgment(self):
        g = kg(("a", "p", "b"))
        sg = DefectSubgraph(nodes=(g.entity_id("a"), BLANK), edges=((0, 0, 1),), blank_index=1,
                            removed_entity=g.entity_id("b"))
        feats = difficulty_features(g, Question(0, sg, (g.entity_id("b"),), QuestionKind.JUDGMENT, True))
        self.assertEqual(tuple(feats), (1.0, 1, 0.0))

    def test_in_question_candidate_scores_two(self):
        g = kg(("a", "p", "b"), ("b", "p", "c"))
        sg = DefectSubgraph(nodes=(g.entity_id("a"), g.entity_id("b"), BLANK), edges=((0, 0, 1), (1, 0, 2)),
                            blank_index=2, removed_entity=g.entity_id("c"))
        self.assertEqual(relevance(g, sg, g.entity_id("a")), 2)

    def test_shuffle_invariance(self):
        g = synthetic_kg(100, 4, 5, seed=4)
        rng = np.random.default_rng(4)
        q = make_question(g, sample_subgraph(g, 5, rng), 4, rng)
        order = (3, 1, 0, 2)
        shuffled = tuple(q.candidates[i] for i in order)
        other = Question(q.qid, q.subgraph, shuffled, q.kind, shuffled.index(q.correct_entity))
        self.assertEqual(difficulty_features(g, q), difficulty_features(g, other))


class TestQuestionSets(unittest.TestCase):
    def setUp(self):
        self.g = synthetic_kg(150, 5, 5, seed=5)

    def test_judgment_only_pool(self):
        qs = sample_question_set(self.g, 30, [1], [3], np.random.default_rng(0))
        self.assertEqual(len(qs), 30)
        self.assertTrue(all(q.kind == QuestionKind.JUDGMENT for q in qs))
        self.assertEqual(len({q.qid for q in qs}), 30)

    def test_feature_ranges(self):
        counts = [1, 2, 3, 4, 5]
        for q in sample_question_set(self.g, 100, counts, [2, 4, 6], np.random.default_rng(1)):
            mu1, mu2, mu3 = difficulty_features(self.g, q)
            self.assertTrue(0.0 < mu1 <= 1.0)
            self.assertIn(mu2, counts)
            self.assertTrue(0.0 <= mu3 <= 2.0)

    def test_candidate_counts_are_uniform(self):
        n = 2000
        qs = sample_question_set(self.g, n, [2, 3, 4, 5], [2, 3], np.random.default_rng(2))
        observed = Counter(len(q.candidates) for q in qs)
        expected = n / 4
        chi2 = sum((observed[c] - expected) ** 2 / expected for c in (2, 3, 4, 5))
        # 3 degrees of freedom, p = 0.001
        self.assertLess(chi2, 16.27)

    def test_checkpoint_round_trip(self):
        qs = sample_question_set(self.g, 10, [1, 3], [3, 4], np.random.default_rng(3))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "q.json")
            save_question_set(qs, path)
            self.assertEqual(load_question_set(path), qs)


if __name__ == '__main__':
    unittest.main()
