import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.errors import EncodingError, ProtocolError
from src.kg_store import KnowledgeGraph
from src.questions import BLANK, DefectSubgraph
from src.subgraph_encoder import (GcnEncoder, SubgraphMatrices, build_matrices, em_deserialize, em_serialize, encode,
                                  normalized_adjacency)
from src.translation_model import PartyVocabulary, TranslationEmbedding


def chain_matrices(rng, n=4, dim=3):
    W_A = np.zeros((n, n))
    for i in range(n - 1):
        W_A[i, i + 1] = W_A[i + 1, i] = 1.0
    W_A[0, n - 1] = W_A[n - 1, 0] = 1.0
    X = rng.normal(size=(n, dim))
    X[1] = 0.0  # blank
    return SubgraphMatrices(X, W_A, np.diag(W_A.sum(axis=1)))


def guarded_encoder(m, hidden, seed, self_loops=False):
    """An encoder whose first-layer pre-activations keep clear of the ReLU kink."""
    for s in range(seed, seed + 500):
        em = GcnEncoder.initialize(m.W_X.shape[1], hidden, np.random.default_rng(s), self_loops)
        _, cache = em.forward(m)
        if np.all(np.abs(cache["P1"][np.abs(cache["AX"]).sum(axis=1) > 0]) > 0.05):
            return em
    raise AssertionError("no guarded encoder found")


class TestBuildMatrices(unittest.TestCase):
    def setUp(self):
        self.kg = KnowledgeGraph.from_name_triples("g", [("a", "p", "b"), ("a", "q", "b"), ("b", "p", "c")])
        self.vocab = PartyVocabulary.for_graph(self.kg, b"salt")
        self.tm = TranslationEmbedding(dim=4)
        self.tm.register(self.vocab, self.kg, np.random.default_rng(0))

    def test_single_edge(self):
        a, b = self.kg.entity_id("a"), self.kg.entity_id("b")
        sg = DefectSubgraph(nodes=(a, BLANK), edges=((0, 0, 1),), blank_index=1, removed_entity=b)
        m = build_matrices(self.tm, self.vocab, self.kg, sg)
        assert_array_equal(m.W_A, [[0, 1], [1, 0]])
        assert_array_equal(m.W_D, np.eye(2))
        assert_array_equal(m.W_X[1], np.zeros(4))
        assert_array_equal(m.W_X[0], self.tm.entity_vector(self.vocab.entity_token("a")))

    def test_multi_edge_stays_binary(self):
        a, b = self.kg.entity_id("a"), self.kg.entity_id("b")
        sg = DefectSubgraph(nodes=(BLANK, b), edges=((0, 0, 1), (0, 1, 1)), blank_index=0, removed_entity=a)
        m = build_matrices(self.tm, self.vocab, self.kg, sg)
        self.assertEqual(m.W_A[0, 1], 1.0)
        self.assertEqual(m.W_D[0, 0], 1.0)


class TestEncode(unittest.TestCase):
    def test_zero_features_give_zero_fsg(self):
        m = chain_matrices(np.random.default_rng(0))
        m.W_X[:] = 0.0
        em = GcnEncoder.initialize(3, 5, np.random.default_rng(0))
        assert_array_equal(encode(em, m), np.zeros(3))

    def test_hand_computed_chain(self):
        m = SubgraphMatrices(np.array([[1.0, 2.0], [0.0, 0.0]]), np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2))
        em = GcnEncoder(np.array([[1.0, -1.0], [0.5, 1.0]]), np.array([[1.0, 0.0], [0.0, 2.0]]))
        # AX = [[0,0],[1,2]]; ReLU(AX W1) = [[0,0],[2,1]]; A H W2 = [[2,2],[0,0]]
        assert_allclose(encode(em, m), [1.0, 1.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        em = GcnEncoder.initialize(3, 6, rng, self_loops=True)
        for _ in range(10):
            m = chain_matrices(rng, n=5)
            perm = rng.permutation(5)
            pm = SubgraphMatrices(m.W_X[perm], m.W_A[perm][:, perm], m.W_D[perm][:, perm])
            assert_allclose(encode(em, pm), encode(em, m), atol=1e-12)

    def test_output_dim_matches_features(self):
        m = chain_matrices(np.random.default_rng(2), dim=7)
        self.assertEqual(encode(GcnEncoder.initialize(7, 3, np.random.default_rng(2)), m).shape, (7,))

    def test_normalized_adjacency_is_symmetric_non_negative(self):
        A = normalized_adjacency(chain_matrices(np.random.default_rng(3), n=6), self_loops=True)
        assert_allclose(A, A.T)
        self.assertTrue(np.all(A >= 0))

    def test_zero_degree_node(self):
        m = SubgraphMatrices(np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
        with self.assertRaises(EncodingError):
            normalized_adjacency(m)
        normalized_adjacency(m, self_loops=True)

    def test_dimension_mismatch(self):
        m = chain_matrices(np.random.default_rng(4), dim=3)
        with self.assertRaises(EncodingError):
            encode(GcnEncoder.initialize(4, 3, np.random.default_rng(4)), m)

    def test_weights_must_close_the_loop(self):
        with self.assertRaises(ValueError):
            GcnEncoder(np.zeros((3, 2)), np.zeros((2, 4)))


class TestGradients(unittest.TestCase):
    def _check(self, self_loops):
        rng = np.random.default_rng(5)
        m = chain_matrices(rng, n=4, dim=3)
        em = guarded_encoder(m, hidden=5, seed=10, self_loops=self_loops)
        c = rng.normal(size=3)
        fsg, cache = em.forward(m)
        grads = em.backward(c, cache)
        step = 1e-3
        for name, W in em.params().items():
            numeric = np.zeros_like(W)
            for idx in np.ndindex(W.shape):
                orig = W[idx]
                W[idx] = orig + step
                up = float(c @ encode(em, m))
                W[idx] = orig - step
                down = float(c @ encode(em, m))
                W[idx] = orig
                numeric[idx] = (up - down) / (2 * step)
            assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-8, err_msg=name)

    def test_gradients_match_finite_differences(self):
        self._check(self_loops=False)

    def test_gradients_with_self_loops(self):
        self._check(self_loops=True)


class TestSerialization(unittest.TestCase):
    def test_round_trip(self):
        em = GcnEncoder.initialize(4, 3, np.random.default_rng(6), self_loops=True)
        back = em_deserialize(em_serialize(em))
        assert_array_equal(back.W1, em.W1)
        assert_array_equal(back.W2, em.W2)
        self.assertTrue(back.self_loops)
        m = chain_matrices(np.random.default_rng(6), dim=4)
        assert_array_equal(encode(back, m), encode(em, m))

    def test_truncated_payload(self):
        payload = em_serialize(GcnEncoder.initialize(4, 3, np.random.default_rng(7)))
        with self.assertRaises(ProtocolError):
            em_deserialize(payload[: len(payload) // 2])


if __name__ == '__main__':
    unittest.main()
