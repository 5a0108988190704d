import json
import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.errors import EncodingError
from src.kg_store import KnowledgeGraph
from src.protocol import EmMessage
from src.questions import BLANK, DefectSubgraph
from src.translation_model import PartyVocabulary, TranslationEmbedding

logger = logging.getLogger(__name__)


@dataclass
class SubgraphMatrices:
    W_X: np.ndarray   # node features, blank row zero
    W_A: np.ndarray   # binary undirected adjacency, zero diagonal
    W_D: np.ndarray   # diagonal degree matrix

    @property
    def num_nodes(self) -> int:
        return self.W_X.shape[0]


def build_matrices(tm: TranslationEmbedding, vocab: PartyVocabulary, kg: KnowledgeGraph,
                   sg: DefectSubgraph) -> SubgraphMatrices:
    """Feature, adjacency and degree matrices of a defect subgraph under the trained TM."""
    ent_tokens, _ = vocab.graph_tokens(kg)
    n = sg.size
    W_X = np.zeros((n, tm.dim), dtype=np.float64)
    for i, e in enumerate(sg.nodes):
        if e == BLANK:
            continue
        W_X[i] = tm.entity_vector(ent_tokens[e])

    W_A = np.zeros((n, n), dtype=np.float64)
    for i, _, j in sg.edges:
        if i != j:
            W_A[i, j] = W_A[j, i] = 1.0
    W_D = np.diag(W_A.sum(axis=1))
    return SubgraphMatrices(W_X, W_A, W_D)


def normalized_adjacency(m: SubgraphMatrices, self_loops: bool = False) -> np.ndarray:
    A = m.W_A + np.eye(m.num_nodes) if self_loops else m.W_A
    deg = A.sum(axis=1)
    if np.any(deg == 0):
        isolated = np.flatnonzero(deg == 0).tolist()
        raise EncodingError(f"Subgraph nodes {isolated} have zero degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * A * inv_sqrt[None, :]


class GcnEncoder:
    """
    Two-layer bias-free graph convolution with mean pooling (the EM).

        H = ReLU(Ã X W1),  Z = Ã H W2,  FSG = mean_rows(Z)
    """

    def __init__(self, W1: np.ndarray, W2: np.ndarray, self_loops: bool = False):
        W1 = np.array(W1, dtype=np.float64)
        W2 = np.array(W2, dtype=np.float64)
        if W1.ndim != 2 or W2.ndim != 2 or W1.shape[1] != W2.shape[0]:
            raise ValueError(f"Incompatible encoder weights {W1.shape} and {W2.shape}")
        if W2.shape[1] != W1.shape[0]:
            raise ValueError(f"Encoder output dim {W2.shape[1]} must equal input dim {W1.shape[0]}")
        self.W1 = W1
        self.W2 = W2
        self.self_loops = self_loops

    @classmethod
    def initialize(cls, dim: int, hidden: int, rng: np.random.Generator, self_loops: bool = False) -> "GcnEncoder":
        b1 = 1.0 / math.sqrt(dim)
        b2 = 1.0 / math.sqrt(hidden)
        return cls(rng.uniform(-b1, b1, size=(dim, hidden)), rng.uniform(-b2, b2, size=(hidden, dim)), self_loops)

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "GcnEncoder":
        return GcnEncoder(self.W1.copy(), self.W2.copy(), self.self_loops)

    def params(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "W2": self.W2}

    def forward(self, m: SubgraphMatrices) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        if m.W_X.shape[1] != self.dim:
            raise EncodingError(f"Feature dim {m.W_X.shape[1]} does not match encoder dim {self.dim}")
        A_norm = normalized_adjacency(m, self.self_loops)
        AX = A_norm @ m.W_X
        P1 = AX @ self.W1
        H = np.maximum(P1, 0.0)
        AH = A_norm @ H
        Z = AH @ self.W2
        cache = {"A_norm": A_norm, "AX": AX, "P1": P1, "AH": AH}
        return Z.mean(axis=0), cache

    def backward(self, g_fsg: np.ndarray, cache: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. W1 and W2, given dL/dFSG."""
        A_norm = cache["A_norm"]
        n = A_norm.shape[0]
        gZ = np.broadcast_to(g_fsg / n, (n, g_fsg.shape[0]))
        gW2 = cache["AH"].T @ gZ
        gH = A_norm.T @ (gZ @ self.W2.T)
        gP1 = gH * (cache["P1"] > 0)
        gW1 = cache["AX"].T @ gP1
        return {"W1": gW1, "W2": gW2}

    def apply_gradients(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        self.W1 -= lr * grads["W1"]
        self.W2 -= lr * grads["W2"]


def encode(em: GcnEncoder, m: SubgraphMatrices) -> np.ndarray:
    fsg, _ = em.forward(m)
    return fsg


def em_serialize(em: GcnEncoder) -> bytes:
    msg = EmMessage(
        d_in=em.dim,
        d_h=em.hidden,
        d_out=em.W2.shape[1],
        self_loops=em.self_loops,
        W1=em.W1.ravel().tolist(),
        W2=em.W2.ravel().tolist(),
    )
    return json.dumps(msg.model_dump()).encode("utf-8")


def em_deserialize(payload: bytes) -> GcnEncoder:
    msg = EmMessage.parse_payload(payload)
    W1 = np.asarray(msg.W1, dtype=np.float64).reshape(msg.d_in, msg.d_h)
    W2 = np.asarray(msg.W2, dtype=np.float64).reshape(msg.d_h, msg.d_out)
    return GcnEncoder(W1, W2, msg.self_loops)
