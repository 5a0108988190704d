import hashlib
import json
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ProtocolError, SamplingError, TrainingDivergenceError, UnknownEntityError
from src.kg_store import KnowledgeGraph, Triple
from src.protocol import TmMessage

logger = logging.getLogger(__name__)

ENTITY = "e"
RELATION = "r"


class PartyVocabulary:
    """
    Party-private map from surface names to opaque 64-bit tokens.

    Tokens are keyed BLAKE2b hashes of (salt, kind, name). The salt is shared
    by both parties so a name known to both maps to the same TM row, but it
    never leaves the parties.
    """

    def __init__(self, salt: bytes):
        self.salt = salt
        self.entity_tokens: Dict[str, str] = {}
        self.relation_tokens: Dict[str, str] = {}
        self._by_kg: Dict[str, Tuple[List[str], List[str]]] = {}

    @classmethod
    def for_graph(cls, kg: KnowledgeGraph, salt: bytes) -> "PartyVocabulary":
        vocab = cls(salt)
        vocab.register_graph(kg)
        return vocab

    def _token(self, kind: str, name: str) -> str:
        h = hashlib.blake2b(f"{kind}\x00{name}".encode("utf-8"), key=self.salt[:64], digest_size=8)
        return h.hexdigest()

    def _build_table(self, kind: str, names: Sequence[str]) -> Optional[Dict[str, str]]:
        table: Dict[str, str] = {}
        taken = set()
        for n in names:
            tok = self._token(kind, n)
            if tok in taken:
                return None
            taken.add(tok)
            table[n] = tok
        return table

    def _register_names(self, entity_names: Sequence[str], relation_names: Sequence[str]) -> None:
        entity_names = list(dict.fromkeys([*self.entity_tokens, *entity_names]))
        relation_names = list(dict.fromkeys([*self.relation_tokens, *relation_names]))
        while True:
            entities = self._build_table(ENTITY, entity_names)
            relations = self._build_table(RELATION, relation_names)
            if entities is not None and relations is not None:
                self.entity_tokens, self.relation_tokens = entities, relations
                return
            # cached per-graph token lists are stale after a re-salt
            self.salt = hashlib.blake2b(self.salt, person=b"qeii-resalt").digest()
            self._by_kg = {}
            logger.warning("Token collision inside one vocabulary; re-salting")

    def register_graph(self, kg: KnowledgeGraph) -> None:
        self._register_names(kg.entity_names, kg.relation_names)
        self._by_kg[kg.name] = ([self.entity_tokens[n] for n in kg.entity_names],
                                [self.relation_tokens[n] for n in kg.relation_names])

    def entity_token(self, name: str) -> str:
        try:
            return self.entity_tokens[name]
        except KeyError:
            raise UnknownEntityError(f"Entity '{name}' is not in this party's vocabulary")

    def relation_token(self, name: str) -> str:
        try:
            return self.relation_tokens[name]
        except KeyError:
            raise UnknownEntityError(f"Relation '{name}' is not in this party's vocabulary")

    def graph_tokens(self, kg: KnowledgeGraph) -> Tuple[List[str], List[str]]:
        """Token lists indexed by the graph's entity and relation ids."""
        if kg.name not in self._by_kg:
            self.register_graph(kg)
        return self._by_kg[kg.name]

    def surface_forms(self) -> List[str]:
        """Every name this party must never send."""
        return list(self.entity_tokens) + list(self.relation_tokens)


class TranslationEmbedding:
    """
    Shared TransE model (TM). Tables are keyed by opaque tokens only, so the
    object itself can be handed to the other party.
    """

    def __init__(self, dim: int = 64, margin: float = 1.0, normalize_entities: bool = False):
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.margin = margin
        self.normalize_entities = normalize_entities
        self.entities: Dict[str, np.ndarray] = {}
        self.relations: Dict[str, np.ndarray] = {}

    def _init_vector(self, rng: np.random.Generator) -> np.ndarray:
        bound = 6.0 / math.sqrt(self.dim)
        return rng.uniform(-bound, bound, size=self.dim)

    def register(self, vocab: PartyVocabulary, kg: KnowledgeGraph, rng: np.random.Generator) -> int:
        """Initialise vectors for tokens not yet in the tables; returns how many were added."""
        ent_tokens, rel_tokens = vocab.graph_tokens(kg)
        added = 0
        for tok in ent_tokens:
            if tok not in self.entities:
                self.entities[tok] = self._init_vector(rng)
                added += 1
        for tok in rel_tokens:
            if tok not in self.relations:
                self.relations[tok] = self._init_vector(rng)
                added += 1
        return added

    def entity_vector(self, token: str) -> np.ndarray:
        try:
            return self.entities[token]
        except KeyError:
            raise UnknownEntityError(f"Token {token} has no entity vector")

    def relation_vector(self, token: str) -> np.ndarray:
        try:
            return self.relations[token]
        except KeyError:
            raise UnknownEntityError(f"Token {token} has no relation vector")

    def copy(self) -> "TranslationEmbedding":
        tm = TranslationEmbedding(self.dim, self.margin, self.normalize_entities)
        tm.entities = {k: v.copy() for k, v in self.entities.items()}
        tm.relations = {k: v.copy() for k, v in self.relations.items()}
        return tm


def tm_serialize(tm: TranslationEmbedding) -> bytes:
    msg = TmMessage(
        dim=tm.dim,
        margin=tm.margin,
        entities={k: v.tolist() for k, v in tm.entities.items()},
        relations={k: v.tolist() for k, v in tm.relations.items()},
    )
    return json.dumps(msg.model_dump()).encode("utf-8")


def tm_deserialize(payload: bytes) -> TranslationEmbedding:
    msg = TmMessage.parse_payload(payload)
    tm = TranslationEmbedding(msg.dim, msg.margin)
    tm.entities = {k: np.asarray(v, dtype=np.float64) for k, v in msg.entities.items()}
    tm.relations = {k: np.asarray(v, dtype=np.float64) for k, v in msg.relations.items()}
    return tm


def negative_sample(t: Triple, kg: KnowledgeGraph, rng: np.random.Generator,
                    max_retries: int = 100, p_tr: Optional[float] = None) -> Triple:
    """
    Corrupt the head when P_Tr > 0.5, otherwise the tail, with a uniformly
    drawn entity. Corruptions that are true triples of kg are redrawn.
    """
    if kg.num_entities < 2:
        raise SamplingError(f"Graph '{kg.name}' needs at least 2 entities for corruption")
    if p_tr is None:
        p_tr = 1.0 - rng.random()  # uniform on (0, 1]
    replace_head = p_tr > 0.5
    for _ in range(max_retries):
        e = int(rng.integers(kg.num_entities))
        candidate = Triple(e, t.predicate, t.object) if replace_head else Triple(t.subject, t.predicate, e)
        if candidate not in kg:
            return candidate
    raise SamplingError(f"No corruption of {t} found in {max_retries} draws; graph too dense")


def transe_pair_loss(s: np.ndarray, p: np.ndarray, o: np.ndarray,
                     s_neg: np.ndarray, p_neg: np.ndarray, o_neg: np.ndarray,
                     margin: float) -> Tuple[float, Optional[Dict[str, np.ndarray]]]:
    """
    [margin + d(s+p, o) - d(s'+p', o')]_+ with squared Euclidean d.
    Returns the loss and the gradients w.r.t. the six vectors (None when inactive).
    """
    r_pos = s + p - o
    r_neg = s_neg + p_neg - o_neg
    loss = margin + float(r_pos @ r_pos) - float(r_neg @ r_neg)
    if loss <= 0.0:
        return 0.0, None
    g_pos = 2.0 * r_pos
    g_neg = 2.0 * r_neg
    grads = {"s": g_pos, "p": g_pos, "o": -g_pos, "s_neg": -g_neg, "p_neg": -g_neg, "o_neg": g_neg}
    return loss, grads


def transe_epoch(tm: TranslationEmbedding, kg: KnowledgeGraph, vocab: PartyVocabulary, lr: float,
                 rng: np.random.Generator, max_retries: int = 100) -> float:
    """One SGD pass over the shuffled triples of kg; returns the mean pair loss."""
    tm.register(vocab, kg, rng)
    ent_tokens, rel_tokens = vocab.graph_tokens(kg)
    if kg.is_empty:
        return 0.0

    total = 0.0
    for idx in rng.permutation(kg.num_triples):
        t = kg.triples[int(idx)]
        neg = negative_sample(t, kg, rng, max_retries=max_retries)
        keys = {
            "s": (ENTITY, ent_tokens[t.subject]),
            "p": (RELATION, rel_tokens[t.predicate]),
            "o": (ENTITY, ent_tokens[t.object]),
            "s_neg": (ENTITY, ent_tokens[neg.subject]),
            "p_neg": (RELATION, rel_tokens[neg.predicate]),
            "o_neg": (ENTITY, ent_tokens[neg.object]),
        }
        vecs = {role: (tm.entities if kind == ENTITY else tm.relations)[tok] for role, (kind, tok) in keys.items()}
        loss, grads = transe_pair_loss(vecs["s"], vecs["p"], vecs["o"],
                                       vecs["s_neg"], vecs["p_neg"], vecs["o_neg"], tm.margin)
        if not math.isfinite(loss):
            raise TrainingDivergenceError(f"Non-finite TransE loss on {kg.name}; lower the learning rate")
        total += loss
        if grads is None:
            continue

        # shared vectors (the kept entity, the relation) accumulate both terms
        accumulated: Dict[Tuple[str, str], np.ndarray] = {}
        for role, g in grads.items():
            key = keys[role]
            accumulated[key] = accumulated[key] + g if key in accumulated else g.copy()
        for (kind, tok), g in accumulated.items():
            table = tm.entities if kind == ENTITY else tm.relations
            table[tok] -= lr * g
            if kind == ENTITY and tm.normalize_entities:
                norm = np.linalg.norm(table[tok])
                if norm > 0:
                    table[tok] /= norm

    mean = total / kg.num_triples
    if not math.isfinite(mean):
        raise TrainingDivergenceError(f"Non-finite TransE loss on {kg.name}; lower the learning rate")
    return mean


def incremental_train(tm: TranslationEmbedding, parties: Sequence[Tuple[KnowledgeGraph, PartyVocabulary]],
                      alternations: int, epochs_per_segment: int, lr: float,
                      rng: np.random.Generator, max_retries: int = 100) -> TranslationEmbedding:
    """
    Parties take turns; each segment trains only on that party's triples and
    the TM is the only state handed over.
    """
    if alternations < 1:
        raise ValueError(f"alternations must be >= 1, got {alternations}")
    for a in range(alternations):
        for kg, vocab in parties:
            loss = 0.0
            for _ in range(epochs_per_segment):
                loss = transe_epoch(tm, kg, vocab, lr, rng, max_retries=max_retries)
            logger.info(f"TM segment {a + 1}/{alternations} on {kg.name}: mean loss {loss:.4f}")
    return tm


def embed_entity(tm: TranslationEmbedding, vocab: PartyVocabulary, name: str) -> np.ndarray:
    return tm.entity_vector(vocab.entity_token(name)).copy()


def hits_at_k(tm: TranslationEmbedding, kg: KnowledgeGraph, vocab: PartyVocabulary, k: int = 3) -> float:
    """Raw tail-prediction hits@k over every triple of kg."""
    ent_tokens, rel_tokens = vocab.graph_tokens(kg)
    table = np.stack([tm.entity_vector(tok) for tok in ent_tokens])
    hits = 0
    for s, p, o in kg.triples:
        target = table[s] + tm.relation_vector(rel_tokens[p])
        dist = ((table - target) ** 2).sum(axis=1)
        rank = int((dist < dist[o]).sum())
        hits += rank < k
    return hits / kg.num_triples if kg.num_triples else 0.0
