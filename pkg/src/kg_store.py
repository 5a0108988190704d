import logging
from collections import defaultdict
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from src.errors import EmptyGraphError, KgFormatError
from src.numerics import round_half_up

logger = logging.getLogger(__name__)

OUTGOING = 1
INCOMING = -1

NameTriple = Tuple[str, str, str]


class Triple(NamedTuple):
    subject: int
    predicate: int
    object: int


class KnowledgeGraph:
    """
    Integer-indexed triple store.

    Entity and relation ids are dense and the subject-predicate index and
    adjacency lists mirror the triple set exactly. Instances are treated as
    immutable once built.
    """

    def __init__(self, name: str, entity_names: Sequence[str], relation_names: Sequence[str],
                 triples: Iterable[Triple]):
        self.name = name
        self.entity_names: List[str] = list(entity_names)
        self.relation_names: List[str] = list(relation_names)
        self._entity_ids = {n: i for i, n in enumerate(self.entity_names)}
        self._relation_ids = {n: i for i, n in enumerate(self.relation_names)}
        if len(self._entity_ids) != len(self.entity_names):
            raise ValueError(f"Duplicate entity names in graph '{name}'")
        if len(self._relation_ids) != len(self.relation_names):
            raise ValueError(f"Duplicate relation names in graph '{name}'")

        n_e, n_r = len(self.entity_names), len(self.relation_names)
        seen: Set[Triple] = set()
        ordered: List[Triple] = []
        for t in triples:
            t = Triple(*t)
            if not (0 <= t.subject < n_e and 0 <= t.object < n_e and 0 <= t.predicate < n_r):
                raise ValueError(f"Triple {t} out of range for graph '{name}' ({n_e} entities, {n_r} relations)")
            if t not in seen:
                seen.add(t)
                ordered.append(t)
        self.triples: Tuple[Triple, ...] = tuple(ordered)
        self.triple_set: FrozenSet[Triple] = frozenset(seen)

        index_sp: Dict[Tuple[int, int], Set[int]] = defaultdict(set)
        adjacency: Dict[int, Set[Tuple[int, int, int]]] = defaultdict(set)
        for s, p, o in self.triples:
            index_sp[(s, p)].add(o)
            adjacency[s].add((p, o, OUTGOING))
            adjacency[o].add((p, s, INCOMING))
        self.index_sp = dict(index_sp)
        self.adjacency = dict(adjacency)
        self._neighbors: Dict[int, Tuple[int, ...]] = {
            e: tuple(sorted({other for _, other, _ in edges if other != e}))
            for e, edges in self.adjacency.items()
        }

    @classmethod
    def from_name_triples(cls, name: str, name_triples: Iterable[NameTriple]) -> "KnowledgeGraph":
        """Assign ids by first appearance (subject, predicate, object order)."""
        entities: Dict[str, int] = {}
        relations: Dict[str, int] = {}
        triples = []
        for s, p, o in name_triples:
            sid = entities.setdefault(s, len(entities))
            pid = relations.setdefault(p, len(relations))
            oid = entities.setdefault(o, len(entities))
            triples.append(Triple(sid, pid, oid))
        return cls(name, list(entities), list(relations), triples)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    @property
    def is_empty(self) -> bool:
        return not self.triples

    def __contains__(self, triple) -> bool:
        return Triple(*triple) in self.triple_set

    def __repr__(self) -> str:
        return (f"KnowledgeGraph(name={self.name!r}, entities={self.num_entities}, "
                f"relations={self.num_relations}, triples={self.num_triples})")

    def entity_id(self, name: str) -> int:
        return self._entity_ids[name]

    def relation_id(self, name: str) -> int:
        return self._relation_ids[name]

    def has_entity(self, name: str) -> bool:
        return name in self._entity_ids

    def objects(self, subject: int, predicate: int) -> Set[int]:
        return self.index_sp.get((subject, predicate), set())

    def neighbors(self, entity: int) -> Tuple[int, ...]:
        """Entities one hop away in either direction, sorted, self excluded."""
        return self._neighbors.get(entity, ())

    def name_triple(self, t: Triple) -> NameTriple:
        return self.entity_names[t.subject], self.relation_names[t.predicate], self.entity_names[t.object]

    def name_triples(self) -> List[NameTriple]:
        return [self.name_triple(t) for t in self.triples]


def load_kg(path: str, name: Optional[str] = None) -> KnowledgeGraph:
    """
    Load a UTF-8 TSV file with one `subject<TAB>predicate<TAB>object` per line.
    Blank lines are ignored; duplicate lines collapse.
    """
    name = name or path
    name_triples: List[NameTriple] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, raw in enumerate(f, start=1):
                line = raw.rstrip("\r\n")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise KgFormatError(path, line_no, f"expected 3 tab-separated fields, found {len(fields)}")
                if any(not field for field in fields):
                    raise KgFormatError(path, line_no, "empty field")
                name_triples.append((fields[0], fields[1], fields[2]))
    except UnicodeDecodeError as e:
        raise KgFormatError(path, None, f"not valid UTF-8 ({e})") from e

    if not name_triples:
        raise KgFormatError(path, None, "file contains no triples")

    kg = KnowledgeGraph.from_name_triples(name, name_triples)
    logger.info(f"Loaded {kg.name}: {kg.num_entities} entities, {kg.num_relations} relations, "
                f"{kg.num_triples} triples ({len(name_triples) - kg.num_triples} duplicates collapsed)")
    return kg


def write_kg(kg: KnowledgeGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s, p, o in kg.name_triples():
            f.write(f"{s}\t{p}\t{o}\n")


# --- Shallow baseline metrics ---

def _require_triples(kg: KnowledgeGraph) -> None:
    if kg.is_empty:
        raise EmptyGraphError(f"Graph '{kg.name}' has no triples")


def _entropy(counts: np.ndarray, total: int) -> float:
    p = counts[counts > 0] / total
    # + 0.0 turns a single-outcome -0.0 into 0.0
    return float(-(p * np.log2(p)).sum()) + 0.0


def entity_entropy(kg: KnowledgeGraph) -> float:
    """Base-2 entropy of P(e) = (#subject + #object occurrences) / |T|."""
    _require_triples(kg)
    arr = np.asarray(kg.triples, dtype=np.int64)
    counts = np.bincount(arr[:, 0], minlength=kg.num_entities) + np.bincount(arr[:, 2], minlength=kg.num_entities)
    return _entropy(counts, kg.num_triples)


def relation_entropy(kg: KnowledgeGraph) -> float:
    _require_triples(kg)
    arr = np.asarray(kg.triples, dtype=np.int64)
    counts = np.bincount(arr[:, 1], minlength=kg.num_relations)
    return _entropy(counts, kg.num_triples)


def entity_density(kg: KnowledgeGraph) -> float:
    if kg.num_entities == 0:
        raise EmptyGraphError(f"Graph '{kg.name}' has no entities")
    return 2.0 * kg.num_triples / kg.num_entities


def relation_density(kg: KnowledgeGraph) -> float:
    if kg.num_relations == 0:
        raise EmptyGraphError(f"Graph '{kg.name}' has no relations")
    return kg.num_triples / kg.num_relations


def shallow_metrics(kg: KnowledgeGraph) -> Dict[str, float]:
    return {
        "EN": float(kg.num_entities),
        "RN": float(kg.num_relations),
        "TN": float(kg.num_triples),
        "EE": entity_entropy(kg),
        "RE": relation_entropy(kg),
        "ED": entity_density(kg),
        "RD": relation_density(kg),
    }


# --- Dataset manipulation ---

def common_subgraph(a: KnowledgeGraph, b: KnowledgeGraph, name: Optional[str] = None) -> KnowledgeGraph:
    """Triples present in both graphs, compared by surface names; ids re-densified."""
    b_names = set(b.name_triples())
    common = [nt for nt in a.name_triples() if nt in b_names]
    kg = KnowledgeGraph.from_name_triples(name or f"common({a.name},{b.name})", common)
    if kg.is_empty:
        logger.warning(f"No common triples between {a.name} and {b.name}; questions cannot be sampled from it")
    return kg


def ablate_triples(kg: KnowledgeGraph, other: KnowledgeGraph, n: int, ratio: float,
                   rng: np.random.Generator, name: Optional[str] = None) -> KnowledgeGraph:
    """
    Remove n triples: round(n*ratio/(ratio+1)) unique to kg (by name, vs other)
    and the rest from the triples kg shares with other. A short pool spills
    its deficit into the other pool.
    """
    if n < 0 or n > kg.num_triples:
        raise ValueError(f"Cannot remove {n} triples from a graph with {kg.num_triples}")
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")

    other_names = set(other.name_triples())
    unique_idx = [i for i, t in enumerate(kg.triples) if kg.name_triple(t) not in other_names]
    common_idx = [i for i, t in enumerate(kg.triples) if kg.name_triple(t) in other_names]

    n_unique = round_half_up(n * ratio / (ratio + 1.0))
    n_common = n - n_unique
    if n_unique > len(unique_idx):
        n_common += n_unique - len(unique_idx)
        n_unique = len(unique_idx)
    if n_common > len(common_idx):
        n_unique += n_common - len(common_idx)
        n_common = len(common_idx)

    removed = set()
    if n_unique:
        removed.update(unique_idx[i] for i in rng.choice(len(unique_idx), size=n_unique, replace=False))
    if n_common:
        removed.update(common_idx[i] for i in rng.choice(len(common_idx), size=n_common, replace=False))

    kept = [kg.name_triple(t) for i, t in enumerate(kg.triples) if i not in removed]
    logger.info(f"Ablated {kg.name}: removed {n_unique} unique + {n_common} common triples")
    return KnowledgeGraph.from_name_triples(name or f"{kg.name}-ablated{n}", kept)
