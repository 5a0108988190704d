import json
import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

import numpy as np

from src.errors import SamplingError
from src.kg_store import KnowledgeGraph, Triple

logger = logging.getLogger(__name__)

BLANK = -1

Edge = Tuple[int, int, int]  # (node index, relation id, node index)


class QuestionKind(str, Enum):
    JUDGMENT = "judgment"
    CHOICE = "choice"


class CandidateSource(str, Enum):
    RANDOM = "random"        # any entity of the graph
    QUESTION = "question"    # a node shown in the subgraph
    NEIGHBOR = "neighbor"    # one hop away from the subgraph


@dataclass(frozen=True)
class DefectSubgraph:
    nodes: Tuple[int, ...]        # entity ids, BLANK at blank_index
    edges: Tuple[Edge, ...]
    blank_index: int
    removed_entity: int           # party-private ground truth

    def __post_init__(self):
        if not 0 <= self.blank_index < len(self.nodes) or self.nodes[self.blank_index] != BLANK:
            raise ValueError(f"blank index {self.blank_index} does not point at the blank node")
        if sum(1 for n in self.nodes if n == BLANK) != 1:
            raise ValueError("a defect subgraph has exactly one blank node")
        for i, _, j in self.edges:
            if not (0 <= i < len(self.nodes) and 0 <= j < len(self.nodes)):
                raise ValueError(f"edge endpoint out of range: {(i, j)}")

    @property
    def size(self) -> int:
        return len(self.nodes)

    def restored_nodes(self) -> Tuple[int, ...]:
        return tuple(self.removed_entity if n == BLANK else n for n in self.nodes)

    def visible_nodes(self) -> Tuple[int, ...]:
        return tuple(n for n in self.nodes if n != BLANK)

    def incident_edges(self) -> List[Edge]:
        return [e for e in self.edges if self.blank_index in (e[0], e[2])]

    def substituted_triples(self, entity: int) -> List[Triple]:
        """Triples the blank-incident edges become when entity fills the blank."""
        nodes = list(self.nodes)
        nodes[self.blank_index] = entity
        return [Triple(nodes[i], r, nodes[j]) for i, r, j in self.incident_edges()]

    def is_connected(self, edges: Optional[Iterable[Edge]] = None) -> bool:
        edges = self.edges if edges is None else edges
        adj: Dict[int, Set[int]] = {i: set() for i in range(self.size)}
        for i, _, j in edges:
            adj[i].add(j)
            adj[j].add(i)
        seen = {0}
        queue = deque([0])
        while queue:
            for nxt in adj[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == self.size


@dataclass(frozen=True)
class Question:
    qid: int
    subgraph: DefectSubgraph
    candidates: Tuple[int, ...]
    kind: QuestionKind
    truth: Union[bool, int]   # judgment: candidate is correct; choice: index of correct candidate

    def __post_init__(self):
        if not self.candidates:
            raise ValueError(f"question {self.qid} has no candidates")
        if (self.kind == QuestionKind.JUDGMENT) != (len(self.candidates) == 1):
            raise ValueError(f"question {self.qid}: {self.kind.value} with {len(self.candidates)} candidates")
        if self.kind == QuestionKind.CHOICE:
            answer = self.subgraph.removed_entity
            if self.candidates.count(answer) != 1 or self.candidates[self.truth] != answer:
                raise ValueError(f"question {self.qid}: truth index does not point at the removed entity")
        elif bool(self.truth) != (self.candidates[0] == self.subgraph.removed_entity):
            raise ValueError(f"question {self.qid}: judgment truth disagrees with the candidate")

    @property
    def correct_entity(self) -> int:
        return self.subgraph.removed_entity

    def wrong_candidates(self) -> List[int]:
        return [c for c in self.candidates if c != self.subgraph.removed_entity]

    def labels(self) -> List[int]:
        """1 for the correct candidate, 0 for every wrong one."""
        return [int(c == self.subgraph.removed_entity) for c in self.candidates]


class DifficultyVector(NamedTuple):
    mu1: float   # share of subgraph edges incident to the blank
    mu2: int     # number of candidates
    mu3: float   # mean relevance of wrong candidates (0 random, 1 neighbor, 2 in question)

    def as_array(self) -> np.ndarray:
        return np.array([self.mu1, float(self.mu2), self.mu3], dtype=np.float64)


def knowledge_points(q: Question) -> Set[int]:
    return set(q.subgraph.visible_nodes())


# --- Sampling ---

def sample_subgraph(kg: KnowledgeGraph, size: int, rng: np.random.Generator,
                    steps_factor: int = 50, max_restarts: int = 100) -> DefectSubgraph:
    """
    Random walk (direction ignored) from a random start until `size` distinct
    nodes are collected; keep the induced edges and blank one node at random.
    """
    if size < 2:
        raise ValueError(f"subgraph size must be >= 2, got {size}")
    if kg.num_entities < size:
        raise SamplingError(f"Graph '{kg.name}' has fewer than {size} entities")

    for _ in range(max_restarts):
        current = int(rng.integers(kg.num_entities))
        visited = [current]
        seen = {current}
        for _ in range(steps_factor * size):
            if len(visited) == size:
                break
            nbrs = kg.neighbors(current)
            if not nbrs:
                break
            current = nbrs[int(rng.integers(len(nbrs)))]
            if current not in seen:
                seen.add(current)
                visited.append(current)
        if len(visited) < size:
            continue

        position = {e: i for i, e in enumerate(visited)}
        edges = sorted({(position[e], p, position[other])
                        for e in visited
                        for p, other, direction in kg.adjacency.get(e, ())
                        if direction > 0 and other in position})
        blank = int(rng.integers(size))
        nodes = tuple(BLANK if i == blank else e for i, e in enumerate(visited))
        return DefectSubgraph(nodes=nodes, edges=tuple(edges), blank_index=blank, removed_entity=visited[blank])

    raise SamplingError(f"Random walk on '{kg.name}' failed to reach {size} nodes in {max_restarts} restarts")


def is_accidentally_correct(kg: KnowledgeGraph, sg: DefectSubgraph, candidate: int) -> bool:
    """True when the candidate satisfies every blank-incident edge (e.g. 1-N relations)."""
    triples = sg.substituted_triples(candidate)
    return bool(triples) and all(t in kg for t in triples)


def relevance(kg: KnowledgeGraph, sg: DefectSubgraph, candidate: int) -> int:
    if candidate in sg.visible_nodes():
        return 2
    restored = set(sg.restored_nodes())
    if any(n in restored for n in kg.neighbors(candidate)):
        return 1
    return 0


def candidate_pool(kg: KnowledgeGraph, sg: DefectSubgraph, source: CandidateSource) -> Optional[List[int]]:
    """Entities a wrong candidate may come from; None means the whole graph."""
    if source == CandidateSource.RANDOM:
        return None
    if source == CandidateSource.QUESTION:
        return sorted(set(sg.visible_nodes()))
    restored = set(sg.restored_nodes())
    return sorted({n for e in restored for n in kg.neighbors(e)} - restored)


def sample_wrong_candidates(kg: KnowledgeGraph, sg: DefectSubgraph, k: int, rng: np.random.Generator,
                            exclude: Iterable[int] = (), source: CandidateSource = CandidateSource.RANDOM,
                            max_retries: int = 200) -> List[int]:
    """
    k distinct wrong candidates that fail the accidental-correctness test.
    Raises SamplingError when the pool cannot supply them.
    """
    banned = set(exclude) | {sg.removed_entity}
    pool = candidate_pool(kg, sg, source)
    picked: List[int] = []
    if pool is not None:
        usable = [e for e in pool if e not in banned and not is_accidentally_correct(kg, sg, e)]
        if len(usable) < k:
            raise SamplingError(f"Only {len(usable)} {source.value} candidates available, need {k}")
        return [usable[i] for i in rng.choice(len(usable), size=k, replace=False)]

    tries = 0
    while len(picked) < k:
        if tries >= max_retries * max(k, 1):
            raise SamplingError(f"Could not find {k} wrong candidates in '{kg.name}' within retry bound")
        tries += 1
        e = int(rng.integers(kg.num_entities))
        if e in banned or is_accidentally_correct(kg, sg, e):
            continue
        banned.add(e)
        picked.append(e)
    return picked


def make_question(kg: KnowledgeGraph, sg: DefectSubgraph, n_candidates: int, rng: np.random.Generator,
                  qid: int = 0, source: CandidateSource = CandidateSource.RANDOM,
                  max_retries: int = 200) -> Question:
    if n_candidates < 1:
        raise ValueError(f"n_candidates must be >= 1, got {n_candidates}")
    if n_candidates == 1:
        if rng.random() < 0.5:
            return Question(qid, sg, (sg.removed_entity,), QuestionKind.JUDGMENT, True)
        wrong = sample_wrong_candidates(kg, sg, 1, rng, source=source, max_retries=max_retries)
        return Question(qid, sg, (wrong[0],), QuestionKind.JUDGMENT, False)

    wrong = sample_wrong_candidates(kg, sg, n_candidates - 1, rng, source=source, max_retries=max_retries)
    candidates = [sg.removed_entity] + wrong
    order = rng.permutation(n_candidates)
    shuffled = tuple(candidates[i] for i in order)
    return Question(qid, sg, shuffled, QuestionKind.CHOICE, shuffled.index(sg.removed_entity))


def difficulty_features(kg: KnowledgeGraph, q: Question) -> DifficultyVector:
    sg = q.subgraph
    mu1 = len(sg.incident_edges()) / len(sg.edges) if sg.edges else 0.0
    wrong = q.wrong_candidates()
    mu3 = float(np.mean([relevance(kg, sg, c) for c in wrong])) if wrong else 0.0
    return DifficultyVector(mu1, len(q.candidates), mu3)


def sample_question_set(kg: KnowledgeGraph, n: int, candidate_counts: Iterable[int], subgraph_sizes: Iterable[int],
                        rng: np.random.Generator, start_qid: int = 0, steps_factor: int = 50,
                        max_restarts: int = 100, max_retries: int = 200) -> List[Question]:
    """n questions with candidate count ~ uniform(O) and subgraph size ~ uniform(C_sg)."""
    counts = sorted(set(candidate_counts))
    sizes = sorted(set(subgraph_sizes))
    if not counts or not sizes:
        raise ValueError("candidate-count and subgraph-size pools must be non-empty")
    questions = []
    for i in range(n):
        n_c = counts[int(rng.integers(len(counts)))]
        size = sizes[int(rng.integers(len(sizes)))]
        sg = sample_subgraph(kg, size, rng, steps_factor=steps_factor, max_restarts=max_restarts)
        questions.append(make_question(kg, sg, n_c, rng, qid=start_qid + i, max_retries=max_retries))
    logger.debug(f"Sampled {n} questions from {kg.name}")
    return questions


# --- Party-private checkpoint ---

def _question_to_dict(q: Question) -> Dict:
    sg = q.subgraph
    return {
        "qid": q.qid,
        "kind": q.kind.value,
        "truth": q.truth,
        "candidates": list(q.candidates),
        "subgraph": {
            "nodes": list(sg.nodes),
            "edges": [list(e) for e in sg.edges],
            "blank_index": sg.blank_index,
            "removed_entity": sg.removed_entity,
        },
    }


def _question_from_dict(data: Dict) -> Question:
    s = data["subgraph"]
    sg = DefectSubgraph(tuple(s["nodes"]), tuple(tuple(e) for e in s["edges"]), s["blank_index"], s["removed_entity"])
    return Question(data["qid"], sg, tuple(data["candidates"]), QuestionKind(data["kind"]), data["truth"])


def save_question_set(questions: Sequence[Question], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([_question_to_dict(q) for q in questions], f)


def load_question_set(path: str) -> List[Question]:
    with open(path, "r", encoding="utf-8") as f:
        return [_question_from_dict(d) for d in json.load(f)]
