import logging
from typing import List, Tuple

import numpy as np

from src.config_manager import DuelConfig
from src.kg_store import KnowledgeGraph, NameTriple, ablate_triples

logger = logging.getLogger(__name__)


def entity_name(i: int) -> str:
    return f"entity_{i:04d}"


def relation_name(i: int) -> str:
    return f"relation_{i:02d}"


def functional_kg(n_entities: int = 20, n_relations: int = 3, name: str = "functional") -> KnowledgeGraph:
    """Every relation k is a function: e_i -> e_{(i + k + 1) mod n}."""
    triples = [(entity_name(i), relation_name(k), entity_name((i + k + 1) % n_entities))
               for k in range(n_relations) for i in range(n_entities)]
    return KnowledgeGraph.from_name_triples(name, triples)


def synthetic_kg(n_entities: int = 300, n_relations: int = 8, n_clusters: int = 10, noise: float = 0.1,
                 seed: int = 0, name: str = "synthetic") -> KnowledgeGraph:
    """
    Clustered graph: relation r maps cluster c onto cluster (c + r + 1) mod k
    with a fixed local permutation, plus a share of uniformly random triples.
    """
    rng = np.random.default_rng(seed)
    size = n_entities // n_clusters
    n_entities = size * n_clusters
    triples: List[NameTriple] = []
    for r in range(n_relations):
        shift = int(rng.integers(1, size)) if size > 1 else 0
        for e in range(n_entities):
            if rng.random() < 0.5:
                continue
            c, local = divmod(e, size)
            target = ((c + r + 1) % n_clusters) * size + (local + shift) % size
            triples.append((entity_name(e), relation_name(r), entity_name(target)))
    for _ in range(int(noise * len(triples))):
        s, o = rng.integers(n_entities, size=2)
        triples.append((entity_name(int(s)), relation_name(int(rng.integers(n_relations))), entity_name(int(o))))
    kg = KnowledgeGraph.from_name_triples(name, triples)
    logger.debug(f"Built {kg}")
    return kg


def overlapping_pair(world: KnowledgeGraph, private_share: float, rng: np.random.Generator) -> Tuple[KnowledgeGraph, KnowledgeGraph]:
    """Two graphs that each miss a different random share of the world's triples."""
    names = world.name_triples()
    n_drop = int(round(private_share * len(names)))
    drop = rng.permutation(len(names))
    drop_a, drop_b = set(drop[:n_drop].tolist()), set(drop[n_drop:2 * n_drop].tolist())
    a = KnowledgeGraph.from_name_triples("alpha", [t for i, t in enumerate(names) if i not in drop_a])
    b = KnowledgeGraph.from_name_triples("beta", [t for i, t in enumerate(names) if i not in drop_b])
    return a, b


def fixture_pair(seed: int = 0, n_entities: int = 300, removal: float = 0.3, ratio: float = 4.0,
                 private_share: float = 0.1) -> Tuple[KnowledgeGraph, KnowledgeGraph]:
    """
    An intact graph and a degraded counterpart: both are drawn from one
    synthetic world, then `removal` of the second graph's triples are ablated
    with `ratio` unique-to-common.
    """
    rng = np.random.default_rng(seed)
    world = synthetic_kg(n_entities=n_entities, seed=seed)
    intact, other = overlapping_pair(world, private_share, rng)
    degraded = ablate_triples(other, intact, int(round(removal * other.num_triples)), ratio, rng, name="beta")
    return intact, degraded


def smoke_config(**seeds: int) -> DuelConfig:
    """A DuelConfig small enough to play a whole duel in seconds."""
    return DuelConfig(
        embedding={"dim": 8, "alternations": 1, "epochs_per_segment": 2},
        encoder={"hidden": 8},
        answer_model={"n_filters": 2, "width": 3, "epochs": 2, "patience": 2},
        questions={"candidate_counts": [1, 2, 3], "subgraph_sizes": [3, 4]},
        tuning={"joint_size": 30, "round_size": 20, "qb_size": 60, "max_rounds": 2},
        evaluation={"repeat_sets": 2, "pool_factor": 4, "common_questions": 20, "common_repetitions": 2},
        seeds=seeds or {},
    )
