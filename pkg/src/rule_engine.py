from dataclasses import replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np

from src.errors import SamplingError
from src.kg_store import KnowledgeGraph
from src.questions import (CandidateSource, DefectSubgraph, Question, QuestionKind, candidate_pool,
                           is_accidentally_correct, relevance, sample_wrong_candidates)
from src.tuner_state import RoundOutcome, accuracy

logger = logging.getLogger(__name__)

DEFAULT_HARDEN_ORDER = ("raise_candidate_relevance", "add_candidate", "drop_answer_edge")
DEFAULT_EASE_ORDER = ("add_answer_edge", "drop_candidate", "lower_candidate_relevance")


class RuleResult(NamedTuple):
    question: Question
    rule: Optional[str]   # None when no rule applied

    @property
    def applied(self) -> bool:
        return self.rule is not None


def _build(q: Question, candidates: Sequence[int], sg: Optional[DefectSubgraph] = None) -> Question:
    sg = sg or q.subgraph
    candidates = tuple(candidates)
    if len(candidates) == 1:
        return Question(q.qid, sg, candidates, QuestionKind.JUDGMENT, candidates[0] == sg.removed_entity)
    return Question(q.qid, sg, candidates, QuestionKind.CHOICE, candidates.index(sg.removed_entity))


class DifficultyRuleEngine:
    """
    Mutates questions with the difficulty rules. Each direction has an
    ordered list of rule names and the first applicable rule wins.
    Ground truth and blank position never change.
    """

    def __init__(self, kg: KnowledgeGraph, max_candidates: int,
                 harden_order: Sequence[str] = DEFAULT_HARDEN_ORDER,
                 ease_order: Sequence[str] = DEFAULT_EASE_ORDER,
                 max_retries: int = 200):
        self.kg = kg
        self.max_candidates = max_candidates
        self.max_retries = max_retries
        self.rules: Dict[str, Callable[[Question, np.random.Generator], Optional[Question]]] = {
            "raise_candidate_relevance": self.raise_candidate_relevance,
            "add_candidate": self.add_candidate,
            "drop_answer_edge": self.drop_answer_edge,
            "add_answer_edge": self.add_answer_edge,
            "drop_candidate": self.drop_candidate,
            "lower_candidate_relevance": self.lower_candidate_relevance,
        }
        unknown = [r for r in (*harden_order, *ease_order) if r not in self.rules]
        if unknown:
            raise ValueError(f"Unknown tuning rules: {unknown}")
        self.harden_order = tuple(harden_order)
        self.ease_order = tuple(ease_order)

    def _apply_first(self, q: Question, order: Sequence[str], rng: np.random.Generator) -> RuleResult:
        for rule_name in order:
            tuned = self.rules[rule_name](q, rng)
            if tuned is not None:
                logger.debug(f"Rule Matched: {rule_name} on question {q.qid}")
                return RuleResult(tuned, rule_name)
        return RuleResult(q, None)

    def harden(self, q: Question, rng: np.random.Generator) -> RuleResult:
        return self._apply_first(q, self.harden_order, rng)

    def ease(self, q: Question, rng: np.random.Generator) -> RuleResult:
        return self._apply_first(q, self.ease_order, rng)

    # --- Hardening rules ---

    def raise_candidate_relevance(self, q: Question, rng: np.random.Generator) -> Optional[Question]:
        """Swap a wrong candidate for a strictly more relevant one (in-question node or neighbor)."""
        sg = q.subgraph
        taken = set(q.candidates) | {sg.removed_entity}
        pools = {source: [e for e in candidate_pool(self.kg, sg, source) if e not in taken]
                 for source in (CandidateSource.QUESTION, CandidateSource.NEIGHBOR)}
        wrong = q.wrong_candidates()
        for idx in rng.permutation(len(wrong)):
            old = wrong[int(idx)]
            old_rel = relevance(self.kg, sg, old)
            options = [e for source in (CandidateSource.QUESTION, CandidateSource.NEIGHBOR)
                       for e in pools[source]
                       if relevance(self.kg, sg, e) > old_rel and not is_accidentally_correct(self.kg, sg, e)]
            if options:
                new = options[int(rng.integers(len(options)))]
                return _build(q, [new if c == old else c for c in q.candidates])
        return None

    def add_candidate(self, q: Question, rng: np.random.Generator) -> Optional[Question]:
        if len(q.candidates) >= self.max_candidates:
            return None
        sg = q.subgraph
        if sg.removed_entity not in q.candidates:
            added = sg.removed_entity
        else:
            try:
                added = sample_wrong_candidates(self.kg, sg, 1, rng, exclude=q.candidates,
                                                max_retries=self.max_retries)[0]
            except SamplingError:
                return None
        candidates = list(q.candidates)
        candidates.insert(int(rng.integers(len(candidates) + 1)), added)
        return _build(q, candidates)

    def drop_answer_edge(self, q: Question, rng: np.random.Generator) -> Optional[Question]:
        """Delete a non-bridge blank-incident edge while at least two are present."""
        sg = q.subgraph
        incident = sg.incident_edges()
        if len(incident) < 2:
            return None
        for idx in rng.permutation(len(incident)):
            edge = incident[int(idx)]
            edges = tuple(e for e in sg.edges if e != edge)
            if not sg.is_connected(edges):
                continue
            trimmed = replace(sg, edges=edges)
            if any(is_accidentally_correct(self.kg, trimmed, c) for c in q.wrong_candidates()):
                continue
            return _build(q, q.candidates, trimmed)
        return None

    # --- Easing rules ---

    def add_answer_edge(self, q: Question, rng: np.random.Generator) -> Optional[Question]:
        """
        Attach a true KG edge at the blank. Missing edges to nodes already in
        the subgraph come first; otherwise a KG neighbor of the blank's entity
        joins as a new node.
        """
        sg = q.subgraph
        position = {e: i for i, e in enumerate(sg.nodes) if i != sg.blank_index}
        present = set(sg.edges)
        inside: List[Tuple[int, int, int]] = []
        outside: List[Tuple[int, int, int]] = []
        for p, other, direction in sorted(self.kg.adjacency.get(sg.removed_entity, ())):
            if other == sg.removed_entity:
                continue
            if other not in position:
                outside.append((p, other, direction))
                continue
            edge = (sg.blank_index, p, position[other]) if direction > 0 else (position[other], p, sg.blank_index)
            if edge not in present:
                inside.append(edge)
        if inside:
            edge = inside[int(rng.integers(len(inside)))]
            return _build(q, q.candidates, replace(sg, edges=tuple(sorted(present | {edge}))))

        new_index = sg.size
        for idx in rng.permutation(len(outside)):
            p, other, direction = outside[int(idx)]
            edge = (sg.blank_index, p, new_index) if direction > 0 else (new_index, p, sg.blank_index)
            grown = replace(sg, nodes=sg.nodes + (other,), edges=tuple(sorted(present | {edge})))
            if any(is_accidentally_correct(self.kg, grown, c) for c in q.wrong_candidates()):
                continue
            return _build(q, q.candidates, grown)
        return None

    def drop_candidate(self, q: Question, rng: np.random.Generator) -> Optional[Question]:
        wrong = q.wrong_candidates()
        if len(q.candidates) <= 1 or not wrong:
            return None
        dropped = wrong[int(rng.integers(len(wrong)))]
        return _build(q, [c for c in q.candidates if c != dropped])

    def lower_candidate_relevance(self, q: Question, rng: np.random.Generator) -> Optional[Question]:
        """Swap a relevant wrong candidate for a uniformly drawn entity."""
        sg = q.subgraph
        relevant = [c for c in q.wrong_candidates() if relevance(self.kg, sg, c) > 0]
        if not relevant:
            return None
        old = relevant[int(rng.integers(len(relevant)))]
        try:
            new = sample_wrong_candidates(self.kg, sg, 1, rng, exclude=q.candidates, max_retries=self.max_retries)[0]
        except SamplingError:
            return None
        return _build(q, [new if c == old else c for c in q.candidates])


def rule_harden(kg: KnowledgeGraph, q: Question, rng: np.random.Generator, max_candidates: int = 5) -> Question:
    return DifficultyRuleEngine(kg, max_candidates).harden(q, rng).question


def rule_ease(kg: KnowledgeGraph, q: Question, rng: np.random.Generator, max_candidates: int = 5) -> Question:
    return DifficultyRuleEngine(kg, max_candidates).ease(q, rng).question


def rule_tune(kg: KnowledgeGraph, o: RoundOutcome, eta: Tuple[float, float], rng: np.random.Generator,
              engine: Optional[DifficultyRuleEngine] = None, max_candidates: int = 5) -> List[Question]:
    """Harden the correct part when too easy, ease the wrong part when too hard."""
    engine = engine or DifficultyRuleEngine(kg, max_candidates)
    acc = accuracy(o)
    lo, hi = eta
    if acc > hi:
        tuned = o.q_minus + [engine.harden(q, rng).question for q in o.q_plus]
    elif acc < lo:
        tuned = o.q_plus + [engine.ease(q, rng).question for q in o.q_minus]
    else:
        tuned = o.q_plus + o.q_minus
    return sorted(tuned, key=lambda q: q.qid)
