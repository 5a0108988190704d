import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Sequence

from src.errors import TunerError
from src.kg_store import KnowledgeGraph
from src.questions import DifficultyVector, Question, difficulty_features, knowledge_points

logger = logging.getLogger(__name__)

PLUS = "+"
MINUS = "-"


@dataclass
class RoundOutcome:
    q_plus: List[Question]    # answered correctly
    q_minus: List[Question]

    def __post_init__(self):
        overlap = {q.qid for q in self.q_plus} & {q.qid for q in self.q_minus}
        if overlap:
            raise ValueError(f"Questions {sorted(overlap)} are both correct and wrong")

    @classmethod
    def from_verdicts(cls, questions: Sequence[Question], verdicts: Sequence[bool]) -> "RoundOutcome":
        if len(questions) != len(verdicts):
            raise ValueError("one verdict per question is required")
        return cls([q for q, ok in zip(questions, verdicts) if ok],
                   [q for q, ok in zip(questions, verdicts) if not ok])

    @property
    def questions(self) -> List[Question]:
        return sorted(self.q_plus + self.q_minus, key=lambda q: q.qid)

    def signed(self, sign: str) -> List[Question]:
        return self.q_plus if sign == PLUS else self.q_minus

    def __len__(self) -> int:
        return len(self.q_plus) + len(self.q_minus)


def accuracy(o: RoundOutcome) -> float:
    if len(o) == 0:
        raise TunerError("Accuracy of an empty round is undefined")
    return len(o.q_plus) / len(o)


@dataclass
class KnowledgeStats:
    R: int                 # signed relevant set size
    N: int                 # |QB|
    r: Dict[int, int]      # per knowledge point, count inside the signed set
    n: Dict[int, int]      # per knowledge point, count inside QB


class TunerHistory:
    """
    Party-private tuner state: every round outcome, the question base, its
    difficulty-feature cache and knowledge-point counts over QB.
    """

    def __init__(self, kg: KnowledgeGraph, question_base: Sequence[Question]):
        self.kg = kg
        self.question_base: List[Question] = list(question_base)
        self._qb_by_qid: Dict[int, Question] = {q.qid: q for q in self.question_base}
        if len(self._qb_by_qid) != len(self.question_base):
            raise ValueError("question base qids must be unique")
        self.rounds: List[RoundOutcome] = []
        self._features: Dict[int, DifficultyVector] = {q.qid: difficulty_features(kg, q) for q in self.question_base}
        self._points: Dict[int, FrozenSet[int]] = {q.qid: frozenset(knowledge_points(q)) for q in self.question_base}
        self.point_counts: Counter = Counter(v for pts in self._points.values() for v in pts)

    @property
    def N(self) -> int:
        return len(self.question_base)

    def _is_base(self, q: Question) -> bool:
        return self._qb_by_qid.get(q.qid) is q

    def features(self, q: Question) -> DifficultyVector:
        if self._is_base(q):
            return self._features[q.qid]
        return difficulty_features(self.kg, q)

    def points(self, q: Question) -> FrozenSet[int]:
        if self._is_base(q):
            return self._points[q.qid]
        return frozenset(knowledge_points(q))

    def record(self, outcome: RoundOutcome) -> None:
        self.rounds.append(outcome)

    @property
    def latest(self) -> RoundOutcome:
        if not self.rounds:
            raise TunerError("No round has been recorded yet")
        return self.rounds[-1]

    def pooled(self, sign: str) -> List[Question]:
        """Signed questions of every round, with multiplicity."""
        return [q for o in self.rounds for q in o.signed(sign)]

    def knowledge_stats(self, sign: str) -> KnowledgeStats:
        if self.N == 0:
            raise TunerError("Question base is empty")
        unique = {q.qid: q for q in self.pooled(sign)}
        r = Counter(v for q in unique.values() for v in self.points(q))
        return KnowledgeStats(R=len(unique), N=self.N, r=dict(r), n=dict(self.point_counts))
