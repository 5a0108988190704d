import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.answer_model import (Answer, AnswerModel, EncodedQuestion, TrainingHistory, answer, encode_question,
                              is_correct, train_adversarial_round, train_joint)
from src.audit import AuditLogger
from src.bayes_tuner import bayes_tune
from src.config_manager import DuelConfig
from src.errors import TunerError
from src.kg_store import KnowledgeGraph
from src.questions import Question, QuestionKind, sample_question_set
from src.retrieval_tuner import retrieval_tune
from src.rule_engine import DifficultyRuleEngine, rule_tune
from src.safety_layer import DisclosureGuard
from src.subgraph_encoder import GcnEncoder
from src.translation_model import PartyVocabulary, TranslationEmbedding
from src.tuner_state import RoundOutcome, TunerHistory, accuracy

logger = logging.getLogger(__name__)

AnswerKey = Dict[int, Tuple[QuestionKind, object]]


@dataclass
class RoundReport:
    round: int
    accuracy: float
    tuner: Optional[str]   # tuner that produced the next set, None on the last round


@dataclass
class Party:
    """A graph with its vocabulary, models and tuner state. Never reads the opponent's graph."""
    name: str
    kg: KnowledgeGraph
    vocab: PartyVocabulary
    rng: np.random.Generator
    em: Optional[GcnEncoder] = None
    am: Optional[AnswerModel] = None
    history: Optional[TunerHistory] = None
    q_final: List[Question] = field(default_factory=list)
    joint_history: Optional[TrainingHistory] = None
    rounds: List[RoundReport] = field(default_factory=list)
    round_cap_reached: bool = False

    @classmethod
    def create(cls, name: str, kg: KnowledgeGraph, salt: bytes, seed: int) -> "Party":
        return cls(name, kg, PartyVocabulary.for_graph(kg, salt), np.random.default_rng(seed))

    @property
    def guard(self) -> DisclosureGuard:
        return DisclosureGuard(self.vocab.surface_forms(), party=self.name)

    @property
    def final_accuracy(self) -> Optional[float]:
        return self.rounds[-1].accuracy if self.rounds else None


def _sample(party: Party, n: int, config: DuelConfig, start_qid: int = 0) -> List[Question]:
    qc = config.questions
    return sample_question_set(party.kg, n, qc.candidate_counts, qc.subgraph_sizes, party.rng,
                               start_qid=start_qid, steps_factor=qc.steps_factor,
                               max_restarts=qc.max_restarts, max_retries=qc.max_retries)


def judge(party: Party, tm: TranslationEmbedding, questions: Sequence[Question]) -> List[bool]:
    """Answer the party's own questions with its own EM and AM; one verdict per question."""
    verdicts = []
    for q in questions:
        ans = answer(party.am, encode_question(q, party.em, tm, party.vocab, party.kg))
        verdicts.append(is_correct(ans, q.kind, q.truth))
    return verdicts


def tune(party: Party, outcome: RoundOutcome, config: DuelConfig, engine: DifficultyRuleEngine) -> Tuple[List[Question], str]:
    """Next question set and the tuner that made it; Bayes and retrieval fall back to rules."""
    tc = config.tuning
    eta = tuple(tc.eta)
    n = len(outcome)
    try:
        if tc.tuner == "bayes":
            return bayes_tune(party.history, eta, n, party.rng, alpha=tc.bayes_alpha), "bayes"
        if tc.tuner == "retrieval":
            return retrieval_tune(party.history, eta, tc.gamma, n, party.rng), "retrieval"
    except TunerError as e:
        logger.warning(f"{party.name}: {tc.tuner} tuner unavailable this round ({e}); using rules")
    return rule_tune(party.kg, outcome, eta, party.rng, engine=engine), "rule"


def run_first_subgame(party: Party, tm: TranslationEmbedding, config: DuelConfig,
                      audit: Optional[AuditLogger] = None) -> Party:
    """
    Joint EM/AM training, then the adversarial loop: answer Q_t, stop when
    the accuracy lies in eta, otherwise tune Q_{t+1} and train the AM one
    round on Q_t. q_final is the last answered set.
    """
    ec, ac, tc = config.encoder, config.answer_model, config.tuning
    party.em = GcnEncoder.initialize(tm.dim, ec.hidden, party.rng, self_loops=ec.self_loops)
    party.am = AnswerModel.initialize(ac.n_filters, ac.width, party.rng, slope=ac.leaky_slope)

    q_joint = _sample(party, tc.joint_size, config)
    party.am, party.em, party.joint_history = train_joint(
        party.am, party.em, tm, party.vocab, party.kg, q_joint, ac.epochs, ac.lr, party.rng, patience=ac.patience)
    if audit:
        audit.log_event("joint-training", party.name, {
            "split": party.joint_history.split,
            "best_epoch": party.joint_history.best_epoch,
            "test_accuracy": party.joint_history.test_accuracy,
        })

    if tc.tuner == "rule":
        question_base = _sample(party, tc.round_size, config)
        q_t = list(question_base)
    else:
        question_base = _sample(party, tc.qb_size, config)
        picked = party.rng.choice(len(question_base), size=tc.round_size, replace=False)
        q_t = sorted((question_base[int(i)] for i in picked), key=lambda q: q.qid)
    party.history = TunerHistory(party.kg, question_base)
    engine = DifficultyRuleEngine(party.kg, max(config.questions.candidate_counts),
                                  tc.harden_order, tc.ease_order, config.questions.max_retries)

    lo, hi = tc.eta
    party.rounds = []
    party.round_cap_reached = False
    for t in range(tc.max_rounds):
        outcome = RoundOutcome.from_verdicts(q_t, judge(party, tm, q_t))
        party.history.record(outcome)
        acc = accuracy(outcome)
        logger.info(f"{party.name} round {t}: accuracy {acc:.3f} on {len(q_t)} questions")

        if lo <= acc <= hi:
            party.rounds.append(RoundReport(t, acc, None))
            break
        if t == tc.max_rounds - 1:
            party.rounds.append(RoundReport(t, acc, None))
            party.round_cap_reached = True
            logger.warning(f"{party.name}: round cap {tc.max_rounds} reached with accuracy {acc:.3f} outside {tc.eta}")
            break

        q_next, used = tune(party, outcome, config, engine)
        if len(q_next) != len(q_t):
            raise TunerError(f"{used} tuner changed the set size from {len(q_t)} to {len(q_next)}")
        party.am, _ = train_adversarial_round(party.am, party.em, tm, party.vocab, party.kg, q_t,
                                              ac.extra_negatives, ac.adversarial_epochs, ac.lr, party.rng,
                                              max_retries=config.questions.max_retries)
        party.rounds.append(RoundReport(t, acc, used))
        if audit:
            audit.log_event("adversarial-round", party.name, {"round": t, "accuracy": acc, "tuner": used})
        q_t = q_next

    party.q_final = q_t
    if audit:
        audit.log_event("first-subgame", party.name, {
            "rounds": len(party.rounds),
            "final_accuracy": party.final_accuracy,
            "round_cap_reached": party.round_cap_reached,
        })
    return party


def encode_for_opponent(sender: Party, opponent_em: GcnEncoder, tm: TranslationEmbedding,
                        questions: Optional[Sequence[Question]] = None) -> Tuple[List[EncodedQuestion], AnswerKey]:
    """
    Encode with the opponent's EM. Exchange qids are renumbered 0..n-1 and the
    answer key stays with the sender.
    """
    questions = sender.q_final if questions is None else questions
    encoded, key = [], {}
    for i, q in enumerate(questions):
        encoded.append(encode_question(q, opponent_em, tm, sender.vocab, sender.kg, qid=i))
        key[i] = (q.kind, q.truth)
    return encoded, key


def answer_questions(party: Party, encoded: Sequence[EncodedQuestion]) -> List[Answer]:
    return [answer(party.am, q) for q in encoded]
