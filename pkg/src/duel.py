import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.answer_model import Answer, EncodedQuestion, answer, encode_question, is_correct
from src.audit import AuditLogger
from src.config_manager import DuelConfig
from src.errors import EmptyGraphError, ProtocolError, SamplingError, StageError
from src.kg_store import KnowledgeGraph, common_subgraph
from src.party import AnswerKey, Party, answer_questions, encode_for_opponent, run_first_subgame
from src.protocol import (AnswerRecord, AnswersMessage, EncodedQuestionRecord, QuestionsMessage, ScoreMessage,
                          dump_root, parse_answers, parse_questions)
from src.questions import (CandidateSource, Question, QuestionKind, difficulty_features, make_question,
                           sample_subgraph)
from src.safety_layer import DisclosureGuard
from src.subgraph_encoder import GcnEncoder, em_deserialize, em_serialize
from src.translation_model import PartyVocabulary, TranslationEmbedding, incremental_train, tm_deserialize, tm_serialize

logger = logging.getLogger(__name__)

ALPHA = "alpha"
BETA = "beta"

ALPHA_WINS = "alpha wins"
BETA_WINS = "beta wins"
EQUAL = "equal quality"

# similarity tolerance is relative, but never tighter than this absolute band fraction
ABS_FEATURE_FLOOR = 0.1


# --- Exchange ---

class ExchangeChannel:
    """
    File-based message exchange rooted at a work directory:
    tm.json, em_<party>.json, and per question set set_XX/questions_<author>.json,
    set_XX/answers_<answerer>.json, set_XX/score_<answerer>.json.
    """

    def __init__(self, root: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def _set_dir(self, set_idx: int) -> Path:
        d = self.root / f"set_{set_idx:02d}"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _write(self, path: Path, payload: bytes, guards: Sequence[DisclosureGuard], label: str) -> Path:
        for guard in guards:
            guard.validate_payload(payload, label)
        path.write_bytes(payload)
        self.written.append(path)
        logger.debug(f"Wrote {label} to {path} ({len(payload)} bytes)")
        return path

    def send_tm(self, tm: TranslationEmbedding, guards: Sequence[DisclosureGuard]) -> Path:
        return self._write(self.root / "tm.json", tm_serialize(tm), guards, "TM handoff")

    def receive_tm(self) -> TranslationEmbedding:
        return tm_deserialize((self.root / "tm.json").read_bytes())

    def send_em(self, party: str, em: GcnEncoder, guard: DisclosureGuard) -> Path:
        return self._write(self.root / f"em_{party}.json", em_serialize(em), [guard], f"EM of {party}")

    def receive_em(self, party: str) -> GcnEncoder:
        return em_deserialize((self.root / f"em_{party}.json").read_bytes())

    def send_questions(self, set_idx: int, author: str, encoded: Sequence[EncodedQuestion],
                       guard: DisclosureGuard) -> Path:
        message = QuestionsMessage([
            EncodedQuestionRecord(qid=q.qid, kind=q.kind.value, fsg=q.fsg.tolist(),
                                  candidates=[c.tolist() for c in q.candidates])
            for q in encoded
        ])
        return self._write(self._set_dir(set_idx) / f"questions_{author}.json", dump_root(message), [guard],
                           f"questions of {author}")

    def receive_questions(self, set_idx: int, author: str) -> List[EncodedQuestion]:
        message = parse_questions((self._set_dir(set_idx) / f"questions_{author}.json").read_bytes())
        return [EncodedQuestion(r.qid, np.asarray(r.fsg, dtype=np.float64),
                                [np.asarray(c, dtype=np.float64) for c in r.candidates], QuestionKind(r.kind))
                for r in message.root]

    def send_answers(self, set_idx: int, answerer: str, answers: Sequence[Answer], guard: DisclosureGuard) -> Path:
        message = AnswersMessage([AnswerRecord(qid=a.qid, judgment=a.judgment, choice=a.choice) for a in answers])
        return self._write(self._set_dir(set_idx) / f"answers_{answerer}.json", dump_root(message), [guard],
                           f"answers of {answerer}")

    def receive_answers(self, set_idx: int, answerer: str) -> List[Answer]:
        message = parse_answers((self._set_dir(set_idx) / f"answers_{answerer}.json").read_bytes())
        return [Answer(r.qid, judgment=r.judgment, choice=r.choice) for r in message.root]

    def send_score(self, set_idx: int, answerer: str, report: "ScoreReport", guard: DisclosureGuard) -> Path:
        message = ScoreMessage(n=report.n_questions, n_correct=report.n_correct, score=report.score)
        return self._write(self._set_dir(set_idx) / f"score_{answerer}.json", message.to_payload(), [guard],
                           f"score of {answerer}")


# --- Scoring ---

@dataclass
class ScoreReport:
    n_questions: int
    n_correct: int
    score: float
    verdicts: Dict[int, bool] = field(default_factory=dict)


def score(answers: Sequence[Answer], key: AnswerKey) -> ScoreReport:
    """Percentage of correctly answered questions; answers must cover the key exactly."""
    qids = [a.qid for a in answers]
    if len(set(qids)) != len(qids):
        raise ProtocolError("Answer sheet contains duplicate qids")
    missing = set(key) - set(qids)
    extra = set(qids) - set(key)
    if missing or extra:
        raise ProtocolError(f"Answer sheet does not match the key (missing {sorted(missing)[:5]}, "
                            f"unknown {sorted(extra)[:5]})")
    if not key:
        raise ProtocolError("Cannot score an empty question set")
    verdicts = {a.qid: is_correct(a, *key[a.qid]) for a in answers}
    n_correct = sum(verdicts.values())
    return ScoreReport(len(key), n_correct, 100.0 * n_correct / len(key), verdicts)


def verdict(score_alpha: float, score_beta: float) -> str:
    if score_alpha > score_beta:
        return ALPHA_WINS
    if score_beta > score_alpha:
        return BETA_WINS
    return EQUAL


def cross_answer(sender: Party, receiver: Party, tm: TranslationEmbedding, questions: Sequence[Question],
                 channel: ExchangeChannel, set_idx: int = 0) -> ScoreReport:
    """The receiver answers the sender's questions; returns the receiver's score."""
    opponent_em = channel.receive_em(receiver.name)
    encoded, key = encode_for_opponent(sender, opponent_em, tm, questions)
    channel.send_questions(set_idx, sender.name, encoded, sender.guard)

    received = channel.receive_questions(set_idx, sender.name)
    channel.send_answers(set_idx, receiver.name, answer_questions(receiver, received), receiver.guard)

    report = score(channel.receive_answers(set_idx, receiver.name), key)
    channel.send_score(set_idx, receiver.name, report, sender.guard)
    return report


def self_answer(party: Party, tm: TranslationEmbedding, questions: Sequence[Question]) -> ScoreReport:
    """A party answering its own questions with its own EM; nothing is exchanged."""
    key, answers = {}, []
    for i, q in enumerate(questions):
        answers.append(answer(party.am, encode_question(q, party.em, tm, party.vocab, party.kg, qid=i)))
        key[i] = (q.kind, q.truth)
    return score(answers, key)


# --- Repeated question sets ---

def _within(mean: np.ndarray, target: np.ndarray, tolerance: float) -> bool:
    band = tolerance * np.maximum(np.abs(target), ABS_FEATURE_FLOOR)
    return bool(np.all(np.abs(mean - target) <= band))


def _varied_question(party: Party, config: DuelConfig, qid: int) -> Question:
    """A question whose wrong candidates come from a random source, so pools span the mu3 range."""
    qc = config.questions
    rng = party.rng
    size = qc.subgraph_sizes[int(rng.integers(len(qc.subgraph_sizes)))]
    n_c = qc.candidate_counts[int(rng.integers(len(qc.candidate_counts)))]
    sg = sample_subgraph(party.kg, size, rng, steps_factor=qc.steps_factor, max_restarts=qc.max_restarts)
    sources = list(CandidateSource)
    source = sources[int(rng.integers(len(sources)))]
    try:
        return make_question(party.kg, sg, n_c, rng, qid=qid, source=source, max_retries=qc.max_retries)
    except SamplingError:
        return make_question(party.kg, sg, n_c, rng, qid=qid, max_retries=qc.max_retries)


def _greedy_match(feats: np.ndarray, target: np.ndarray, n: int) -> List[int]:
    """Indices of n rows picked one at a time to keep the running mean closest to target."""
    scale = np.maximum(np.abs(target), ABS_FEATURE_FLOOR)
    remaining = np.ones(feats.shape[0], dtype=bool)
    total = np.zeros(feats.shape[1])
    chosen = []
    for k in range(n):
        means = (total + feats) / (k + 1)
        deviation = np.max(np.abs(means - target) / scale, axis=1)
        deviation[~remaining] = np.inf
        i = int(np.argmin(deviation))
        remaining[i] = False
        total += feats[i]
        chosen.append(i)
    return chosen


def sample_similar_set(party: Party, reference: Sequence[Question], config: DuelConfig) -> List[Question]:
    """
    A new set the size of `reference` whose mean difficulty vector lies within
    the configured tolerance of the reference mean on every feature. The
    tolerance widens stepwise, with a warning, when a pool cannot match.
    """
    ev = config.evaluation
    n = len(reference)
    target = np.mean([difficulty_features(party.kg, q).as_array() for q in reference], axis=0)
    tolerance = ev.similarity_tolerance
    for _ in range(ev.max_relaxations + 1):
        pool = [_varied_question(party, config, i) for i in range(ev.pool_factor * n)]
        feats = np.stack([difficulty_features(party.kg, q).as_array() for q in pool])
        chosen = _greedy_match(feats, target, n)
        mean = feats[chosen].mean(axis=0) if chosen else target
        if _within(mean, target, tolerance):
            return [Question(k, pool[i].subgraph, pool[i].candidates, pool[i].kind, pool[i].truth)
                    for k, i in enumerate(chosen)]
        tolerance += ev.tolerance_step
        logger.warning(f"{party.name}: similar-difficulty set not found; relaxing tolerance to {tolerance:.2f}")
    raise SamplingError(f"{party.name}: no question set within {tolerance:.2f} of the reference difficulty")


@dataclass
class SetScores:
    set_idx: int
    alpha_cross: float   # alpha answering beta's questions
    beta_cross: float
    alpha_self: float
    beta_self: float


@dataclass
class DuelResult:
    score_alpha: float
    score_beta: float
    verdict: str
    sets: List[SetScores] = field(default_factory=list)
    alpha: Optional[Party] = None
    beta: Optional[Party] = None
    tm: Optional[TranslationEmbedding] = None
    common: Optional[Dict[str, float]] = None

    @property
    def self_means(self) -> Tuple[float, float]:
        return (float(np.mean([s.alpha_self for s in self.sets])), float(np.mean([s.beta_self for s in self.sets])))

    def as_dict(self) -> Dict:
        a_self, b_self = self.self_means if self.sets else (None, None)
        return {
            "sets": [vars(s) for s in self.sets],
            "mean": {"alpha_cross": self.score_alpha, "beta_cross": self.score_beta,
                     "alpha_self": a_self, "beta_self": b_self},
            "verdict": self.verdict,
            "common_knowledge": self.common,
        }


def repeated_evaluation(alpha: Party, beta: Party, tm: TranslationEmbedding, config: DuelConfig,
                        channel: ExchangeChannel, audit: Optional[AuditLogger] = None) -> List[SetScores]:
    """Set 0 is each party's q_final; the remaining sets match its mean difficulty."""
    rows = []
    for set_idx in range(config.evaluation.repeat_sets):
        if set_idx == 0:
            qa, qb = alpha.q_final, beta.q_final
        else:
            qa = sample_similar_set(alpha, alpha.q_final, config)
            qb = sample_similar_set(beta, beta.q_final, config)
        beta_cross = cross_answer(alpha, beta, tm, qa, channel, set_idx)
        alpha_cross = cross_answer(beta, alpha, tm, qb, channel, set_idx)
        row = SetScores(set_idx, alpha_cross.score, beta_cross.score,
                        self_answer(alpha, tm, qa).score, self_answer(beta, tm, qb).score)
        rows.append(row)
        logger.info(f"Set {set_idx}: alpha {row.alpha_cross:.1f} / beta {row.beta_cross:.1f} (cross)")
        if audit:
            audit.log_event("question-set", None, vars(row))
    return rows


def common_knowledge_eval(alpha: Party, beta: Party, tm: TranslationEmbedding, config: DuelConfig,
                          salt: bytes, rng: np.random.Generator) -> Dict[str, float]:
    """
    Both parties answer questions sampled from the triples the graphs share,
    each with its own EM and AM; scores are averaged over repetitions.
    """
    common = common_subgraph(alpha.kg, beta.kg, name="common")
    if common.is_empty:
        raise EmptyGraphError(f"{alpha.kg.name} and {beta.kg.name} share no triples")
    vocab = PartyVocabulary.for_graph(common, salt)
    ev, qc = config.evaluation, config.questions
    sizes = [s for s in qc.subgraph_sizes if s <= common.num_entities] or [2]
    totals = {ALPHA: [], BETA: []}
    for _ in range(ev.common_repetitions):
        questions = []
        for i in range(ev.common_questions):
            size = sizes[int(rng.integers(len(sizes)))]
            n_c = qc.candidate_counts[int(rng.integers(len(qc.candidate_counts)))]
            sg = sample_subgraph(common, size, rng, steps_factor=qc.steps_factor, max_restarts=qc.max_restarts)
            questions.append(make_question(common, sg, n_c, rng, qid=i, max_retries=qc.max_retries))
        for party, label in ((alpha, ALPHA), (beta, BETA)):
            key, answers = {}, []
            for q in questions:
                answers.append(answer(party.am, encode_question(q, party.em, tm, vocab, common)))
                key[q.qid] = (q.kind, q.truth)
            totals[label].append(score(answers, key).score)
    return {label: float(np.mean(values)) for label, values in totals.items()}


# --- Orchestration ---

@contextmanager
def stage(name: str, audit: Optional[AuditLogger] = None) -> Iterator[None]:
    """Tag any failure inside the block with the stage name."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        if audit:
            audit.log_event(name, None, {"error": str(e)}, status="failed")
        logger.error(f"Stage {name} failed: {e}")
        raise StageError(name, e) from e
    if audit:
        audit.log_event(name, None, status="ok")


def train_shared_tm(alpha: Party, beta: Party, config: DuelConfig) -> TranslationEmbedding:
    emb = config.embedding
    tm = TranslationEmbedding(emb.dim, emb.margin, emb.normalize_entities)
    rng = np.random.default_rng(config.seeds.tm)
    return incremental_train(tm, [(alpha.kg, alpha.vocab), (beta.kg, beta.vocab)],
                             emb.alternations, emb.epochs_per_segment, emb.lr, rng, max_retries=emb.max_retries)


def run_duel(kg_a: KnowledgeGraph, kg_b: KnowledgeGraph, config: DuelConfig, workdir: str,
             audit: Optional[AuditLogger] = None, common_knowledge: bool = False) -> DuelResult:
    """
    The whole game. Returns the mean cross-answer score of each party over
    the evaluated question sets and the verdict.
    """
    salt = config.embedding.vocab_salt.encode("utf-8")
    channel = ExchangeChannel(workdir)

    with stage("setup", audit):
        alpha = Party.create(ALPHA, kg_a, salt, config.seeds.alpha)
        beta = Party.create(BETA, kg_b, salt, config.seeds.beta)

    with stage("tm-training", audit):
        tm = train_shared_tm(alpha, beta, config)
        channel.send_tm(tm, [alpha.guard, beta.guard])
        tm = channel.receive_tm()

    with stage("first-subgame-alpha", audit):
        run_first_subgame(alpha, tm, config, audit)
    with stage("first-subgame-beta", audit):
        run_first_subgame(beta, tm, config, audit)

    with stage("em-exchange", audit):
        channel.send_em(ALPHA, alpha.em, alpha.guard)
        channel.send_em(BETA, beta.em, beta.guard)

    with stage("cross-answering", audit):
        rows = repeated_evaluation(alpha, beta, tm, config, channel, audit)

    s_alpha = float(np.mean([r.alpha_cross for r in rows]))
    s_beta = float(np.mean([r.beta_cross for r in rows]))
    result = DuelResult(s_alpha, s_beta, verdict(s_alpha, s_beta), rows, alpha, beta, tm)

    if common_knowledge:
        with stage("common-knowledge", audit):
            result.common = common_knowledge_eval(alpha, beta, tm, config, salt,
                                                  np.random.default_rng([config.seeds.tm, config.seeds.alpha,
                                                                         config.seeds.beta]))
    logger.info(f"Duel finished: alpha {s_alpha:.2f}, beta {s_beta:.2f} -> {result.verdict}")
    if audit:
        audit.log_event("verdict", None, {"alpha": s_alpha, "beta": s_beta, "verdict": result.verdict})
    return result
