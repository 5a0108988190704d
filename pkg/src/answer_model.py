import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import EncodingError, SamplingError, TrainingDivergenceError
from src.kg_store import KnowledgeGraph
from src.numerics import bce_from_logit, leaky_relu, leaky_relu_grad, sigmoid, split_counts
from src.questions import Question, QuestionKind, sample_wrong_candidates
from src.subgraph_encoder import GcnEncoder, SubgraphMatrices, build_matrices
from src.translation_model import PartyVocabulary, TranslationEmbedding

logger = logging.getLogger(__name__)

PARAM_NAMES = ("K1", "b1", "K2", "b2", "W0", "b0")


class AnswerModel:
    """
    CNN scorer over the stacked (question vector, candidate vector) pair:
    1xw kernels per row, 2xw kernels across both, mean-pooled into a
    logistic head.
    """

    def __init__(self, params: Dict[str, np.ndarray], slope: float = 0.01):
        missing = set(PARAM_NAMES) - set(params)
        if missing:
            raise ValueError(f"Answer model is missing parameters {sorted(missing)}")
        self.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self.slope = slope
        n_f, w = self.params["K1"].shape
        if self.params["K2"].shape != (n_f, 2, w) or self.params["W0"].shape != (3 * n_f,):
            raise ValueError("Answer model parameter shapes are inconsistent")

    @classmethod
    def initialize(cls, n_filters: int, width: int, rng: np.random.Generator, slope: float = 0.01) -> "AnswerModel":
        b_local = 1.0 / math.sqrt(width)
        b_global = 1.0 / math.sqrt(2 * width)
        b_head = 1.0 / math.sqrt(3 * n_filters)
        return cls({
            "K1": rng.uniform(-b_local, b_local, size=(n_filters, width)),
            "b1": np.zeros(n_filters),
            "K2": rng.uniform(-b_global, b_global, size=(n_filters, 2, width)),
            "b2": np.zeros(n_filters),
            "W0": rng.uniform(-b_head, b_head, size=3 * n_filters),
            "b0": np.zeros(1),
        }, slope)

    @classmethod
    def zeros(cls, n_filters: int, width: int, slope: float = 0.01) -> "AnswerModel":
        return cls({
            "K1": np.zeros((n_filters, width)),
            "b1": np.zeros(n_filters),
            "K2": np.zeros((n_filters, 2, width)),
            "b2": np.zeros(n_filters),
            "W0": np.zeros(3 * n_filters),
            "b0": np.zeros(1),
        }, slope)

    @property
    def n_filters(self) -> int:
        return self.params["K1"].shape[0]

    @property
    def width(self) -> int:
        return self.params["K1"].shape[1]

    def copy(self) -> "AnswerModel":
        return AnswerModel({k: v.copy() for k, v in self.params.items()}, self.slope)

    def forward(self, fsg: np.ndarray, cand: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
        """Logit of P^c and the cache for backward."""
        if fsg.shape != cand.shape:
            raise EncodingError(f"FSG shape {fsg.shape} differs from candidate shape {cand.shape}")
        dim = fsg.shape[0]
        w = self.width
        if dim < w:
            raise EncodingError(f"Vector dim {dim} is smaller than kernel width {w}")
        p = self.params
        QA = np.stack([fsg, cand])
        win = np.lib.stride_tricks.sliding_window_view(QA, w, axis=1)   # (2, L, w)
        pre1 = np.einsum("rlu,ku->krl", win, p["K1"]) + p["b1"][:, None, None]
        pre2 = np.einsum("rlu,kru->kl", win, p["K2"]) + p["b2"][:, None]
        fa1 = leaky_relu(pre1, self.slope).mean(axis=2)   # (n_f, 2)
        fa2 = leaky_relu(pre2, self.slope).mean(axis=1)   # (n_f,)
        # FA1 is laid out row 0 for every kernel, then row 1
        feats = np.concatenate([fa1.T.ravel(), fa2])
        z = float(p["W0"] @ feats + p["b0"][0])
        return z, {"win": win, "pre1": pre1, "pre2": pre2, "feats": feats, "dim": dim}

    def backward(self, g_z: float, cache: Dict[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], np.ndarray, np.ndarray]:
        """Parameter gradients plus gradients w.r.t. FSG and the candidate vector."""
        p = self.params
        n_f = self.n_filters
        win, pre1, pre2 = cache["win"], cache["pre1"], cache["pre2"]
        L = win.shape[1]

        g_feats = g_z * p["W0"]
        g_fa1 = g_feats[:2 * n_f].reshape(2, n_f).T
        g_fa2 = g_feats[2 * n_f:]
        g_pre1 = (g_fa1[:, :, None] / L) * leaky_relu_grad(pre1, self.slope)
        g_pre2 = (g_fa2[:, None] / L) * leaky_relu_grad(pre2, self.slope)

        grads = {
            "K1": np.einsum("krl,rlu->ku", g_pre1, win),
            "b1": g_pre1.sum(axis=(1, 2)),
            "K2": np.einsum("kl,rlu->kru", g_pre2, win),
            "b2": g_pre2.sum(axis=1),
            "W0": g_z * cache["feats"],
            "b0": np.array([g_z]),
        }

        g_win = np.einsum("krl,ku->rlu", g_pre1, p["K1"]) + np.einsum("kl,kru->rlu", g_pre2, p["K2"])
        g_QA = np.zeros((2, cache["dim"]))
        for u in range(self.width):
            g_QA[:, u:u + L] += g_win[:, :, u]
        return grads, g_QA[0], g_QA[1]

    def apply_gradients(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        for k, g in grads.items():
            self.params[k] -= lr * g


def score_candidate(am: AnswerModel, fsg: np.ndarray, cand: np.ndarray) -> float:
    z, _ = am.forward(fsg, cand)
    return sigmoid(z)


@dataclass
class EncodedQuestion:
    qid: int
    fsg: np.ndarray
    candidates: List[np.ndarray]
    kind: QuestionKind

    def __post_init__(self):
        if not self.candidates:
            raise EncodingError(f"Encoded question {self.qid} has no candidate vectors")
        for c in self.candidates:
            if c.shape != self.fsg.shape:
                raise EncodingError(f"Encoded question {self.qid}: candidate shape {c.shape} != {self.fsg.shape}")


@dataclass(frozen=True)
class Answer:
    qid: int
    judgment: Optional[bool] = None
    choice: Optional[int] = None


def answer(am: AnswerModel, q: EncodedQuestion) -> Answer:
    probs = [score_candidate(am, q.fsg, c) for c in q.candidates]
    if q.kind == QuestionKind.JUDGMENT:
        return Answer(q.qid, judgment=probs[0] > 0.5)
    return Answer(q.qid, choice=int(np.argmax(probs)))  # argmax keeps the lowest index on ties


def is_correct(ans: Answer, kind: QuestionKind, truth) -> bool:
    if kind == QuestionKind.JUDGMENT:
        return ans.judgment is not None and ans.judgment == bool(truth)
    return ans.choice is not None and ans.choice == int(truth)


def candidate_vectors(tm: TranslationEmbedding, vocab: PartyVocabulary, kg: KnowledgeGraph,
                      entities: Sequence[int]) -> List[np.ndarray]:
    ent_tokens, _ = vocab.graph_tokens(kg)
    return [tm.entity_vector(ent_tokens[e]).copy() for e in entities]


def encode_question(q: Question, em: GcnEncoder, tm: TranslationEmbedding, vocab: PartyVocabulary,
                    kg: KnowledgeGraph, qid: Optional[int] = None) -> EncodedQuestion:
    m = build_matrices(tm, vocab, kg, q.subgraph)
    fsg, _ = em.forward(m)
    return EncodedQuestion(q.qid if qid is None else qid, fsg,
                           candidate_vectors(tm, vocab, kg, q.candidates), q.kind)


# --- Training ---

@dataclass
class PreparedQuestion:
    question: Question
    matrices: SubgraphMatrices
    candidates: List[np.ndarray]
    labels: List[int]


def prepare_questions(questions: Sequence[Question], tm: TranslationEmbedding, vocab: PartyVocabulary,
                      kg: KnowledgeGraph) -> List[PreparedQuestion]:
    return [PreparedQuestion(q, build_matrices(tm, vocab, kg, q.subgraph),
                             candidate_vectors(tm, vocab, kg, q.candidates), q.labels())
            for q in questions]


def question_loss(am: AnswerModel, em: GcnEncoder, m: SubgraphMatrices, candidates: Sequence[np.ndarray],
                  labels: Sequence[int]) -> Tuple[float, Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Summed per-candidate BCE of one question, with AM and EM gradients (TM frozen)."""
    fsg, em_cache = em.forward(m)
    loss = 0.0
    am_grads = {k: np.zeros_like(v) for k, v in am.params.items()}
    g_fsg = np.zeros_like(fsg)
    for cand, label in zip(candidates, labels):
        z, cache = am.forward(fsg, cand)
        loss += bce_from_logit(z, label)
        grads, g_f, _ = am.backward(sigmoid(z) - label, cache)
        for k, g in grads.items():
            am_grads[k] += g
        g_fsg += g_f
    return loss, am_grads, em.backward(g_fsg, em_cache)


def prepared_accuracy(am: AnswerModel, em: GcnEncoder, prepared: Sequence[PreparedQuestion]) -> float:
    if not prepared:
        return 0.0
    hits = 0
    for pq in prepared:
        fsg, _ = em.forward(pq.matrices)
        ans = answer(am, EncodedQuestion(pq.question.qid, fsg, pq.candidates, pq.question.kind))
        hits += is_correct(ans, pq.question.kind, pq.question.truth)
    return hits / len(prepared)


@dataclass
class TrainingHistory:
    train_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    test_accuracy: Optional[float] = None
    split: Tuple[int, int, int] = (0, 0, 0)


def _check_finite(loss: float, what: str) -> None:
    if not math.isfinite(loss):
        raise TrainingDivergenceError(f"Non-finite {what} loss; lower the learning rate")


def train_joint(am: AnswerModel, em: GcnEncoder, tm: TranslationEmbedding, vocab: PartyVocabulary,
                kg: KnowledgeGraph, questions: Sequence[Question], epochs: int, lr: float,
                rng: np.random.Generator, patience: int = 5,
                fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> Tuple[AnswerModel, GcnEncoder, TrainingHistory]:
    """
    Jointly train EM and AM on per-candidate BCE with the TM frozen.
    Early-stops on validation accuracy and restores the best parameters.
    """
    if not questions:
        raise ValueError("train_joint needs at least one question")
    prepared = prepare_questions(questions, tm, vocab, kg)
    order = rng.permutation(len(prepared))
    n_train, n_val, n_test = split_counts(len(prepared), fractions)
    train = [prepared[i] for i in order[:n_train]]
    val = [prepared[i] for i in order[n_train:n_train + n_val]]
    test = [prepared[i] for i in order[n_train + n_val:]]
    monitor = val or train
    history = TrainingHistory(split=(n_train, n_val, n_test))

    best = (am.copy(), em.copy())
    history.best_val_accuracy = prepared_accuracy(am, em, monitor)
    stale = 0
    for epoch in range(1, epochs + 1):
        total, pairs = 0.0, 0
        for i in rng.permutation(len(train)):
            pq = train[int(i)]
            loss, am_grads, em_grads = question_loss(am, em, pq.matrices, pq.candidates, pq.labels)
            _check_finite(loss, "joint")
            am.apply_gradients(am_grads, lr)
            em.apply_gradients(em_grads, lr)
            total += loss
            pairs += len(pq.labels)
        history.train_loss.append(total / max(pairs, 1))

        acc = prepared_accuracy(am, em, monitor)
        history.val_accuracy.append(acc)
        logger.debug(f"Joint epoch {epoch}: loss {history.train_loss[-1]:.4f}, val acc {acc:.3f}")
        if acc > history.best_val_accuracy:
            history.best_val_accuracy, history.best_epoch = acc, epoch
            best = (am.copy(), em.copy())
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                logger.info(f"Early stopping after epoch {epoch} (best epoch {history.best_epoch})")
                break

    am.params = best[0].params
    em.W1, em.W2 = best[1].W1, best[1].W2
    if test:
        history.test_accuracy = prepared_accuracy(am, em, test)
    logger.info(f"Joint training on {kg.name}: split {history.split}, best val acc "
                f"{history.best_val_accuracy:.3f}, test acc {history.test_accuracy}")
    return am, em, history


def adversarial_pairs(em: GcnEncoder, tm: TranslationEmbedding, vocab: PartyVocabulary, kg: KnowledgeGraph,
                      questions: Sequence[Question], extra_negatives: int, rng: np.random.Generator,
                      max_retries: int = 200) -> List[Tuple[np.ndarray, np.ndarray, int]]:
    """(FSG, candidate vector, label) for every candidate plus m extra filtered negatives per question."""
    ent_tokens, _ = vocab.graph_tokens(kg)
    pairs = []
    for q in questions:
        fsg, _ = em.forward(build_matrices(tm, vocab, kg, q.subgraph))
        for c, label in zip(q.candidates, q.labels()):
            pairs.append((fsg, tm.entity_vector(ent_tokens[c]), label))
        if extra_negatives <= 0:
            continue
        try:
            extra = sample_wrong_candidates(kg, q.subgraph, extra_negatives, rng, exclude=q.candidates,
                                            max_retries=max_retries)
        except SamplingError as e:
            logger.debug(f"Question {q.qid}: no extra negatives ({e})")
            continue
        pairs.extend((fsg, tm.entity_vector(ent_tokens[c]), 0) for c in extra)
    return pairs


def train_adversarial_round(am: AnswerModel, em: GcnEncoder, tm: TranslationEmbedding, vocab: PartyVocabulary,
                            kg: KnowledgeGraph, questions: Sequence[Question], extra_negatives: int,
                            epochs: int, lr: float, rng: np.random.Generator,
                            max_retries: int = 200) -> Tuple[AnswerModel, List[float]]:
    """Only AM parameters move; the EM is read, never written."""
    pairs = adversarial_pairs(em, tm, vocab, kg, questions, extra_negatives, rng, max_retries=max_retries)
    losses = []
    for _ in range(epochs):
        total = 0.0
        for i in rng.permutation(len(pairs)):
            fsg, cand, label = pairs[int(i)]
            z, cache = am.forward(fsg, cand)
            loss = bce_from_logit(z, label)
            _check_finite(loss, "adversarial")
            grads, _, _ = am.backward(sigmoid(z) - label, cache)
            am.apply_gradients(grads, lr)
            total += loss
        losses.append(total / max(len(pairs), 1))
    return am, losses
