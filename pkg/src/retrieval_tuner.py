import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Tuple

import numpy as np

from src.errors import TunerError
from src.numerics import cosine, round_half_up
from src.questions import Question
from src.tuner_state import MINUS, PLUS, KnowledgeStats, TunerHistory

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-9


@dataclass
class GaussianQuery:
    mean: np.ndarray   # theta1 per feature, the implicit query u_l
    std: np.ndarray    # theta2 per feature (MLE)

    @property
    def vector(self) -> np.ndarray:
        return self.mean


def fit_gaussian_query(history: TunerHistory, sign: str) -> GaussianQuery:
    pooled = history.pooled(sign)
    if len(pooled) < 2:
        raise TunerError(f"Need at least 2 pooled {sign} questions, have {len(pooled)}")
    arr = np.stack([history.features(q).as_array() for q in pooled])
    std = arr.std(axis=0)
    return GaussianQuery(arr.mean(axis=0), np.where(std > 0, std, STD_FLOOR))


def knowledge_point_query(history: TunerHistory, sign: str) -> FrozenSet[int]:
    """Knowledge points strictly more frequent in the signed pool than in the opposite one."""
    def frequencies(s: str) -> Dict[int, float]:
        pooled = history.pooled(s)
        if not pooled:
            return {}
        counts: Dict[int, int] = {}
        for q in pooled:
            for v in history.points(q):
                counts[v] = counts.get(v, 0) + 1
        return {v: c / len(pooled) for v, c in counts.items()}

    own = frequencies(sign)
    other = frequencies(MINUS if sign == PLUS else PLUS)
    return frozenset(v for v, f in own.items() if f > other.get(v, 0.0))


def sim_l(u_l: np.ndarray, qa_l: np.ndarray) -> float:
    return cosine(u_l, qa_l)


def _point_term(r: int, R: int, n: int, N: int) -> float:
    if r in (0, R) or n in (0, N):
        r, R, n, N = r + 0.5, R + 1, n + 0.5, N + 1
    return math.log(r) + math.log(R - r) - math.log(n) - math.log(N - n)


def sim_v(u_v: FrozenSet[int], qa_v: Iterable[int], stats: KnowledgeStats) -> float:
    """
    (R/N)^(1-n_V) * prod r_i(R-r_i) / (n_i(N-n_i)) over the query's active
    knowledge points present in the question; evaluated in log space.
    """
    if stats.N == 0:
        raise TunerError("sim_v is undefined for an empty question base")
    if stats.R == 0:
        raise TunerError("sim_v needs a non-empty signed question set")
    active = u_v & frozenset(qa_v)
    log_score = (1 - len(active)) * (math.log(stats.R) - math.log(stats.N))
    for v in active:
        log_score += _point_term(stats.r.get(v, 0), stats.R, stats.n.get(v, 0), stats.N)
    return math.exp(log_score)


def _ranking(history: TunerHistory, u_l: GaussianQuery, u_v: FrozenSet[int], stats: KnowledgeStats,
             gamma: float) -> List[Question]:
    scored: List[Tuple[float, int, Question]] = []
    for q in history.question_base:
        s = gamma * sim_l(u_l.vector, history.features(q).as_array()) \
            + (1.0 - gamma) * sim_v(u_v, history.points(q), stats)
        scored.append((-s, q.qid, q))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [q for _, _, q in scored]


def retrieval_tune(history: TunerHistory, eta: Tuple[float, float], gamma: float, n: int,
                   rng: np.random.Generator) -> List[Question]:
    """
    Rank QB against the R+ and R- queries with sim = gamma*sim_l + (1-gamma)*sim_v
    and take the top round(n*eta_mid) for R+ and the rest for R-.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if history.N < n:
        raise TunerError(f"Question base has {history.N} questions, need {n}")

    queries = {s: (fit_gaussian_query(history, s), knowledge_point_query(history, s), history.knowledge_stats(s))
               for s in (PLUS, MINUS)}
    n_plus = round_half_up(n * (eta[0] + eta[1]) / 2.0)
    quota = {PLUS: n_plus, MINUS: n - n_plus}

    chosen: Dict[int, Question] = {}
    for s in (PLUS, MINUS):
        u_l, u_v, stats = queries[s]
        taken = 0
        for q in _ranking(history, u_l, u_v, stats, gamma):
            if taken == quota[s]:
                break
            if q.qid in chosen:
                continue
            chosen[q.qid] = q
            taken += 1
    logger.debug(f"Retrieval tuner: {len(chosen)} questions selected (gamma={gamma})")
    return sorted(chosen.values(), key=lambda q: q.qid)
