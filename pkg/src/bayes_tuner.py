import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.errors import TunerError
from src.numerics import gaussian_pdf, round_half_up
from src.questions import DifficultyVector, Question
from src.tuner_state import MINUS, PLUS, RoundOutcome, TunerHistory

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-9


@dataclass
class NaiveBayesModel:
    """
    Priors per class, a categorical conditional for mu2 and Gaussian
    conditionals for the continuous mu1 and mu3.
    """
    priors: Dict[str, float]
    mu2_counts: Dict[str, Counter]
    class_sizes: Dict[str, int]
    mu2_values: Tuple[int, ...]
    gaussians: Dict[str, Dict[str, Tuple[float, float]]]   # class -> feature -> (mean, std)
    alpha: float = 1.0

    def mu2_likelihood(self, label: str, value: int) -> float:
        k = len(self.mu2_values)
        denom = self.class_sizes[label] + self.alpha * k
        if denom == 0:
            return 0.0
        return (self.mu2_counts[label][value] + self.alpha) / denom

    def score(self, label: str, x: DifficultyVector) -> float:
        """prior * P(mu1|c) * P(mu2|c) * P(mu3|c)"""
        g = self.gaussians[label]
        return (self.priors[label]
                * gaussian_pdf(x.mu1, *g["mu1"])
                * self.mu2_likelihood(label, x.mu2)
                * gaussian_pdf(x.mu3, *g["mu3"]))

    def posterior_plus(self, x: DifficultyVector) -> float:
        s_plus, s_minus = self.score(PLUS, x), self.score(MINUS, x)
        total = s_plus + s_minus
        return 0.5 if total == 0 else s_plus / total


def _gaussian(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std())
    return float(arr.mean()), std if std > 0 else STD_FLOOR


def bayes_fit(o: RoundOutcome, features: Dict[int, DifficultyVector], alpha: float = 1.0) -> NaiveBayesModel:
    """
    Fit on one round: Y = R+ for correctly answered questions, R- otherwise.
    `features` maps qid to the question's difficulty vector.
    """
    if not o.q_plus or not o.q_minus:
        raise TunerError("Both answer classes must be non-empty to fit the Bayes tuner")
    total = len(o)
    groups = {PLUS: [features[q.qid] for q in o.q_plus], MINUS: [features[q.qid] for q in o.q_minus]}
    mu2_values = tuple(sorted({x.mu2 for xs in groups.values() for x in xs}))
    return NaiveBayesModel(
        priors={c: len(xs) / total for c, xs in groups.items()},
        mu2_counts={c: Counter(x.mu2 for x in xs) for c, xs in groups.items()},
        class_sizes={c: len(xs) for c, xs in groups.items()},
        mu2_values=mu2_values,
        gaussians={c: {"mu1": _gaussian([x.mu1 for x in xs]), "mu3": _gaussian([x.mu3 for x in xs])}
                   for c, xs in groups.items()},
        alpha=alpha,
    )


def bayes_predict(model: NaiveBayesModel, x: DifficultyVector) -> str:
    """R+ only when its score is strictly larger; ties keep the question on the hard side."""
    return PLUS if model.score(PLUS, x) > model.score(MINUS, x) else MINUS


def bayes_tune(history: TunerHistory, eta: Tuple[float, float], n: int, rng: np.random.Generator,
               alpha: float = 1.0) -> List[Question]:
    """
    Classify QB minus the current round and draw round(n*eta_mid) predicted
    R+ plus the rest predicted R-. A short class is topped up from the
    other class by posterior, closest to the short class first.
    """
    if history.N < n:
        raise TunerError(f"Question base has {history.N} questions, need {n}")
    o = history.latest
    current = {q.qid for q in o.questions}
    features = {q.qid: history.features(q) for q in o.questions}
    model = bayes_fit(o, features, alpha=alpha)

    pool = [q for q in history.question_base if q.qid not in current]
    if len(pool) < n:
        logger.debug(f"Only {len(pool)} questions outside the current round; selecting from all of QB")
        pool = list(history.question_base)

    posterior = {q.qid: model.posterior_plus(history.features(q)) for q in pool}
    plus = [q for q in pool if bayes_predict(model, history.features(q)) == PLUS]
    minus = [q for q in pool if bayes_predict(model, history.features(q)) == MINUS]

    n_plus = round_half_up(n * (eta[0] + eta[1]) / 2.0)
    n_minus = n - n_plus
    k_plus, k_minus = min(n_plus, len(plus)), min(n_minus, len(minus))
    pick_plus = set(int(i) for i in rng.choice(len(plus), size=k_plus, replace=False)) if k_plus else set()
    pick_minus = set(int(i) for i in rng.choice(len(minus), size=k_minus, replace=False)) if k_minus else set()
    chosen = [plus[i] for i in sorted(pick_plus)] + [minus[i] for i in sorted(pick_minus)]

    if k_plus < n_plus:
        rest = sorted((q for i, q in enumerate(minus) if i not in pick_minus),
                      key=lambda q: (-posterior[q.qid], q.qid))
        chosen += rest[:n_plus - k_plus]
    if k_minus < n_minus:
        rest = sorted((q for i, q in enumerate(plus) if i not in pick_plus),
                      key=lambda q: (posterior[q.qid], q.qid))
        chosen += rest[:n_minus - k_minus]

    logger.debug(f"Bayes tuner: {len(plus)} predicted R+, {len(minus)} predicted R-, "
                 f"target {n_plus}/{n_minus}")
    return sorted(chosen, key=lambda q: q.qid)
