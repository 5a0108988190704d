import logging
import os
from typing import Dict, List, Sequence

import numpy as np

from src.config_manager import DuelConfig
from src.duel import run_duel
from src.errors import SamplingError
from src.kg_store import KnowledgeGraph, ablate_triples
from src.party import Party, judge
from src.questions import CandidateSource, make_question, sample_subgraph
from src.translation_model import TranslationEmbedding
from src.tuner_state import RoundOutcome, TunerHistory

logger = logging.getLogger(__name__)


def feature_profile(outcome: RoundOutcome, history: TunerHistory) -> Dict[str, Dict[str, float]]:
    """Mean difficulty features of correctly vs wrongly answered questions."""
    profile = {}
    for label, questions in (("correct", outcome.q_plus), ("wrong", outcome.q_minus)):
        if not questions:
            profile[label] = {"n": 0}
            continue
        feats = np.stack([history.features(q).as_array() for q in questions])
        mean = feats.mean(axis=0)
        profile[label] = {"n": len(questions), "mu1": float(mean[0]), "mu2": float(mean[1]), "mu3": float(mean[2])}
    return profile


def _probe_subgraphs(party: Party, n_probe: int, config: DuelConfig, rng: np.random.Generator):
    sizes = config.questions.subgraph_sizes
    return [sample_subgraph(party.kg, sizes[int(rng.integers(len(sizes)))], rng,
                            steps_factor=config.questions.steps_factor, max_restarts=config.questions.max_restarts)
            for _ in range(n_probe)]


def candidate_count_trend(party: Party, tm: TranslationEmbedding, n_probe: int, counts: Sequence[int],
                          config: DuelConfig, rng: np.random.Generator) -> Dict[int, float]:
    """Accuracy per candidate count; every count is asked on the same subgraphs."""
    subgraphs = _probe_subgraphs(party, n_probe, config, rng)
    trend = {}
    for c in counts:
        questions = [make_question(party.kg, sg, c, rng, qid=i, max_retries=config.questions.max_retries)
                     for i, sg in enumerate(subgraphs)]
        trend[c] = float(np.mean(judge(party, tm, questions)))
        logger.info(f"{party.name}: {c} candidates -> accuracy {trend[c]:.3f}")
    return trend


def candidate_source_trend(party: Party, tm: TranslationEmbedding, n_probe: int, config: DuelConfig,
                           rng: np.random.Generator) -> Dict[str, float]:
    """
    Accuracy of two-candidate questions whose wrong candidate comes from each
    source; subgraphs that cannot supply every source are skipped.
    """
    per_source: Dict[CandidateSource, list] = {s: [] for s in CandidateSource}
    for sg in _probe_subgraphs(party, n_probe, config, rng):
        try:
            built = {s: make_question(party.kg, sg, 2, rng, qid=0, source=s,
                                      max_retries=config.questions.max_retries)
                     for s in CandidateSource}
        except SamplingError:
            continue
        for s, q in built.items():
            per_source[s].append(q)
    trend = {}
    for s, questions in per_source.items():
        trend[s.value] = float(np.mean(judge(party, tm, questions))) if questions else float("nan")
    logger.info(f"{party.name}: accuracy by candidate source {trend} over {len(per_source[CandidateSource.RANDOM])} subgraphs")
    return trend


def ablation_study(kg_a: KnowledgeGraph, kg_b: KnowledgeGraph, removals: Sequence[int], ratio: float,
                   repetitions: int, config: DuelConfig, workdir: str, seed: int = 0) -> List[Dict[str, float]]:
    """
    Remove n triples from kg_b (ratio unique:common relative to kg_a) and
    duel the result against kg_a; mean and std of both cross scores per n.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in removals:
        alpha_scores, beta_scores = [], []
        for rep in range(repetitions):
            ablated = ablate_triples(kg_b, kg_a, n, ratio, rng, name=f"{kg_b.name}-ablated{n}")
            rep_config = config.model_copy(deep=True)
            rep_config.seeds.alpha += rep
            rep_config.seeds.beta += rep
            result = run_duel(kg_a, ablated, rep_config, os.path.join(workdir, f"removed_{n}", f"rep_{rep:02d}"))
            alpha_scores.append(result.score_alpha)
            beta_scores.append(result.score_beta)
        rows.append({
            "removed": n,
            "alpha_mean": float(np.mean(alpha_scores)),
            "alpha_std": float(np.std(alpha_scores)),
            "beta_mean": float(np.mean(beta_scores)),
            "beta_std": float(np.std(beta_scores)),
        })
        logger.info(f"Removed {n}: alpha {rows[-1]['alpha_mean']:.2f}, beta {rows[-1]['beta_mean']:.2f}")
    return rows
