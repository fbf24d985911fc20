"""
Patient-trial scoring, ranking and ranking metrics.
Criterion results are encoded Met -> 1, NotMet -> 0, NA -> -1.
"""

import math
from collections import Counter, defaultdict
from typing import Collection, Dict, List, Mapping, Sequence

from shared.errors import ScoringError
from shared.schemas import (
    CriterionEvaluation, CriterionResult, MatchScore, RankDirection,
    RankedCandidate, Ranking, ScoringMethod, TierWeights, Verdict, VerdictStats
)

VERDICT_CODES = {Verdict.MET: 1, Verdict.NOT_MET: 0, Verdict.NA: -1}

def to_result(evaluation: CriterionEvaluation, tier: int) -> CriterionResult:
    return CriterionResult(criterion_id=evaluation.criterion_id, tier=tier,
                           x=VERDICT_CODES[evaluation.verdict])

# --- Scoring methods ---

def score_simple(results: Sequence[CriterionResult]) -> float:
    """Criteria met / total criteria."""
    if not results:
        raise ScoringError("simple score needs at least one criterion")
    return sum(1 for r in results if r.x == 1) / len(results)

def tier_order(results: Sequence[CriterionResult]) -> List[CriterionResult]:
    return sorted(results, key=lambda r: (r.tier, r.criterion_id))

def score_iterative(results: Sequence[CriterionResult]) -> float:
    """
    Walks tiers from most to least important and stops at the first NotMet.
    NA is neither a hit nor a violation. Normalized by all criteria.
    """
    if not results:
        raise ScoringError("iterative score needs at least one criterion")
    met = 0
    for r in tier_order(results):
        if r.x == 0:
            break
        if r.x == 1:
            met += 1
    return met / len(results)

def tier_criterion_score(x: int, tier: int) -> float:
    if x == 1:
        return 1.0
    if x == -1:
        return 0.5
    if x == 0:
        return -0.5 if tier == 1 else 0.0
    raise ScoringError(f"invalid criterion result {x}")

def score_weighted(results: Sequence[CriterionResult],
                   weights: TierWeights = TierWeights()) -> float:
    """(1/K) * sum over non-empty tiers of w_k * mean criterion score; 0 when K = 0."""
    by_tier: Dict[int, List[float]] = defaultdict(list)
    for r in results:
        by_tier[r.tier].append(tier_criterion_score(r.x, r.tier))
    if not by_tier:
        return 0.0
    total = sum(weights.for_tier(tier) * (sum(scores) / len(scores))
                for tier, scores in sorted(by_tier.items()))
    return total / len(by_tier)

def score(results: Sequence[CriterionResult], method: ScoringMethod,
          weights: TierWeights = TierWeights()) -> float:
    if method == ScoringMethod.SIMPLE:
        return score_simple(results)
    if method == ScoringMethod.ITERATIVE_TIER:
        return score_iterative(results)
    return score_weighted(results, weights)

# --- Ranking ---

def rank_candidates(scores: Sequence[MatchScore],
                    direction: RankDirection = RankDirection.TRIALS_FOR_PATIENT) -> Ranking:
    """Score descending, candidate id ascending on ties."""
    if not scores:
        raise ScoringError("nothing to rank")
    methods = {s.method for s in scores}
    if len(methods) > 1:
        raise ScoringError(f"cannot rank mixed scoring methods: {sorted(m.value for m in methods)}")

    by_patient = direction == RankDirection.TRIALS_FOR_PATIENT
    subjects = {s.patient_id if by_patient else s.trial_id for s in scores}
    if len(subjects) > 1:
        raise ScoringError(f"cannot rank across subjects: {sorted(subjects)}")

    entries = [
        RankedCandidate(candidate_id=s.trial_id if by_patient else s.patient_id, score=s.score)
        for s in scores
    ]
    entries.sort(key=lambda e: (-e.score, e.candidate_id))
    return Ranking(subject_id=subjects.pop(), direction=direction,
                   method=scores[0].method, entries=entries)

def rank_all(scores: Sequence[MatchScore], direction: RankDirection,
             method: ScoringMethod) -> List[Ranking]:
    groups: Dict[str, List[MatchScore]] = defaultdict(list)
    for s in scores:
        if s.method != method:
            continue
        key = s.patient_id if direction == RankDirection.TRIALS_FOR_PATIENT else s.trial_id
        groups[key].append(s)
    return [rank_candidates(groups[k], direction) for k in sorted(groups)]

# --- Metrics ---

def topk_hit_rate(rankings: Sequence[Ranking], ground_truth: Mapping[str, str], k: int) -> float:
    if not rankings:
        raise ScoringError("no rankings to evaluate")
    hits = 0
    for ranking in rankings:
        if ranking.subject_id not in ground_truth:
            raise ScoringError(f"no ground truth for {ranking.subject_id}")
        position = ranking.position_of(ground_truth[ranking.subject_id])
        if position is None:
            raise ScoringError(
                f"ground truth {ground_truth[ranking.subject_id]} is not a candidate for {ranking.subject_id}")
        if position <= k:
            hits += 1
    return hits / len(rankings)

def ndcg_binary(ranking: Ranking, relevant: Collection[str]) -> float:
    relevant = set(relevant)
    if not relevant:
        raise ScoringError(f"empty relevant set for {ranking.subject_id}")
    candidates = {e.candidate_id for e in ranking.entries}
    missing = relevant - candidates
    if missing:
        raise ScoringError(f"relevant candidates {sorted(missing)} not ranked for {ranking.subject_id}")

    dcg = sum(1.0 / math.log2(i + 1)
              for i, e in enumerate(ranking.entries, start=1) if e.candidate_id in relevant)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, len(relevant) + 1))
    return dcg / idcg

def verdict_stats(evaluations: Sequence[CriterionEvaluation]) -> VerdictStats:
    if not evaluations:
        raise ScoringError("no criterion evaluations")
    n = len(evaluations)
    counts = Counter(e.verdict for e in evaluations)
    return VerdictStats(
        met_pct=100.0 * counts[Verdict.MET] / n,
        notmet_pct=100.0 * counts[Verdict.NOT_MET] / n,
        na_pct=100.0 * counts[Verdict.NA] / n,
        total=n,
    )
