import numpy as np
import pytest
from pydantic import ValidationError

from matcher.composer import CONCEPT_TIERS, assign_tier
from shared.errors import ScoringError
from shared.schemas import (
    CriterionEvaluation, CriterionResult, MatchScore, RankDirection, RankedCandidate,
    Ranking, ScoringMethod, TierWeights, Verdict
)
from shared.scoring import (
    ndcg_binary, rank_all, rank_candidates, score, score_iterative, score_simple,
    score_weighted, tier_criterion_score, topk_hit_rate, verdict_stats
)

M, N, NA = 1, 0, -1


def results(*pairs):
    """results((tier, x), ...) with ids in order."""
    return [CriterionResult(criterion_id=f"C{i:02d}", tier=t, x=x) for i, (t, x) in enumerate(pairs)]


def random_results(rng, max_len=12):
    n = int(rng.integers(1, max_len + 1))
    return results(*((int(t), int(x)) for t, x in zip(rng.integers(1, 5, size=n),
                                                        rng.choice([M, N, NA], size=n))))


def all_met(res):
    return [r.model_copy(update={"x": M}) for r in res]


def ranking(subject, candidates, direction=RankDirection.TRIALS_FOR_PATIENT):
    return Ranking(subject_id=subject, direction=direction, method=ScoringMethod.WEIGHTED_TIER,
                   entries=[RankedCandidate(candidate_id=c, score=1.0 - i / 10)
                            for i, c in enumerate(candidates)])


class TestSimple:
    def test_half_met(self):
        assert score_simple(results((1, M), (1, N), (2, NA), (3, M))) == 0.5

    def test_empty(self):
        with pytest.raises(ScoringError):
            score_simple([])


class TestIterative:
    def test_stops_at_first_violation(self):
        assert score_iterative(results((1, M), (1, M), (2, N), (3, M))) == 0.5

    def test_na_does_not_halt(self):
        assert score_iterative(results((1, M), (2, NA), (3, M), (4, M))) == 0.75

    def test_orders_by_tier_not_input(self):
        # Tier-1 violation listed last still halts before anything is counted.
        assert score_iterative(results((3, M), (2, M), (1, N))) == 0.0

    def test_ties_within_tier_by_criterion_id(self):
        res = [CriterionResult(criterion_id="I2", tier=1, x=M),
               CriterionResult(criterion_id="I1", tier=1, x=N)]
        assert score_iterative(res) == 0.0

    def test_never_exceeds_simple(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            res = random_results(rng)
            assert score_iterative(res) <= score_simple(res)


class TestWeighted:
    def test_reference_fixture(self):
        res = results((1, M), (1, M), (2, NA), (4, N))
        assert score_weighted(res) == pytest.approx(0.9166666666, abs=1e-9)

    def test_empty_is_zero(self):
        assert score_weighted([]) == 0.0

    def test_single_tier1_violation(self):
        assert score_weighted(results((1, N))) == pytest.approx(-1.0, abs=1e-9)

    def test_notmet_outside_tier1_is_neutral(self):
        assert tier_criterion_score(N, 2) == 0.0
        assert tier_criterion_score(N, 1) == -0.5
        assert tier_criterion_score(NA, 3) == 0.5

    def test_custom_weights(self):
        weights = TierWeights(w1=1.0, w2=1.0, w3=1.0, w4=1.0)
        assert score_weighted(results((1, M), (4, N)), weights) == 0.5

    def test_dispatch(self):
        res = results((1, M), (2, N))
        assert score(res, ScoringMethod.SIMPLE) == 0.5
        assert score(res, ScoringMethod.ITERATIVE_TIER) == 0.5
        assert score(res, ScoringMethod.WEIGHTED_TIER) == pytest.approx(1.0)

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            TierWeights(w1=0.0)

    def test_all_met_over_four_tiers(self):
        assert score_weighted(results((1, M), (2, M), (3, M), (4, M))) == 1.25

    @pytest.mark.parametrize("method", list(ScoringMethod))
    def test_all_met_is_maximal(self, method):
        rng = np.random.default_rng(5)
        for _ in range(500):
            res = random_results(rng)
            assert score(res, method) <= score(all_met(res), method)

    @pytest.mark.parametrize("tier", [0, 5, -1])
    def test_tier_out_of_range(self, tier):
        with pytest.raises(ValidationError):
            CriterionResult(criterion_id="C1", tier=tier, x=M)
        with pytest.raises(ValueError):
            TierWeights().for_tier(tier)


class TestTiers:
    @pytest.mark.parametrize("concept, tier", [
        ("Cancer Type", 1), ("Cancer Subtype", 1), ("Cancer Stage", 1), ("Cancer Grade/Histology", 1),
        ("Genetic & Biologic Markers", 2), ("Lab/Imaging Criteria", 2), ("Prior treatment/surgery", 2),
        ("Comorbidities", 3), ("Functional Status", 4), ("Others", 4),
    ])
    def test_book_of_concepts(self, concept, tier):
        assert assign_tier(concept) == tier

    def test_book_has_ten_concepts(self):
        assert len(CONCEPT_TIERS) == 10

    def test_unknown_concept_falls_back(self, caplog):
        assert assign_tier("Astrology") == 4
        assert "Unknown concept" in caplog.text


class TestRanking:
    def scores(self):
        return [
            MatchScore(patient_id="P1", trial_id="T2", method=ScoringMethod.SIMPLE, score=0.5),
            MatchScore(patient_id="P1", trial_id="T1", method=ScoringMethod.SIMPLE, score=0.5),
            MatchScore(patient_id="P1", trial_id="T3", method=ScoringMethod.SIMPLE, score=0.9),
        ]

    def test_order_and_ties(self):
        r = rank_candidates(self.scores())
        assert [e.candidate_id for e in r.entries] == ["T3", "T1", "T2"]
        assert r.position_of("T2") == 3
        assert r.position_of("T9") is None

    def test_input_order_does_not_matter(self):
        assert rank_candidates(self.scores()[::-1]) == rank_candidates(self.scores())

    def test_mixed_methods_rejected(self):
        mixed = self.scores() + [
            MatchScore(patient_id="P1", trial_id="T4", method=ScoringMethod.WEIGHTED_TIER, score=1.0)]
        with pytest.raises(ScoringError):
            rank_candidates(mixed)

    def test_patients_for_trial(self):
        scores = [
            MatchScore(patient_id="P2", trial_id="T1", method=ScoringMethod.SIMPLE, score=0.2),
            MatchScore(patient_id="P1", trial_id="T1", method=ScoringMethod.SIMPLE, score=0.7),
        ]
        r = rank_candidates(scores, RankDirection.PATIENTS_FOR_TRIAL)
        assert r.subject_id == "T1"
        assert [e.candidate_id for e in r.entries] == ["P1", "P2"]

    def test_rank_all_filters_method(self):
        scores = self.scores() + [
            MatchScore(patient_id="P2", trial_id="T1", method=ScoringMethod.WEIGHTED_TIER, score=1.0)]
        rankings = rank_all(scores, RankDirection.TRIALS_FOR_PATIENT, ScoringMethod.SIMPLE)
        assert [r.subject_id for r in rankings] == ["P1"]

    def test_empty(self):
        with pytest.raises(ScoringError):
            rank_candidates([])

    def test_positive_scaling_keeps_order(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            n = int(rng.integers(1, 10))
            # Quarter steps and power-of-two factors keep the products exact, ties included.
            values = rng.integers(0, 8, size=n) / 4
            factor = float(rng.choice([0.25, 0.5, 2.0, 8.0]))
            base = [MatchScore(patient_id="P1", trial_id=f"T{i}", method=ScoringMethod.SIMPLE,
                               score=float(v)) for i, v in enumerate(values)]
            scaled = [s.model_copy(update={"score": s.score * factor}) for s in base]
            assert ([e.candidate_id for e in rank_candidates(base).entries]
                    == [e.candidate_id for e in rank_candidates(scaled).entries])


class TestMetrics:
    def test_ndcg_relevant_first(self):
        assert ndcg_binary(ranking("P1", ["T1", "T2", "T3"]), {"T1"}) == 1.0

    def test_ndcg_relevant_second(self):
        assert ndcg_binary(ranking("P1", ["T2", "T1", "T3"]), {"T1"}) == pytest.approx(0.6309, abs=1e-4)

    def test_ndcg_two_relevant_on_top(self):
        r = ranking("T1", ["P1", "P2", "P3"], RankDirection.PATIENTS_FOR_TRIAL)
        assert ndcg_binary(r, {"P1", "P2"}) == 1.0

    def test_ndcg_requires_relevant(self):
        with pytest.raises(ScoringError):
            ndcg_binary(ranking("P1", ["T1"]), set())
        with pytest.raises(ScoringError):
            ndcg_binary(ranking("P1", ["T1"]), {"T9"})

    def test_hit_rate(self):
        rankings = [ranking("P1", [f"T{i}" for i in range(10)]),
                    ranking("P2", [f"T{i}" for i in range(10)])]
        assert topk_hit_rate(rankings, {"P1": "T2", "P2": "T5"}, 3) == 0.5
        assert topk_hit_rate(rankings[:1], {"P1": "T2"}, 3) in (0.0, 1.0)

    def test_hit_rate_needs_ground_truth(self):
        with pytest.raises(ScoringError):
            topk_hit_rate([ranking("P1", ["T1"])], {}, 3)

    def test_verdict_stats(self):
        evals = [CriterionEvaluation(criterion_id=str(i), probability=p, verdict=v)
                 for i, (p, v) in enumerate([(1.0, Verdict.MET), (0.0, Verdict.NOT_MET),
                                             (0.5, Verdict.NA), (1.0, Verdict.MET)])]
        stats = verdict_stats(evals)
        assert (stats.met_pct, stats.notmet_pct, stats.na_pct, stats.total) == (50.0, 25.0, 25.0, 4)
