"""
Run evaluation and human-readable summaries: question accuracy against gold
answers, ranking metrics per scoring method, cost estimates and the markdown
run report.
"""

import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, ValidationError

from matcher.composer import FALLBACK_CONCEPT, assign_tier
from matcher.config import CostSettings
from matcher.engine import PairOutcome
from matcher.qa_engine import ANSWER_ALIASES
from shared.cost import api_cost, per_pair_cost, round_cents, runtime_hours, self_hosted_cost
from shared.errors import InputError
from shared.schemas import (
    AnswerValue, MatchScore, QaRecord, Question, RankDirection, ScoringMethod,
    TokenUsage, Verdict
)
from shared.scoring import ndcg_binary, rank_all, topk_hit_rate, verdict_stats

logger = logging.getLogger("trial_matcher.reports")

# --- Reference files ---

class Enrollment(BaseModel):
    patient_id: str
    trial_id: str

def load_ground_truth(path: Path) -> List[Enrollment]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return [Enrollment(**row) for row in data["enrollments"]]
    except FileNotFoundError:
        raise InputError(f"ground truth file not found: {path}")
    except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise InputError(f"{path}: expected {{\"enrollments\": [{{patient_id, trial_id}}]}} ({e})")

def load_gold_answers(path: Path) -> Dict[Tuple[str, str], AnswerValue]:
    gold = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    answer = ANSWER_ALIASES[str(row["answer"]).strip().lower()]
                    gold[(row["patient_id"], row["question_id"])] = answer
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise InputError(f"{path}:{lineno}: expected {{patient_id, question_id, answer}}")
    except FileNotFoundError:
        raise InputError(f"gold answers file not found: {path}")
    return gold

# --- Question accuracy ---

class BucketAccuracy(BaseModel):
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.total if self.total else None

    def as_dict(self) -> Dict:
        return {"correct": self.correct, "total": self.total, "accuracy": self.accuracy}

class AccuracyReport(BaseModel):
    overall: BucketAccuracy
    excluding_gold_na: BucketAccuracy
    per_concept: Dict[str, BucketAccuracy]
    per_tier: Dict[str, BucketAccuracy]

    def as_dict(self) -> Dict:
        return {
            "overall": self.overall.as_dict(),
            "excluding_gold_na": self.excluding_gold_na.as_dict(),
            "per_concept": {k: v.as_dict() for k, v in sorted(self.per_concept.items())},
            "per_tier": {k: v.as_dict() for k, v in sorted(self.per_tier.items())},
        }

def evaluate_answers(records: Sequence[QaRecord], gold: Mapping[Tuple[str, str], AnswerValue],
                     questions: Mapping[str, Question],
                     concept_tiers: Mapping[str, int]) -> AccuracyReport:
    """Records without a gold label are ignored; gold labels without a record count as misses."""
    predicted = {(r.patient_id, r.question_id): r.answer for r in records}
    overall, non_na = BucketAccuracy(), BucketAccuracy()
    per_concept: Dict[str, BucketAccuracy] = defaultdict(BucketAccuracy)
    per_tier: Dict[str, BucketAccuracy] = defaultdict(BucketAccuracy)

    for key, expected in sorted(gold.items()):
        question = questions.get(key[1])
        concept = question.concept if question else FALLBACK_CONCEPT
        tier = f"Tier {assign_tier(concept, concept_tiers)}"
        hit = int(predicted.get(key) == expected)
        buckets = [overall, per_concept[concept], per_tier[tier]]
        if expected != AnswerValue.NA:
            buckets.append(non_na)
        for bucket in buckets:
            bucket.total += 1
            bucket.correct += hit

    return AccuracyReport(overall=overall, excluding_gold_na=non_na,
                          per_concept=dict(per_concept), per_tier=dict(per_tier))

def question_na_rates(records: Sequence[QaRecord]) -> Dict[str, float]:
    counts: Dict[str, List[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        counts[r.question_id][1] += 1
        if r.answer == AnswerValue.NA:
            counts[r.question_id][0] += 1
    return {qid: na / n for qid, (na, n) in sorted(counts.items())}

# --- Ranking metrics ---

def ranking_metrics(scores: Sequence[MatchScore], enrollments: Sequence[Enrollment],
                    direction: RankDirection, method: ScoringMethod, k: int) -> Dict:
    """
    Metrics over subjects that have ground truth. Hit rate is patient-centric;
    NDCG is reported in both directions.
    """
    by_patient = direction == RankDirection.TRIALS_FOR_PATIENT
    relevant: Dict[str, set] = defaultdict(set)
    for e in enrollments:
        if by_patient:
            relevant[e.patient_id].add(e.trial_id)
        else:
            relevant[e.trial_id].add(e.patient_id)

    rankings = [r for r in rank_all(scores, direction, method) if r.subject_id in relevant]
    if not rankings:
        logger.warning(f"No {direction.value} rankings under {method.value} have ground truth")
        return {"subjects": 0, "hit_rate_at_k": None, "mean_ndcg": None, "per_subject_ndcg": {}}

    per_subject = {r.subject_id: ndcg_binary(r, relevant[r.subject_id]) for r in rankings}
    hit_rate = None
    if by_patient:
        # Patients enrolled in several trials count a hit for their best-ranked one.
        best = {r.subject_id: min(relevant[r.subject_id],
                                  key=lambda t: (r.position_of(t) or len(r.entries) + 1, t))
                for r in rankings}
        hit_rate = topk_hit_rate(rankings, best, k)
    return {
        "subjects": len(rankings),
        "hit_rate_at_k": hit_rate,
        "mean_ndcg": sum(per_subject.values()) / len(per_subject),
        "per_subject_ndcg": per_subject,
    }

def ranking_evaluation(scores: Sequence[MatchScore], enrollments: Sequence[Enrollment],
                       k: int) -> Dict:
    return {
        method.value: {direction.value: ranking_metrics(scores, enrollments, direction, method, k)
                       for direction in RankDirection}
        for method in ScoringMethod
    }

# --- Cost ---

def cost_report(usage: TokenUsage, n_pairs: int, settings: CostSettings) -> Dict:
    profile = settings.profile()
    hours = runtime_hours(usage, profile)
    hosted = self_hosted_cost(usage, profile)
    api = api_cost(usage, settings.price_per_1k_in, settings.price_per_1k_out)

    def estimate(method: str, total: float, runtime: Optional[float], assumptions: Dict) -> Dict:
        per_pair = per_pair_cost(total, n_pairs)
        return {
            "method": method,
            "total_cost": total,
            "per_pair_cost": per_pair,
            "total_cost_display": str(round_cents(total)),
            "per_pair_cost_display": str(round_cents(per_pair)),
            "runtime_hours": runtime,
            "assumptions": assumptions,
        }

    return {
        "n_pairs": n_pairs,
        "usage": usage.model_dump(),
        "estimates": [
            estimate("self_hosted", hosted, hours, {
                "input_speed": profile.input_speed, "output_speed": profile.output_speed,
                "hourly_rate": profile.hourly_rate, "tokenizer": "whitespace",
            }),
            estimate("api", api, None, {
                "price_per_1k_in": settings.price_per_1k_in,
                "price_per_1k_out": settings.price_per_1k_out, "tokenizer": "whitespace",
            }),
        ],
    }

# --- Markdown report ---

def _pct(value: float) -> str:
    return f"{value:.1f}%"

def render_report(outcomes: Sequence[PairOutcome]) -> str:
    if not outcomes:
        raise InputError("run has no pairs to report on")
    complete = [o for o in outcomes if o.complete]
    incomplete = [o for o in outcomes if not o.complete]
    methods = list(ScoringMethod)

    lines = ["# Match report", ""]
    lines += ["## Scores per pair", "",
              "| patient | trial | " + " | ".join(m.value for m in methods) + " |",
              "|---|---|" + "---|" * len(methods)]
    for o in sorted(complete, key=lambda o: (o.patient_id, o.trial_id)):
        by_method = {s.method: s.score for s in o.scores}
        lines.append(f"| {o.patient_id} | {o.trial_id} | "
                     + " | ".join(f"{by_method[m]:.4f}" for m in methods) + " |")
    lines.append("")

    lines += ["## Incomplete pairs", ""]
    if incomplete:
        lines += [f"- **INCOMPLETE** {o.patient_id} x {o.trial_id}: {o.error}" for o in incomplete]
    else:
        lines.append("None.")
    lines.append("")

    tiers = {(o.trial_id, r.criterion_id): r.tier for o in complete for r in o.results}
    evaluations = [(o.trial_id, e) for o in complete for e in o.evaluations]
    lines += ["## Verdict statistics", "",
              "| scope | criteria | Met | NotMet | NA |", "|---|---|---|---|---|"]
    if evaluations:
        scopes = [("all", [e for _, e in evaluations])]
        by_tier = defaultdict(list)
        for trial_id, e in evaluations:
            by_tier[tiers[(trial_id, e.criterion_id)]].append(e)
        scopes += [(f"Tier {t}", by_tier[t]) for t in sorted(by_tier)]
        for name, group in scopes:
            stats = verdict_stats(group)
            lines.append(f"| {name} | {stats.total} | {_pct(stats.met_pct)} | "
                         f"{_pct(stats.notmet_pct)} | {_pct(stats.na_pct)} |")
    lines.append("")

    lines += ["### NA verdicts", ""]
    na_rows = [(o, e) for o in complete for e in o.evaluations if e.verdict == Verdict.NA]
    for o, e in na_rows:
        lines.append(f"- {o.patient_id} x {o.trial_id} {e.criterion_id}: p={e.probability:.4f}, "
                     f"{e.num_marginalized} marginalized, reason: {e.reason}")
    if not na_rows:
        lines.append("None.")
    lines.append("")

    records = [r for o in complete for r in o.answers]
    lines += ["## NA rate per question", "", "| question | answers | NA rate |", "|---|---|---|"]
    counts = defaultdict(int)
    for r in records:
        counts[r.question_id] += 1
    for qid, rate in question_na_rates(records).items():
        lines.append(f"| {qid} | {counts[qid]} | {_pct(100 * rate)} |")
    lines.append("")

    lines += ["## Citations for manual verification", ""]
    for o in sorted(complete, key=lambda o: (o.patient_id, o.trial_id)):
        lines.append(f"### {o.patient_id} x {o.trial_id}")
        lines.append("")
        for r in o.answers:
            cited = ", ".join(r.citations) if r.citations else "none"
            note = f" (fallback: {r.failure_reason})" if r.failure_reason else ""
            lines.append(f"- {r.question_id}: {r.answer.value}, confidence {r.confidence}; "
                         f"chunks: {cited}{note}")
        lines.append("")
    return "\n".join(lines)
