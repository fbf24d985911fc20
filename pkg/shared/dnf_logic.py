"""
Three-valued criterion logic.
Answers: Yes / No / NA. A criterion's logic is a DNF over its questions.
NA answers are marginalized with a uniform prior: every completion of the
unknowns is equally likely, so P(met) = satisfying completions / 2^N.
"""

from itertools import product
from typing import Dict, List, Mapping, Optional, Tuple

from shared.errors import CapacityError, MissingAnswerError
from shared.schemas import (
    AnswerValue, Criterion, CriterionEvaluation, CriterionKind,
    DnfExpression, DnfLiteral, Verdict
)

# --- Defaults ---

MET_THRESHOLD = 0.66
NOT_MET_THRESHOLD = 0.34
MAX_MARGINALIZED = 20

# --- Core evaluation ---

def eval_dnf(logic: DnfExpression, assignment: Mapping[str, bool]) -> bool:
    """OR over clauses, AND within a clause. Negated literals invert the value."""
    for qid in logic.question_ids():
        if qid not in assignment:
            raise MissingAnswerError(qid)
    return any(
        all(assignment[lit.question_id] != lit.negated for lit in clause)
        for clause in logic.clauses
    )

def _fixed_and_unknown(logic: DnfExpression,
                       answers: Mapping[str, AnswerValue]) -> Tuple[Dict[str, bool], List[str]]:
    fixed: Dict[str, bool] = {}
    unknown: List[str] = []
    for qid in logic.question_ids():
        if qid not in answers:
            raise MissingAnswerError(qid)
        value = AnswerValue(answers[qid])
        if value == AnswerValue.NA:
            unknown.append(qid)
        else:
            fixed[qid] = value == AnswerValue.YES
    return fixed, unknown

def _residual_clauses(logic: DnfExpression,
                      fixed: Mapping[str, bool]) -> Optional[List[List[DnfLiteral]]]:
    """
    Substitutes the known answers.
    Returns None when some clause is already satisfied (the DNF is forced true);
    an empty list means every clause is falsified (forced false).
    """
    residual = []
    for clause in logic.clauses:
        remaining = []
        falsified = False
        for lit in clause:
            if lit.question_id in fixed:
                if fixed[lit.question_id] == lit.negated:
                    falsified = True
                    break
            else:
                remaining.append(lit)
        if falsified:
            continue
        if not remaining:
            return None
        residual.append(remaining)
    return residual

def marginal_probability(logic: DnfExpression,
                         answers: Mapping[str, AnswerValue],
                         max_marginalized: int = MAX_MARGINALIZED) -> float:
    """
    Exact P(DNF true) with NA answers marginalized uniformly.
    N counts NA questions referenced by the logic; unreferenced NAs are ignored.
    """
    fixed, unknown = _fixed_and_unknown(logic, answers)
    if len(unknown) > max_marginalized:
        raise CapacityError(len(unknown), max_marginalized)

    residual = _residual_clauses(logic, fixed)
    if residual is None:
        return 1.0
    if not residual:
        return 0.0

    # Unknowns that dropped out with falsified clauses contribute a factor
    # 2^k to both numerator and denominator, so enumerating the rest is exact.
    free: Dict[str, None] = {}
    for clause in residual:
        for lit in clause:
            free.setdefault(lit.question_id, None)
    names = list(free)

    satisfied = 0
    for values in product((False, True), repeat=len(names)):
        completion = dict(zip(names, values))
        if any(all(completion[lit.question_id] != lit.negated for lit in clause)
               for clause in residual):
            satisfied += 1
    return satisfied / (2 ** len(names))

def count_marginalized(logic: DnfExpression, answers: Mapping[str, AnswerValue]) -> int:
    return len(_fixed_and_unknown(logic, answers)[1])

# --- Verdicts ---

def verdict_from_probability(p: float,
                             met: float = MET_THRESHOLD,
                             not_met: float = NOT_MET_THRESHOLD) -> Verdict:
    """Strict thresholds: exactly `met` or `not_met` falls to NA."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    if p > met:
        return Verdict.MET
    if p < not_met:
        return Verdict.NOT_MET
    return Verdict.NA

def evaluate_criterion(criterion: Criterion,
                       answers: Mapping[str, AnswerValue],
                       met: float = MET_THRESHOLD,
                       not_met: float = NOT_MET_THRESHOLD,
                       max_marginalized: int = MAX_MARGINALIZED) -> CriterionEvaluation:
    """
    Inclusion: probability = P(logic true).
    Exclusion: the logic states the exclusion as written, so the criterion
    (eligibility preserved) is met with probability 1 - P(logic true).
    """
    if criterion.logic is None:
        return CriterionEvaluation(
            criterion_id=criterion.id, probability=0.5, verdict=Verdict.NA,
            num_marginalized=0, reason=criterion.flag_reason or "generation_failed"
        )

    n_unknown = count_marginalized(criterion.logic, answers)
    try:
        p_raw = marginal_probability(criterion.logic, answers, max_marginalized)
    except CapacityError:
        return CriterionEvaluation(
            criterion_id=criterion.id, probability=0.5, verdict=Verdict.NA,
            num_marginalized=n_unknown, reason="capacity_exceeded"
        )

    probability = p_raw if criterion.kind == CriterionKind.INCLUSION else 1.0 - p_raw
    verdict = verdict_from_probability(probability, met, not_met)
    reason = None
    if verdict == Verdict.NA:
        reason = "unknown_answers" if n_unknown else None
    return CriterionEvaluation(
        criterion_id=criterion.id, probability=probability, verdict=verdict,
        num_marginalized=n_unknown, reason=reason
    )
