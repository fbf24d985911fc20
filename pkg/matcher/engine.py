import logging
from typing import Dict, List, Optional

from pydantic import BaseModel

from matcher.config import PipelineConfig
from matcher.qa_engine import PatientContext, QaEngine
from shared.dnf_logic import evaluate_criterion
from shared.errors import BackendError, ScoringError
from shared.schemas import (
    CriterionEvaluation, CriterionResult, MatchScore, QaRecord, ScoringMethod, TrialSpec
)
from shared.scoring import score, to_result

logger = logging.getLogger("trial_matcher.engine")


class PairOutcome(BaseModel):
    """Everything produced for one (patient, trial) pair; written as the per-pair artifact."""
    patient_id: str
    trial_id: str
    complete: bool = True
    error: Optional[str] = None
    answers: List[QaRecord] = []
    evaluations: List[CriterionEvaluation] = []
    results: List[CriterionResult] = []
    scores: List[MatchScore] = []

    @property
    def key(self) -> str:
        return f"{self.patient_id}__{self.trial_id}"


class MatchEngine:
    def __init__(self, config: PipelineConfig, qa: QaEngine):
        self.config = config
        self.qa = qa

    def evaluate_pair(self, ctx: PatientContext, trial: TrialSpec) -> PairOutcome:
        """
        Answers every trial question, evaluates every criterion and computes
        all three scores. A transport failure leaves the pair incomplete.
        """
        patient_id = ctx.header.patient_id
        try:
            answers = self.qa.answer_all(ctx, trial.questions)
        except BackendError as e:
            logger.error(f"Pair ({patient_id}, {trial.trial_id}) incomplete: {e}")
            return PairOutcome(patient_id=patient_id, trial_id=trial.trial_id,
                               complete=False, error=str(e))

        values = {qid: rec.answer for qid, rec in answers.items()}
        evaluations = [self.evaluate(c, values) for c in trial.criteria]
        tiers = {c.id: c.tier for c in trial.criteria}
        results = [to_result(e, tiers[e.criterion_id]) for e in evaluations]

        scores = [
            MatchScore(patient_id=patient_id, trial_id=trial.trial_id, method=method,
                       score=self.score(results, method, patient_id, trial.trial_id))
            for method in ScoringMethod
        ]
        return PairOutcome(
            patient_id=patient_id, trial_id=trial.trial_id,
            answers=[answers[q.id] for q in trial.questions],
            evaluations=evaluations, results=results, scores=scores,
        )

    def evaluate(self, criterion, answers: Dict) -> CriterionEvaluation:
        t = self.config.thresholds
        return evaluate_criterion(criterion, answers, met=t.met, not_met=t.notmet,
                                  max_marginalized=self.config.max_marginalized)

    def score(self, results: List[CriterionResult], method: ScoringMethod,
              patient_id: str, trial_id: str) -> float:
        try:
            return score(results, method, self.config.tier_weights)
        except ScoringError as e:
            logger.warning(f"({patient_id}, {trial_id}) {method.value}: {e}; scored 0.0")
            return 0.0
