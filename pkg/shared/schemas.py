from datetime import date
from enum import Enum
from typing import Dict, List, Optional, Tuple
from pydantic import BaseModel, Field, field_validator, model_validator

# --- Enums ---

class AnswerValue(str, Enum):
    YES = "Yes"
    NO = "No"
    NA = "NA"

class Verdict(str, Enum):
    MET = "Met"
    NOT_MET = "NotMet"
    NA = "NA"

class CriterionKind(str, Enum):
    INCLUSION = "Inclusion"
    EXCLUSION = "Exclusion"

class ScoringMethod(str, Enum):
    SIMPLE = "Simple"
    ITERATIVE_TIER = "IterativeTier"
    WEIGHTED_TIER = "WeightedTier"

class RankDirection(str, Enum):
    TRIALS_FOR_PATIENT = "trials-for-patient"
    PATIENTS_FOR_TRIAL = "patients-for-trial"

# --- Trial logic ---

class Question(BaseModel):
    id: str
    text: str
    concept: str = "Others"

class DnfLiteral(BaseModel):
    question_id: str
    negated: bool = False

class DnfExpression(BaseModel):
    """OR over clauses, AND within a clause."""
    clauses: List[List[DnfLiteral]]

    def question_ids(self) -> List[str]:
        """Referenced question ids in first-appearance order."""
        seen: Dict[str, None] = {}
        for clause in self.clauses:
            for lit in clause:
                seen.setdefault(lit.question_id, None)
        return list(seen)

class Criterion(BaseModel):
    # Structural invariants (tier range, references, clause shape) are
    # checked by composer.validate_trial so violations can be reported as data.
    id: str
    source_text: str
    kind: CriterionKind
    logic: Optional[DnfExpression] = None
    tier: int = 4
    flagged: bool = False
    flag_reason: Optional[str] = None

class CriterionEvaluation(BaseModel):
    criterion_id: str
    probability: float
    verdict: Verdict
    num_marginalized: int = 0
    reason: Optional[str] = None

    @field_validator('probability')
    def check_probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f'probability {v} outside [0, 1]')
        return v

# --- Trial composition ---

class RawTrial(BaseModel):
    trial_id: str
    title: str = ""
    inclusion_text: str = ""
    exclusion_text: str = ""

    @model_validator(mode='after')
    def check_content(self):
        if not self.trial_id.strip():
            raise ValueError('trial_id must be non-empty')
        if not (self.inclusion_text.strip() or self.exclusion_text.strip()):
            raise ValueError(f'trial {self.trial_id} has no criteria text')
        return self

class GeneratedQuestion(BaseModel):
    text: str
    concept: str = "Others"

class GeneratedLiteral(BaseModel):
    q_index: int
    negated: bool = False

class GeneratorOutput(BaseModel):
    """Backend output for one criterion; the DNF indexes into `questions`."""
    questions: List[GeneratedQuestion]
    dnf: List[List[GeneratedLiteral]]

    @model_validator(mode='after')
    def check_references(self):
        if not self.questions:
            raise ValueError('generator emitted no questions')
        if not self.dnf or any(not clause for clause in self.dnf):
            raise ValueError('generator emitted an empty DNF clause')
        for clause in self.dnf:
            for lit in clause:
                if not 0 <= lit.q_index < len(self.questions):
                    raise ValueError(f'DNF references unknown question index {lit.q_index}')
        if any(not q.text.strip() for q in self.questions):
            raise ValueError('generator emitted an empty question')
        return self

class TrialSpec(BaseModel):
    schema_version: int = 1
    trial_id: str
    title: str = ""
    questions: List[Question]
    criteria: List[Criterion]

    def question_map(self) -> Dict[str, Question]:
        return {q.id: q for q in self.questions}

# --- Notes & chunks ---

class ClinicalNote(BaseModel):
    patient_id: str
    note_id: str
    category: str
    date: date
    text: str

class PatientHeader(BaseModel):
    patient_id: str
    age_at_enrollment: int
    enrollment_date: date

    @field_validator('age_at_enrollment')
    def check_age(cls, v):
        if v <= 0:
            raise ValueError('age_at_enrollment must be positive')
        return v

class Chunk(BaseModel):
    chunk_id: str
    patient_id: str
    note_id: str
    note_date: date
    note_category: str
    sentence_range: Tuple[int, int]  # inclusive
    text: str

# --- Question answering ---

class EvidenceItem(BaseModel):
    note_date: date
    note_category: str
    chunk_id: str
    note_id: str
    sentence_start: int
    text: str

class EvidenceBundle(BaseModel):
    header: PatientHeader
    items: List[EvidenceItem] = []

class QaBackendConfig(BaseModel):
    temperature: float = 0.0
    max_response_chars: int = 8000
    timeout: float = 60.0
    retry_count: int = 2

    @field_validator('temperature')
    def check_temperature(cls, v):
        if v != 0:
            raise ValueError('QA backends run at temperature 0')
        return v

class QaRecord(BaseModel):
    patient_id: str = ""
    question_id: str = ""
    question_explanation: str
    answer_explanation: str
    answer: AnswerValue
    confidence: int = Field(ge=1, le=5)
    citations: List[str] = []
    backend_tag: str = ""
    prompt_version: str = ""
    failure_reason: Optional[str] = None
    input_tokens: int = 0
    output_tokens: int = 0

# --- Scoring & ranking ---

class CriterionResult(BaseModel):
    criterion_id: str
    tier: int
    x: int  # Met 1, NotMet 0, NA -1

    @field_validator('tier')
    def check_tier(cls, v):
        if v not in (1, 2, 3, 4):
            raise ValueError(f'tier must be 1..4, got {v}')
        return v

    @field_validator('x')
    def check_x(cls, v):
        if v not in (1, 0, -1):
            raise ValueError(f'criterion result must be 1, 0 or -1, got {v}')
        return v

class TierWeights(BaseModel):
    w1: float = 2.0
    w2: float = 1.5
    w3: float = 1.0
    w4: float = 0.5

    @model_validator(mode='after')
    def check_positive(self):
        if min(self.w1, self.w2, self.w3, self.w4) <= 0:
            raise ValueError('tier weights must be positive')
        return self

    def for_tier(self, tier: int) -> float:
        if tier not in (1, 2, 3, 4):
            raise ValueError(f'tier must be 1..4, got {tier}')
        return (self.w1, self.w2, self.w3, self.w4)[tier - 1]

class MatchScore(BaseModel):
    patient_id: str
    trial_id: str
    method: ScoringMethod
    score: float

class RankedCandidate(BaseModel):
    candidate_id: str
    score: float

class Ranking(BaseModel):
    subject_id: str
    direction: RankDirection
    method: ScoringMethod
    entries: List[RankedCandidate]

    def position_of(self, candidate_id: str) -> Optional[int]:
        """1-based rank, or None if the candidate is absent."""
        for i, entry in enumerate(self.entries, start=1):
            if entry.candidate_id == candidate_id:
                return i
        return None

class VerdictStats(BaseModel):
    met_pct: float
    notmet_pct: float
    na_pct: float
    total: int

# --- Cost ---

class ThroughputProfile(BaseModel):
    input_speed: float   # tokens / second
    output_speed: float  # tokens / second
    hourly_rate: float = 0.0

    @field_validator('hourly_rate')
    def check_rate(cls, v):
        if v < 0:
            raise ValueError('hourly_rate must be non-negative')
        return v

class TokenUsage(BaseModel):
    input_tokens: int = Field(default=0, ge=0)
    output_tokens: int = Field(default=0, ge=0)

    def __add__(self, other: 'TokenUsage') -> 'TokenUsage':
        return TokenUsage(input_tokens=self.input_tokens + other.input_tokens,
                          output_tokens=self.output_tokens + other.output_tokens)

# --- Runs ---

class RunManifest(BaseModel):
    run_id: str
    config: Dict
    input_hashes: Dict[str, str] = {}
    prompt_version: str = ""
    backend_tags: Dict[str, str] = {}
    started_at: str = ""
    finished_at: Optional[str] = None
    incomplete_pairs: List[str] = []
    artifacts: Dict[str, str] = {}
