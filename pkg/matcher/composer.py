"""
Trial composition: raw criteria text -> TrialSpec.
Each criterion becomes one or more yes/no questions wired in DNF by a
QuestionGenerator; questions get concepts from a ConceptClassifier and
criteria take the most important tier among their questions' concepts.
"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ValidationError

from client.backends import ConceptClassifier, QuestionGenerator
from shared.errors import CompositionError, FormatError
from shared.schemas import (
    Criterion, CriterionKind, DnfExpression, DnfLiteral, GeneratorOutput,
    Question, RawTrial, TrialSpec
)

logger = logging.getLogger("trial_matcher.composer")

# Book of concepts -> tier (1 most important)
CONCEPT_TIERS: Dict[str, int] = {
    "Cancer Type": 1,
    "Cancer Subtype": 1,
    "Cancer Stage": 1,
    "Cancer Grade/Histology": 1,
    "Genetic & Biologic Markers": 2,
    "Lab/Imaging Criteria": 2,
    "Prior treatment/surgery": 2,
    "Comorbidities": 3,
    "Functional Status": 4,
    "Others": 4,
}
FALLBACK_CONCEPT = "Others"

_BULLET_RE = re.compile(r"^\s*(?:[-*•●]|\d+[.)]|[a-zA-Z][.)])\s+")
_SECTION_HEADER_RE = re.compile(r"^\s*(inclusion|exclusion)( criteria)?\s*:?\s*$", re.IGNORECASE)
_TERMINAL = (".", ";", "!", "?", ")", ":")

# --- Violations ---

class Violation(BaseModel):
    kind: str
    detail: str = ""

    def __str__(self):
        return f"{self.kind}({self.detail})"

# --- Tiering ---

def assign_tier(concept: str, concept_tiers: Mapping[str, int] = CONCEPT_TIERS) -> int:
    if concept in concept_tiers:
        return concept_tiers[concept]
    logger.warning(f"Unknown concept {concept!r}; treating as {FALLBACK_CONCEPT}")
    return concept_tiers.get(FALLBACK_CONCEPT, 4)

def normalize_concept(concept: str, concept_tiers: Mapping[str, int] = CONCEPT_TIERS) -> str:
    if concept in concept_tiers:
        return concept
    logger.warning(f"Unknown concept {concept!r}; treating as {FALLBACK_CONCEPT}")
    return FALLBACK_CONCEPT

# --- Segmentation ---

def segment_criteria(text: str) -> List[str]:
    """
    One criterion per bullet / line block. Bulleted lines always open a new
    criterion; an unbulleted line continues the previous block when that block
    has no terminal punctuation (a wrapped line).
    """
    blocks: List[str] = []
    closed = True  # a blank line closes the current block
    for line in text.splitlines():
        if not line.strip():
            closed = True
            continue
        if _SECTION_HEADER_RE.match(line):
            closed = True
            continue
        bullet = _BULLET_RE.match(line)
        content = line[bullet.end():].strip() if bullet else line.strip()
        if not content:
            continue
        if blocks and not bullet and not closed and not blocks[-1].endswith(_TERMINAL):
            blocks[-1] = f"{blocks[-1]} {content}"
        else:
            blocks.append(content)
        closed = False
    return blocks

# --- Generation ---

def generate_questions(criterion_text: str, kind: CriterionKind,
                       backend: QuestionGenerator) -> GeneratorOutput:
    if not criterion_text.strip():
        raise FormatError("empty criterion text", raw=criterion_text)
    raw = backend.generate(criterion_text, kind)
    try:
        payload = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as e:
        raise FormatError(f"generator output is not JSON: {e}", raw=raw)
    try:
        return GeneratorOutput.model_validate(payload)
    except ValidationError as e:
        raise FormatError(f"generator output failed validation: {e.errors()[0]['msg']}", raw=raw)

def _generate_with_retries(text: str, kind: CriterionKind, backend: QuestionGenerator,
                           retries: int) -> Tuple[Optional[GeneratorOutput], Optional[str]]:
    last = None
    for attempt in range(retries + 1):
        try:
            return generate_questions(text, kind, backend), None
        except FormatError as e:
            last = str(e)
            logger.warning(f"Generation attempt {attempt + 1} failed for {text!r}: {e}")
    return None, f"generation_failed: {last}"

# --- Composition ---

def _build_criterion(trial_id: str, criterion_id: str, text: str, kind: CriterionKind,
                     output: Optional[GeneratorOutput], failure: Optional[str],
                     classifier: ConceptClassifier,
                     concept_tiers: Mapping[str, int]) -> Tuple[Criterion, List[Question]]:
    if output is None:
        concept = normalize_concept(classifier.classify(text, None), concept_tiers)
        crit = Criterion(id=criterion_id, source_text=text, kind=kind, logic=None,
                         tier=assign_tier(concept, concept_tiers), flagged=True, flag_reason=failure)
        return crit, []

    questions = []
    for n, gq in enumerate(output.questions, start=1):
        concept = normalize_concept(classifier.classify(gq.text, gq.concept), concept_tiers)
        questions.append(Question(id=f"{trial_id}.{criterion_id}.Q{n}", text=gq.text.strip(),
                                  concept=concept))

    clauses = []
    for clause in output.dnf:
        literals: List[DnfLiteral] = []
        for lit in clause:
            dl = DnfLiteral(question_id=questions[lit.q_index].id, negated=lit.negated)
            if dl not in literals:
                literals.append(dl)
        clauses.append(literals)

    tier = min(assign_tier(q.concept, concept_tiers) for q in questions)
    crit = Criterion(id=criterion_id, source_text=text, kind=kind,
                     logic=DnfExpression(clauses=clauses), tier=tier)
    return crit, questions

def compose_trial(raw: RawTrial, generator: QuestionGenerator, classifier: ConceptClassifier,
                  concept_tiers: Mapping[str, int] = CONCEPT_TIERS, retries: int = 2,
                  max_in_flight: int = 4) -> TrialSpec:
    work: List[Tuple[str, str, CriterionKind]] = []
    for prefix, section, kind in (("I", raw.inclusion_text, CriterionKind.INCLUSION),
                                  ("E", raw.exclusion_text, CriterionKind.EXCLUSION)):
        for n, text in enumerate(segment_criteria(section), start=1):
            work.append((f"{prefix}{n}", text, kind))

    # Generation runs in parallel; assembly stays in criterion order.
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        generated = list(pool.map(
            lambda item: _generate_with_retries(item[1], item[2], generator, retries), work))

    criteria: List[Criterion] = []
    questions: List[Question] = []
    for (criterion_id, text, kind), (output, failure) in zip(work, generated):
        crit, qs = _build_criterion(raw.trial_id, criterion_id, text, kind, output, failure,
                                    classifier, concept_tiers)
        if crit.flagged:
            logger.warning(f"Trial {raw.trial_id} criterion {criterion_id} flagged: {failure}")
        criteria.append(crit)
        questions.extend(qs)

    spec = TrialSpec(trial_id=raw.trial_id, title=raw.title, questions=questions, criteria=criteria)
    violations = validate_trial(spec)
    if violations:
        raise CompositionError(raw.trial_id, [str(v) for v in violations])
    logger.info(f"Composed {raw.trial_id}: {len(criteria)} criteria, {len(questions)} questions")
    return spec

# --- Validation ---

def validate_trial(spec: TrialSpec) -> List[Violation]:
    violations: List[Violation] = []

    if not spec.criteria:
        violations.append(Violation(kind="EmptyTrial", detail=spec.trial_id))

    seen_q = set()
    for q in spec.questions:
        if q.id in seen_q:
            violations.append(Violation(kind="DuplicateId", detail=f"question {q.id}"))
        seen_q.add(q.id)
        if not q.text.strip():
            violations.append(Violation(kind="EmptyQuestion", detail=q.id))

    seen_c = set()
    for c in spec.criteria:
        if c.id in seen_c:
            violations.append(Violation(kind="DuplicateId", detail=f"criterion {c.id}"))
        seen_c.add(c.id)
        if c.tier not in (1, 2, 3, 4):
            violations.append(Violation(kind="TierOutOfRange", detail=f"{c.id}: {c.tier}"))
        if c.flagged:
            continue
        if c.logic is None or not c.logic.clauses:
            violations.append(Violation(kind="EmptyDnf", detail=c.id))
            continue
        for i, clause in enumerate(c.logic.clauses):
            if not clause:
                violations.append(Violation(kind="EmptyClause", detail=f"{c.id} clause {i}"))
            pairs = [(lit.question_id, lit.negated) for lit in clause]
            if len(pairs) != len(set(pairs)):
                violations.append(Violation(kind="DuplicateLiteral", detail=f"{c.id} clause {i}"))
            for lit in clause:
                if lit.question_id not in seen_q:
                    violations.append(Violation(kind="DanglingReference", detail=lit.question_id))
    return violations

# --- Serialization ---

def serialize_trial(spec: TrialSpec) -> str:
    return json.dumps(spec.model_dump(mode="json"), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

def load_trial(path: Path) -> TrialSpec:
    with open(path, "r", encoding="utf-8") as f:
        spec = TrialSpec(**json.load(f))
    violations = validate_trial(spec)
    if violations:
        raise CompositionError(spec.trial_id, [str(v) for v in violations])
    return spec
