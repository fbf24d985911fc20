"""
Question answering over retrieved evidence.
Evidence is presented oldest-first, each excerpt tagged with note date and
category, after a header with the patient's age and enrollment date.
"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from string import Template
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, ValidationError, field_validator

from client.backends import EmbeddingProvider, QaBackend
from matcher.retriever import DEFAULT_K, VectorIndex, retrieve
from shared.cost import count_tokens
from shared.errors import AnswerValidationError, ArtifactError, FormatError, ParseError
from shared.schemas import (
    AnswerValue, Chunk, EvidenceBundle, EvidenceItem, PatientHeader,
    QaBackendConfig, QaRecord, Question
)

logger = logging.getLogger("trial_matcher.qa")

NO_EVIDENCE_MARKER = "(no evidence retrieved)"

ANSWER_ALIASES = {
    "yes": AnswerValue.YES,
    "no": AnswerValue.NO,
    "na": AnswerValue.NA,
    "n/a": AnswerValue.NA,
    "n.a.": AnswerValue.NA,
}
_FENCE_RE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)

# --- Prompt assembly ---

class PromptTemplate(BaseModel):
    version: str
    body: str

def load_template(path: Path) -> PromptTemplate:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ArtifactError(f"prompt template not found: {path}")
    first, _, body = text.partition("\n")
    if not first.startswith("version:"):
        raise ArtifactError(f"prompt template {path} must start with a 'version:' line")
    return PromptTemplate(version=first.split(":", 1)[1].strip(), body=body)

def build_bundle(header: PatientHeader, chunks: Sequence[Chunk]) -> EvidenceBundle:
    items = [
        EvidenceItem(note_date=c.note_date, note_category=c.note_category, chunk_id=c.chunk_id,
                     note_id=c.note_id, sentence_start=c.sentence_range[0], text=c.text)
        for c in chunks
    ]
    items.sort(key=lambda i: (i.note_date, i.note_id, i.sentence_start))
    return EvidenceBundle(header=header, items=items)

def build_prompt(question: Question, bundle: EvidenceBundle, template: PromptTemplate) -> str:
    if bundle.items:
        evidence = "\n".join(
            f"[{item.note_date.isoformat()}] [{item.note_category}] [chunk:{item.chunk_id}] "
            + " ".join(item.text.split())
            for item in bundle.items
        )
    else:
        evidence = NO_EVIDENCE_MARKER
    return Template(template.body).substitute(
        age=bundle.header.age_at_enrollment,
        enrollment_date=bundle.header.enrollment_date.isoformat(),
        evidence=evidence,
        question=question.text,
    )

# --- Response parsing ---

class _RawAnswer(BaseModel):
    question_explanation: str
    answer_explanation: str
    answer: str
    confidence: int
    citations: List[str] = []

    @field_validator('citations', mode='before')
    def none_is_empty(cls, v):
        return [] if v is None else v

def parse_response(raw: str) -> QaRecord:
    text = raw.strip()
    fenced = _FENCE_RE.match(text)
    if fenced:
        text = fenced.group(1)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"response is not valid JSON: {e.msg}", raw=raw)
    if not isinstance(payload, dict):
        raise ParseError("response JSON is not an object", raw=raw)

    try:
        parsed = _RawAnswer(**payload)
    except ValidationError as e:
        err = e.errors()[0]
        raise AnswerValidationError(f"{'.'.join(map(str, err['loc']))}: {err['msg']}", raw=raw)

    answer = ANSWER_ALIASES.get(parsed.answer.strip().lower())
    if answer is None:
        raise AnswerValidationError(f"answer {parsed.answer!r} is not Yes/No/NA", raw=raw)
    if not 1 <= parsed.confidence <= 5:
        raise AnswerValidationError(f"confidence {parsed.confidence} outside 1..5", raw=raw)

    return QaRecord(
        question_explanation=parsed.question_explanation,
        answer_explanation=parsed.answer_explanation,
        answer=answer,
        confidence=parsed.confidence,
        citations=parsed.citations,
    )

# --- Engine ---

@dataclass(frozen=True)
class PatientContext:
    header: PatientHeader
    chunks: Dict[str, Chunk]
    index: VectorIndex


class QaEngine:
    def __init__(self, backend: QaBackend, embedder: EmbeddingProvider, template: PromptTemplate,
                 config: QaBackendConfig = QaBackendConfig(), k: int = DEFAULT_K,
                 max_in_flight: int = 4):
        self.backend = backend
        self.embedder = embedder
        self.template = template
        self.config = config
        self.k = k
        self.max_in_flight = max_in_flight

    def evidence_for(self, ctx: PatientContext, question: Question) -> EvidenceBundle:
        hits = retrieve(ctx.index, question.text, self.k, self.embedder)
        return build_bundle(ctx.header, [ctx.chunks[cid] for cid, _ in hits if cid in ctx.chunks])

    def answer_question(self, ctx: PatientContext, question: Question) -> QaRecord:
        """
        Parse failures are retried; after the last retry the answer is NA with
        confidence 1 and a failure reason. Transport errors propagate.
        """
        patient_id = ctx.header.patient_id
        prompt = self.build_prompt(ctx, question)
        prompt_tokens = count_tokens(prompt)
        input_tokens = output_tokens = 0
        last_error: Optional[FormatError] = None

        for attempt in range(self.config.retry_count + 1):
            raw = self.backend.complete(prompt, patient_id, question.id, self.config)
            raw = raw[:self.config.max_response_chars]
            input_tokens += prompt_tokens
            output_tokens += count_tokens(raw)
            try:
                record = parse_response(raw)
            except FormatError as e:
                last_error = e
                logger.warning(f"({patient_id}, {question.id}) attempt {attempt + 1}: {e}")
                continue
            return record.model_copy(update={
                "patient_id": patient_id, "question_id": question.id,
                "backend_tag": self.backend.tag, "prompt_version": self.template.version,
                "input_tokens": input_tokens, "output_tokens": output_tokens,
            })

        reason = f"{type(last_error).__name__}: {last_error}"
        logger.warning(f"({patient_id}, {question.id}) falling back to NA: {reason}")
        return QaRecord(
            patient_id=patient_id, question_id=question.id,
            question_explanation="No usable model response.",
            answer_explanation=f"All {self.config.retry_count + 1} responses were unusable; answer set to NA.",
            answer=AnswerValue.NA, confidence=1, citations=[],
            backend_tag=self.backend.tag, prompt_version=self.template.version,
            failure_reason=reason, input_tokens=input_tokens, output_tokens=output_tokens,
        )

    def build_prompt(self, ctx: PatientContext, question: Question) -> str:
        return build_prompt(question, self.evidence_for(ctx, question), self.template)

    def answer_all(self, ctx: PatientContext, questions: Sequence[Question]) -> Dict[str, QaRecord]:
        """Keyed by question id, so completion order never matters."""
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            records = list(pool.map(lambda q: self.answer_question(ctx, q), questions))
        return {r.question_id: r for r in records}
