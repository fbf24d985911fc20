"""
Backend contracts. The pipeline only talks to models through these.
Two families ship: HTTP clients (http_backends.py) and deterministic
scripted stand-ins for offline runs (scripted.py).
"""

from typing import List, Optional, Protocol, Sequence

from shared.schemas import CriterionKind, QaBackendConfig


class QuestionGenerator(Protocol):
    tag: str

    def generate(self, criterion_text: str, kind: CriterionKind) -> str:
        """Raw JSON payload: {questions: [{text, concept}], dnf: [[{q_index, negated}]]}."""
        ...


class ConceptClassifier(Protocol):
    tag: str

    def classify(self, text: str, hint: Optional[str] = None) -> str:
        ...


class QaBackend(Protocol):
    tag: str

    def complete(self, prompt: str, patient_id: str, question_id: str,
                 config: QaBackendConfig) -> str:
        ...


class EmbeddingProvider(Protocol):
    tag: str
    dim: int

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        ...
