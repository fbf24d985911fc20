"""
Deterministic stand-ins for the hosted models, keyed by fixture files.
Same input -> same output, across runs and processes.
"""

import hashlib
import json
import logging
import math
import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from shared.schemas import CriterionKind, QaBackendConfig

logger = logging.getLogger("trial_matcher.client")

Fixture = Union[Dict, str]

DEFAULT_QA_RESPONSE = {
    "question_explanation": "No scripted response exists for this patient and question.",
    "answer_explanation": "The scripted backend has no evidence to offer.",
    "answer": "N/A",
    "confidence": 1,
}


def _load_json(path: Optional[Union[str, Path]]) -> Dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)

def _as_text(fixture: Fixture) -> str:
    # Strings go out verbatim so fixtures can script malformed output.
    return fixture if isinstance(fixture, str) else json.dumps(fixture, sort_keys=True)


class ScriptedQuestionGenerator:
    tag = "scripted-generator"

    def __init__(self, fixtures: Dict[str, Fixture]):
        self.fixtures = fixtures

    @classmethod
    def from_file(cls, path) -> "ScriptedQuestionGenerator":
        return cls(_load_json(path))

    def generate(self, criterion_text: str, kind: CriterionKind) -> str:
        if criterion_text in self.fixtures:
            return _as_text(self.fixtures[criterion_text])
        logger.debug(f"No generator fixture for {criterion_text!r}; emitting a single question")
        return _as_text({
            "questions": [{"text": f"Does the patient meet this criterion: {criterion_text}?",
                           "concept": "Others"}],
            "dnf": [[{"q_index": 0, "negated": False}]],
        })


class ScriptedConceptClassifier:
    tag = "scripted-classifier"

    def __init__(self, fixtures: Dict[str, str]):
        self.fixtures = fixtures

    @classmethod
    def from_file(cls, path) -> "ScriptedConceptClassifier":
        return cls(_load_json(path))

    def classify(self, text: str, hint: Optional[str] = None) -> str:
        return self.fixtures.get(text) or hint or "Others"


class ScriptedQaBackend:
    """Fixture layout: {patient_id: {question_id: response}}."""

    tag = "scripted-qa"

    def __init__(self, fixtures: Dict[str, Dict[str, Fixture]], default: Optional[Fixture] = None):
        self.fixtures = fixtures
        self.default = DEFAULT_QA_RESPONSE if default is None else default

    @classmethod
    def from_file(cls, path) -> "ScriptedQaBackend":
        data = _load_json(path)
        default = data.pop("__default__", None)
        return cls(data, default)

    def complete(self, prompt: str, patient_id: str, question_id: str,
                 config: QaBackendConfig) -> str:
        response = self.fixtures.get(patient_id, {}).get(question_id, self.default)
        return _as_text(response)


_WORD_RE = re.compile(r"[a-z0-9]+")

class MockEmbedder:
    """Lowercase word counts hashed into a fixed space, L2-normalized."""

    def __init__(self, dim: int = 512):
        self.dim = dim

    @property
    def tag(self) -> str:
        return f"mock-bow-{self.dim}"

    def _bucket(self, word: str) -> int:
        digest = hashlib.md5(word.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        out = []
        for text in texts:
            vec = [0.0] * self.dim
            for word in _WORD_RE.findall(text.lower()):
                vec[self._bucket(word)] += 1.0
            norm = math.sqrt(sum(v * v for v in vec))
            out.append([v / norm for v in vec] if norm else vec)
        return out
