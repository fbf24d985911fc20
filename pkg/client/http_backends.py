import json
import logging
import time
from typing import Dict, List, Optional, Sequence

import httpx

from shared.errors import BackendError
from shared.schemas import CriterionKind, QaBackendConfig

logger = logging.getLogger("trial_matcher.client")


class HttpModelClient:
    """Shared httpx plumbing: base url, bearer key, bounded retries."""

    def __init__(self, base_url: str, api_key: Optional[str] = None, timeout: float = 30.0,
                 retry_count: int = 2, backoff: float = 0.5,
                 transport: Optional[httpx.BaseTransport] = None):
        if not base_url:
            raise BackendError("HTTP backend selected but no endpoint URL configured")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.base_url = base_url
        self.retry_count = retry_count
        self.backoff = backoff
        self.client = httpx.Client(base_url=base_url, timeout=timeout, headers=headers,
                                   transport=transport)

    def post_json(self, path: str, payload: Dict) -> Dict:
        last_error = None
        for attempt in range(self.retry_count + 1):
            try:
                resp = self.client.post(path, json=payload)
                if resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                elif resp.status_code != 200:
                    raise BackendError(f"{self.base_url}{path} rejected request: HTTP {resp.status_code}")
                else:
                    return resp.json()
            except httpx.HTTPError as e:
                last_error = f"{type(e).__name__}: {e}"
            except json.JSONDecodeError as e:
                last_error = f"non-JSON response: {e}"
            logger.warning(f"{self.base_url}{path} attempt {attempt + 1} failed ({last_error})")
            if attempt < self.retry_count and self.backoff:
                time.sleep(self.backoff * (attempt + 1))
        raise BackendError(f"{self.base_url}{path} failed after {self.retry_count + 1} attempts: {last_error}")

    def close(self):
        self.client.close()


class HttpQuestionGenerator(HttpModelClient):
    @property
    def tag(self) -> str:
        return f"http-generator:{self.base_url}"

    def generate(self, criterion_text: str, kind: CriterionKind) -> str:
        data = self.post_json("/generate", {"criterion_text": criterion_text, "kind": kind.value})
        # The composer parses and validates; hand back the payload verbatim.
        return json.dumps(data)


class HttpConceptClassifier(HttpModelClient):
    @property
    def tag(self) -> str:
        return f"http-classifier:{self.base_url}"

    def classify(self, text: str, hint: Optional[str] = None) -> str:
        data = self.post_json("/classify", {"text": text, "hint": hint})
        return str(data.get("concept", hint or "Others"))


class HttpQaBackend(HttpModelClient):
    @property
    def tag(self) -> str:
        return f"http-qa:{self.base_url}"

    def complete(self, prompt: str, patient_id: str, question_id: str,
                 config: QaBackendConfig) -> str:
        data = self.post_json("/complete", {
            "prompt": prompt,
            "temperature": config.temperature,
            "max_chars": config.max_response_chars,
        })
        if "text" not in data:
            raise BackendError(f"{self.base_url}/complete returned no text field")
        return str(data["text"])


class HttpEmbeddingProvider(HttpModelClient):
    def __init__(self, base_url: str, dim: int, batch_size: int = 64, **kwargs):
        super().__init__(base_url, **kwargs)
        self.dim = dim
        self.batch_size = batch_size

    @property
    def tag(self) -> str:
        return f"http-embed:{self.base_url}:{self.dim}"

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        vectors: List[List[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            data = self.post_json("/embed", {"texts": batch})
            got = data.get("vectors", [])
            if len(got) != len(batch):
                raise BackendError(f"embedding batch returned {len(got)} vectors for {len(batch)} texts")
            for vec in got:
                if len(vec) != self.dim:
                    raise BackendError(f"embedding dimension drift: expected {self.dim}, got {len(vec)}")
            vectors.extend([float(v) for v in vec] for vec in got)
        return vectors
