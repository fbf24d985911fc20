import json

import httpx
import pytest

from client.http_backends import (
    HttpConceptClassifier, HttpEmbeddingProvider, HttpQaBackend, HttpQuestionGenerator
)
from client.scripted import (
    DEFAULT_QA_RESPONSE, ScriptedConceptClassifier, ScriptedQaBackend, ScriptedQuestionGenerator
)
from shared.errors import BackendError
from shared.schemas import CriterionKind, QaBackendConfig


def transport(handler):
    calls = []

    def wrapped(request):
        calls.append(json.loads(request.content) if request.content else None)
        return handler(request, len(calls))
    return httpx.MockTransport(wrapped), calls


class TestHttp:
    def test_qa_complete(self):
        t, calls = transport(lambda req, n: httpx.Response(200, json={"text": "{\"answer\": \"Yes\"}"}))
        backend = HttpQaBackend("http://qa.local", transport=t, api_key="secret")
        text = backend.complete("prompt", "P1", "Q1", QaBackendConfig())
        assert text == "{\"answer\": \"Yes\"}"
        assert calls[0] == {"prompt": "prompt", "temperature": 0.0, "max_chars": 8000}

    def test_bearer_header(self):
        seen = {}

        def handler(req):
            seen["auth"] = req.headers.get("authorization")
            return httpx.Response(200, json={"concept": "Cancer Type"})
        backend = HttpConceptClassifier("http://c.local", api_key="k1", transport=httpx.MockTransport(handler))
        assert backend.classify("Q?", None) == "Cancer Type"
        assert seen["auth"] == "Bearer k1"

    def test_retries_server_errors(self):
        t, calls = transport(lambda req, n: httpx.Response(503) if n < 3 else httpx.Response(200, json={"text": "ok"}))
        backend = HttpQaBackend("http://qa.local", transport=t, retry_count=2, backoff=0)
        assert backend.complete("p", "P1", "Q1", QaBackendConfig()) == "ok"
        assert len(calls) == 3

    def test_gives_up(self):
        t, calls = transport(lambda req, n: httpx.Response(500))
        backend = HttpQaBackend("http://qa.local", transport=t, retry_count=1, backoff=0)
        with pytest.raises(BackendError, match="after 2 attempts"):
            backend.complete("p", "P1", "Q1", QaBackendConfig())

    def test_client_error_not_retried(self):
        t, calls = transport(lambda req, n: httpx.Response(401))
        backend = HttpQaBackend("http://qa.local", transport=t, retry_count=3, backoff=0)
        with pytest.raises(BackendError):
            backend.complete("p", "P1", "Q1", QaBackendConfig())
        assert len(calls) == 1

    def test_transport_error(self):
        def handler(req):
            raise httpx.ConnectError("refused")
        backend = HttpQuestionGenerator("http://gen.local", transport=httpx.MockTransport(handler),
                                        retry_count=0, backoff=0)
        with pytest.raises(BackendError):
            backend.generate("criterion", CriterionKind.INCLUSION)

    def test_missing_url(self):
        with pytest.raises(BackendError):
            HttpQaBackend(None)

    def test_embed_batches(self):
        def handler(req, n):
            texts = json.loads(req.content)["texts"]
            return httpx.Response(200, json={"vectors": [[1.0, 0.0]] * len(texts)})
        t, calls = transport(handler)
        emb = HttpEmbeddingProvider("http://e.local", dim=2, batch_size=2, transport=t)
        assert len(emb.embed(["a", "b", "c"])) == 3
        assert [len(c["texts"]) for c in calls] == [2, 1]

    def test_embed_dimension_drift(self):
        t, _ = transport(lambda req, n: httpx.Response(200, json={"vectors": [[1.0, 0.0, 0.0]]}))
        emb = HttpEmbeddingProvider("http://e.local", dim=2, transport=t)
        with pytest.raises(BackendError):
            emb.embed(["a"])


class TestScripted:
    def test_qa_lookup_and_default(self):
        backend = ScriptedQaBackend({"P1": {"Q1": "raw text"}})
        assert backend.complete("p", "P1", "Q1", QaBackendConfig()) == "raw text"
        assert json.loads(backend.complete("p", "P1", "Q2", QaBackendConfig())) == DEFAULT_QA_RESPONSE

    def test_qa_from_file_default(self, tmp_path):
        path = tmp_path / "qa.json"
        path.write_text(json.dumps({"__default__": "nope", "P1": {}}))
        backend = ScriptedQaBackend.from_file(path)
        assert backend.complete("p", "P9", "Q1", QaBackendConfig()) == "nope"

    def test_classifier_precedence(self):
        classifier = ScriptedConceptClassifier({"Q?": "Comorbidities"})
        assert classifier.classify("Q?", "Others") == "Comorbidities"
        assert classifier.classify("R?", "Cancer Type") == "Cancer Type"
        assert classifier.classify("R?", None) == "Others"

    def test_generator_fallback_is_valid(self):
        payload = json.loads(ScriptedQuestionGenerator({}).generate("ECOG 0-1.", CriterionKind.INCLUSION))
        assert len(payload["questions"]) == 1
        assert payload["dnf"] == [[{"q_index": 0, "negated": False}]]
