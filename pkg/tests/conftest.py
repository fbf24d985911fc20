from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
SYNTHETIC = REPO_ROOT / "data" / "synthetic"

ENV_VARS = (
    "TRIALMATCH_WORKDIR", "TRIALMATCH_BACKEND", "TRIALMATCH_GENERATOR_URL",
    "TRIALMATCH_CLASSIFIER_URL", "TRIALMATCH_QA_URL", "TRIALMATCH_EMBED_URL",
    "TRIALMATCH_API_KEY", "RUN_LEDGER_URL",
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def synthetic_dir() -> Path:
    return SYNTHETIC

