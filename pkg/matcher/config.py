import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ValidationError, model_validator

from client.http_backends import (
    HttpConceptClassifier, HttpEmbeddingProvider, HttpQaBackend, HttpQuestionGenerator
)
from client.scripted import (
    MockEmbedder, ScriptedConceptClassifier, ScriptedQaBackend, ScriptedQuestionGenerator
)
from shared.errors import ConfigError
from shared.schemas import QaBackendConfig, ScoringMethod, ThroughputProfile, TierWeights

logger = logging.getLogger("trial_matcher.config")

REPO_ROOT = Path(__file__).resolve().parent.parent
PARAMETERS_PATH = Path(__file__).resolve().parent / "parameters.json"

ENV_OVERRIDES = {
    "TRIALMATCH_WORKDIR": ("workdir",),
    "TRIALMATCH_BACKEND": ("backend", "kind"),
    "TRIALMATCH_GENERATOR_URL": ("backend", "generator_url"),
    "TRIALMATCH_CLASSIFIER_URL": ("backend", "classifier_url"),
    "TRIALMATCH_QA_URL": ("backend", "qa_url"),
    "TRIALMATCH_EMBED_URL": ("backend", "embed_url"),
    "TRIALMATCH_API_KEY": ("backend", "api_key"),
}

# --- Models ---

class Thresholds(BaseModel):
    met: float = 0.66
    notmet: float = 0.34

    @model_validator(mode='after')
    def check_order(self):
        if not 0.0 <= self.notmet < self.met <= 1.0:
            raise ValueError(f'thresholds must satisfy 0 <= notmet < met <= 1 (got {self.notmet}, {self.met})')
        return self

class BackendSettings(BaseModel):
    kind: Literal["scripted", "http"] = "scripted"
    generator_url: Optional[str] = None
    classifier_url: Optional[str] = None
    qa_url: Optional[str] = None
    embed_url: Optional[str] = None
    api_key: Optional[str] = None
    timeout: float = 30.0
    retry_count: int = 2
    embed_batch_size: int = 64
    embed_dim: int = 512
    generator_fixtures: Optional[str] = None
    classifier_fixtures: Optional[str] = None
    qa_fixtures: Optional[str] = None

class CostSettings(BaseModel):
    input_speed: float = 2500.0
    output_speed: float = 45.0
    hourly_rate: float = 0.0
    price_per_1k_in: float = 0.0
    price_per_1k_out: float = 0.0

    def profile(self) -> ThroughputProfile:
        return ThroughputProfile(input_speed=self.input_speed, output_speed=self.output_speed,
                                 hourly_rate=self.hourly_rate)

class PipelineConfig(BaseModel):
    workdir: str = "workspace"
    thresholds: Thresholds = Thresholds()
    max_marginalized: int = 20
    tier_weights: TierWeights = TierWeights()
    concept_tiers: Dict[str, int] = {}
    retrieval_k: int = 10
    chunk_max_tokens: int = 256
    allowed_note_categories: List[str] = []
    abbreviations: List[str] = []
    max_in_flight: int = 4
    generation_retries: int = 2
    scoring_method: ScoringMethod = ScoringMethod.WEIGHTED_TIER
    deterministic: bool = True
    prompt_template: str = "matcher/prompts/qa_prompt_v1.txt"
    qa: QaBackendConfig = QaBackendConfig()
    backend: BackendSettings = BackendSettings()
    cost: CostSettings = CostSettings()

    @model_validator(mode='after')
    def check_ranges(self):
        if self.retrieval_k < 1:
            raise ValueError('retrieval_k must be >= 1')
        if self.chunk_max_tokens < 1:
            raise ValueError('chunk_max_tokens must be >= 1')
        if self.max_in_flight < 1:
            raise ValueError('max_in_flight must be >= 1')
        for concept, tier in self.concept_tiers.items():
            if tier not in (1, 2, 3, 4):
                raise ValueError(f'concept {concept!r} mapped to invalid tier {tier}')
        return self

    @property
    def workdir_path(self) -> Path:
        return Path(self.workdir)

    def snapshot(self) -> Dict[str, Any]:
        """Config as recorded in run manifests; secrets are masked."""
        data = self.model_dump(mode="json")
        if data["backend"].get("api_key"):
            data["backend"]["api_key"] = "***"
        return data

# --- Loading ---

def _deep_merge(base: Dict, override: Dict) -> Dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged

def _read_json(path: Path) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data

def _resolve_paths(data: Dict, base: Path) -> None:
    def fix(value: Optional[str]) -> Optional[str]:
        if value and not Path(value).is_absolute():
            return str((base / value).resolve())
        return value

    if "prompt_template" in data:
        data["prompt_template"] = fix(data["prompt_template"])
    backend = data.get("backend", {})
    for key in ("generator_fixtures", "classifier_fixtures", "qa_fixtures"):
        if key in backend:
            backend[key] = fix(backend[key])

def load_config(path: Optional[str] = None) -> PipelineConfig:
    """parameters.json defaults <- user JSON file <- environment."""
    defaults = _read_json(PARAMETERS_PATH)
    _resolve_paths(defaults, REPO_ROOT)
    data = defaults

    if path:
        user = _read_json(Path(path))
        _resolve_paths(user, Path(path).resolve().parent)
        data = _deep_merge(defaults, user)

    for env_name, keys in ENV_OVERRIDES.items():
        value = os.getenv(env_name)
        if value is None:
            continue
        target = data
        for key in keys[:-1]:
            target = target.setdefault(key, {})
        target[keys[-1]] = value
        logger.debug(f"Config override from {env_name}")

    try:
        return PipelineConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")

# --- Backend wiring ---

def _http_kwargs(config: PipelineConfig) -> Dict[str, Any]:
    b = config.backend
    return {"api_key": b.api_key, "timeout": b.timeout, "retry_count": b.retry_count}

def make_generator(config: PipelineConfig):
    if config.backend.kind == "http":
        return HttpQuestionGenerator(config.backend.generator_url, **_http_kwargs(config))
    return ScriptedQuestionGenerator.from_file(config.backend.generator_fixtures)

def make_classifier(config: PipelineConfig):
    if config.backend.kind == "http" and config.backend.classifier_url:
        return HttpConceptClassifier(config.backend.classifier_url, **_http_kwargs(config))
    return ScriptedConceptClassifier.from_file(config.backend.classifier_fixtures)

def make_qa_backend(config: PipelineConfig):
    if config.backend.kind == "http":
        kwargs = {**_http_kwargs(config), "timeout": config.qa.timeout}
        return HttpQaBackend(config.backend.qa_url, **kwargs)
    return ScriptedQaBackend.from_file(config.backend.qa_fixtures)

def make_embedder(config: PipelineConfig):
    if config.backend.kind == "http":
        return HttpEmbeddingProvider(config.backend.embed_url, dim=config.backend.embed_dim,
                                     batch_size=config.backend.embed_batch_size,
                                     **_http_kwargs(config))
    return MockEmbedder(dim=config.backend.embed_dim)
