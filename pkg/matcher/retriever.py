"""
Exact (brute-force) cosine retrieval over chunk embeddings.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from client.backends import EmbeddingProvider
from shared.errors import ArtifactError, BackendError, InputError
from shared.schemas import Chunk
from shared.unique_ids import sha256_bytes

logger = logging.getLogger("trial_matcher.retriever")

DEFAULT_K = 10


class VectorIndex(BaseModel):
    provider_tag: str
    dim: int
    corpus_hash: str = ""
    entries: Dict[str, List[float]] = {}

    def matrix(self) -> Tuple[List[str], np.ndarray]:
        ids = sorted(self.entries)
        if not ids:
            return ids, np.zeros((0, self.dim))
        return ids, np.asarray([self.entries[i] for i in ids], dtype=np.float64)

# --- Similarity ---

def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))

# --- Index build & query ---

def corpus_hash(chunks: Sequence[Chunk]) -> str:
    payload = "\n".join(f"{c.chunk_id}\t{c.text}" for c in sorted(chunks, key=lambda c: c.chunk_id))
    return sha256_bytes(payload.encode("utf-8"))

def index_chunks(chunks: Sequence[Chunk], provider: EmbeddingProvider) -> VectorIndex:
    ordered = sorted(chunks, key=lambda c: c.chunk_id)
    index = VectorIndex(provider_tag=provider.tag, dim=provider.dim, corpus_hash=corpus_hash(ordered))
    if not ordered:
        return index

    vectors = provider.embed([c.text for c in ordered])
    if len(vectors) != len(ordered):
        raise BackendError(f"embedder returned {len(vectors)} vectors for {len(ordered)} chunks")
    for chunk, vec in zip(ordered, vectors):
        if len(vec) != index.dim:
            raise BackendError(f"embedding dimension drift: expected {index.dim}, got {len(vec)}")
        if not np.all(np.isfinite(vec)):
            raise BackendError(f"non-finite embedding for chunk {chunk.chunk_id}")
        index.entries[chunk.chunk_id] = [float(x) for x in vec]
    return index

def retrieve(index: VectorIndex, query_text: str, k: int,
             provider: EmbeddingProvider) -> List[Tuple[str, float]]:
    """Top-k by cosine, descending; ties by chunk id ascending."""
    if provider.tag != index.provider_tag:
        raise InputError(f"index built with {index.provider_tag}, queried with {provider.tag}")
    if k < 1:
        raise InputError("k must be >= 1")

    ids, matrix = index.matrix()
    if not ids:
        return []
    query = np.asarray(provider.embed([query_text])[0], dtype=np.float64)
    if query.shape[0] != index.dim:
        raise BackendError(f"query embedding has dim {query.shape[0]}, index has {index.dim}")

    norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(query)
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(norms > 0, matrix @ query / norms, 0.0)
    sims = np.clip(sims, -1.0, 1.0)

    ranked = sorted(zip(ids, sims.tolist()), key=lambda pair: (-pair[1], pair[0]))
    return ranked[:k]

# --- Persistence ---

def serialize_index(index: VectorIndex) -> str:
    return json.dumps(index.model_dump(mode="json"), sort_keys=True) + "\n"

def load_index(path: Path) -> VectorIndex:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return VectorIndex(**json.load(f))
    except FileNotFoundError:
        raise ArtifactError(f"no index at {path}; run index first")
