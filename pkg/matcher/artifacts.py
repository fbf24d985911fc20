"""
Workdir layout and atomic artifact writes.
Artifacts hold no run id or timestamps; the run directory and its manifest
carry attribution.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from pydantic import ValidationError

from shared.errors import ArtifactError
from shared.schemas import MatchScore, RunManifest, ScoringMethod
from shared.unique_ids import sha256_bytes

MANIFEST_NAME = "manifest.json"
SCORE_COLUMNS = ["patient_id", "trial_id", "method", "score"]


class Workdir:
    def __init__(self, root: Path):
        self.root = Path(root)

    @property
    def trials(self) -> Path:
        return self.root / "trials"

    @property
    def corpus(self) -> Path:
        return self.root / "corpus"

    @property
    def chunks_file(self) -> Path:
        return self.corpus / "chunks.jsonl"

    @property
    def headers_file(self) -> Path:
        return self.corpus / "headers.jsonl"

    @property
    def index(self) -> Path:
        return self.root / "index"

    def index_file(self, patient_id: str) -> Path:
        return self.index / f"{patient_id}.json"

    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def pair_file(self, run_id: str, patient_id: str, trial_id: str) -> Path:
        return self.run_dir(run_id) / "pairs" / f"{patient_id}__{trial_id}.json"

    def trial_files(self) -> List[Path]:
        if not self.trials.is_dir():
            return []
        return sorted(self.trials.glob("*.json"))

# --- Writing ---

def atomic_write(path: Path, text: str) -> str:
    """Writes via a temp file in the same directory and os.replace. Returns the sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return sha256_bytes(data)

def dumps_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

def dumps_jsonl(rows: Iterable[Dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)

def file_hash(path: Path) -> str:
    try:
        return sha256_bytes(Path(path).read_bytes())
    except FileNotFoundError:
        raise ArtifactError(f"missing artifact: {path}")

# --- Scores CSV ---

def dumps_scores(scores: Iterable[MatchScore]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    for s in sorted(scores, key=lambda s: (s.patient_id, s.trial_id, s.method.value)):
        writer.writerow([s.patient_id, s.trial_id, s.method.value, repr(s.score)])
    return buf.getvalue()

def load_scores(path: Path) -> List[MatchScore]:
    if not Path(path).exists():
        raise ArtifactError(f"no scores at {path}; run match first")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SCORE_COLUMNS:
            raise ArtifactError(f"{path}: expected columns {SCORE_COLUMNS}, got {reader.fieldnames}")
        try:
            return [MatchScore(patient_id=row["patient_id"], trial_id=row["trial_id"],
                               method=ScoringMethod(row["method"]), score=float(row["score"]))
                    for row in reader]
        except (ValueError, ValidationError) as e:
            raise ArtifactError(f"{path}: malformed score row ({e})")

# --- Manifest ---

def write_manifest(run_dir: Path, manifest: RunManifest):
    atomic_write(Path(run_dir) / MANIFEST_NAME, dumps_json(manifest.model_dump(mode="json")))

def load_manifest(run_dir: Path) -> Optional[RunManifest]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        return None
    with open(path, "r", encoding="utf-8") as f:
        return RunManifest(**json.load(f))
