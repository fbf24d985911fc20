"""
Patient notes: ingestion, category/date filtering, sentence splitting and
sentence-window chunking with a one-sentence overlap.
"""

import json
import logging
import re
from collections import defaultdict
from pathlib import Path
from typing import Collection, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from shared.cost import count_tokens
from shared.errors import ArtifactError, InputError
from shared.schemas import Chunk, ClinicalNote, PatientHeader
from shared.unique_ids import stable_id

logger = logging.getLogger("trial_matcher.notes")

DEFAULT_CATEGORIES = (
    "Assessment & Plan Note", "Brief Op Note", "Consults", "Discharge Instructions",
    "Discharge Summary", "H&P", "H&P (View-Only)", "Op Note", "OR Surgeon",
    "Procedures", "Progress Notes", "Rad Onc Simulation", "Rad Onc Weekly Review",
)
DEFAULT_ABBREVIATIONS = (
    "dr.", "mr.", "mrs.", "ms.", "st.", "vs.", "approx.", "fig.",
    "e.g.", "i.e.", "etc.", "mg.", "ml.", "mcg.", "hr.", "min.", "pt.", "hx.",
)
# Abbreviations only when a numeral follows ("No. 5" vs "No. Patient denies").
NUMERAL_ABBREVIATIONS = ("no.", "nos.")
DEFAULT_CHUNK_TOKENS = 256

# Terminal punctuation (plus closing quotes/brackets) followed by whitespace
# and a capital or digit.
_BOUNDARY_RE = re.compile(r"[.!?][\"')\]]*(?=\s+[A-Z0-9])")
_BLANK_LINE_RE = re.compile(r"\n[ \t]*\n")

# --- Filtering ---

def filter_notes(notes: Sequence[ClinicalNote], header: PatientHeader,
                 allowed_categories: Collection[str] = DEFAULT_CATEGORIES) -> List[ClinicalNote]:
    """Notes on or before enrollment in an allowed category; order preserved."""
    allowed = {c.casefold() for c in allowed_categories}
    return [n for n in notes
            if n.date <= header.enrollment_date and n.category.casefold() in allowed]

# --- Sentences ---

def split_sentence_spans(text: str,
                         abbreviations: Collection[str] = DEFAULT_ABBREVIATIONS) -> List[Tuple[int, int]]:
    """
    Character spans (start, end) of sentences, trimmed of surrounding
    whitespace. Everything between spans is whitespace, so the spans and the
    gaps rebuild the text exactly.
    """
    guard = {a.casefold() for a in abbreviations}
    cuts = set()
    for m in _BOUNDARY_RE.finditer(text):
        punct_at = m.start()
        word_start = punct_at
        while word_start > 0 and not text[word_start - 1].isspace():
            word_start -= 1
        word = text[word_start:punct_at + 1].casefold()
        if word in guard:
            continue
        if word in NUMERAL_ABBREVIATIONS and text[m.end():].lstrip()[:1].isdigit():
            continue
        cuts.add(m.end())
    for m in _BLANK_LINE_RE.finditer(text):
        cuts.add(m.start())

    spans = []
    start = 0
    for cut in sorted(cuts) + [len(text)]:
        segment = text[start:cut]
        stripped = segment.strip()
        if stripped:
            lead = len(segment) - len(segment.lstrip())
            spans.append((start + lead, start + lead + len(stripped)))
        start = cut
    return spans

def split_sentences(text: str, abbreviations: Collection[str] = DEFAULT_ABBREVIATIONS) -> List[str]:
    return [text[s:e] for s, e in split_sentence_spans(text, abbreviations)]

# --- Chunking ---

def chunk_note(note: ClinicalNote, max_tokens_per_chunk: int = DEFAULT_CHUNK_TOKENS,
               abbreviations: Collection[str] = DEFAULT_ABBREVIATIONS) -> List[Chunk]:
    """
    Greedy packing of whole sentences; each chunk after the first starts with
    the last sentence of the one before it.
    """
    spans = split_sentence_spans(note.text, abbreviations)
    if not spans:
        return []
    tokens = [count_tokens(note.text[s:e]) for s, e in spans]
    last = len(spans) - 1

    ranges: List[Tuple[int, int]] = []
    start = 0
    while True:
        end = start
        used = tokens[start]
        if used > max_tokens_per_chunk:
            logger.warning(f"Note {note.note_id}: sentence {start} has {used} tokens, "
                           f"over the {max_tokens_per_chunk} budget; kept as its own chunk")
        while end < last and used + tokens[end + 1] <= max_tokens_per_chunk:
            end += 1
            used += tokens[end]
        if end == start and ranges and ranges[-1][1] == start:
            # Carried sentence cannot sit next to the following one: no overlap possible.
            logger.warning(f"Note {note.note_id}: no room for overlap after sentence {start}")
            start += 1
            continue
        ranges.append((start, end))
        if end == last:
            break
        start = end if end > start else end + 1

    chunks = []
    for s, e in ranges:
        text = note.text[spans[s][0]:spans[e][1]]
        chunks.append(Chunk(
            chunk_id=stable_id(note.patient_id, note.note_id, s, e),
            patient_id=note.patient_id, note_id=note.note_id,
            note_date=note.date, note_category=note.category,
            sentence_range=(s, e), text=text,
        ))
    return chunks

# --- JSON Lines I/O ---

def _read_jsonl(path: Path) -> Iterator[Tuple[int, dict]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as e:
                    raise InputError(f"{path}:{lineno}: invalid JSON ({e.msg})")
    except FileNotFoundError:
        raise InputError(f"file not found: {path}")

def load_notes(path: Path) -> List[ClinicalNote]:
    """Notes without a parseable date are skipped with a warning."""
    notes = []
    seen = set()
    for lineno, row in _read_jsonl(path):
        try:
            note = ClinicalNote(**row)
        except ValidationError as e:
            if any(err["loc"] and err["loc"][0] == "date" for err in e.errors()):
                logger.warning(f"{path}:{lineno}: unparseable note date {row.get('date')!r}; note skipped")
                continue
            raise InputError(f"{path}:{lineno}: invalid note: {e.errors()[0]['msg']}")
        key = (note.patient_id, note.note_id)
        if key in seen:
            raise InputError(f"{path}:{lineno}: duplicate note_id {note.note_id} for patient {note.patient_id}")
        seen.add(key)
        notes.append(note)
    return notes

def load_headers(path: Path) -> Dict[str, PatientHeader]:
    headers = {}
    for lineno, row in _read_jsonl(path):
        try:
            header = PatientHeader(**row)
        except ValidationError as e:
            raise InputError(f"{path}:{lineno}: invalid patient header: {e.errors()[0]['msg']}")
        headers[header.patient_id] = header
    return headers

def dump_jsonl(models: Iterable) -> str:
    return "".join(json.dumps(m.model_dump(mode="json"), sort_keys=True, ensure_ascii=False) + "\n"
                   for m in models)

def load_chunks(path: Path) -> List[Chunk]:
    if not Path(path).exists():
        raise ArtifactError(f"no chunk store at {path}; run ingest first")
    return [Chunk(**row) for _, row in _read_jsonl(path)]

# --- Corpus ---

def build_corpus(notes: Sequence[ClinicalNote], headers: Dict[str, PatientHeader],
                 allowed_categories: Collection[str] = DEFAULT_CATEGORIES,
                 max_tokens_per_chunk: int = DEFAULT_CHUNK_TOKENS,
                 abbreviations: Collection[str] = DEFAULT_ABBREVIATIONS) -> List[Chunk]:
    by_patient: Dict[str, List[ClinicalNote]] = defaultdict(list)
    for note in notes:
        by_patient[note.patient_id].append(note)

    chunks: List[Chunk] = []
    for patient_id in sorted(by_patient):
        header = headers.get(patient_id)
        if header is None:
            logger.warning(f"Patient {patient_id} has notes but no header; skipped")
            continue
        kept = filter_notes(by_patient[patient_id], header, allowed_categories)
        logger.info(f"Patient {patient_id}: {len(kept)}/{len(by_patient[patient_id])} notes kept")
        for note in kept:
            chunks.extend(chunk_note(note, max_tokens_per_chunk, abbreviations))
    return chunks

def chunks_by_patient(chunks: Iterable[Chunk]) -> Dict[str, List[Chunk]]:
    grouped: Dict[str, List[Chunk]] = defaultdict(list)
    for c in chunks:
        grouped[c.patient_id].append(c)
    return dict(grouped)
