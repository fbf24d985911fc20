from datetime import date, timedelta

import numpy as np
import pytest

from matcher.note_store import (
    DEFAULT_CATEGORIES, build_corpus, chunk_note, filter_notes, load_notes, split_sentence_spans,
    split_sentences
)
from shared.errors import InputError
from shared.schemas import ClinicalNote, PatientHeader

HEADER = PatientHeader(patient_id="P1", age_at_enrollment=60, enrollment_date=date(2023, 6, 1))


def note(text, note_id="N1", category="Progress Notes", day=date(2023, 1, 1)):
    return ClinicalNote(patient_id="P1", note_id=note_id, category=category, date=day, text=text)


class TestFilter:
    def test_date_and_category(self):
        notes = [
            note("a", "N1", day=date(2023, 6, 1)),
            note("b", "N2", day=date(2023, 6, 2)),
            note("c", "N3", category="Telephone Encounter"),
            note("d", "N4", category="progress notes"),
        ]
        assert [n.note_id for n in filter_notes(notes, HEADER)] == ["N1", "N4"]

    def test_everything_after_enrollment(self):
        assert filter_notes([note("a", day=date(2024, 1, 1))], HEADER) == []

    def test_narrowing_never_adds_notes(self):
        rng = np.random.default_rng(17)
        categories = list(DEFAULT_CATEGORIES) + ["Telephone Encounter", "Nursing Note"]
        for _ in range(300):
            notes = [note("x", f"N{i}", category=str(rng.choice(categories)),
                          day=date(2023, 1, 1) + timedelta(days=int(rng.integers(0, 365))))
                     for i in range(int(rng.integers(0, 30)))]
            allowed = [c for c in categories if rng.random() < 0.7]
            fewer = [c for c in allowed if rng.random() < 0.5]
            earlier = HEADER.model_copy(update={
                "enrollment_date": HEADER.enrollment_date - timedelta(days=int(rng.integers(0, 200)))})

            kept = {n.note_id for n in filter_notes(notes, HEADER, allowed)}
            assert {n.note_id for n in filter_notes(notes, HEADER, fewer)} <= kept
            assert {n.note_id for n in filter_notes(notes, earlier, allowed)} <= kept


class TestSentences:
    def test_basic(self):
        assert split_sentences("First one. Second one! Third?") == ["First one.", "Second one!", "Third?"]

    def test_abbreviations_and_decimals(self):
        text = "Seen by Dr. Smith today. Hemoglobin is 13.1 g/dL. No change."
        assert split_sentences(text) == ["Seen by Dr. Smith today.", "Hemoglobin is 13.1 g/dL.", "No change."]

    def test_short_answer_is_its_own_sentence(self):
        assert split_sentences("Fever? No. Patient denies chills.") == ["Fever?", "No.", "Patient denies chills."]

    def test_numbered_reference_is_not_a_boundary(self):
        text = "Specimen No. 5 was sent. Result pending."
        assert split_sentences(text) == ["Specimen No. 5 was sent.", "Result pending."]

    def test_lowercase_continuation_is_not_a_boundary(self):
        assert split_sentences("Dose was 5 mg. daily for a week.") == ["Dose was 5 mg. daily for a week."]

    def test_blank_line_splits(self):
        assert split_sentences("Assessment\n\nStable disease") == ["Assessment", "Stable disease"]

    def test_spans_rebuild_text(self):
        text = "  One.  Two.\nThree.  "
        spans = split_sentence_spans(text)
        assert [text[s:e] for s, e in spans] == ["One.", "Two.", "Three."]
        gaps = [text[:spans[0][0]]] + [text[a[1]:b[0]] for a, b in zip(spans, spans[1:])]
        assert all(not g.strip() for g in gaps)

    def test_empty(self):
        assert split_sentences("   ") == []


class TestChunking:
    def test_single_chunk(self):
        chunks = chunk_note(note("One two. Three four."), max_tokens_per_chunk=10)
        assert len(chunks) == 1
        assert chunks[0].sentence_range == (0, 1)
        assert chunks[0].note_date == date(2023, 1, 1)

    def test_overlap(self):
        text = "Alpha beta gamma. Delta epsilon zeta. Eta theta iota. Kappa lambda mu."
        chunks = chunk_note(note(text), max_tokens_per_chunk=6)
        assert [c.sentence_range for c in chunks] == [(0, 1), (1, 2), (2, 3)]
        assert chunks[1].text == "Delta epsilon zeta. Eta theta iota."

    def test_oversized_sentence_kept(self, caplog):
        chunks = chunk_note(note("One two three four five six. Seven."), max_tokens_per_chunk=3)
        assert chunks[0].text == "One two three four five six."
        assert "over the 3 budget" in caplog.text

    def test_ids_are_stable(self):
        a = chunk_note(note("One. Two. Three."), max_tokens_per_chunk=2)
        b = chunk_note(note("One. Two. Three."), max_tokens_per_chunk=2)
        assert [c.chunk_id for c in a] == [c.chunk_id for c in b]
        assert len({c.chunk_id for c in a}) == len(a)

    def test_empty_note(self):
        assert chunk_note(note(""), 10) == []

    def test_random_notes_cover_and_overlap(self):
        rng = np.random.default_rng(11)
        words = ["tumor", "stable", "biopsy", "scan", "dose", "marker", "lesion", "node"]
        for _ in range(500):
            n = int(rng.integers(2, 51))
            lengths = rng.integers(1, 9, size=n)
            sentences = [" ".join(rng.choice(words, size=int(k))).capitalize() + "." for k in lengths]
            pair_max = max(int(lengths[i] + lengths[i + 1]) for i in range(n - 1))
            budget = int(rng.integers(pair_max, pair_max + 40))
            chunks = chunk_note(note(" ".join(sentences)), max_tokens_per_chunk=budget)

            ranges = [c.sentence_range for c in chunks]
            assert ranges[0][0] == 0 and ranges[-1][1] == n - 1
            covered = set()
            for s, e in ranges:
                covered.update(range(s, e + 1))
                assert sum(int(lengths[i]) for i in range(s, e + 1)) <= budget
            assert covered == set(range(n))
            for (s1, e1), (s2, e2) in zip(ranges, ranges[1:]):
                assert s2 == e1
            for c in chunks:
                s, e = c.sentence_range
                assert c.text == " ".join(sentences[s:e + 1])


class TestLoading:
    def test_bad_date_skipped(self, tmp_path, caplog):
        path = tmp_path / "notes.jsonl"
        path.write_text(
            '{"patient_id": "P1", "note_id": "N1", "category": "H&P", "date": "2023-02-30", "text": "x"}\n'
            '{"patient_id": "P1", "note_id": "N2", "category": "H&P", "date": "2023-02-01", "text": "y"}\n')
        notes = load_notes(path)
        assert [n.note_id for n in notes] == ["N2"]
        assert "unparseable note date" in caplog.text

    def test_bad_json_has_line_number(self, tmp_path):
        path = tmp_path / "notes.jsonl"
        path.write_text('{"patient_id": "P1", "note_id": "N1", "category": "H&P", "date": "2023-02-01", "text": "y"}\n{oops\n')
        with pytest.raises(InputError, match=":2:"):
            load_notes(path)

    def test_duplicate_note(self, tmp_path):
        row = '{"patient_id": "P1", "note_id": "N1", "category": "H&P", "date": "2023-02-01", "text": "y"}\n'
        path = tmp_path / "notes.jsonl"
        path.write_text(row + row)
        with pytest.raises(InputError, match="duplicate"):
            load_notes(path)

    def test_synthetic_corpus(self, synthetic_dir):
        from matcher.note_store import load_headers
        notes = load_notes(synthetic_dir / "notes.jsonl")
        headers = load_headers(synthetic_dir / "headers.jsonl")
        chunks = build_corpus(notes, headers)
        assert len(notes) == 59
        assert {c.patient_id for c in chunks} == {"P001", "P002", "P003"}
        for c in chunks:
            assert c.note_date <= headers[c.patient_id].enrollment_date
