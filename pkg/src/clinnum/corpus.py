"""Annotated notes and their JSONL interchange format.

One note per line::

    {"text": "...", "entities": [[start, end, "SO2"], ...],
     "meta": {"age_months": 24, "weight_kg": 12.0}}

Entity offsets are character offsets and must cover exactly one
quantitative token.  Numeric tokens without an entity are class ``O``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .criticality import PatientContext
from .labels import ClassLabel
from .tokenizer import Token, TokenKind, tokenize


@dataclass
class AnnotatedNote:
    text: str
    entities: list[tuple[int, int, Union[ClassLabel, str]]] = field(default_factory=list)
    meta: Optional[PatientContext] = None

    def to_json(self) -> dict:
        obj: dict = {
            "text": self.text,
            "entities": [[s, e, _label_name(lab)] for s, e, lab in self.entities],
        }
        if self.meta is not None:
            obj["meta"] = self.meta.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotatedNote":
        ents = []
        for s, e, lab in obj.get("entities", []):
            try:
                lab = ClassLabel.parse(lab)
            except ValueError:
                pass  # kept raw so validate_corpus can report it
            ents.append((int(s), int(e), lab))
        meta = PatientContext.from_json(obj["meta"]) if obj.get("meta") else None
        return cls(obj["text"], ents, meta)

    def labelled_entities(self) -> list[tuple[int, int, ClassLabel]]:
        return [(s, e, ClassLabel.parse(lab)) for s, e, lab in self.entities]


def _label_name(lab) -> str:
    return lab.name if isinstance(lab, ClassLabel) else str(lab)


def read_jsonl(path: Union[str, Path]) -> list[AnnotatedNote]:
    notes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                notes.append(AnnotatedNote.from_json(json.loads(line)))
    return notes


def to_jsonl(notes: Iterable[AnnotatedNote]) -> str:
    return "".join(json.dumps(n.to_json(), ensure_ascii=False) + "\n" for n in notes)


def write_jsonl(notes: Iterable[AnnotatedNote], path: Union[str, Path]) -> None:
    Path(path).write_text(to_jsonl(notes), encoding="utf-8")


def token_labels(note: AnnotatedNote, tokens: Optional[Sequence[Token]] = None) -> list[ClassLabel]:
    """Per-token gold labels: the entity label on its quantitative token, O elsewhere."""
    tokens = tokenize(note.text) if tokens is None else tokens
    by_span = {(s, e): lab for s, e, lab in note.labelled_entities()}
    return [
        by_span.get(t.span, ClassLabel.O) if t.kind is TokenKind.QUANT else ClassLabel.O
        for t in tokens
    ]


@dataclass(frozen=True)
class CorpusIssue:
    kind: str  # Overlap | Misalignment | OutOfBounds | InvalidLabel
    note_index: int
    detail: str
    positions: tuple[int, ...] = ()


@dataclass
class CorpusReport:
    notes: int
    entities: int
    class_counts: dict[str, int]
    issues: list[CorpusIssue]

    @property
    def ok(self) -> bool:
        return not self.issues

    def to_json(self) -> dict:
        return {
            "notes": self.notes,
            "entities": self.entities,
            "class_counts": self.class_counts,
            "issues": [vars(i) | {"positions": list(i.positions)} for i in self.issues],
        }


def validate_corpus(notes: Sequence[AnnotatedNote]) -> CorpusReport:
    """Check labels, bounds, overlaps and tokenizer alignment; never raises."""
    issues: list[CorpusIssue] = []
    counts: Counter = Counter()
    n_entities = 0
    for idx, note in enumerate(notes):
        quant_spans = {t.span for t in tokenize(note.text) if t.kind is TokenKind.QUANT}
        spans = sorted((s, e, lab) for s, e, lab in note.entities)
        for s, e, lab in spans:
            n_entities += 1
            if not isinstance(lab, ClassLabel):
                issues.append(CorpusIssue("InvalidLabel", idx, f"unknown label {lab!r}", (s, e)))
            else:
                counts[lab.name] += 1
            if not (0 <= s < e <= len(note.text)):
                issues.append(CorpusIssue("OutOfBounds", idx, f"span [{s}, {e}) outside text of length {len(note.text)}", (s, e)))
            elif (s, e) not in quant_spans:
                issues.append(CorpusIssue(
                    "Misalignment", idx,
                    f"span [{s}, {e}) {note.text[s:e]!r} is not a single quantitative token", (s, e),
                ))
        for (s0, e0, _), (s1, e1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                issues.append(CorpusIssue("Overlap", idx, f"spans [{s0}, {e0}) and [{s1}, {e1}) overlap", (s0, e0, s1, e1)))
    class_counts = {c.name: counts.get(c.name, 0) for c in ClassLabel}
    return CorpusReport(len(notes), n_entities, class_counts, issues)
