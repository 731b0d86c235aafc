"""Note-level flow: classify each value in a note, then judge it against its range."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .blinding import BlindedText, ProjectedValue, blind, project_predictions
from .corpus import AnnotatedNote, token_labels
from .criticality import (
    CP_WINDOW,
    CriticalityVerdict,
    PatientContext,
    RangePolicy,
    ThresholdTables,
    assess,
)
from .labels import DESCRIPTIONS, ClassLabel
from .model import TokenClassifier
from .tokenizer import Date, Token, tokenize


@dataclass(frozen=True)
class AssessedValue:
    value: ProjectedValue
    verdict: CriticalityVerdict

    @property
    def unit(self) -> Optional[str]:
        return self.value.lexeme.unit_hint

    @property
    def attribute(self) -> str:
        return attribute_name(self.value.label, self.value.lexeme.form)

    def to_json(self) -> dict:
        v = self.verdict
        return {
            "value": self.value.lexeme.raw,
            "span": list(self.value.span),
            "label": self.value.label.name,
            "attribute": self.attribute,
            "unit": self.unit,
            "status": v.status.value,
            "range": list(v.applied_range) if v.applied_range else None,
            "note": v.note,
        }


def attribute_name(label: ClassLabel, form=None) -> str:
    name = DESCRIPTIONS[ClassLabel(label)]
    if label is ClassLabel.O and isinstance(form, Date):
        return f"{name} (date)"
    return name


def context_window(tokens: Sequence[Token], index: int, width: int = CP_WINDOW) -> list[str]:
    """Texts of up to ``width`` tokens on each side of ``index``, nearest first, left before right."""
    out = []
    for d in range(1, width + 1):
        for j in (index - d, index + d):
            if 0 <= j < len(tokens):
                out.append(tokens[j].text)
    return out


def model_inputs(model: TokenClassifier, tokens: Sequence[Token], blinded: BlindedText) -> np.ndarray:
    source = blinded.tokens if model.config.blinded else tokens
    return np.asarray(model.vocab.encode(t.text for t in source), dtype=np.int64)


def classify(model: TokenClassifier, text: str) -> tuple[list[Token], list[ProjectedValue]]:
    """Tokenize, blind, run the classifier and project labels back onto the values."""
    tokens = tokenize(text)
    blinded = blind(tokens)
    if not tokens:
        return tokens, []
    pred = model.predict(model_inputs(model, tokens, blinded))
    return tokens, project_predictions(blinded, [ClassLabel(int(p)) for p in pred])


def gold_values(note: AnnotatedNote) -> tuple[list[Token], list[ProjectedValue]]:
    """Values of a note labelled from its annotations (unannotated values are O)."""
    tokens = tokenize(note.text)
    return tokens, project_predictions(blind(tokens), token_labels(note, tokens))


def assess_values(
    tokens: Sequence[Token],
    values: Sequence[ProjectedValue],
    ctx: PatientContext,
    tables: ThresholdTables,
    policy: RangePolicy = RangePolicy.ANY,
) -> list[AssessedValue]:
    return [
        AssessedValue(v, assess(v.lexeme, v.label, ctx, tables, policy, context_window(tokens, v.index)))
        for v in values
    ]


def with_labels(note: AnnotatedNote, values: Sequence[ProjectedValue]) -> AnnotatedNote:
    """Copy of ``note`` whose entities are the given labelled values (O included)."""
    return AnnotatedNote(note.text, [(*v.span, v.label) for v in values], note.meta)


def render_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    header = {"value": "Value", "attribute": "Attributes", "unit": "Unit", "status": "Critical", "note": "Note",
              "label": "Label", "note_index": "#"}
    cells = [[header.get(c, c) for c in columns]]
    for r in rows:
        cells.append(["" if r.get(c) is None else str(r.get(c)) for c in columns])
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
