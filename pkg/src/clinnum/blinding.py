"""Blind-dataset transform: quantitative numbers become a placeholder word.

Code numbers (``22q11``, ``G1P3``) and units (``mm2``) pass through
unchanged.  The alignment records where each value was, so predictions made
on the blinded sequence can be projected back to the source values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .errors import LengthMismatch
from .labels import ClassLabel
from .tokenizer import NumericLexeme, Token, TokenKind, parse_numeric

PLACEHOLDER = "nombre"


@dataclass(frozen=True)
class AlignmentEntry:
    index: int
    span: tuple[int, int]
    lexeme: NumericLexeme


@dataclass(frozen=True)
class BlindedText:
    tokens: list[Token]
    alignment: list[AlignmentEntry]
    placeholder: str = PLACEHOLDER

    @property
    def text(self) -> str:
        return " ".join(t.text for t in self.tokens)

    def restore(self) -> list[Token]:
        """Put the original numeric text back at every placeholder."""
        out = list(self.tokens)
        for entry in self.alignment:
            out[entry.index] = Token(entry.lexeme.raw, entry.span, TokenKind.QUANT)
        return out


def unit_after(tokens: Sequence[Token], i: int) -> str | None:
    if i + 1 < len(tokens) and tokens[i + 1].kind is TokenKind.UNIT:
        return tokens[i + 1].text
    return None


def blind(tokens: Sequence[Token], placeholder: str = PLACEHOLDER) -> BlindedText:
    out: list[Token] = []
    alignment: list[AlignmentEntry] = []
    for i, tok in enumerate(tokens):
        if tok.kind is TokenKind.QUANT:
            lexeme = parse_numeric(tok, unit_hint=unit_after(tokens, i))
            alignment.append(AlignmentEntry(i, tok.span, lexeme))
            out.append(replace(tok, text=placeholder, kind=TokenKind.WORD))
        else:
            out.append(tok)
    return BlindedText(out, alignment, placeholder)


@dataclass(frozen=True)
class ProjectedValue:
    lexeme: NumericLexeme
    label: ClassLabel
    span: tuple[int, int]
    index: int


def project_predictions(blinded: BlindedText, labels: Sequence[ClassLabel]) -> list[ProjectedValue]:
    """Map per-token labels on the blinded sequence back to the source values."""
    if len(labels) != len(blinded.tokens):
        raise LengthMismatch(f"{len(labels)} labels for {len(blinded.tokens)} tokens")
    return [
        ProjectedValue(e.lexeme, ClassLabel(labels[e.index]), e.span, e.index)
        for e in blinded.alignment
    ]


def blind_text(text: str, placeholder: str = PLACEHOLDER, tokens: Sequence[Token] | None = None) -> tuple[str, list[dict]]:
    """Blind a raw string in place, keeping every character that is not a value.

    The placeholder is padded with a space where it would otherwise fuse with
    a neighbouring letter or digit (``50mmHg`` -> ``nombre mmHg``), so the
    result tokenizes to the same sequence as ``blind(tokenize(text))`` and
    blinding it again is a no-op.  Returns the new text and one record per
    replaced value with its source and blinded spans.
    """
    from .tokenizer import tokenize

    tokens = tokenize(text) if tokens is None else tokens
    blinded = blind(tokens, placeholder)
    parts: list[str] = []
    values: list[dict] = []
    cursor = 0
    length = 0
    for entry in blinded.alignment:
        s, e = entry.span
        chunk = text[cursor:s]
        parts.append(chunk)
        length += len(chunk)
        if _fuses(_last(parts)):
            parts.append(" ")
            length += 1
        parts.append(placeholder)
        start = length
        length += len(placeholder)
        if e < len(text) and _fuses(text[e]):
            parts.append(" ")
            length += 1
        values.append({"span": [start, start + len(placeholder)], "source_span": [s, e], "raw": entry.lexeme.raw})
        cursor = e
    parts.append(text[cursor:])
    return "".join(parts), values


def _last(parts: list[str]) -> str:
    for p in reversed(parts):
        if p:
            return p[-1]
    return ""


def _fuses(ch: str) -> bool:
    return bool(ch) and (ch.isalnum() or ch == "_")
