"""Rule-based tokenizer for French clinical notes.

Every numeric lexeme is typed as a quantitative value (``Quant``), a code
number such as ``22q11`` or ``G1P3`` (``Code``), or a unit (``Unit``).
Units glued to values (``50-60mmHg``) are split off.  Offsets are character
offsets into the source string, so ``source[start:end] == token.text``.
"""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import MalformedNumeric

DEFAULT_UNITS = ("%", "mmHg", "bpm", "mm", "cm", "kg", "Kg", "g", "mm2", "cm3", "min")

# bases that may carry a 2/3 exponent digit ("m2", "dm3")
_EXPONENT_BASES = frozenset({"m", "dm", "cm", "mm", "ml", "l"})
# markers after which a bare integer is an identifier, not a measurement
_IDENTIFIER_MARKERS = frozenset({"n°", "N°", "°", "#", "no", "No"})

_NUM = r"[0-9]+(?:[.,][0-9]+)?"
NUMERIC_RE = re.compile(rf"{_NUM}(?:[-/]{_NUM})*")
_NUMERIC_SUFFIX_RE = re.compile(rf"({_NUM}(?:[-/]{_NUM})*)([^\W\d_]+[0-9]?)")

_SCAN_RE = re.compile(
    r"(?P<elision>[^\W\d_]{1,3}['’](?=[^\W_]))"
    r"|(?P<run>[^\W_]+(?:[.,/-][^\W_]+)*)"
    r"|(?P<pct>%)"
    r"|(?P<other>\S)"
)
_PIECE_RE = re.compile(rf"(?P<num>{_NUM}(?:[-/]{_NUM})*)|(?P<alpha>[^\W\d_]+)|(?P<sep>[.,/-])")
_CONNECTOR_RE = re.compile(r"([.,/-])")


class TokenKind(str, enum.Enum):
    WORD = "Word"
    QUANT = "Quant"
    CODE = "Code"
    UNIT = "Unit"
    PUNCT = "Punct"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Token:
    text: str
    span: tuple[int, int]
    kind: TokenKind

    @property
    def start(self) -> int:
        return self.span[0]

    @property
    def end(self) -> int:
        return self.span[1]


@dataclass(frozen=True)
class Scalar:
    value: float


@dataclass(frozen=True)
class Range:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"Range requires lo <= hi, got {self.lo} > {self.hi}")


@dataclass(frozen=True)
class Sequence:
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) < 3:
            raise ValueError("Sequence requires at least 3 components")


@dataclass(frozen=True)
class Date:
    day: Optional[int]
    month: int
    year: Optional[int] = None


NumericForm = Union[Scalar, Range, Sequence, Date]


@dataclass(frozen=True)
class NumericLexeme:
    raw: str
    form: NumericForm
    unit_hint: Optional[str] = None

    @property
    def components(self) -> tuple[float, ...]:
        """Measured components: one for a scalar, endpoints of a range, every value of a sequence."""
        form = self.form
        if isinstance(form, Scalar):
            return (form.value,)
        if isinstance(form, Range):
            return (form.lo, form.hi)
        if isinstance(form, Sequence):
            return form.values
        return ()


def _has_digit(text: str) -> bool:
    return any(ch.isdecimal() for ch in text)


def _is_unit(text: str, units: Iterable[str]) -> bool:
    if text in units:
        return True
    m = re.fullmatch(r"([^\W\d_]+)([23])", text)
    return bool(m and (m.group(1) in _EXPONENT_BASES or m.group(1) in units))


def classify_number_kind(
    token_text: str,
    left_neighbor: Optional[str] = None,
    right_neighbor: Optional[str] = None,
    units: Iterable[str] = DEFAULT_UNITS,
) -> TokenKind:
    """Type a digit-bearing token as Quant, Code or Unit.

    Unit-with-exponent forms (``mm2``, ``cm3``) are units; tokens mixing
    letters and digits otherwise are code numbers (``B1B2``, ``22q11``); a
    bare integer right after an identifier marker (``n° 12``) is a code.
    Everything else is quantitative.
    """
    if _is_unit(token_text, units):
        return TokenKind.UNIT
    if NUMERIC_RE.fullmatch(token_text):
        if left_neighbor in _IDENTIFIER_MARKERS and token_text.isdigit():
            return TokenKind.CODE
        return TokenKind.QUANT
    m = _NUMERIC_SUFFIX_RE.fullmatch(token_text)
    if m and _is_unit(m.group(2), units):
        return TokenKind.QUANT
    if any(ch.isalpha() for ch in token_text):
        return TokenKind.CODE
    if all(ch in "0123456789.,/-" for ch in token_text):
        return TokenKind.QUANT
    return TokenKind.CODE


def _to_float(part: str) -> float:
    return float(part.replace(",", "."))


def _parse_date(parts: list[str]) -> Optional[Date]:
    if any(not p.isdigit() for p in parts):
        return None
    nums = [int(p) for p in parts]
    if len(parts) == 2:
        a, b = nums
        if 1 <= a <= 31 and 1 <= b <= 12:
            return Date(a, b)
        if 1 <= a <= 12 and len(parts[1]) == 4 and 1900 <= b <= 2100:
            return Date(None, a, b)
        return None
    if len(parts) == 3:
        a, b, c = nums
        if 1 <= a <= 31 and 1 <= b <= 12 and len(parts[2]) in (2, 4):
            return Date(a, b, c)
    return None


def parse_numeric(token: Union[Token, str], unit_hint: Optional[str] = None) -> NumericLexeme:
    """Parse a quantitative token into Scalar, Range, Sequence or Date.

    >>> parse_numeric("50-60").form
    Range(lo=50.0, hi=60.0)
    >>> parse_numeric("3,23").form
    Scalar(value=3.23)

    Raises MalformedNumeric for digit-bearing text that matches no form,
    e.g. a blood pressure ``120/80``.
    """
    raw = token.text if isinstance(token, Token) else token
    if not NUMERIC_RE.fullmatch(raw):
        raise MalformedNumeric(f"not a numeric lexeme: {raw!r}")
    if "/" in raw:
        if "-" in raw:
            raise MalformedNumeric(f"mixed separators: {raw!r}")
        date = _parse_date(raw.split("/"))
        if date is None:
            raise MalformedNumeric(f"slash form is not a date: {raw!r}")
        return NumericLexeme(raw, date, unit_hint)
    parts = raw.split("-")
    values = tuple(_to_float(p) for p in parts)
    if len(values) == 1:
        form: NumericForm = Scalar(values[0])
    elif len(values) == 2:
        form = Range(min(values), max(values))
    else:
        form = Sequence(values)
    return NumericLexeme(raw, form, unit_hint)


@dataclass
class Tokenizer:
    """Deterministic tokenizer; the unit list is configurable."""

    units: tuple[str, ...] = field(default=DEFAULT_UNITS)

    def tokenize(self, source: str) -> list[Token]:
        tokens: list[Token] = []
        for m in _SCAN_RE.finditer(source):
            start, end = m.span()
            text = m.group()
            if m.lastgroup == "elision":
                tokens.append(Token(text, (start, end), TokenKind.WORD))
            elif m.lastgroup == "run":
                tokens.extend(self._split_run(text, start))
            elif m.lastgroup == "pct":
                tokens.append(Token(text, (start, end), TokenKind.UNIT))
            else:
                tokens.append(Token(text, (start, end), _symbol_kind(text)))
        return self._retype_neighbors(tokens)

    def _numeric_kind(self, text: str) -> TokenKind:
        try:
            parse_numeric(text)
        except MalformedNumeric:
            return TokenKind.CODE
        return TokenKind.QUANT

    def _split_run(self, run: str, offset: int) -> list[Token]:
        end = offset + len(run)
        if NUMERIC_RE.fullmatch(run):
            return [Token(run, (offset, end), self._numeric_kind(run))]
        if not _has_digit(run):
            kind = TokenKind.UNIT if run in self.units else TokenKind.WORD
            return [Token(run, (offset, end), kind)]
        if _is_unit(run, self.units):
            return [Token(run, (offset, end), TokenKind.UNIT)]
        m = _NUMERIC_SUFFIX_RE.fullmatch(run)
        if m and _is_unit(m.group(2), self.units) and self._numeric_kind(m.group(1)) is TokenKind.QUANT:
            cut = offset + len(m.group(1))
            return [
                Token(m.group(1), (offset, cut), TokenKind.QUANT),
                Token(m.group(2), (cut, end), TokenKind.UNIT),
            ]
        pieces = [p for p in _CONNECTOR_RE.split(run) if p and not _CONNECTOR_RE.fullmatch(p)]
        for piece in pieces:
            if not _has_digit(piece) or piece.isascii() and piece.isdigit():
                continue
            sm = _NUMERIC_SUFFIX_RE.fullmatch(piece)
            if _is_unit(piece, self.units) or (sm and _is_unit(sm.group(2), self.units)):
                continue
            # a code-like piece ("22q11.2", "G1P3") keeps the whole run intact
            return [Token(run, (offset, end), TokenKind.CODE)]
        return self._split_mixed(run, offset)

    def _split_mixed(self, run: str, offset: int) -> list[Token]:
        out: list[Token] = []
        for m in _PIECE_RE.finditer(run):
            s, e = offset + m.start(), offset + m.end()
            text = m.group()
            if m.lastgroup == "num":
                kind = self._numeric_kind(text)
            elif m.lastgroup == "alpha":
                kind = TokenKind.UNIT if _is_unit(text, self.units) else TokenKind.WORD
            else:
                kind = TokenKind.PUNCT
            out.append(Token(text, (s, e), kind))
        return out

    def _retype_neighbors(self, tokens: list[Token]) -> list[Token]:
        out = list(tokens)
        for i, tok in enumerate(tokens):
            if tok.kind is not TokenKind.QUANT:
                continue
            left = tokens[i - 1].text if i > 0 else None
            right = tokens[i + 1].text if i + 1 < len(tokens) else None
            kind = classify_number_kind(tok.text, left, right, self.units)
            if kind is not TokenKind.QUANT:
                out[i] = Token(tok.text, tok.span, kind)
        return out


def _symbol_kind(ch: str) -> TokenKind:
    if ch.isdecimal():
        return TokenKind.CODE
    category = unicodedata.category(ch)
    if category[0] in "PS":
        return TokenKind.PUNCT
    return TokenKind.WORD


_DEFAULT = Tokenizer()


def tokenize(source: str) -> list[Token]:
    """Tokenize with the default unit vocabulary."""
    return _DEFAULT.tokenize(source)
