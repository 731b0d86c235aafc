"""Synthetic French cardiology note segments with gold numeric annotations.

Each generated note is one short segment holding a single annotated
measurement (one of the seven measured classes) plus out-of-class numbers
(dates, weights, respiratory rates ...) and filler clauses.  Measured classes
are allotted by exact quota over the whole corpus, so class frequencies track
the configured weights up to rounding.  Every note draws from its own
generator seeded by ``(seed, note_index)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import AnnotatedNote
from .criticality import PatientContext
from .errors import TemplateError
from .labels import ClassLabel
from .tokenizer import TokenKind, tokenize

# reference annotated class sizes: small and heavily imbalanced, O dominating
DEFAULT_CLASS_COUNTS = {
    ClassLabel.Cp: 21, ClassLabel.FC: 80, ClassLabel.D: 57, ClassLabel.SO2: 143,
    ClassLabel.APGAR: 130, ClassLabel.G: 41, ClassLabel.CIA_CIV: 58, ClassLabel.O: 27387,
}


@dataclass(frozen=True)
class Slot:
    """How to draw one numeric slot.

    kind: int | dec | range | seq | date | monthyear
    """

    kind: str
    lo: float = 0
    hi: float = 0
    digits: int = 0
    count: int = 3


@dataclass(frozen=True)
class Template:
    label: ClassLabel
    pattern: str  # "{v}" is the annotated value, "{o}", "{o2}" out-of-class numbers
    slots: dict = field(default_factory=dict)


def _t(label, pattern, **slots):
    return Template(label, pattern, slots)


I = lambda lo, hi: Slot("int", lo, hi)  # noqa: E731
F = lambda lo, hi, d=1: Slot("dec", lo, hi, d)  # noqa: E731
R = lambda lo, hi: Slot("range", lo, hi)  # noqa: E731

MEASURE_TEMPLATES: tuple[Template, ...] = (
    # contractility
    _t(ClassLabel.Cp, "Simpson de {v}%", v=I(25, 75)),
    _t(ClassLabel.Cp, "bonne contractilité, FE {v}%", v=I(45, 75)),
    _t(ClassLabel.Cp, "fraction d'éjection à {v} %", v=I(20, 80)),
    _t(ClassLabel.Cp, "FE du VG estimée à {v}%", v=I(20, 80)),
    _t(ClassLabel.Cp, "fraction de raccourcissement de {v}%", v=I(10, 50)),
    _t(ClassLabel.Cp, "FR {v}% en mode TM", v=I(15, 45)),
    _t(ClassLabel.Cp, "dysfonction VG avec fraction d'éjection {v}%", v=I(15, 45)),
    # heart rate
    _t(ClassLabel.FC, "FC {v} bpm", v=I(30, 220)),
    _t(ClassLabel.FC, "fréquence cardiaque à {v}/min", v=I(40, 200)),
    _t(ClassLabel.FC, "tachycarde à {v} bpm", v=I(150, 220)),
    _t(ClassLabel.FC, "Brady ad {v} au Holter", v=I(30, 60)),
    _t(ClassLabel.FC, "rythme sinusal, FC entre {v} bpm", v=R(60, 180)),
    _t(ClassLabel.FC, "FC de base {v}", v=I(60, 180)),
    _t(ClassLabel.FC, "pouls à {v} battements par minute", v=I(50, 200)),
    # pulmonary artery diameter
    _t(ClassLabel.D, "diamètre de l'artère pulmonaire {v} mm", v=F(3, 16)),
    _t(ClassLabel.D, "AP de {v}mm de diamètre", v=F(3, 16)),
    _t(ClassLabel.D, "artère pulmonaire dilatée à {v} mm", v=F(8, 20)),
    _t(ClassLabel.D, "tronc pulmonaire mesuré à {v} mm", v=F(3, 16)),
    _t(ClassLabel.D, "diamètre AP {v} mm (Z-score {o})", v=F(3, 16), o=F(0, 3)),
    # oxygen saturation
    _t(ClassLabel.SO2, "sat {v}%", v=I(60, 100)),
    _t(ClassLabel.SO2, "saturation habituelle {v} %", v=R(70, 100)),
    _t(ClassLabel.SO2, "SpO2 {v}% à l'air ambiant", v=I(60, 100)),
    _t(ClassLabel.SO2, "saturation en oxygène à {v}%", v=I(60, 100)),
    _t(ClassLabel.SO2, "désaturation jusqu'à {v}% sous O2", v=I(55, 90)),
    _t(ClassLabel.SO2, "sat entre {v}% selon les pleurs", v=R(65, 100)),
    # APGAR
    _t(ClassLabel.APGAR, "APGAR {v}", v=Slot("seq", 0, 10, count=3)),
    _t(ClassLabel.APGAR, "Apgar {v} à 1-5-10 minutes", v=Slot("seq", 0, 10, count=3)),
    _t(ClassLabel.APGAR, "score d'APGAR {v}", v=R(0, 10)),
    _t(ClassLabel.APGAR, "APGAR à {v} à {o} minutes", v=I(0, 10), o=I(1, 10)),
    # gradients
    _t(ClassLabel.G, "gradient VD-VG AP de {v}mmHg", v=R(10, 90)),
    _t(ClassLabel.G, "gradient max {v} mmHg", v=I(5, 100)),
    _t(ClassLabel.G, "gradient pulmonaire moyen {v} mmHg", v=I(5, 80)),
    _t(ClassLabel.G, "gradient VG-Ao mesuré à {v} mmHg", v=I(5, 100)),
    _t(ClassLabel.G, "gradient de pointe transventriculaire {v} mmHg", v=I(5, 100)),
    # septal defects
    _t(ClassLabel.CIA_CIV, "CIV de {v} mm", v=F(1, 20)),
    _t(ClassLabel.CIA_CIV, "CIA ostium secundum {v} mm", v=F(1, 25)),
    _t(ClassLabel.CIA_CIV, "CIV périmembraneuse {v}mm", v=I(2, 15)),
    _t(ClassLabel.CIA_CIV, "communication inter-ventriculaire de {v} mm", v=F(1, 20)),
    _t(ClassLabel.CIA_CIV, "shunt G-D par CIA de {v} mm", v=F(1, 20)),
)

OUT_OF_CLASS_TEMPLATES: tuple[Template, ...] = (
    _t(ClassLabel.O, "Écho cardiaque ({o})", o=Slot("date")),
    _t(ClassLabel.O, "depuis le {o}", o=Slot("date")),
    _t(ClassLabel.O, "quasi-noyade {o}", o=Slot("monthyear")),
    _t(ClassLabel.O, "PN {o} Kg", o=F(1, 4.5, 2)),
    _t(ClassLabel.O, "poids {o} kg", o=F(2, 40)),
    _t(ClassLabel.O, "FR {o}", o=I(15, 60)),
    _t(ClassLabel.O, "âgé de {o} ans", o=I(1, 17)),
    _t(ClassLabel.O, "né à {o} semaines", o=I(28, 41)),
    _t(ClassLabel.O, "{o} épisodes de malaise", o=I(2, 9)),
    _t(ClassLabel.O, "lactates {o}", o=F(0.5, 9)),
    _t(ClassLabel.O, "température {o}", o=F(35, 40.5)),
    _t(ClassLabel.O, "Hb {o} g", o=I(70, 180)),
    _t(ClassLabel.O, "hospitalisé {o} jours", o=I(2, 30)),
)

FILLERS: tuple[str, ...] = (
    "Heterotaxie avec isomerisme gauche",
    "en attente de Chx → dérivation cavo-pulmonaire",
    "Suivi par Dr. F.",
    "Polysplénie Malrotation intestinale opéré",
    "Née à terme, grossesse et accouchement sans complication",
    "patient connu pour cardiopathie congénitale",
    "historique de bronchiolite",
    "délétion 22q11 confirmée",
    "B1B2 bien frappés, pas de souffle",
    "mère G1P3",
    "trisomie 21",
    "TA 120/80 au repos",
    "J3 post-opératoire",
    "surface corporelle 0,6 m2",
    "pas de signe d'insuffisance cardiaque",
    "bon état général, eupnéique",
    "transfert de l'urgence pour évaluation",
    "prise en charge aux soins intensifs",
    "examen neurologique normal",
    "pas d'épanchement péricardique",
)

ABBREVIATIONS = (
    ("fréquence cardiaque", "FC"),
    ("saturation", "sat"),
    ("fraction d'éjection", "FE"),
    ("gradient", "grad"),
    ("diamètre", "diam"),
    ("communication inter-ventriculaire", "CIV"),
    ("artère pulmonaire", "AP"),
)
_ACCENTS = str.maketrans("éèêàâôîç", "eeeaaoic")
_SLOT_RE = re.compile(r"\{(v|o2?)\}")


@dataclass
class GenSpec:
    note_count: int = 1000
    # weights of the seven measured classes; the O weight is the background
    # share of the source data and does not drive entity sampling
    class_frequency: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_COUNTS))
    templates: Sequence[Template] = MEASURE_TEMPLATES
    distractors: Sequence[Template] = OUT_OF_CLASS_TEMPLATES
    fillers: Sequence[str] = FILLERS
    abbreviation_rate: float = 0.15
    typo_rate: float = 0.02
    accent_drop_rate: float = 0.1
    min_tokens: int = 12
    max_distractors: int = 2
    seed: int = 0

    def __post_init__(self):
        self.class_frequency = {ClassLabel.parse(k): float(v) for k, v in self.class_frequency.items()}
        if any(v <= 0 for v in self.class_frequency.values()):
            raise ValueError("class weights must be positive")
        missing = {t.label for t in self.templates if t.label is not ClassLabel.O} ^ set(self.measured_classes)
        if missing:
            raise ValueError(f"templates and weights disagree on classes: {sorted(c.name for c in missing)}")

    @property
    def measured_classes(self) -> list[ClassLabel]:
        return [c for c in ClassLabel if c is not ClassLabel.O and c in self.class_frequency]

    def target_shares(self) -> dict[ClassLabel, float]:
        w = {c: self.class_frequency[c] for c in self.measured_classes}
        total = sum(w.values())
        return {c: v / total for c, v in w.items()}


def allot(weights: dict, total: int) -> dict:
    """Largest-remainder apportionment of ``total`` items by weight."""
    s = sum(weights.values())
    exact = {k: total * v / s for k, v in weights.items()}
    out = {k: int(np.floor(x)) for k, x in exact.items()}
    rest = total - sum(out.values())
    for k in sorted(exact, key=lambda k: (-(exact[k] - out[k]), list(weights).index(k)))[:rest]:
        out[k] += 1
    return out


def _fmt_dec(x: float, digits: int, rng) -> str:
    s = f"{x:.{digits}f}"
    return s.replace(".", ",") if rng.random() < 0.3 else s


def draw_slot(slot: Slot, rng: np.random.Generator) -> str:
    if slot.kind == "int":
        return str(int(rng.integers(slot.lo, slot.hi + 1)))
    if slot.kind == "dec":
        return _fmt_dec(rng.uniform(slot.lo, slot.hi), slot.digits or 1, rng)
    if slot.kind == "range":
        lo = int(rng.integers(slot.lo, slot.hi))
        hi = int(rng.integers(lo + 1, min(slot.hi, lo + max(2, (slot.hi - slot.lo) // 4)) + 1))
        return f"{lo}-{hi}"
    if slot.kind == "seq":
        vals = [int(rng.integers(max(slot.lo, 2), slot.hi + 1))]
        while len(vals) < slot.count:
            vals.append(int(min(slot.hi, vals[-1] + rng.integers(0, 3))))
        return "-".join(str(v) for v in vals)
    if slot.kind == "date":
        return f"{int(rng.integers(1, 29)):02d}/{int(rng.integers(1, 13)):02d}"
    if slot.kind == "monthyear":
        return f"{int(rng.integers(1, 13)):02d}/{int(rng.integers(2005, 2024))}"
    raise TemplateError(f"unknown slot kind {slot.kind!r}")


def _typo(word: str, rng) -> str:
    i = int(rng.integers(1, len(word) - 1))
    op = rng.integers(3)
    if op == 0:
        return word[:i] + word[i + 1:]
    if op == 1:
        return word[:i] + word[i + 1] + word[i] + word[i + 2:]
    return word[:i] + word[i] + word[i:]


def _noisy(text: str, spec: GenSpec, rng) -> str:
    """Abbreviations, dropped accents and typos on the literal (non-slot) text."""
    for full, short in ABBREVIATIONS:
        if full in text and rng.random() < spec.abbreviation_rate:
            text = text.replace(full, short)
    if rng.random() < spec.accent_drop_rate:
        text = text.translate(_ACCENTS)
    words = text.split(" ")
    for j, w in enumerate(words):
        if len(w) >= 5 and w.isalpha() and rng.random() < spec.typo_rate:
            words[j] = _typo(w, rng)
    return " ".join(words)


def _render(template: Template, spec: GenSpec, rng) -> list[tuple[str, Optional[ClassLabel]]]:
    """Template -> pieces of (text, label); slot pieces carry their label."""
    pieces: list[tuple[str, Optional[ClassLabel]]] = []
    pos = 0
    for m in _SLOT_RE.finditer(template.pattern):
        if m.start() > pos:
            pieces.append((_noisy(template.pattern[pos:m.start()], spec, rng), None))
        name = m.group(1)
        value = draw_slot(template.slots[name], rng)
        pieces.append((value, template.label if name == "v" else ClassLabel.O))
        pos = m.end()
    if pos < len(template.pattern):
        pieces.append((_noisy(template.pattern[pos:], spec, rng), None))
    return pieces


def _meta(rng) -> PatientContext:
    age = float(rng.choice([0, int(rng.integers(1, 12)), int(rng.integers(12, 216))]))
    years = age / 12.0
    weight = 3.3 + 0.55 * age if age < 12 else 9.5 + 2.3 * (years - 1)
    weight *= rng.uniform(0.85, 1.15)
    return PatientContext(age_months=age, weight_kg=round(weight, 1))


def generate_note(spec: GenSpec, label: ClassLabel, index: int) -> AnnotatedNote:
    rng = np.random.default_rng([spec.seed, index])
    pool = [t for t in spec.templates if t.label is label]
    clauses = [_render(pool[int(rng.integers(len(pool)))], spec, rng)]
    for _ in range(int(rng.integers(0, spec.max_distractors + 1))):
        t = spec.distractors[int(rng.integers(len(spec.distractors)))]
        clauses.append(_render(t, spec, rng))
    n_fill = int(rng.integers(0, 3))
    for _ in range(n_fill):
        clauses.append([(_noisy(spec.fillers[int(rng.integers(len(spec.fillers)))], spec, rng), None)])
    order = rng.permutation(len(clauses))
    clauses = [clauses[i] for i in order]
    # pad short segments with filler so every value has enough context
    while sum(len(tokenize("".join(p for p, _ in c))) for c in clauses) < spec.min_tokens:
        clauses.append([(_noisy(spec.fillers[int(rng.integers(len(spec.fillers)))], spec, rng), None)])

    text, entities = "", []
    for k, clause in enumerate(clauses):
        if k:
            text += [". ", ", ", " ; ", " "][int(rng.integers(4))]
        for piece, lab in clause:
            if lab is not None:
                entities.append((len(text), len(text) + len(piece), lab))
            text += piece
    if not text.endswith("."):
        text += "."
    note = AnnotatedNote(text, entities, _meta(rng))
    _check_alignment(note, index)
    return note


def _check_alignment(note: AnnotatedNote, index: int) -> None:
    spans = {t.span for t in tokenize(note.text) if t.kind is TokenKind.QUANT}
    for s, e, lab in note.entities:
        if (s, e) not in spans:
            raise TemplateError(f"note {index}: value {note.text[s:e]!r} does not tokenize as one quantitative token")


def generate(spec: GenSpec) -> list[AnnotatedNote]:
    """Deterministic corpus of ``spec.note_count`` notes."""
    if spec.note_count <= 0:
        return []
    quota = allot({c: spec.class_frequency[c] for c in spec.measured_classes}, spec.note_count)
    labels = [c for c, k in quota.items() for _ in range(k)]
    order = np.random.default_rng(spec.seed).permutation(len(labels))
    return [generate_note(spec, labels[j], i) for i, j in enumerate(order)]
