"""The eight-class label schema, keyword table, and label-embedding matrix."""

from __future__ import annotations

import enum
import json
from pathlib import Path
from typing import Callable, Mapping, Union

import numpy as np

from .errors import DimensionMismatch


class ClassLabel(enum.IntEnum):
    """Class indices are fixed: O=0 ... CIA_CIV=7."""

    O = 0
    Cp = 1
    FC = 2
    D = 3
    SO2 = 4
    APGAR = 5
    G = 6
    CIA_CIV = 7

    @classmethod
    def parse(cls, name: Union[str, int, "ClassLabel"]) -> "ClassLabel":
        if isinstance(name, ClassLabel):
            return name
        if isinstance(name, int):
            return cls(name)
        key = name.strip().replace("-", "_").replace("/", "_")
        aliases = {"CIA_CIV": cls.CIA_CIV, "CP": cls.Cp, "AGPR": cls.APGAR}
        if key in cls.__members__:
            return cls[key]
        if key.upper() in aliases:
            return aliases[key.upper()]
        raise ValueError(f"unknown class label: {name!r}")


NUM_CLASSES = len(ClassLabel)

DESCRIPTIONS = {
    ClassLabel.O: "Divers",
    ClassLabel.Cp: "Contractilité",
    ClassLabel.FC: "Fréquence cardiaque",
    ClassLabel.D: "Diamètre artère pulmonaire",
    ClassLabel.SO2: "Saturation en oxygène",
    ClassLabel.APGAR: "APGAR",
    ClassLabel.G: "Gradient",
    ClassLabel.CIA_CIV: "CIA-CIV",
}

# Representative keywords per class, kept verbatim (accents included or not).
DEFAULT_KEYWORDS: dict[ClassLabel, tuple[str, ...]] = {
    ClassLabel.O: ("mot", "patient", "historique"),
    ClassLabel.Cp: ("fraction", "ejection", "raccourcissement"),
    ClassLabel.FC: ("cardiaque", "coeur", "frequence"),
    ClassLabel.D: ("diamètre", "pulmonaire", "artère"),
    ClassLabel.SO2: ("oxygène", "O2", "sat"),
    ClassLabel.APGAR: ("apgar", "minute", "nombre"),
    ClassLabel.G: ("gradient", "pulmonaire", "ventricule"),
    ClassLabel.CIA_CIV: ("cia", "civ", "inter"),
}

KeywordTable = Mapping[ClassLabel, tuple[str, ...]]


def load_keywords(path: Union[str, Path]) -> dict[ClassLabel, tuple[str, ...]]:
    """Read a keyword table from JSON (``{"Cp": ["fraction", ...], ...}``)."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    table = {ClassLabel.parse(k): tuple(v) for k, v in raw.items()}
    validate_keywords(table)
    return table


def dump_keywords(table: KeywordTable) -> str:
    return json.dumps({c.name: list(table[c]) for c in ClassLabel}, ensure_ascii=False, indent=2)


def validate_keywords(table: KeywordTable) -> None:
    missing = [c.name for c in ClassLabel if not table.get(c)]
    if missing:
        raise ValueError(f"every class needs at least one keyword; missing: {missing}")


def build_label_matrix(
    keywords: KeywordTable,
    embed: Callable[[str], np.ndarray],
    dim: int,
) -> np.ndarray:
    """Stack per-class mean keyword embeddings into an (8, dim) matrix.

    ``embed`` maps a keyword to its initial embedding.  Multi-piece keywords
    are expected to be averaged over their pieces by ``embed`` itself.
    """
    validate_keywords(keywords)
    rows = np.zeros((NUM_CLASSES, dim), dtype=np.float64)
    for cls in ClassLabel:
        vecs = []
        for word in keywords[cls]:
            v = np.asarray(embed(word), dtype=np.float64)
            if v.shape != (dim,):
                raise DimensionMismatch(f"embedding of {word!r} has shape {v.shape}, expected ({dim},)")
            vecs.append(v)
        rows[cls] = np.mean(vecs, axis=0)
    if not np.all(np.isfinite(rows)):
        raise DimensionMismatch("label matrix has non-finite entries")
    return rows
