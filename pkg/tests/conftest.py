import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOAL_NOTE = (
    "Heterotaxie avec isomerisme gauche. Écho cardiaque (14/08): gradient VD-VG AP de 50-60mmHg. "
    "en attente de Chx → dérivation cavo-pulmonaire.  Suivi par Dr. F.  saturation habituelle 80-85 % "
    "Polysplénie Malrotation intestinale opéré."
)

EXAMPLE_SENTENCES = [
    "14/08:  Bonne contractilité ventriculaire gauche qualitative. Simpson de 65%.",
    "Brady ad 32 au Holter. écho coeur N s/p 1 épisode de quasi-noyade 07/2015.",
    "PN 3.23 Kg, APGAR 8-9-9.",
    "[...] FR 21 FC 100-110 FR 50 [...].",
    "délétion 22q11, B1B2 bien frappés, mère G1P3, surface 0,6 mm2 et 12 cm3",
    GOAL_NOTE,
]


def goal_note():
    from clinnum.corpus import AnnotatedNote

    spans = []
    for raw, label in (("14/08", "O"), ("50-60", "G"), ("80-85", "SO2")):
        s = GOAL_NOTE.index(raw)
        spans.append([s, s + len(raw), label])
    return AnnotatedNote.from_json({"text": GOAL_NOTE, "entities": spans})


@pytest.fixture(scope="session")
def default_corpus():
    from clinnum.synth import GenSpec, generate

    return generate(GenSpec())
