import pytest

from clinnum.blinding import PLACEHOLDER, blind, blind_text, project_predictions
from clinnum.errors import LengthMismatch
from clinnum.labels import ClassLabel
from clinnum.pipeline import gold_values
from clinnum.tokenizer import Range, TokenKind, tokenize

from conftest import EXAMPLE_SENTENCES, goal_note


def texts(tokens):
    return [t.text for t in tokens]


def test_single_scalar():
    b = blind(tokenize("FC 120"))
    assert texts(b.tokens) == ["FC", "nombre"]
    assert len(b.alignment) == 1


def test_weight_and_apgar_sentence():
    assert blind_text("PN 3.23 Kg, APGAR 8-9-9.")[0] == "PN nombre Kg, APGAR nombre."


def test_limitations_excerpt():
    assert blind_text("[...] FR 21 FC 100-110 FR 50 [...].")[0] == "[...] FR nombre FC nombre FR nombre [...]."


@pytest.mark.parametrize("text", ["délétion 22q11", "B1B2 G1P3"])
def test_codes_untouched(text):
    toks = tokenize(text)
    assert blind(toks).tokens == toks


def test_units_untouched():
    b = blind(tokenize("12 cm3 et 4 mm2"))
    assert texts(b.tokens) == ["nombre", "cm3", "et", "nombre", "mm2"]


@pytest.mark.parametrize("text", EXAMPLE_SENTENCES)
def test_properties(text):
    toks = tokenize(text)
    b = blind(toks)
    assert len(b.tokens) == len(toks)
    assert len(b.alignment) == sum(t.kind is TokenKind.QUANT for t in toks)
    for e in b.alignment:
        assert b.tokens[e.index].text == PLACEHOLDER
    for before, after in zip(toks, b.tokens):
        if before.kind is not TokenKind.QUANT:
            assert before == after
    again = blind(b.tokens)
    assert again.tokens == b.tokens and again.alignment == []
    assert b.restore() == toks


def test_custom_placeholder():
    assert texts(blind(tokenize("sat 90%"), "NUM").tokens) == ["sat", "NUM", "%"]


def test_blind_text_idempotent_and_consistent():
    for s in EXAMPLE_SENTENCES:
        once, values = blind_text(s)
        twice, none = blind_text(once)
        assert twice == once and none == []
        assert texts(tokenize(once)) == texts(blind(tokenize(s)).tokens)
        for v in values:
            assert once[slice(*v["span"])] == PLACEHOLDER
            assert s[slice(*v["source_span"])] == v["raw"]


def test_project_predictions_lookup():
    b = blind(tokenize("saturation habituelle 80-85 %"))
    labels = [ClassLabel.O] * len(b.tokens)
    labels[2] = ClassLabel.SO2
    (row,) = project_predictions(b, labels)
    assert row.lexeme.form == Range(80, 85)
    assert row.label is ClassLabel.SO2
    assert row.span == (22, 27)


def test_project_predictions_empty_and_mismatch():
    b = blind(tokenize("pas de souffle"))
    assert project_predictions(b, [ClassLabel.O] * 3) == []
    with pytest.raises(LengthMismatch):
        project_predictions(b, [ClassLabel.O] * 2)


def test_goal_note_rows():
    _, values = gold_values(goal_note())
    assert [(v.lexeme.raw, v.label.name) for v in values] == [("14/08", "O"), ("50-60", "G"), ("80-85", "SO2")]


def test_generated_corpus_blinding(default_corpus):
    for note in default_corpus:
        toks = tokenize(note.text)
        b = blind(toks)
        spans = {e.span for e in b.alignment}
        for s, e, _ in note.entities:
            assert (s, e) in spans
        assert len(b.tokens) == len(toks)
        assert blind(b.tokens).tokens == b.tokens
        assert b.restore() == toks
