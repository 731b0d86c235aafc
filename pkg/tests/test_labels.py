import json

import numpy as np
import pytest

from clinnum.errors import DimensionMismatch
from clinnum.labels import (
    DEFAULT_KEYWORDS,
    NUM_CLASSES,
    ClassLabel,
    build_label_matrix,
    dump_keywords,
    load_keywords,
)


def test_schema():
    assert NUM_CLASSES == 8
    assert [c.name for c in ClassLabel] == ["O", "Cp", "FC", "D", "SO2", "APGAR", "G", "CIA_CIV"]
    assert ClassLabel.parse("CIA-CIV") is ClassLabel.CIA_CIV
    assert ClassLabel.parse(4) is ClassLabel.SO2


def test_default_keywords_verbatim():
    assert DEFAULT_KEYWORDS[ClassLabel.O] == ("mot", "patient", "historique")
    assert DEFAULT_KEYWORDS[ClassLabel.SO2] == ("oxygène", "O2", "sat")
    assert DEFAULT_KEYWORDS[ClassLabel.CIA_CIV] == ("cia", "civ", "inter")
    assert all(DEFAULT_KEYWORDS[c] for c in ClassLabel)


def test_keyword_file_round_trip(tmp_path):
    p = tmp_path / "kw.json"
    p.write_text(dump_keywords(DEFAULT_KEYWORDS), encoding="utf-8")
    assert load_keywords(p) == DEFAULT_KEYWORDS
    assert json.loads(p.read_text(encoding="utf-8"))["Cp"] == ["fraction", "ejection", "raccourcissement"]


def _table(dim, rng):
    words = sorted({w for kws in DEFAULT_KEYWORDS.values() for w in kws} | {"a", "b"})
    return {w: rng.normal(size=dim) for w in words}


def test_single_keyword_rows_are_the_embedding():
    rng = np.random.default_rng(0)
    emb = _table(5, rng)
    kw = {c: (f,) for c, f in zip(ClassLabel, ["a", "b", "mot", "sat", "cia", "civ", "inter", "O2"])}
    X = build_label_matrix(kw, emb.__getitem__, 5)
    for c, (w,) in kw.items():
        np.testing.assert_array_equal(X[c], emb[w])


def test_mean_rows_against_elementwise_average():
    rng = np.random.default_rng(1)
    emb = _table(4, rng)
    kw = dict(DEFAULT_KEYWORDS)
    kw[ClassLabel.O] = ("a", "b")
    kw[ClassLabel.Cp] = ("a", "a")
    X = build_label_matrix(kw, emb.__getitem__, 4)
    expected = [(emb["a"][i] + emb["b"][i]) / 2 for i in range(4)]
    np.testing.assert_allclose(X[ClassLabel.O], expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(X[ClassLabel.Cp], emb["a"], rtol=0, atol=1e-15)
    assert X.shape == (8, 4)


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    emb = _table(6, rng)
    kw = dict(DEFAULT_KEYWORDS)
    X1 = build_label_matrix(kw, emb.__getitem__, 6)
    kw = {c: tuple(reversed(v)) for c, v in kw.items()}
    X2 = build_label_matrix(kw, emb.__getitem__, 6)
    np.testing.assert_allclose(X1, X2, rtol=0, atol=1e-15)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        build_label_matrix(DEFAULT_KEYWORDS, lambda w: np.zeros(3), 4)
