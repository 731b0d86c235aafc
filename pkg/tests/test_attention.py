import csv
import io

import numpy as np
import pytest

from clinnum.attention import SENTINEL, export_attention
from clinnum.blinding import PLACEHOLDER
from clinnum.model import ModelConfig, TokenClassifier, Vocab
from clinnum.plotting import attention_heatmap

SENTENCE = "PN 3.23 Kg, APGAR 8-9-9."
WORDS = ["pn", "kg", ",", "apgar", ".", "3.23", "8-9-9"]


def model(cosim=True, blinded=True, layers=2):
    vocab = Vocab(WORDS)
    cfg = ModelConfig(vocab_size=len(vocab), dim=16, heads=4, layers=layers, dropout=0.0, max_len=32,
                      init_std=0.3, seed=1, blinded=blinded, lesa_layers=[cosim] * layers)
    return TokenClassifier(cfg, vocab)


def test_shape_and_headers():
    dump = export_attention(model(), SENTENCE, layer=1, head=2)
    L = 7
    assert dump.matrix.shape == (L + 1, L + 1)
    assert dump.tokens == [SENTINEL, "PN", PLACEHOLDER, "Kg", ",", "APGAR", PLACEHOLDER, "."]


def test_unblinded_model_keeps_numbers():
    dump = export_attention(model(blinded=False), SENTENCE, layer=0, head=0)
    assert "3.23" in dump.tokens and "8-9-9" in dump.tokens


def test_matrix_is_self_attention_plus_cosim():
    dump = export_attention(model(), SENTENCE, layer=0, head=1)
    acts = dump.activations
    np.testing.assert_array_equal(dump.matrix, acts.head("self_attn", 1) + acts.head("cosim", 1))
    np.testing.assert_allclose(acts.head("self_attn", 1).sum(axis=1), 1.0, atol=1e-12)


def test_ablated_rows_are_distributions():
    dump = export_attention(model(cosim=False), SENTENCE, layer=1, head=0)
    np.testing.assert_allclose(dump.matrix.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(dump.matrix >= 0)


def test_token_list_input():
    toks = ["PN", PLACEHOLDER, "Kg"]
    dump = export_attention(model(), toks, layer=0, head=0)
    assert dump.tokens == [SENTINEL, *toks] and dump.matrix.shape == (4, 4)


@pytest.mark.parametrize("layer, head", [(2, 0), (-1, 0), (0, 4), (0, -1)])
def test_out_of_range(layer, head):
    with pytest.raises(IndexError):
        export_attention(model(), SENTENCE, layer, head)


def test_square_csv():
    dump = export_attention(model(), SENTENCE, layer=1, head=0)
    rows = list(csv.reader(io.StringIO(dump.to_csv())))
    assert rows[0] == ["", *dump.tokens]
    assert [r[0] for r in rows[1:]] == dump.tokens
    back = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    np.testing.assert_array_equal(back, dump.matrix)


def test_long_csv():
    dump = export_attention(model(), SENTENCE, layer=1, head=3)
    rows = list(csv.DictReader(io.StringIO(dump.to_long_csv())))
    assert len(rows) == dump.matrix.size
    r = rows[9]
    assert float(r["value"]) == dump.matrix[int(r["row"]), int(r["col"])]


def test_heatmap_written(tmp_path):
    dump = export_attention(model(), SENTENCE, layer=1, head=0)
    path = attention_heatmap(dump.matrix, dump.tokens, tmp_path / "h.png", "head 0")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
