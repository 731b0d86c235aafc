import numpy as np
import pytest

from clinnum.errors import OutOfVocab, SequenceTooLong, ShapeError
from clinnum.labels import ClassLabel
from clinnum.model import ModelConfig, TokenClassifier, Vocab, cross_entropy

from oracles import central_difference, plain_attention, relative_error

WORDS = "fc nombre bpm sat % gradient mmhg apgar civ mm diamètre fe simpson de à".split()


def micro(seed=0, dim=8, heads=2, layers=2, cosim=True, max_len=12, dropout=0.0, std=0.3):
    vocab = Vocab(WORDS)
    cfg = ModelConfig(vocab_size=len(vocab), dim=dim, heads=heads, layers=layers, dropout=dropout,
                      max_len=max_len, init_std=std, seed=seed, lesa_layers=[cosim] * layers)
    return TokenClassifier(cfg, vocab)


def test_vocab_reserved_ids():
    v = Vocab(["FC"])
    assert v.encode(["[PAD]", "zzz", "nombre", "fc", "FC"]) == [0, 1, 2, 3, 3]


def test_config_invariants():
    with pytest.raises(ShapeError):
        ModelConfig(vocab_size=10, dim=10, heads=4)
    with pytest.raises(ShapeError):
        ModelConfig(vocab_size=10, layers=0)
    with pytest.raises(ShapeError):
        ModelConfig(vocab_size=10, layers=2, lesa_layers=[True])


def test_embed_tokens():
    m = micro()
    assert m.embed_tokens([]).shape == (1, 8)
    E = m.embed_tokens([3, 4, 5])
    assert E.shape == (4, 8)
    np.testing.assert_array_equal(E[0], m.params["sentinel"])
    np.testing.assert_array_equal(E[2], m.params["tok_emb"][4])
    with pytest.raises(OutOfVocab):
        m.embed_tokens([len(m.vocab)])


def test_one_hot_table_lookup():
    m = micro()
    m.params["tok_emb"] = np.eye(len(m.vocab), 8)
    E = m.embed_tokens([5])
    np.testing.assert_array_equal(E[1], np.eye(len(m.vocab), 8)[5])


def test_forward_shapes_and_valid_argmax():
    m = micro()
    ids = m.vocab.encode(["fc", "nombre", "bpm", "sat", "nombre", "%", "de"])
    logits = m.forward(ids)
    assert logits.shape == (7, 8)
    assert np.all(np.isfinite(logits))
    assert set(m.predict(ids)) <= set(range(8))


def test_sequence_too_long():
    m = micro(max_len=4)
    with pytest.raises(SequenceTooLong):
        m.forward([3] * 5)


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))


def plain_transformer(m, ids):
    """Reference encoder with ordinary attention, rebuilt from the parameter dict."""
    p, c = m.params, m.config
    X = np.vstack([p["sentinel"], p["tok_emb"][ids]]) + p["pos_emb"][: len(ids) + 1]
    for i in range(c.layers):
        a = plain_attention(X, p[f"l{i}.W_Q"], p[f"l{i}.W_K"], p[f"l{i}.W_V"], c.heads)
        h = _ln(X + a, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
        f = _gelu(h @ p[f"l{i}.W1"] + p[f"l{i}.b1"]) @ p[f"l{i}.W2"] + p[f"l{i}.b2"]
        X = _ln(h + f, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
    return _ln(X[1:], p["head.ln_g"], p["head.ln_b"]) @ p["head.W"] + p["head.b"]


@pytest.mark.parametrize("seed", range(5))
def test_ablated_model_is_plain_transformer(seed):
    m = micro(seed, cosim=False)
    ids = np.random.default_rng(seed).integers(0, len(m.vocab), size=9)
    np.testing.assert_allclose(m.forward(ids), plain_transformer(m, ids), atol=1e-10, rtol=0)


def test_cosim_changes_output():
    a, b = micro(1, cosim=True), micro(1, cosim=False)
    ids = [3, 2, 4]
    assert not np.allclose(a.forward(ids), b.forward(ids))


def test_label_matrix_is_keyword_mean():
    m = micro()
    fe = m.params["tok_emb"][m.vocab.encode(["fraction", "ejection", "raccourcissement"])].mean(axis=0)
    np.testing.assert_allclose(m.label_matrix[ClassLabel.Cp], fe, atol=1e-15)


def test_cross_entropy_ignores_padding():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(2, 3, 8))
    labels = rng.integers(0, 8, size=(2, 3))
    mask = np.array([[1, 1, 0], [1, 0, 0]], dtype=bool)
    loss, d = cross_entropy(logits, labels, mask)
    logits2 = logits.copy()
    logits2[~mask] += 100.0
    assert cross_entropy(logits2, labels, mask)[0] == pytest.approx(loss, abs=1e-12)
    assert np.all(d[~mask] == 0)


@pytest.mark.parametrize("seed", range(20))
def test_full_model_gradient(seed):
    m = micro(seed, max_len=6)
    rng = np.random.default_rng(seed)
    B, L = 2, 5
    ids = rng.integers(0, len(m.vocab), size=(B, L))
    labels = rng.integers(0, 8, size=(B, L))
    mask = np.ones((B, L), dtype=bool)
    mask[1, 3:] = False

    def loss():
        return m.loss(ids, labels, mask)

    _, grads = m.loss_and_grads(ids, labels, mask)
    worst = 0.0
    for name, arr in m.params.items():
        num = central_difference(loss, arr, 1e-5)
        if np.linalg.norm(num) + np.linalg.norm(grads[name]) < 1e-11:
            continue
        worst = max(worst, relative_error(grads[name], num))
    assert worst <= 1e-3


def test_checkpoint_round_trip(tmp_path):
    m = micro(3)
    path = tmp_path / "m.npz"
    m.save(path)
    m2 = TokenClassifier.load(path)
    ids = [3, 2, 4, 5]
    np.testing.assert_array_equal(m.forward(ids), m2.forward(ids))
    assert m2.vocab.itos == m.vocab.itos
    assert m2.config == m.config
