"""Toy-scale transformer token classifier whose attention sublayers are LESA layers.

Per layer: attention -> residual -> LayerNorm -> feed-forward (GELU) ->
residual -> LayerNorm.  The head is LayerNorm followed by an affine map to
the 8 classes.  Everything, including the backward pass, is plain numpy in
float64.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .blinding import PLACEHOLDER
from .errors import OutOfVocab, SequenceTooLong, ShapeError
from .labels import DEFAULT_KEYWORDS, NUM_CLASSES, ClassLabel, KeywordTable, build_label_matrix
from .lesa import LesaActivations, LesaParams, lesa_backward, lesa_forward
from .tokenizer import tokenize

CHECKPOINT_FORMAT = "clinnum-checkpoint/1"
LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


class Vocab:
    """Closed-world vocabulary; lookups are case-folded."""

    PAD = "[PAD]"
    UNK = "[UNK]"

    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = [self.PAD, self.UNK]
        self.stoi: dict[str, int] = {self.PAD: 0, self.UNK: 1}
        self.add(PLACEHOLDER)
        for w in words:
            self.add(w)

    @classmethod
    def norm(cls, word: str) -> str:
        return word if word in (cls.PAD, cls.UNK) else word.lower()

    def add(self, word: str) -> int:
        key = self.norm(word)
        if key not in self.stoi:
            self.stoi[key] = len(self.itos)
            self.itos.append(key)
        return self.stoi[key]

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return self.norm(word) in self.stoi

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.stoi.get(self.norm(w), self.unk_id) for w in words]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for sent in sentences:
            for w in sent:
                k = cls.norm(w)
                counts[k] = counts.get(k, 0) + 1
        return cls(sorted(w for w, c in counts.items() if c >= min_count))


@dataclass
class ModelConfig:
    vocab_size: int
    dim: int = 32
    heads: int = 4
    layers: int = 2
    n_classes: int = NUM_CLASSES
    dropout: float = 0.1
    max_len: int = 128
    ffn_mult: int = 4
    init_std: float = 0.02
    seed: int = 0
    # whether the model reads blinded text (numbers replaced by the placeholder)
    blinded: bool = True
    # per-layer LESA switch; None enables the CoSim term in every layer
    lesa_layers: Optional[list[bool]] = None

    def __post_init__(self):
        if self.heads < 1 or self.dim % self.heads:
            raise ShapeError(f"dim {self.dim} must equal heads * head_dim (heads={self.heads})")
        if self.layers < 1:
            raise ShapeError("layer count must be at least 1")
        if self.lesa_layers is None:
            self.lesa_layers = [True] * self.layers
        if len(self.lesa_layers) != self.layers:
            raise ShapeError("lesa_layers must have one flag per layer")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layer_norm_backward(dy: np.ndarray, g: np.ndarray, cache):
    xhat, inv = cache
    n = xhat.shape[-1]
    dxhat = dy * g
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True))
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def gelu(x: np.ndarray):
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def gelu_backward(dy: np.ndarray, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _dropout(x: np.ndarray, rate: float, rng: Optional[np.random.Generator]):
    if rng is None or rate <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def keyword_embedder(vocab: Vocab, table: np.ndarray):
    """Embed a keyword as the mean of its tokenizer pieces' embeddings."""

    def embed(keyword: str) -> np.ndarray:
        pieces = [t.text for t in tokenize(keyword)] or [keyword]
        return table[vocab.encode(pieces)].mean(axis=0)

    return embed


class TokenClassifier:
    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocab,
        keywords: KeywordTable = DEFAULT_KEYWORDS,
        params: Optional[dict[str, np.ndarray]] = None,
        label_matrix: Optional[np.ndarray] = None,
    ):
        if config.vocab_size != len(vocab):
            raise ShapeError(f"config vocab_size {config.vocab_size} != vocab length {len(vocab)}")
        self.config = config
        self.vocab = vocab
        self.keywords = dict(keywords)
        self.params = params if params is not None else self._init_params()
        if label_matrix is None:
            # computed once from the initial embedding table and shared by every layer
            label_matrix = build_label_matrix(
                self.keywords, keyword_embedder(vocab, self.params["tok_emb"]), config.dim
            )
        self.label_matrix = np.asarray(label_matrix, dtype=np.float64)

    def _init_params(self) -> dict[str, np.ndarray]:
        c = self.config
        rng = np.random.default_rng(c.seed)
        std, D, F = c.init_std, c.dim, c.dim * c.ffn_mult
        p = {
            "tok_emb": rng.normal(0, std, (c.vocab_size, D)),
            "sentinel": rng.normal(0, std, D),
            "pos_emb": rng.normal(0, std, (c.max_len + 1, D)),
        }
        for i in range(c.layers):
            for w in ("W_K", "W_Q", "W_V"):
                p[f"l{i}.{w}"] = rng.normal(0, std, (D, D))
            p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"] = np.ones(D), np.zeros(D)
            p[f"l{i}.W1"], p[f"l{i}.b1"] = rng.normal(0, std, (D, F)), np.zeros(F)
            p[f"l{i}.W2"], p[f"l{i}.b2"] = rng.normal(0, std, (F, D)), np.zeros(D)
            p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"] = np.ones(D), np.zeros(D)
        p["head.ln_g"], p["head.ln_b"] = np.ones(D), np.zeros(D)
        p["head.W"], p["head.b"] = rng.normal(0, std, (D, c.n_classes)), np.zeros(c.n_classes)
        return p

    def lesa_params(self, layer: int) -> LesaParams:
        p = self.params
        return LesaParams(p[f"l{layer}.W_K"], p[f"l{layer}.W_Q"], p[f"l{layer}.W_V"], self.config.heads)

    def copy(self) -> "TokenClassifier":
        return TokenClassifier(
            self.config, self.vocab, self.keywords,
            params={k: v.copy() for k, v in self.params.items()},
            label_matrix=self.label_matrix.copy(),
        )

    # -- forward ---------------------------------------------------------

    def embed_tokens(self, token_ids: Sequence[int]) -> np.ndarray:
        """(L+1, D): sentinel row then one embedding row per token."""
        ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise OutOfVocab(f"token id outside [0, {self.config.vocab_size})")
        return np.vstack([self.params["sentinel"][None], self.params["tok_emb"][ids]])

    def forward(self, token_ids: Sequence[int]) -> np.ndarray:
        """Per-token logits (L, 8); the sentinel row is dropped."""
        ids = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
        logits, _ = self.forward_batch(ids, np.ones_like(ids, dtype=bool))
        return logits[0]

    def predict(self, token_ids: Sequence[int]) -> np.ndarray:
        return self.forward(token_ids).argmax(axis=-1)

    def forward_batch(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ):
        """Batched forward over padded ids ``(B, L)``; ``rng`` enables dropout."""
        c, p = self.config, self.params
        B, L = ids.shape
        if L > c.max_len:
            raise SequenceTooLong(f"sequence of {L} tokens exceeds max_len {c.max_len}")
        if L and (ids.min() < 0 or ids.max() >= c.vocab_size):
            raise OutOfVocab(f"token id outside [0, {c.vocab_size})")
        full_mask = np.concatenate([np.ones((B, 1), dtype=bool), mask.astype(bool)], axis=1)
        X = np.concatenate([np.broadcast_to(p["sentinel"], (B, 1, c.dim)), p["tok_emb"][ids]], axis=1)
        X = X + p["pos_emb"][: L + 1]
        X, drop0 = _dropout(X, c.dropout, rng)
        cache = {"ids": ids, "mask": full_mask, "drop0": drop0, "layers": []}
        for i in range(c.layers):
            a, acts = lesa_forward(X, self.label_matrix, self.lesa_params(i), full_mask, c.lesa_layers[i])
            a, drop_a = _dropout(a, c.dropout, rng)
            h, ln1 = layer_norm(X + a, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
            pre = h @ p[f"l{i}.W1"] + p[f"l{i}.b1"]
            act, t = gelu(pre)
            f = act @ p[f"l{i}.W2"] + p[f"l{i}.b2"]
            f, drop_f = _dropout(f, c.dropout, rng)
            X, ln2 = layer_norm(h + f, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
            cache["layers"].append(dict(acts=acts, drop_a=drop_a, ln1=ln1, h=h, pre=pre, act=act, t=t, drop_f=drop_f, ln2=ln2))
        z, lnh = layer_norm(X[:, 1:], p["head.ln_g"], p["head.ln_b"])
        logits = z @ p["head.W"] + p["head.b"]
        cache.update(z=z, lnh=lnh)
        return logits, cache

    def attention(self, token_ids: Sequence[int], layer: int) -> LesaActivations:
        ids = np.asarray(token_ids, dtype=np.int64).reshape(1, -1)
        _, cache = self.forward_batch(ids, np.ones_like(ids, dtype=bool))
        return cache["layers"][layer]["acts"]

    # -- backward --------------------------------------------------------

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        c, p = self.config, self.params
        g = {k: np.zeros_like(v) for k, v in p.items()}
        g["head.W"] = cache["z"].reshape(-1, c.dim).T @ dlogits.reshape(-1, c.n_classes)
        g["head.b"] = dlogits.reshape(-1, c.n_classes).sum(axis=0)
        dz = dlogits @ p["head.W"].T
        dX_tok, g["head.ln_g"], g["head.ln_b"] = layer_norm_backward(dz, p["head.ln_g"], cache["lnh"])
        B = dX_tok.shape[0]
        dX = np.concatenate([np.zeros((B, 1, c.dim)), dX_tok], axis=1)
        for i in reversed(range(c.layers)):
            lc = cache["layers"][i]
            ds, g[f"l{i}.ln2_g"], g[f"l{i}.ln2_b"] = layer_norm_backward(dX, p[f"l{i}.ln2_g"], lc["ln2"])
            df = ds if lc["drop_f"] is None else ds * lc["drop_f"]
            g[f"l{i}.W2"] = lc["act"].reshape(-1, lc["act"].shape[-1]).T @ df.reshape(-1, c.dim)
            g[f"l{i}.b2"] = df.reshape(-1, c.dim).sum(axis=0)
            dact = df @ p[f"l{i}.W2"].T
            dpre = gelu_backward(dact, lc["pre"], lc["t"])
            g[f"l{i}.W1"] = lc["h"].reshape(-1, c.dim).T @ dpre.reshape(-1, dpre.shape[-1])
            g[f"l{i}.b1"] = dpre.reshape(-1, dpre.shape[-1]).sum(axis=0)
            dh = ds + dpre @ p[f"l{i}.W1"].T
            dr, g[f"l{i}.ln1_g"], g[f"l{i}.ln1_b"] = layer_norm_backward(dh, p[f"l{i}.ln1_g"], lc["ln1"])
            da = dr if lc["drop_a"] is None else dr * lc["drop_a"]
            lg = lesa_backward(lc["acts"], da)
            g[f"l{i}.W_K"], g[f"l{i}.W_Q"], g[f"l{i}.W_V"] = lg.W_K, lg.W_Q, lg.W_V
            # label matrix is a constant of the model; its gradient is dropped
            dX = dr + lg.X
        if cache["drop0"] is not None:
            dX = dX * cache["drop0"]
        dX = np.where(cache["mask"][..., None], dX, 0.0)
        L = dX.shape[1] - 1
        g["pos_emb"][: L + 1] = dX.sum(axis=0)
        g["sentinel"] = dX[:, 0].sum(axis=0)
        np.add.at(g["tok_emb"], cache["ids"].ravel(), dX[:, 1:].reshape(-1, c.dim))
        return g

    def loss(self, ids: np.ndarray, labels: np.ndarray, mask: np.ndarray, rng=None) -> float:
        """Mean token cross-entropy without the backward pass."""
        return cross_entropy(self.forward_batch(ids, mask, rng)[0], labels, mask)[0]

    def loss_and_grads(self, ids: np.ndarray, labels: np.ndarray, mask: np.ndarray, rng=None):
        """Mean token cross-entropy over real positions, and its gradients."""
        logits, cache = self.forward_batch(ids, mask, rng)
        loss, dlogits = cross_entropy(logits, labels, mask)
        return loss, self.backward(cache, dlogits)

    # -- persistence -----------------------------------------------------

    def save(self, path: Union[str, Path]) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "vocab": self.vocab.itos,
            "keywords": {c.name: list(v) for c, v in self.keywords.items()},
            "shapes": {k: list(v.shape) for k, v in self.params.items()},
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["label_matrix"] = self.label_matrix
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.array(json.dumps(meta, ensure_ascii=False)), **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TokenClassifier":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
            params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
            label_matrix = data["label_matrix"].copy()
        for k, shape in meta["shapes"].items():
            if list(params[k].shape) != shape:
                raise ShapeError(f"checkpoint parameter {k} has shape {params[k].shape}, declared {shape}")
        vocab = Vocab()
        for w in meta["vocab"][len(vocab):]:
            vocab.add(w)
        keywords = {ClassLabel.parse(k): tuple(v) for k, v in meta["keywords"].items()}
        return cls(ModelConfig(**meta["config"]), vocab, keywords, params, label_matrix)


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean cross-entropy over masked-in positions and d(loss)/d(logits)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    m = mask.astype(np.float64)
    count = max(m.sum(), 1.0)
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    loss = -(picked * m).sum() / count
    d = np.exp(logp)
    np.put_along_axis(d, labels[..., None], np.take_along_axis(d, labels[..., None], axis=-1) - 1.0, axis=-1)
    return float(loss), d * (m / count)[..., None]
