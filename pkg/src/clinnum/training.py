"""Encoding, stratified splitting, AdamW and the early-stopped training loop."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .blinding import PLACEHOLDER, blind
from .corpus import AnnotatedNote, token_labels
from .errors import ClassTooSmallWarning, DivergedLoss, EmptyDataset
from .labels import NUM_CLASSES, ClassLabel
from .metrics import ConfusionCounts, f1_per_class, macro_f1
from .model import ModelConfig, TokenClassifier, Vocab
from .synth import allot
from .tokenizer import Token, tokenize

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-5
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: Optional[float] = 1.0
    early_stop_patience: int = 4
    max_epochs: int = 100
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    batch_size: int = 16
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        self.split = tuple(self.split)
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")
        if self.early_stop_patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class Example:
    ids: np.ndarray
    labels: np.ndarray
    tokens: list[Token]


def note_words(note: AnnotatedNote, blinded: bool, placeholder: str = PLACEHOLDER) -> tuple[list[Token], list[ClassLabel]]:
    tokens = tokenize(note.text)
    labels = token_labels(note, tokens)
    if blinded:
        tokens = blind(tokens, placeholder).tokens
    return tokens, labels


def build_vocab(notes: Sequence[AnnotatedNote], blinded: bool) -> Vocab:
    return Vocab.build([t.text for t in note_words(n, blinded)[0]] for n in notes)


def encode(notes: Sequence[AnnotatedNote], vocab: Vocab, blinded: bool) -> list[Example]:
    out = []
    for note in notes:
        tokens, labels = note_words(note, blinded)
        out.append(Example(
            np.asarray(vocab.encode(t.text for t in tokens), dtype=np.int64),
            np.asarray(labels, dtype=np.int64),
            tokens,
        ))
    return out


def _strata_key(note: AnnotatedNote, rarity: dict) -> ClassLabel:
    labels = [lab for _, _, lab in note.labelled_entities() if lab is not ClassLabel.O]
    if not labels:
        return ClassLabel.O
    return min(labels, key=lambda c: (rarity[c], c))


def stratified_split(
    notes: Sequence[AnnotatedNote],
    fractions: Sequence[float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> tuple[list[AnnotatedNote], list[AnnotatedNote], list[AnnotatedNote]]:
    """Split notes so each class is spread over the parts in the given fractions.

    Notes are grouped by their rarest annotated class and each group is
    apportioned by largest remainder.  Notes of the same group are then
    swapped between parts while that lowers the squared deviation of the
    per-class entity counts from their targets, which also balances classes
    that are not the grouping key (out-of-class values in particular).
    Classes with fewer than 3 notes go entirely to the training part, with a
    warning.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    rarity: dict = {c: 0 for c in ClassLabel}
    for n in notes:
        for _, _, lab in n.labelled_entities():
            rarity[lab] += 1
    groups: dict = {}
    for i, n in enumerate(notes):
        groups.setdefault(_strata_key(n, rarity), []).append(i)
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in fractions]
    for cls in sorted(groups):
        idx = np.asarray(groups[cls])[rng.permutation(len(groups[cls]))].tolist()
        if len(idx) < 3 and cls is not ClassLabel.O:
            warnings.warn(f"class {cls.name} has only {len(idx)} notes; all placed in train", ClassTooSmallWarning, stacklevel=2)
            parts[0].extend(idx)
            continue
        sizes = allot(dict(enumerate(fractions)), len(idx))
        start = 0
        for p in range(len(fractions)):
            parts[p].extend(idx[start:start + sizes[p]])
            start += sizes[p]
    small = {i for i, n in enumerate(notes) if len(groups.get(_strata_key(n, rarity), ())) < 3}
    _rebalance(notes, parts, fractions, rarity, frozen=small)
    return tuple([notes[i] for i in sorted(p)] for p in parts)


def _rebalance(notes, parts: list[list[int]], fractions, rarity, frozen=frozenset()) -> None:
    """Greedy same-group swaps between parts that reduce squared count deviation."""
    vec = np.zeros((len(notes), NUM_CLASSES))
    for i, n in enumerate(notes):
        for _, _, lab in n.labelled_entities():
            vec[i, lab] += 1
    key = [_strata_key(n, rarity) for n in notes]
    target = np.outer(fractions, vec.sum(axis=0))
    counts = np.array([vec[p].sum(axis=0) if p else np.zeros(NUM_CLASSES) for p in parts])
    # members[part][(group, signature)] -> note indices, in a fixed order
    members: list[dict] = [{} for _ in parts]
    for p, idx in enumerate(parts):
        for i in sorted(idx):
            if i not in frozen:
                members[p].setdefault((key[i], vec[i].tobytes()), []).append(i)
    while True:
        best, move = 0.0, None
        dev = counts - target
        for a in range(len(parts)):
            for b in range(a + 1, len(parts)):
                for (grp, sig_a), from_a in members[a].items():
                    if not from_a:
                        continue
                    va = np.frombuffer(sig_a)
                    for (grp_b, sig_b), from_b in members[b].items():
                        if grp_b != grp or sig_b == sig_a or not from_b:
                            continue
                        delta = np.frombuffer(sig_b) - va  # a gains delta, b loses it
                        gain = (np.sum((dev[a] + delta) ** 2) + np.sum((dev[b] - delta) ** 2)
                                - np.sum(dev[a] ** 2) - np.sum(dev[b] ** 2))
                        if gain < best - 1e-9:
                            best, move = gain, (a, b, (grp, sig_a), (grp, sig_b))
        if move is None:
            break
        a, b, ka, kb = move
        i, j = members[a][ka].pop(0), members[b][kb].pop(0)
        members[a].setdefault(kb, []).append(j)
        members[b].setdefault(ka, []).append(i)
        parts[a].remove(i)
        parts[b].remove(j)
        parts[a].append(j)
        parts[b].append(i)
        counts[a] += vec[j] - vec[i]
        counts[b] += vec[i] - vec[j]


class AdamW:
    """Adam with decoupled weight decay, applied to matrices only."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        b1, b2 = cfg.betas
        self.t += 1
        if cfg.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > cfg.clip_norm:
                grads = {k: g * (cfg.clip_norm / total) for k, g in grads.items()}
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + cfg.eps)
            if p.ndim >= 2 and cfg.weight_decay:
                update = update + cfg.weight_decay * p
            p -= cfg.learning_rate * update


def pad_batch(examples: Sequence[Example], pad_id: int = 0):
    L = max(len(e.ids) for e in examples)
    B = len(examples)
    ids = np.full((B, L), pad_id, dtype=np.int64)
    labels = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    for i, e in enumerate(examples):
        n = len(e.ids)
        ids[i, :n], labels[i, :n], mask[i, :n] = e.ids, e.labels, True
    return ids, labels, mask


def predict_examples(model: TokenClassifier, examples: Sequence[Example], batch_size: int = 64) -> list[np.ndarray]:
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = [e for e in examples[start:start + batch_size]]
        nonempty = [e for e in chunk if len(e.ids)]
        out = iter([])
        if nonempty:
            ids, _, mask = pad_batch(nonempty)
            logits, _ = model.forward_batch(ids, mask)
            out = iter(logits.argmax(axis=-1))
        for e in chunk:
            preds.append(next(out)[: len(e.ids)] if len(e.ids) else np.zeros(0, dtype=np.int64))
    return preds


def evaluate(model: TokenClassifier, examples: Sequence[Example], batch_size: int = 64) -> ConfusionCounts:
    preds = predict_examples(model, examples, batch_size)
    gold = np.concatenate([e.labels for e in examples]) if examples else np.zeros(0, dtype=np.int64)
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return ConfusionCounts.from_labels(gold, pred, NUM_CLASSES)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: float
    val_f1: np.ndarray


@dataclass
class TrainResult:
    model: TokenClassifier
    history: list[EpochRecord]
    best_epoch: int

    @property
    def best_val_f1(self) -> float:
        return max(r.val_macro_f1 for r in self.history)


def train(
    model: TokenClassifier,
    train_set: Sequence[Example],
    val_set: Sequence[Example],
    cfg: TrainConfig,
    seed: int = 0,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Early-stopped training on validation macro F1; returns the best checkpoint."""
    if not train_set:
        raise EmptyDataset("training set is empty")
    if not val_set:
        raise EmptyDataset("validation set is empty")
    rng = np.random.default_rng(seed)
    opt = AdamW(model.params, cfg)
    best, best_f1, best_epoch, waited = model.copy(), -np.inf, 0, 0
    history: list[EpochRecord] = []
    usable = [e for e in train_set if len(e.ids)]
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(usable))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [usable[i] for i in order[start:start + cfg.batch_size]]
            ids, labels, mask = pad_batch(batch)
            loss, grads = model.loss_and_grads(ids, labels, mask, rng)
            if not np.isfinite(loss):
                raise DivergedLoss(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            opt.step(model.params, grads)
            losses.append(loss)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            per_class = f1_per_class(evaluate(model, val_set))
        record = EpochRecord(epoch, float(np.mean(losses)), macro_f1(per_class), per_class)
        history.append(record)
        log.info("epoch %d loss %.4f val macro F1 %.4f", epoch, record.train_loss, record.val_macro_f1)
        if on_epoch:
            on_epoch(record)
        if record.val_macro_f1 > best_f1:
            best, best_f1, best_epoch, waited = model.copy(), record.val_macro_f1, epoch, 0
        else:
            waited += 1
            if waited >= cfg.early_stop_patience:
                break
    return TrainResult(best, history, best_epoch)


def write_history_csv(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_macro_f1", *[f"f1_{c.name}" for c in ClassLabel]])
        for r in history:
            w.writerow([r.epoch, f"{r.train_loss:.6f}", f"{r.val_macro_f1:.6f}", *[f"{v:.6f}" for v in r.val_f1]])


# model variants compared in the experiments: (blinded input, CoSim term on)
VARIANTS = {
    "lesa-blinded": (True, True),
    "lesa-unblinded": (False, True),
    "plain-blinded": (True, False),
    "plain-unblinded": (False, False),
}


@dataclass
class ExperimentResult:
    variant: str
    seed: int
    train: TrainResult
    test_f1: np.ndarray

    @property
    def test_macro_f1(self) -> float:
        return macro_f1(self.test_f1)


def run_experiment(
    notes: Sequence[AnnotatedNote],
    variant: str,
    seed: int,
    train_cfg: TrainConfig,
    model_overrides: Optional[dict] = None,
    split_seed: int = 0,
    keywords: Optional[dict] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> ExperimentResult:
    """Split, build vocabulary on train, train one variant with one seed, score on test."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    blinded, cosim = VARIANTS[variant]
    tr, va, te = stratified_split(notes, train_cfg.split, split_seed)
    vocab = build_vocab(tr, blinded)
    overrides = dict(model_overrides or {})
    layers = overrides.get("layers", ModelConfig.layers)
    cfg = ModelConfig(vocab_size=len(vocab), seed=seed, blinded=blinded, lesa_layers=[cosim] * layers, **overrides)
    model = TokenClassifier(cfg, vocab, keywords) if keywords else TokenClassifier(cfg, vocab)
    result = train(model, encode(tr, vocab, blinded), encode(va, vocab, blinded), train_cfg, seed=seed, on_epoch=on_epoch)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        test_f1 = f1_per_class(evaluate(result.model, encode(te, vocab, blinded)))
    return ExperimentResult(variant, seed, result, test_f1)
