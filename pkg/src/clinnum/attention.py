"""Dump one head's combined attention matrix for heatmap inspection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lesa import LesaActivations
from .model import TokenClassifier
from .tokenizer import tokenize

SENTINEL = "[CLS]"


@dataclass(frozen=True)
class AttentionDump:
    tokens: list[str]  # row/column headers, sentinel first
    matrix: np.ndarray  # (L+1, L+1) combined attention for one head
    activations: LesaActivations
    layer: int
    head: int

    def to_csv(self) -> str:
        """Square matrix with token texts as row and column headers."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["", *self.tokens])
        for tok, row in zip(self.tokens, self.matrix):
            w.writerow([tok, *(repr(float(x)) for x in row)])
        return buf.getvalue()

    def to_long_csv(self) -> str:
        """One ``row,col,value`` line per entry, row-major."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "value"])
        for (i, j), x in np.ndenumerate(self.matrix):
            w.writerow([i, j, repr(float(x))])
        return buf.getvalue()


def export_attention(model: TokenClassifier, tokens: Sequence[str] | str, layer: int, head: int) -> AttentionDump:
    """Combined self-attention plus label co-similarity of one head, for one sentence.

    ``tokens`` is either raw text or a list of token strings already in the
    model's input form (blinded or not).
    """
    cfg = model.config
    if not 0 <= layer < cfg.layers:
        raise IndexError(f"layer {layer} out of range [0, {cfg.layers})")
    if not 0 <= head < cfg.heads:
        raise IndexError(f"head {head} out of range [0, {cfg.heads})")
    if isinstance(tokens, str):
        from .blinding import blind

        toks = tokenize(tokens)
        words = [t.text for t in (blind(toks).tokens if cfg.blinded else toks)]
    else:
        words = list(tokens)
    acts = model.attention(model.vocab.encode(words), layer)
    return AttentionDump([SENTINEL, *words], acts.head("new_attn", head).copy(), acts, layer, head)
