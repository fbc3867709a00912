"""Whitespace/punctuation tokenizer, vocabulary, and padded token batches."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

CLS, PAD, UNK, MASK = "[CLS]", "[PAD]", "[UNK]", "[MASK]"
RESERVED = (CLS, PAD, UNK, MASK)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def split_text(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Injective token -> id map with four reserved ids up front."""

    token_to_id: dict[str, int]

    def __post_init__(self):
        for k, tok in enumerate(RESERVED):
            if self.token_to_id.get(tok) != k:
                raise DataError(f"reserved token {tok} must have id {k}")
        ids = list(self.token_to_id.values())
        if len(set(ids)) != len(ids):
            raise DataError("vocabulary ids are not injective")

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def cls_id(self) -> int:
        return 0

    @property
    def pad_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        inv = {v: k for k, v in self.token_to_id.items()}
        return [inv[i] for i in range(len(RESERVED), len(self.token_to_id))]


def build_vocabulary(texts, max_size: int | None = None, min_freq: int = 1) -> Vocabulary:
    """Frequency-ranked vocabulary; ties break by first appearance.

    Feed this the training-split texts only, so evaluation tokens cannot leak
    into the model's input space.
    """
    counts: dict[str, int] = {}
    order: dict[str, int] = {}
    for text in texts:
        for tok in split_text(text):
            counts[tok] = counts.get(tok, 0) + 1
            order.setdefault(tok, len(order))
    ranked = sorted(counts, key=lambda t: (-counts[t], order[t]))
    kept = [t for t in ranked if counts[t] >= min_freq]
    if max_size is not None:
        kept = kept[: max(0, max_size - len(RESERVED))]
    mapping = {tok: k for k, tok in enumerate(RESERVED)}
    for tok in kept:
        mapping[tok] = len(mapping)
    return Vocabulary(mapping)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """One non-reserved token per line; line number gives the id offset."""
    with open(path, "w", encoding="utf-8") as f:
        for tok in vocab.tokens():
            f.write(tok + "\n")


def load_vocabulary(path) -> Vocabulary:
    mapping = {tok: k for k, tok in enumerate(RESERVED)}
    with open(path, encoding="utf-8") as f:
        for line in f:
            tok = line.strip()
            if tok:
                mapping[tok] = len(mapping)
    return Vocabulary(mapping)


@dataclass(frozen=True)
class TokenBatch:
    """Padded id matrix plus its 0/1 attention mask.

    Row layout: [CLS], up to max_len-1 real tokens, then [PAD]. The mask is
    1.0 on [CLS] and real tokens, 0.0 on padding, so every row sum is >= 1.
    """

    ids: np.ndarray  # int64, (rows, max_len)
    attention_mask: np.ndarray  # float64, (rows, max_len)
    max_len: int

    def __post_init__(self):
        if self.ids.shape != self.attention_mask.shape:
            raise DataError("ids and attention_mask shapes differ")
        if self.ids.shape[1] != self.max_len:
            raise DataError("ids width differs from max_len")

    def row(self, i: int) -> "TokenBatch":
        return TokenBatch(self.ids[i : i + 1], self.attention_mask[i : i + 1], self.max_len)


def tokenize(text: str, vocab: Vocabulary, max_len: int) -> TokenBatch:
    """One padded row: [CLS] + first max_len-1 tokens, OOV mapped to [UNK]."""
    if max_len < 2:
        raise ConfigError(f"max_len must be at least 2, got {max_len}")
    toks = split_text(text)[: max_len - 1]
    ids = np.full((1, max_len), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((1, max_len))
    ids[0, 0] = vocab.cls_id
    mask[0, 0] = 1.0
    for k, tok in enumerate(toks, start=1):
        ids[0, k] = vocab.id_of(tok)
        mask[0, k] = 1.0
    return TokenBatch(ids=ids, attention_mask=mask, max_len=max_len)


def tokenize_texts(texts, vocab: Vocabulary, max_len: int) -> TokenBatch:
    rows = [tokenize(t, vocab, max_len) for t in texts]
    if not rows:
        return TokenBatch(np.zeros((0, max_len), dtype=np.int64), np.zeros((0, max_len)), max_len)
    return TokenBatch(
        ids=np.concatenate([r.ids for r in rows], axis=0),
        attention_mask=np.concatenate([r.attention_mask for r in rows], axis=0),
        max_len=max_len,
    )


def detokenize(batch: TokenBatch, vocab: Vocabulary, row: int = 0) -> str:
    """Space-joined tokens of one row, skipping reserved positions."""
    inv = {v: k for k, v in vocab.token_to_id.items()}
    words = []
    for k in range(1, batch.max_len):
        if batch.attention_mask[row, k] == 0.0:
            break
        words.append(inv[int(batch.ids[row, k])])
    return " ".join(words)
