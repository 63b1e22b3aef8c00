"""Sentence -> token indices -> ``[T, 300]`` embeddings."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import EMBED_DIM
from .layers import Module
from .tensor import Tensor, take_rows

PAD = "<pad>"
UNK = "unk"
PAD_INDEX = 0
UNK_INDEX = 1

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(sentence: str) -> list[str]:
    """Lowercase and split on every character outside ``[a-z0-9']``."""
    return _TOKEN_RE.findall(sentence.lower())


class Vocabulary:
    """Token -> index map with ``pad`` at 0 and ``unk`` at 1."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: PAD_INDEX, UNK: UNK_INDEX}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.stoi[token] = idx
            self.itos.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK_INDEX)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_list(lines)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if list(itos[:2]) != [PAD, UNK]:
            raise ValueError("vocabulary must start with the pad and unk tokens")
        return cls(itos[2:])


def build_vocab(train_sentences: Iterable[str]) -> Vocabulary:
    """Vocabulary over the training sentences, indices in first-seen order."""
    sentences = list(train_sentences)
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    vocab = Vocabulary()
    for s in sentences:
        for tok in tokenize(s):
            vocab.add(tok)
    return vocab


def encode(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    return [vocab[t] for t in tokens]


class EmbeddingTable(Module):
    """``[|V|, 300]`` lookup table; the pad row is held at zero."""

    def __init__(self, vocab_size: int, rng: np.random.Generator, trainable: bool = True,
                 init: np.ndarray | None = None):
        if init is None:
            init = rng.normal(0.0, 0.1, size=(vocab_size, EMBED_DIM))
        init = np.array(init, dtype=np.float64)
        if init.shape != (vocab_size, EMBED_DIM):
            raise ValueError(f"embedding init must be {(vocab_size, EMBED_DIM)}, got {init.shape}")
        init[PAD_INDEX] = 0.0
        self.weight = Tensor(init, requires_grad=trainable)

    def __call__(self, indices) -> Tensor:
        return embed(indices, self)


def embed(indices, table: EmbeddingTable) -> Tensor:
    """Row ``t`` of the output is row ``indices[t]`` of the table."""
    return take_rows(table.weight, indices, padding_idx=PAD_INDEX)


def load_glove(path: str | Path, vocab: Vocabulary, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Initial embedding matrix from a GloVe text file.

    Tokens missing from the file keep a random N(0, 0.1^2) row. Returns the
    matrix and how many vocabulary rows were found in the file.
    """
    table = rng.normal(0.0, 0.1, size=(len(vocab), EMBED_DIM))
    found = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) != EMBED_DIM + 1:
                raise ValueError(f"{path}:{lineno}: expected {EMBED_DIM + 1} fields, got {len(parts)}")
            idx = vocab.stoi.get(parts[0])
            if idx is not None and idx != PAD_INDEX:
                table[idx] = np.asarray(parts[1:], dtype=np.float64)
                found += 1
    table[PAD_INDEX] = 0.0
    return table, found
