"""Test-only oracles shared across test modules."""

from __future__ import annotations

import numpy as np
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.linear_model import LogisticRegression

from modfusion.data import Dataset, gen_synth, load_dataset, SYNTH_CLASSES
from modfusion.text import tokenize


def _text_features(dataset: Dataset, split: str):
    return [" ".join(dataset.vocab.itos[i] for i in ex.tokens) for ex in dataset.split(split)]


def _audio_features(dataset: Dataset, split: str) -> np.ndarray:
    return np.stack([np.concatenate([ex.mel.mean(axis=0), ex.mel.max(axis=0)]) for ex in dataset.split(split)])


def probe_accuracy(dataset: Dataset, modality: str, fit: str = "train", score: str = "valid") -> float:
    """Logistic regression on one modality only: bag-of-words text or pooled mel."""
    y_fit = [ex.label for ex in dataset.split(fit)]
    y_score = [ex.label for ex in dataset.split(score)]
    clf = LogisticRegression(max_iter=2000)
    if modality == "text":
        vec = CountVectorizer(tokenizer=tokenize, token_pattern=None, lowercase=False)
        clf.fit(vec.fit_transform(_text_features(dataset, fit)), y_fit)
        return float(clf.score(vec.transform(_text_features(dataset, score)), y_score))
    clf.fit(_audio_features(dataset, fit), y_fit)
    return float(clf.score(_audio_features(dataset, score), y_score))


def xor_dataset(out_dir, n: int = 300, seed: int = 7, valid_fraction: float = 1 / 3,
                test_fraction: float = 0.0) -> Dataset:
    records = gen_synth(n, seed, out_dir, valid_fraction=valid_fraction, test_fraction=test_fraction)
    return load_dataset(records, SYNTH_CLASSES, out_dir)
