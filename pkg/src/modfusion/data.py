"""Dataset manifests, in-memory datasets, batching and the synthetic XOR task."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .audio import load_mel_csv, save_mel_csv
from .config import N_MELS
from .fusion import Batch
from .text import PAD_INDEX, UNK_INDEX, Vocabulary, build_vocab, encode, tokenize

SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    """Malformed manifest or missing data file."""


@dataclass
class SampleManifest:
    id: str
    label: str
    text: str
    split: str
    mel_path: str | None = None
    wav_path: str | None = None

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SampleManifest":
        d = json.loads(line)
        try:
            return cls(id=str(d["id"]), label=str(d["label"]), text=str(d["text"]),
                       split=str(d["split"]), mel_path=d.get("mel_path"), wav_path=d.get("wav_path"))
        except KeyError as exc:
            raise DataError(f"manifest record lacks field {exc}") from exc


def serialize_manifest(records: Sequence[SampleManifest]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def parse_manifest(text: str) -> list[SampleManifest]:
    records = []
    # JSON escapes \n; splitlines() would also break on U+2028 and friends inside strings
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            records.append(SampleManifest.from_json(line))
        except (json.JSONDecodeError, DataError) as exc:
            raise DataError(f"manifest line {lineno}: {exc}") from exc
    return records


def read_manifest(path: str | Path) -> list[SampleManifest]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def write_manifest(path: str | Path, records: Sequence[SampleManifest]) -> None:
    Path(path).write_text(serialize_manifest(records), encoding="utf-8")


def validate_manifest(records: Sequence[SampleManifest], classes: Sequence[str],
                      base_dir: str | Path | None = None, require_files: bool = True) -> None:
    seen: set[str] = set()
    class_set = set(classes)
    for r in records:
        if r.id in seen:
            raise DataError(f"duplicate sample id {r.id!r}")
        seen.add(r.id)
        if r.label not in class_set:
            raise DataError(f"sample {r.id!r}: label {r.label!r} not in class list {list(classes)}")
        if r.split not in SPLITS:
            raise DataError(f"sample {r.id!r}: unknown split {r.split!r}")
        if require_files and r.mel_path is not None:
            if not resolve(r.mel_path, base_dir).exists():
                raise DataError(f"sample {r.id!r}: missing mel file {r.mel_path}")


def resolve(path: str, base_dir: str | Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


# ---------------------------------------------------------------------------
# in-memory dataset


@dataclass
class Example:
    id: str
    tokens: list[int]
    mel: np.ndarray
    label: int


@dataclass
class Dataset:
    classes: list[str]
    vocab: Vocabulary
    splits: dict[str, list[Example]]

    def split(self, name: str) -> list[Example]:
        return self.splits.get(name, [])


def load_dataset(records: Sequence[SampleManifest], classes: Sequence[str],
                 base_dir: str | Path | None = None, vocab: Vocabulary | None = None) -> Dataset:
    """Tokenise, encode and load mel matrices. The vocabulary comes from the train split."""
    classes = list(classes)
    validate_manifest(records, classes, base_dir)
    if vocab is None:
        train_text = [r.text for r in records if r.split == "train"]
        if not train_text:
            raise DataError("manifest has no train split")
        vocab = build_vocab(train_text)
    index = {c: i for i, c in enumerate(classes)}
    splits: dict[str, list[Example]] = {s: [] for s in SPLITS}
    for r in records:
        if r.mel_path is not None:
            mel = load_mel_csv(resolve(r.mel_path, base_dir))
        else:
            # no audio: a single silent frame
            mel = np.zeros((1, N_MELS))
        splits[r.split].append(Example(r.id, encode(tokenize(r.text), vocab), mel, index[r.label]))
    return Dataset(classes, vocab, splits)


def collate(examples: Sequence[Example]) -> Batch:
    """Post-pad a list of examples into a :class:`Batch`."""
    if not examples:
        raise DataError("cannot collate an empty batch")
    # empty sentences are fed as a single unk so every row has a valid step
    token_lists = [ex.tokens or [UNK_INDEX] for ex in examples]
    tx = max(len(t) for t in token_lists)
    ty = max(ex.mel.shape[0] for ex in examples)
    n = len(examples)
    tokens = np.full((n, tx), PAD_INDEX, dtype=np.int64)
    text_mask = np.zeros((n, tx), dtype=bool)
    mel = np.zeros((n, ty, N_MELS))
    audio_mask = np.zeros((n, ty), dtype=bool)
    for i, (toks, ex) in enumerate(zip(token_lists, examples)):
        tokens[i, :len(toks)] = toks
        text_mask[i, :len(toks)] = True
        mel[i, :ex.mel.shape[0]] = ex.mel
        audio_mask[i, :ex.mel.shape[0]] = True
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return Batch(tokens, text_mask, mel, audio_mask, labels)


def iterate_batches(examples: Sequence[Example], batch_size: int,
                    rng: np.random.Generator | None = None) -> Iterator[Batch]:
    """Mini-batches in order (or shuffled with ``rng``); the last may be smaller."""
    order = np.arange(len(examples))
    if rng is not None:
        order = rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield collate([examples[i] for i in order[start:start + batch_size]])


# ---------------------------------------------------------------------------
# synthetic XOR task

SYNTH_CLASSES = ["c0", "c1", "c2", "c3"]
KEYWORDS = (
    ("calm", "gentle", "quiet", "soft", "mellow", "peaceful"),
    ("loud", "harsh", "fierce", "wild", "furious", "intense"),
)
FILLER = ("the", "a", "it", "was", "really", "so", "and", "then", "we", "they", "felt",
          "day", "very", "today", "that", "just", "music", "room", "voice", "here")
LOW_BANDS = slice(4, 24)
HIGH_BANDS = slice(48, 68)


def synth_label(text_bit: int, audio_bit: int) -> int:
    """Class index ``2 * a + (a XOR b)``: the low bit needs both modalities."""
    return 2 * text_bit + (text_bit ^ audio_bit)


def _synth_sentence(bit: int, rng: np.random.Generator) -> str:
    length = int(rng.integers(4, 9))
    words = [FILLER[int(i)] for i in rng.integers(0, len(FILLER), size=length)]
    for _ in range(int(rng.integers(1, 3))):
        words[int(rng.integers(0, length))] = KEYWORDS[bit][int(rng.integers(0, len(KEYWORDS[bit])))]
    return " ".join(words)


def _synth_mel(bit: int, rng: np.random.Generator) -> np.ndarray:
    steps = int(rng.integers(6, 13))
    mel = rng.uniform(0.05, 0.35, size=(steps, N_MELS))
    band = LOW_BANDS if bit == 0 else HIGH_BANDS
    active = rng.random(steps) < 0.7
    active[int(rng.integers(0, steps))] = True
    mel[active, band] += rng.uniform(0.4, 0.6, size=(int(active.sum()), band.stop - band.start))
    return np.clip(mel, 0.0, 1.0)


def gen_synth(n: int, seed: int, out_dir: str | Path, valid_fraction: float = 0.2,
              test_fraction: float = 0.2) -> list[SampleManifest]:
    """Write a balanced 4-class XOR dataset (mel CSVs + ``manifest.jsonl`` + ``run.cfg``).

    The linguistic bit is the keyword family in the sentence, the acoustic bit
    is which mel band block carries energy. Neither modality alone determines
    the label.
    """
    if n < 8:
        raise ValueError("gen_synth needs n >= 8")
    out = Path(out_dir)
    mel_dir = out / "mel"
    mel_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_valid = int(round(n * valid_fraction))
    n_test = int(round(n * test_fraction))
    sizes = {"train": n - n_valid - n_test, "valid": n_valid, "test": n_test}
    records = []
    combos = [(k // 2, k % 2) for k in range(4)]
    offset = 0
    for split in SPLITS:
        # the class rotation continues across splits so remainders spread out
        picks = [combos[(offset + i) % 4] for i in range(sizes[split])]
        offset += sizes[split]
        for j in rng.permutation(len(picks)):
            a, b = picks[j]
            sid = f"{split}-{len(records):05d}"
            mel_rel = f"mel/{sid}.csv"
            save_mel_csv(out / mel_rel, _synth_mel(b, rng))
            records.append(SampleManifest(id=sid, label=SYNTH_CLASSES[synth_label(a, b)],
                                          text=_synth_sentence(a, rng), split=split, mel_path=mel_rel))
    write_manifest(out / "manifest.jsonl", records)
    (out / "run.cfg").write_text(synth_run_config_text(), encoding="utf-8")
    return records


def synth_run_config_text(manifest: str = "manifest.jsonl") -> str:
    return f"classes = {','.join(SYNTH_CLASSES)}\nmanifest = {manifest}\n"


def class_histogram(records: Iterable[SampleManifest], classes: Sequence[str]) -> dict[str, int]:
    hist = {c: 0 for c in classes}
    for r in records:
        hist[r.label] += 1
    return hist
