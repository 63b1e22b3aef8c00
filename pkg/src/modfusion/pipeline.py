"""Operator-level workflows behind the CLI: extract, train, eval, predict."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .audio import AudioError, extract_mel, read_wav, save_mel_csv
from .config import MAX_ENSEMBLE, ConfigError, MelConfig, RunConfig
from .data import DataError, Example, SampleManifest, load_dataset, read_manifest
from .metrics import EvalReport, evaluate
from .text import encode, load_glove, tokenize
from .training import TrainConfig, TrainResult, ensemble_average, history_lines, predict_proba, train

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# feature extraction


@dataclass
class ExtractReport:
    computed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)


def config_digest(cfg: MelConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True)


def _extract_one(job: tuple[str, str, str, dict]) -> tuple[str, str, str | None]:
    sid, wav_path, out_dir, cfg_dict = job
    cfg = MelConfig(**cfg_dict)
    try:
        blob = Path(wav_path).read_bytes()
    except OSError as exc:
        return sid, "failed", f"cannot read {wav_path}: {exc}"
    digest = hashlib.sha256(blob + config_digest(cfg).encode("utf-8")).hexdigest()[:16]
    target = Path(out_dir) / f"{sid}-{digest}.csv"
    if target.exists():
        return sid, "skipped", str(target)
    try:
        spec = extract_mel(read_wav(blob), cfg)
    except (AudioError, ValueError) as exc:
        return sid, "failed", str(exc)
    tmp = target.with_suffix(".tmp")
    save_mel_csv(tmp, spec)
    os.replace(tmp, target)
    return sid, "computed", str(target)


def extract(records: Sequence[SampleManifest], mel_cfg: MelConfig, base_dir: str | Path,
            out_dir: str | Path, workers: int = 1) -> tuple[list[SampleManifest], ExtractReport]:
    """Populate ``mel_path`` for every record with a ``wav_path``.

    Output files are keyed by a hash of the WAV bytes and the mel config, so a
    re-run skips up-to-date files and a config change recomputes everything.
    Unreadable audio is reported and the record is left unchanged.
    """
    base = Path(base_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = dataclasses.asdict(mel_cfg)
    jobs = [(r.id, str(base / r.wav_path if not Path(r.wav_path).is_absolute() else Path(r.wav_path)),
             str(out), cfg_dict) for r in records if r.wav_path]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_extract_one, jobs))
    else:
        outcomes = [_extract_one(j) for j in jobs]
    report = ExtractReport()
    by_id: dict[str, str] = {}
    for sid, status, detail in outcomes:
        if status == "failed":
            report.failures.append({"id": sid, "error": detail})
            log.warning("extract %s failed: %s", sid, detail)
            continue
        (report.computed if status == "computed" else report.skipped).append(sid)
        by_id[sid] = detail
    updated = []
    for r in records:
        if r.id in by_id:
            target = Path(by_id[r.id])
            try:
                rel = os.path.relpath(target, base)
            except ValueError:
                rel = str(target)
            r = dataclasses.replace(r, mel_path=rel)
        updated.append(r)
    return updated, report


# ---------------------------------------------------------------------------
# training and evaluation


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                       decay_factor=cfg.decay_factor, max_decays=cfg.max_decays,
                       patience=cfg.patience, clip_norm=cfg.clip_norm)


def manifest_path(cfg: RunConfig, base_dir: str | Path | None) -> Path:
    if not cfg.manifest:
        raise ConfigError("no manifest configured")
    p = Path(cfg.manifest)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


@dataclass
class TrainedMember:
    seed: int
    checkpoint: Path
    history: Path
    result: TrainResult


def run_train(cfg: RunConfig, base_dir: str | Path | None = None) -> list[TrainedMember]:
    """Train ``cfg.ensemble`` members (seeds ``seed, seed + 1, ...``) and write their outputs."""
    if not cfg.classes:
        raise ConfigError("the run config must declare the class list")
    manifest = manifest_path(cfg, base_dir)
    records = read_manifest(manifest)
    dataset = load_dataset(records, cfg.classes, manifest.parent)
    model_cfg = cfg.model_config(len(cfg.classes))
    out = cfg.output_root()
    out.mkdir(parents=True, exist_ok=True)
    members = []
    for k in range(cfg.ensemble):
        seed = cfg.seed + k
        embeddings = None
        if cfg.glove:
            embeddings, found = load_glove(cfg.glove, dataset.vocab, np.random.default_rng([seed, 3]))
            log.info("glove: %d of %d vocabulary rows initialised", found, len(dataset.vocab))
        result = train(model_cfg, dataset, seed, train_config(cfg), embeddings)
        ck_path = out / f"model-seed{seed}.ckpt"
        hist_path = out / f"history-seed{seed}.jsonl"
        extra = {"seed": seed, "best_epoch": result.best_epoch, "best_val_acc": result.best_val_acc}
        ckpt_io.save(ck_path, ckpt_io.from_model(result.model, cfg.classes, dataset.vocab, extra))
        hist_path.write_text(history_lines(result.history), encoding="utf-8")
        members.append(TrainedMember(seed, ck_path, hist_path, result))
    return members


def load_checkpoints(paths: Sequence[str | Path], classes: Sequence[str] | None = None) -> list[ckpt_io.Checkpoint]:
    if not paths:
        raise DataError("no checkpoints given")
    if len(paths) > MAX_ENSEMBLE:
        raise ConfigError(f"at most {MAX_ENSEMBLE} checkpoints can be ensembled")
    loaded = []
    for p in paths:
        if not Path(p).exists():
            raise DataError(f"missing checkpoint {p}")
        ck = ckpt_io.load(p)
        if classes and list(ck.classes) != list(classes):
            raise DataError(f"{p}: checkpoint classes {ck.classes} differ from configured {list(classes)}")
        if loaded and ck.classes != loaded[0].classes:
            raise DataError(f"{p}: class list differs from the first checkpoint")
        loaded.append(ck)
    return loaded


def ensemble_predict(checkpoints: Sequence[ckpt_io.Checkpoint], records: Sequence[SampleManifest],
                     base_dir: str | Path | None) -> np.ndarray:
    """Averaged probabilities ``[len(records), K]`` over the checkpoints."""
    bag = []
    for ck in checkpoints:
        ds = load_dataset(records, ck.classes, base_dir, vocab=ck.vocab)
        examples = [ex for split in ("train", "valid", "test") for ex in ds.split(split)]
        order = {ex.id: i for i, ex in enumerate(examples)}
        examples = [examples[order[r.id]] for r in records]
        bag.append(predict_proba(ck.build_model(), examples))
    return ensemble_average(bag)


def run_eval(cfg: RunConfig, checkpoint_paths: Sequence[str | Path], split: str = "test",
             base_dir: str | Path | None = None) -> EvalReport:
    checkpoints = load_checkpoints(checkpoint_paths, cfg.classes or None)
    classes = checkpoints[0].classes
    manifest = manifest_path(cfg, base_dir)
    records = [r for r in read_manifest(manifest) if r.split == split]
    if not records:
        raise DataError(f"manifest has no {split!r} samples")
    probs = ensemble_predict(checkpoints, records, manifest.parent)
    truth = [classes.index(r.label) for r in records]
    return evaluate(truth, probs.argmax(axis=1), classes)


def predict_single(checkpoints: Sequence[ckpt_io.Checkpoint], text: str, mel: np.ndarray) -> np.ndarray:
    """Averaged class probabilities for one sentence and mel matrix."""
    bag = []
    for ck in checkpoints:
        ex = Example("input", encode(tokenize(text), ck.vocab), np.asarray(mel, dtype=np.float64), 0)
        bag.append(predict_proba(ck.build_model(), [ex]))
    return ensemble_average(bag)[0]
