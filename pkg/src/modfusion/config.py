"""Model, mel and run configuration.

:class:`RunConfig` is the flat record behind both the ``key = value`` config
file and the CLI flags; every field maps one-to-one onto a flag.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

VARIANTS = ("P", "NT", "MAT", "MNT")
EMBED_DIM = 300
N_MELS = 80
MAX_ENSEMBLE = 10
OUTPUT_ROOT_ENV = "MODFUSION_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class ModelConfig:
    variant: str = "MAT"
    num_classes: int = 4
    blocks: int | None = None  # None -> 2 for P/NT, 4 for MAT/MNT
    hidden: int = 512
    heads: int = 8
    mlp_hidden: int = 2048
    dropout_block: float = 0.1
    dropout_proj: float = 0.5
    norm_axis: str = "feature"  # or "temporal"
    norm_eps: float = 1e-5
    attention_scale: str = "head"  # 1/sqrt(C/h); "model" -> 1/sqrt(C)
    film_mode: str = "channel"  # or "scalar": one delta per norm layer
    mat_source: str = "encoded"  # keys/values from x~; "raw" -> LSTM output x
    positional: bool = False
    train_embeddings: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.blocks is None:
            self.blocks = 2 if self.variant in ("P", "NT") else 4
        if self.blocks < 0:
            raise ConfigError("blocks must be >= 0")
        if self.hidden <= 0 or self.heads <= 0 or self.hidden % self.heads:
            raise ConfigError(f"hidden ({self.hidden}) must be a positive multiple of heads ({self.heads})")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.norm_axis not in ("feature", "temporal"):
            raise ConfigError(f"norm_axis must be feature|temporal, got {self.norm_axis!r}")
        if self.attention_scale not in ("head", "model"):
            raise ConfigError(f"attention_scale must be head|model, got {self.attention_scale!r}")
        if self.film_mode not in ("channel", "scalar"):
            raise ConfigError(f"film_mode must be channel|scalar, got {self.film_mode!r}")
        if self.mat_source not in ("encoded", "raw"):
            raise ConfigError(f"mat_source must be encoded|raw, got {self.mat_source!r}")
        for name in ("dropout_block", "dropout_proj"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class MelConfig:
    sample_rate: int = 22050
    n_fft: int = 2048
    hop: int = 276
    win: int = 1102
    preemphasis: float = 0.97
    reduction: int = 16
    db_floor: float = -100.0
    db_range: float = 100.0
    n_mels: int = N_MELS

    def __post_init__(self):
        if self.n_mels != N_MELS:
            raise ConfigError(f"n_mels is fixed at {N_MELS}")
        if self.sample_rate <= 0 or self.hop <= 0 or self.n_fft <= 0:
            raise ConfigError("sample_rate, hop and n_fft must be positive")
        if self.win > self.n_fft:
            raise ConfigError("win must not exceed n_fft")
        if self.reduction < 1:
            raise ConfigError("reduction must be >= 1")
        if not 0.0 <= self.preemphasis < 1.0:
            raise ConfigError("preemphasis must be in [0, 1)")
        if self.db_range <= 0:
            raise ConfigError("db_range must be positive")


@dataclass
class RunConfig:
    # model
    variant: str = "MAT"
    blocks: int | None = None
    hidden: int = 512
    heads: int = 8
    mlp_hidden: int = 2048
    dropout_block: float = 0.1
    dropout_proj: float = 0.5
    norm_axis: str = "feature"
    attention_scale: str = "head"
    film_mode: str = "channel"
    mat_source: str = "encoded"
    positional: bool = False
    train_embeddings: bool = True
    # schedule
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    decay_factor: float = 0.5
    max_decays: int = 2
    patience: int = 10
    clip_norm: float = 5.0
    # mel
    sample_rate: int = 22050
    n_fft: int = 2048
    hop: int = 276
    win: int = 1102
    preemphasis: float = 0.97
    reduction: int = 16
    db_floor: float = -100.0
    db_range: float = 100.0
    # data and run
    classes: list[str] = field(default_factory=list)
    manifest: str = ""
    out_dir: str = "runs"
    glove: str = ""
    seed: int = 0
    ensemble: int = 1

    def __post_init__(self):
        if not 1 <= self.ensemble <= MAX_ENSEMBLE:
            raise ConfigError(f"ensemble must be in [1, {MAX_ENSEMBLE}]")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")

    def model_config(self, num_classes: int | None = None) -> ModelConfig:
        return ModelConfig(
            variant=self.variant,
            num_classes=num_classes if num_classes is not None else len(self.classes),
            blocks=self.blocks,
            hidden=self.hidden,
            heads=self.heads,
            mlp_hidden=self.mlp_hidden,
            dropout_block=self.dropout_block,
            dropout_proj=self.dropout_proj,
            norm_axis=self.norm_axis,
            attention_scale=self.attention_scale,
            film_mode=self.film_mode,
            mat_source=self.mat_source,
            positional=self.positional,
            train_embeddings=self.train_embeddings,
        )

    def mel_config(self) -> MelConfig:
        return MelConfig(
            sample_rate=self.sample_rate,
            n_fft=self.n_fft,
            hop=self.hop,
            win=self.win,
            preemphasis=self.preemphasis,
            reduction=self.reduction,
            db_floor=self.db_floor,
            db_range=self.db_range,
        )

    def output_root(self) -> Path:
        return Path(os.environ.get(OUTPUT_ROOT_ENV) or self.out_dir)


def _field_kind(f: dataclasses.Field) -> str:
    t = str(f.type)
    if t.startswith("list"):
        return "list"
    if "bool" in t:
        return "bool"
    if "int" in t:
        return "int"
    if "float" in t:
        return "float"
    return "str"


def coerce(f: dataclasses.Field, raw: str) -> Any:
    kind = _field_kind(f)
    raw = raw.strip()
    if kind == "list":
        return [item.strip() for item in raw.split(",") if item.strip()]
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.name}: not a boolean: {raw!r}")
    if raw.lower() in ("", "none") and "None" in str(f.type):
        return None
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{f.name}: cannot parse {raw!r} as {kind}") from exc
    return raw


def run_config_fields() -> tuple[dataclasses.Field, ...]:
    return dataclasses.fields(RunConfig)


def parse_run_config(text: str, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments) into a :class:`RunConfig`."""
    by_name = {f.name: f for f in run_config_fields()}
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in by_name:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = coerce(by_name[key], raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)


def format_run_config(cfg: RunConfig) -> str:
    lines = []
    for f in run_config_fields():
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ",".join(v)
        elif v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_run_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    return parse_run_config(Path(path).read_text(encoding="utf-8"), overrides)
