"""Model, text-encoder, training and ablation configuration, plus the shipped presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

ABLATION_FLAGS = (
    "full",
    "no_future_text",
    "no_history_text",
    "no_any_text",
    "no_contrastive",
    "no_history_interact",
    "no_future_interact",
)

# Preset column name -> (section, field)
PRESET_COLUMNS = {
    "L": ("model", "lookback"),
    "L_p": ("model", "patch_len"),
    "h": ("model", "horizon"),
    "d_m": ("model", "d_model"),
    "n_uni": ("model", "n_uni"),
    "n_mul": ("model", "n_mul"),
    "Heads": ("model", "heads"),
    "LR": ("train", "learning_rate"),
    "Weight Decay": ("train", "weight_decay"),
    "Batch Size": ("train", "batch_size"),
    "Epochs": ("train", "max_epochs"),
    "Patience": ("train", "patience"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Ablation:
    """A set of component bypasses; ``full`` is the empty set."""

    flags: frozenset = frozenset()

    def __post_init__(self):
        unknown = set(self.flags) - set(ABLATION_FLAGS[1:])
        if unknown:
            raise ConfigError(f"unknown ablation flag(s): {sorted(unknown)}")

    @classmethod
    def parse(cls, text: "str | Ablation | Sequence[str]") -> "Ablation":
        if isinstance(text, Ablation):
            return text
        parts = text.replace(",", "+").split("+") if isinstance(text, str) else list(text)
        parts = [p.strip() for p in parts if p.strip() and p.strip() != "full"]
        return cls(frozenset(parts))

    def __str__(self) -> str:
        return "+".join(f for f in ABLATION_FLAGS if f in self.flags) or "full"

    def has(self, flag: str) -> bool:
        return flag in self.flags

    @property
    def uses_text(self) -> bool:
        return not self.has("no_any_text")

    @property
    def uses_history_text(self) -> bool:
        return self.uses_text and not self.has("no_history_text")

    @property
    def uses_future_text(self) -> bool:
        return self.uses_text and not self.has("no_future_text")

    @property
    def has_history_interact(self) -> bool:
        return self.uses_text and not self.has("no_history_interact")

    @property
    def has_future_interact(self) -> bool:
        return self.uses_text and not self.has("no_future_interact")

    @property
    def uses_contrastive(self) -> bool:
        return self.uses_history_text and not self.has("no_contrastive")


@dataclass
class TextEncoderConfig:
    kind: str = "trainable_small"  # or "external_embeddings"
    d: int = 64
    max_tokens: int = 128
    layers: int = 2
    heads: int = 4
    vocab: list[str] = field(default_factory=list)
    embeddings_path: str | None = None
    frozen: bool = False

    def validate(self) -> None:
        if self.kind not in ("trainable_small", "external_embeddings"):
            raise ConfigError(f"unknown text encoder kind {self.kind!r}")
        if self.d < 8:
            raise ConfigError("text width d must be >= 8")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.kind == "trainable_small" and self.d % self.heads:
            raise ConfigError("text width must be divisible by text heads")
        if self.kind == "external_embeddings" and not self.embeddings_path:
            raise ConfigError("external_embeddings needs embeddings_path")


@dataclass
class ModelConfig:
    lookback: int = 200
    horizon: int = 30
    patch_len: int = 8
    d_model: int = 256
    n_uni: int = 6
    n_mul: int = 3
    heads: int = 8
    n_queries: int = 8
    include_ffn: bool = False
    norm_placement: str = "pre"  # "pre" or "none"
    share_text_queries: bool = True
    temperature: float = 0.07
    normalize_cls: bool = True
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)

    @property
    def n_patches(self) -> int:
        return self.lookback // self.patch_len

    def validate(self) -> "ModelConfig":
        if self.lookback < 1 or self.horizon < 1 or self.patch_len < 1:
            raise ConfigError("lookback, horizon and patch_len must be positive")
        if self.lookback % self.patch_len:
            raise ConfigError(f"lookback {self.lookback} not divisible by patch_len {self.patch_len}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if min(self.n_uni, self.n_mul) < 0 or self.n_queries < 1:
            raise ConfigError("layer counts must be >= 0 and n_queries >= 1")
        if self.norm_placement not in ("pre", "none"):
            raise ConfigError("norm_placement must be 'pre' or 'none'")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        self.text.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        text = TextEncoderConfig(**d.pop("text", {}))
        return cls(text=text, **d)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 7
    seeds: tuple[int, ...] = (0, 1, 2)
    ablation: str = "full"
    val_fraction: float = 0.1
    grad_clip: float | None = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    max_steps: int | None = None
    deterministic: bool = False

    def validate(self) -> "TrainConfig":
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        Ablation.parse(self.ablation)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.betas = tuple(self.betas)
        return self

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        return cls(**d).validate()


def config_hash(*parts: dict[str, Any]) -> str:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


# -- presets / config files ---------------------------------------------------


def _read_presets() -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for name in ("benchmarks.json", "desk.json"):
        text = resources.files("dualcast").joinpath("presets").joinpath(name).read_text(encoding="utf-8")
        out.update(json.loads(text))
    return out


def preset_names() -> list[str]:
    return list(_read_presets())


def _apply(row: dict[str, Any], model: ModelConfig, train: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    model_fields = {f.name for f in fields(ModelConfig)}
    text_fields = {f.name for f in fields(TextEncoderConfig)}
    train_fields = {f.name for f in fields(TrainConfig)}
    m_upd: dict[str, Any] = {}
    t_upd: dict[str, Any] = {}
    text_upd: dict[str, Any] = {}
    for key, value in row.items():
        if key == "P":
            continue  # derived: L / L_p
        if key in PRESET_COLUMNS:
            section, name = PRESET_COLUMNS[key]
            (m_upd if section == "model" else t_upd)[name] = value
        elif key.startswith("text_") and key[5:] in text_fields:
            text_upd[key[5:]] = value
        elif key in model_fields and key != "text":
            m_upd[key] = value
        elif key in train_fields:
            t_upd[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    text = replace(model.text, **text_upd)
    model = replace(model, text=text, **m_upd)
    train = replace(train, **t_upd)
    if "P" in row and row["P"] != model.n_patches:
        raise ConfigError(f"P={row['P']} inconsistent with L/L_p={model.n_patches}")
    return model.validate(), train.validate()


def load_preset(name: str) -> tuple[ModelConfig, TrainConfig]:
    table = _read_presets()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return _apply(table[name], ModelConfig(), TrainConfig())


def load_config_file(
    path: str | Path, base: tuple[ModelConfig, TrainConfig] | None = None
) -> tuple[ModelConfig, TrainConfig]:
    """Read a JSON or TOML file keyed by preset column names (or field names)."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        row = tomllib.loads(path.read_text(encoding="utf-8"))
    else:
        row = json.loads(path.read_text(encoding="utf-8"))
    if "preset" in row:
        row = dict(row)
        base = load_preset(row.pop("preset"))
    model, train = base or (ModelConfig(), TrainConfig())
    return _apply(row, model, train)
