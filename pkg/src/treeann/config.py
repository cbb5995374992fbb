"""Flat ``key = value`` pipeline configuration with ``#`` comments."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, Optional

from .errors import ConfigError
from .recluster import ReclusterConfig
from .synthetic import BlobSpec
from .training import TrainConfig


@dataclass
class PipelineConfig:
    # paths
    corpus: str = ""
    queries: str = ""
    qrels: str = ""
    dev_queries: str = ""
    dev_qrels: str = ""
    index: str = ""
    encoder: str = ""
    run: str = ""
    report: str = ""
    train_report: str = ""
    score_dump: str = ""
    ablation_report: str = ""
    # index and search (documented defaults follow the large-corpus setting)
    beta: int = 10
    gamma: int = 1000
    max_iters: int = 25
    normalize_for_clustering: bool = False
    beam_b: int = 10
    top_k: int = 100
    k_ndcg: int = 10
    # reclustering
    lam: int = 2
    k_feedback: int = 100
    # training
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    extra_random_negatives: int = 0
    encoder_trainable: bool = True
    seed: int = 0
    # synthetic data
    out_dir: str = ""
    num_blobs: int = 16
    docs_per_blob: int = 64
    dim: int = 32
    blob_spread: float = 1.0
    noise: float = 0.25
    num_queries: int = 250
    num_train: int = 200
    relevant_per_query: int = 5

    def validate(self) -> None:
        if self.beta < 2:
            raise ConfigError("beta must be >= 2")
        if self.gamma < 1:
            raise ConfigError("gamma must be >= 1")
        if self.beam_b < 1:
            raise ConfigError("beam_b must be >= 1")
        if self.lam < 1:
            raise ConfigError("lam must be >= 1")
        if self.top_k < 1 or self.k_feedback < 1:
            raise ConfigError("top_k and k_feedback must be >= 1")
        self.train_config()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            weight_decay=self.weight_decay,
            seed=self.seed,
            extra_random_negatives=self.extra_random_negatives,
        )

    def recluster_config(self, lam: Optional[int] = None) -> ReclusterConfig:
        return ReclusterConfig(lam=self.lam if lam is None else lam, k_feedback=self.k_feedback, beam_b=self.beam_b)

    def blob_spec(self) -> BlobSpec:
        return BlobSpec(
            num_blobs=self.num_blobs,
            docs_per_blob=self.docs_per_blob,
            dim=self.dim,
            blob_spread=self.blob_spread,
            noise=self.noise,
            seed=self.seed,
            num_queries=self.num_queries,
            relevant_per_query=self.relevant_per_query,
        )

    def require(self, *keys: str) -> None:
        """Fail unless each named path key is set and points at an existing file."""
        for key in keys:
            value = getattr(self, key)
            if not value:
                raise ConfigError(f"config key '{key}' is not set")
            if not Path(value).exists():
                raise ConfigError(f"{key}: file not found: {value}")


_FIELDS = {f.name: f for f in fields(PipelineConfig)}
_ALIASES = {"lambda": "lam", "b": "beam_b"}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for '{key}' ({kind})") from None
    return raw


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key '{key}'")
    return key


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        try:
            values[canonical_key(key)] = value.strip()
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> PipelineConfig:
    raw: Dict[str, str] = {}
    base = None
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        raw.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
        base = p.parent
    overridden = set()
    for k, v in (overrides or {}).items():
        raw[canonical_key(k)] = v
        overridden.add(canonical_key(k))
    cfg = PipelineConfig()
    for key, value in raw.items():
        setattr(cfg, key, _coerce(key, value))
    # relative paths in a config file resolve against the file's directory
    if base is not None:
        for key, f in _FIELDS.items():
            if f.type in ("str", str) and key in raw and key not in overridden:
                val = getattr(cfg, key)
                if val and not Path(val).is_absolute():
                    setattr(cfg, key, str(base / val))
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig, keys: Iterable[str]) -> str:
    return "".join(f"{k} = {getattr(cfg, k)}\n" for k in keys)
