"""Project configuration: one file drives every pipeline stage.

A config is a nested set of frozen dataclasses with defaults matching the
module-level ones. JSON configs override fields selectively; unknown keys
are rejected so typos fail loudly instead of silently running defaults.
The canonical hash of the resolved config is stamped into every artifact,
letting reruns detect config drift.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ._util import canonical_json

CONFIG_VERSION = 1


class ConfigError(Exception):
    """Malformed or contradictory configuration."""


@dataclass(frozen=True)
class GenBackendConfig:
    """Which text-generation client the extract/predict stages use."""

    kind: str = "mock"  # mock | remote | cache
    model_id: str = "mock-extractor"
    base_url: str = ""
    api_key_env: str = "SCIATLAS_API_KEY"
    rate_limit_per_s: float = 0.0
    cache_dir: str = ""
    parallelism: int = 1
    min_success_fraction: float = 0.95


@dataclass(frozen=True)
class EmbedBackendConfig:
    """Which embedding provider the embed stage uses."""

    kind: str = "hashing"  # hashing | remote
    dim: int = 256
    hash_seed: int = 0
    model_id: str = ""
    base_url: str = ""
    cache_dir: str = ""


@dataclass(frozen=True)
class ClusteringConfig:
    n_neighbors: int = 15
    n_epochs: int = 200
    learning_rate: float = 0.5
    n_negative_samples: int = 5
    gamma: float = 7.0
    min_cluster_size: int = 25
    min_samples: int = 10
    allow_single_cluster: bool = False
    top_terms: int = 20
    summary_samples: int = 10
    adjacency_fraction: float = 0.05


@dataclass(frozen=True)
class AtlasConfig:
    min_edge_weight: int = 5
    through_origin: bool = False
    write_graphml: bool = False


@dataclass(frozen=True)
class PredictConfig:
    katz_alpha: float = 0.1
    katz_max_len: int = 6
    weighted: bool = False
    n2v_dim: int = 128
    n2v_walks_per_node: int = 10
    n2v_walk_length: int = 80
    n2v_window: int = 10
    n2v_n_negative: int = 5
    n2v_p: float = 1.0
    n2v_q: float = 1.0
    n2v_epochs: int = 5
    n_exemplars: int = 5
    k_list: tuple = (1, 3, 5, 10)

    def node2vec_params(self) -> dict:
        return {
            "dim": self.n2v_dim,
            "walks_per_node": self.n2v_walks_per_node,
            "walk_length": self.n2v_walk_length,
            "window": self.n2v_window,
            "n_negative": self.n2v_n_negative,
            "p": self.n2v_p,
            "q": self.n2v_q,
            "epochs": self.n2v_epochs,
        }


@dataclass(frozen=True)
class EvalConfig:
    k_list: tuple = (1, 3, 5, 10)
    novel_k: int = 10
    text_scorers: tuple = ("rouge1", "cosine")


@dataclass(frozen=True)
class ProjectConfig:
    seed: int = 0
    split_year: int = 2022  # publications with year <= split_year train
    prompt_version: str = "v1"
    gen: GenBackendConfig = field(default_factory=GenBackendConfig)
    embed: EmbedBackendConfig = field(default_factory=EmbedBackendConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    atlas: AtlasConfig = field(default_factory=AtlasConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["predict"]["k_list"] = list(self.predict.k_list)
        out["eval"]["k_list"] = list(self.eval.k_list)
        out["eval"]["text_scorers"] = list(self.eval.text_scorers)
        out["config_version"] = CONFIG_VERSION
        return out

    def config_hash(self) -> str:
        digest = hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8"))
        return digest.hexdigest()[:16]


_SECTIONS = {
    "gen": GenBackendConfig,
    "embed": EmbedBackendConfig,
    "clustering": ClusteringConfig,
    "atlas": AtlasConfig,
    "predict": PredictConfig,
    "eval": EvalConfig,
}

_TUPLE_FIELDS = {
    ("predict", "k_list"),
    ("eval", "k_list"),
    ("eval", "text_scorers"),
}


def _build_section(name: str, cls, overrides: dict):
    if not isinstance(overrides, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in overrides.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key!r}")
        if (name, key) in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{name}.{key} must be a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from exc


def config_from_dict(raw: dict) -> ProjectConfig:
    """Resolve a partial config dict against the defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    raw = dict(raw)
    raw.pop("config_version", None)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(name, cls, raw.pop(name))
    for scalar in ("seed", "split_year", "prompt_version"):
        if scalar in raw:
            kwargs[scalar] = raw.pop(scalar)
    if raw:
        raise ConfigError(f"unknown top-level keys: {sorted(raw)}")
    try:
        config = ProjectConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _validate(config)
    return config


def load_config(path) -> ProjectConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def save_config(config: ProjectConfig, path) -> None:
    Path(path).write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def _validate(config: ProjectConfig) -> None:
    if config.gen.kind not in ("mock", "remote", "cache"):
        raise ConfigError(f"gen.kind must be mock|remote|cache, got {config.gen.kind!r}")
    if config.embed.kind not in ("hashing", "remote"):
        raise ConfigError(f"embed.kind must be hashing|remote, got {config.embed.kind!r}")
    if config.gen.kind == "remote" and not config.gen.base_url:
        raise ConfigError("gen.kind = remote requires gen.base_url")
    if config.embed.kind == "remote" and not config.embed.base_url:
        raise ConfigError("embed.kind = remote requires embed.base_url")
    if config.embed.dim < 8:
        raise ConfigError("embed.dim must be at least 8")
    for section, ks in (("predict", config.predict.k_list),
                        ("eval", config.eval.k_list)):
        if not ks or any((not isinstance(k, int)) or k < 1 for k in ks):
            raise ConfigError(f"{section}.k_list must be positive integers")
        if list(ks) != sorted(set(ks)):
            raise ConfigError(f"{section}.k_list must be strictly increasing")
    if config.eval.novel_k < 1:
        raise ConfigError("eval.novel_k must be positive")
    unknown = set(config.eval.text_scorers) - {"rouge1", "cosine", "external"}
    if unknown:
        raise ConfigError(f"unknown text scorers: {sorted(unknown)}")
    if not 0.0 < config.gen.min_success_fraction <= 1.0:
        raise ConfigError("gen.min_success_fraction must be in (0, 1]")
    if config.clustering.adjacency_fraction < 0:
        raise ConfigError("clustering.adjacency_fraction must be >= 0")
