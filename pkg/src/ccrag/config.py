"""Run configuration: TOML file, full defaults, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class PathsConfig:
    corpus: Optional[str] = None
    graph_dir: Optional[str] = None
    transcripts: Optional[str] = None
    dataset: Optional[str] = None
    report: Optional[str] = None


@dataclass
class IndexConfig:
    max_chunk_chars: int = 1200
    overlap_chars: int = 200
    consolidation_k: int = 5
    tau_consolidate: float = 0.85
    workers: int = 1

    def validate(self) -> None:
        if self.max_chunk_chars < 1:
            raise ConfigError("max_chunk_chars must be >= 1")
        if not 0 <= self.overlap_chars < self.max_chunk_chars:
            raise ConfigError("overlap_chars must be in [0, max_chunk_chars)")
        if self.consolidation_k < 1:
            raise ConfigError("consolidation_k must be >= 1")
        if not -1.0 <= self.tau_consolidate <= 1.0:
            raise ConfigError("tau_consolidate must be a cosine in [-1, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class RetrievalConfig:
    retrieve_k: int = 5
    d_factual: int = 3
    d_cf: Optional[int] = None  # None: same horizon as d_factual
    baseline_k: int = 5

    @property
    def cf_depth(self) -> int:
        return self.d_factual if self.d_cf is None else self.d_cf

    def validate(self) -> None:
        for name in ("retrieve_k", "d_factual", "baseline_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_cf is not None and self.d_cf < 1:
            raise ConfigError("d_cf must be >= 1")


@dataclass
class EvalConfig:
    w1: float = 0.5
    w2: float = 0.5

    def validate(self) -> None:
        if self.w1 < 0 or self.w2 < 0:
            raise ConfigError("metric weights must be non-negative")
        if abs(self.w1 + self.w2 - 1.0) > 1e-12:
            raise ConfigError(f"w1 + w2 must equal 1 (got {self.w1 + self.w2!r})")


@dataclass
class ProviderConfig:
    mode: str = "replay"
    chat_mode: Optional[str] = None
    judge_mode: Optional[str] = None
    embed_mode: Optional[str] = None
    embed_backend: str = "http"  # http | mock | sentence-transformers
    embed_model: str = "all-MiniLM-L6-v2"
    max_retries: int = 3
    env_prefix: str = "CKG_PROVIDER"
    judge_env_prefix: Optional[str] = None  # distinct judge endpoint, if set

    def validate(self) -> None:
        modes = {"live", "record", "replay"}
        for name in ("mode", "chat_mode", "judge_mode", "embed_mode"):
            value = getattr(self, name)
            if value is not None and value not in modes:
                raise ConfigError(f"providers.{name} must be one of {sorted(modes)}")
        if self.embed_backend not in {"http", "mock", "sentence-transformers"}:
            raise ConfigError("providers.embed_backend must be http, mock or sentence-transformers")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    def mode_for(self, role: str) -> str:
        return getattr(self, f"{role}_mode") or self.mode


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    indexing: IndexConfig = field(default_factory=IndexConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    providers: ProviderConfig = field(default_factory=ProviderConfig)

    def validate(self) -> "RunConfig":
        self.indexing.validate()
        self.retrieval.validate()
        self.evaluation.validate()
        self.providers.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | os.PathLike | None = None) -> "RunConfig":
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for name, f in sections.items():
            section_cls = f.default_factory  # type: ignore[misc]
            values = data.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"[{name}] must be a table")
            kwargs[name] = _build_section(name, section_cls, values)
        cfg = cls(**kwargs)
        if base_dir is not None:
            for f in dataclasses.fields(cfg.paths):
                value = getattr(cfg.paths, f.name)
                if value is not None and not os.path.isabs(value):
                    setattr(cfg.paths, f.name, str(Path(base_dir, value)))
        return cfg.validate()


def _build_section(name: str, section_cls, values: dict[str, Any]):
    fields = {f.name: f for f in dataclasses.fields(section_cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    defaults = section_cls()
    out = {}
    for key, value in values.items():
        default = getattr(defaults, key)
        out[key] = _coerce(f"{name}.{key}", value, default, fields[key].type)
    return section_cls(**out)


def _coerce(label: str, value, default, annotation: str):
    annotation = str(annotation)
    if value is None:
        return None
    if "float" in annotation:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{label} must be a number")
        return float(value)
    if "int" in annotation:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{label} must be an integer")
        return value
    if "str" in annotation:
        if not isinstance(value, str):
            raise ConfigError(f"{label} must be a string")
        return value
    return value


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return RunConfig.from_dict(data, base_dir=p.parent)
