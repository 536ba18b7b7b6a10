"""Declarative run configuration: one file drives every CLI command.

Validation reports the dotted field path of the offending value. API keys
never live here; the HTTP backends read them from environment variables.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .pipeline import PipelineConfig, StageTurns


@dataclass
class DatasetConfig:
    papers: str = "papers.jsonl"
    authors: str = "authors.jsonl"


@dataclass
class YearConfig:
    start: int = 2000
    bound: int = 2010
    end: int = 2014


@dataclass
class FilterConfig:
    past_min_citations: int = 10
    con_min_citations: int = 5
    min_papers: int = 50
    min_coauthors: int = 50


@dataclass
class EmbeddingConfig:
    kind: str = "mock"  # "mock" | "http"
    base_url: str = ""
    model: str = "mxbai-embed-large"
    dims: int = 32
    seed: int = 0


@dataclass
class ChatConfig:
    kind: str = "scripted"  # "scripted" | "http"
    base_url: str = ""
    model: str = "default"
    script: str = ""
    temperature_discussion: float = 1.0
    temperature_decision: float = 0.2
    seed: int | None = None  # forwarded verbatim to chat backends that honor it


@dataclass
class MetricsConfig:
    k: int = 5
    sample_size: int = 1000
    llm_review: bool = False


@dataclass
class SweepSection:
    dimension: str = "team_size"
    values: list = field(default_factory=lambda: [2, 4, 8])
    runs_per_cell: int = 20


@dataclass
class Config:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    years: YearConfig = field(default_factory=YearConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    chat: ChatConfig = field(default_factory=ChatConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    sweep: SweepSection = field(default_factory=SweepSection)
    output_dir: str = "out"
    master_seed: int = 0
    workers: int = 1


def _require(obj: dict, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(obj).__name__}")


def _get(obj: dict, key: str, path: str, kind, default):
    if key not in obj:
        return default
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got bool")
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _known_keys(obj: dict, allowed: set[str], path: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _parse_turns(obj, path: str) -> StageTurns:
    if isinstance(obj, int) and not isinstance(obj, bool):
        if obj < 1:
            raise ConfigError(f"{path}: turns must be at least 1")
        return StageTurns.uniform(obj)
    if isinstance(obj, dict):
        _known_keys(obj, {"topic", "idea", "check", "abstract"}, path)
        kwargs = {}
        for stage in ("topic", "idea", "check", "abstract"):
            kwargs[stage] = _get(obj, stage, path, int, 5)
            if kwargs[stage] < 1:
                raise ConfigError(f"{path}.{stage}: turns must be at least 1")
        return StageTurns(**kwargs)
    raise ConfigError(f"{path}: expected an integer or a per-stage mapping")


def parse_config(doc: dict) -> Config:
    """Build a validated Config from a parsed document."""
    _require(doc, "config")
    _known_keys(
        doc,
        {"dataset", "years", "filters", "embedding", "chat", "pipeline", "metrics", "sweep",
         "output_dir", "master_seed", "workers"},
        "config",
    )
    cfg = Config()

    section = doc.get("dataset", {})
    _require(section, "dataset")
    _known_keys(section, {"papers", "authors"}, "dataset")
    cfg.dataset = DatasetConfig(
        papers=_get(section, "papers", "dataset", str, cfg.dataset.papers),
        authors=_get(section, "authors", "dataset", str, cfg.dataset.authors),
    )

    section = doc.get("years", {})
    _require(section, "years")
    _known_keys(section, {"start", "bound", "end"}, "years")
    cfg.years = YearConfig(
        start=_get(section, "start", "years", int, cfg.years.start),
        bound=_get(section, "bound", "years", int, cfg.years.bound),
        end=_get(section, "end", "years", int, cfg.years.end),
    )
    if not (cfg.years.start <= cfg.years.bound <= cfg.years.end):
        raise ConfigError("years: must satisfy start <= bound <= end")

    section = doc.get("filters", {})
    _require(section, "filters")
    _known_keys(section, {"past_min_citations", "con_min_citations", "min_papers", "min_coauthors"}, "filters")
    cfg.filters = FilterConfig(
        past_min_citations=_get(section, "past_min_citations", "filters", int, 10),
        con_min_citations=_get(section, "con_min_citations", "filters", int, 5),
        min_papers=_get(section, "min_papers", "filters", int, 50),
        min_coauthors=_get(section, "min_coauthors", "filters", int, 50),
    )
    for name in ("past_min_citations", "con_min_citations", "min_papers", "min_coauthors"):
        if getattr(cfg.filters, name) < 0:
            raise ConfigError(f"filters.{name}: must be non-negative")

    section = doc.get("embedding", {})
    _require(section, "embedding")
    _known_keys(section, {"kind", "base_url", "model", "dims", "seed"}, "embedding")
    cfg.embedding = EmbeddingConfig(
        kind=_get(section, "kind", "embedding", str, "mock"),
        base_url=_get(section, "base_url", "embedding", str, ""),
        model=_get(section, "model", "embedding", str, "mxbai-embed-large"),
        dims=_get(section, "dims", "embedding", int, 32),
        seed=_get(section, "seed", "embedding", int, 0),
    )
    if cfg.embedding.kind not in ("mock", "http"):
        raise ConfigError(f"embedding.kind: expected 'mock' or 'http', got {cfg.embedding.kind!r}")
    if cfg.embedding.kind == "http" and not cfg.embedding.base_url:
        raise ConfigError("embedding.base_url: required for the http embedding backend")
    if cfg.embedding.dims < 1:
        raise ConfigError("embedding.dims: must be positive")

    section = doc.get("chat", {})
    _require(section, "chat")
    _known_keys(
        section,
        {"kind", "base_url", "model", "script", "temperature_discussion", "temperature_decision", "seed"},
        "chat",
    )
    chat_seed = section.get("seed")
    if chat_seed is not None and (not isinstance(chat_seed, int) or isinstance(chat_seed, bool)):
        raise ConfigError("chat.seed: expected an integer or null")
    cfg.chat = ChatConfig(
        kind=_get(section, "kind", "chat", str, "scripted"),
        base_url=_get(section, "base_url", "chat", str, ""),
        model=_get(section, "model", "chat", str, "default"),
        script=_get(section, "script", "chat", str, ""),
        temperature_discussion=_get(section, "temperature_discussion", "chat", float, 1.0),
        temperature_decision=_get(section, "temperature_decision", "chat", float, 0.2),
        seed=chat_seed,
    )
    if cfg.chat.kind not in ("scripted", "mock", "http"):
        raise ConfigError(f"chat.kind: expected 'scripted', 'mock' or 'http', got {cfg.chat.kind!r}")
    if cfg.chat.kind == "http" and not cfg.chat.base_url:
        raise ConfigError("chat.base_url: required for the http chat backend")

    section = doc.get("pipeline", {})
    _require(section, "pipeline")
    _known_keys(
        section,
        {"n", "turns", "adaptive", "k_max", "retrieval_k", "invitation", "novelty_assessment",
         "self_review", "max_regenerations", "leader_id"},
        "pipeline",
    )
    leader_id = section.get("leader_id")
    if leader_id is not None and not isinstance(leader_id, str):
        raise ConfigError("pipeline.leader_id: expected a string or null")
    cfg.pipeline = PipelineConfig(
        n=_get(section, "n", "pipeline", int, 4),
        turns=_parse_turns(section["turns"], "pipeline.turns") if "turns" in section else StageTurns(),
        adaptive=_get(section, "adaptive", "pipeline", bool, False),
        k_max=_get(section, "k_max", "pipeline", int, 5),
        retrieval_k=_get(section, "retrieval_k", "pipeline", int, 5),
        invitation=_get(section, "invitation", "pipeline", bool, True),
        novelty_assessment=_get(section, "novelty_assessment", "pipeline", bool, True),
        self_review=_get(section, "self_review", "pipeline", bool, True),
        max_regenerations=_get(section, "max_regenerations", "pipeline", int, 1),
        model=doc.get("chat", {}).get("model", "default"),
        temperature_discussion=cfg.chat.temperature_discussion,
        temperature_decision=cfg.chat.temperature_decision,
        request_seed=cfg.chat.seed,
        leader_id=leader_id,
    )
    if cfg.pipeline.n < 2:
        raise ConfigError("pipeline.n: team size must be at least 2")
    if cfg.pipeline.k_max < 1:
        raise ConfigError("pipeline.k_max: must be at least 1")
    if cfg.pipeline.retrieval_k < 1:
        raise ConfigError("pipeline.retrieval_k: must be at least 1")

    section = doc.get("metrics", {})
    _require(section, "metrics")
    _known_keys(section, {"k", "sample_size", "llm_review"}, "metrics")
    cfg.metrics = MetricsConfig(
        k=_get(section, "k", "metrics", int, 5),
        sample_size=_get(section, "sample_size", "metrics", int, 1000),
        llm_review=_get(section, "llm_review", "metrics", bool, False),
    )
    if cfg.metrics.k < 1:
        raise ConfigError("metrics.k: must be positive")
    if cfg.metrics.sample_size < 1:
        raise ConfigError("metrics.sample_size: must be positive")

    section = doc.get("sweep", {})
    _require(section, "sweep")
    _known_keys(section, {"dimension", "values", "runs_per_cell"}, "sweep")
    values = section.get("values", [2, 4, 8])
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values: expected a non-empty list")
    cfg.sweep = SweepSection(
        dimension=_get(section, "dimension", "sweep", str, "team_size"),
        values=values,
        runs_per_cell=_get(section, "runs_per_cell", "sweep", int, 20),
    )
    if cfg.sweep.runs_per_cell < 1:
        raise ConfigError("sweep.runs_per_cell: must be at least 1")

    cfg.output_dir = _get(doc, "output_dir", "config", str, "out")
    cfg.master_seed = _get(doc, "master_seed", "config", int, 0)
    cfg.workers = _get(doc, "workers", "config", int, 1)
    if cfg.workers < 1:
        raise ConfigError("workers: must be at least 1")
    return cfg


def load_config(path: str | Path) -> Config:
    """Load a YAML or JSON config file and validate it."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    else:
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    return parse_config(doc)
