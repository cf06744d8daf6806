"""Single-file pipeline configuration.

One JSON document drives every stage; commands read their own section
plus the shared paths. Hyperparameters all have desk-scale defaults so
a minimal config only lists the input paths and a workdir.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .embeddings import TransEConfig
from .errors import ConfigurationError
from .model import RerankerConfig
from .train import OptimizerConfig


@dataclass(frozen=True)
class PathsConfig:
    triples: str = ""
    word_vectors: str = ""
    collection: str = ""
    queries: str = ""
    qrels: str = ""
    candidates: str = ""
    workdir: str = "work"
    relation_merge: str | None = None  # None -> shipped default map


@dataclass(frozen=True)
class DistillConfig:
    pi: int = 20
    k: int = 2
    max_frontier: int = 10_000


@dataclass(frozen=True)
class EvalConfig:
    mrr_k: int = 10
    map_ks: tuple[int, ...] = (10, 30)


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    transe: TransEConfig = field(default_factory=TransEConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    model: RerankerConfig = field(default_factory=RerankerConfig)
    train: OptimizerConfig = field(default_factory=OptimizerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.model.validate()
        if self.model.entity_dim != self.transe.dim:
            raise ConfigurationError(
                f"model entity_dim {self.model.entity_dim} != transe dim {self.transe.dim}"
            )
        if self.distill.pi < 1 or self.distill.k < 1:
            raise ConfigurationError("distill pi and k must be >= 1")

    def require_paths(self, *names: str) -> None:
        """Check that the named input paths are configured and exist."""
        for name in names:
            value = getattr(self.paths, name)
            if not value:
                raise ConfigurationError(f"config paths.{name} is not set")
            if not Path(value).exists():
                raise ConfigurationError(f"paths.{name}: no such file {value!r}")

    def section_json(self, *sections: str) -> str:
        doc = {s: dataclasses.asdict(getattr(self, s)) for s in sections}
        return json.dumps(doc, sort_keys=True)


def _build_section(cls, doc: dict, name: str):
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise ConfigurationError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(
            f"unknown keys in config section {name!r}: {sorted(unknown)}"
        )
    if name == "eval" and "map_ks" in section:
        section = dict(section)
        section["map_ks"] = tuple(section["map_ks"])
    return cls(**section)


def load_config(path) -> PipelineConfig:
    """Parse and validate a pipeline config.

    Relative paths in the paths section are resolved against the config
    file's directory, so a bundled fixture works from any cwd.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a JSON object")
    base = Path(path).resolve().parent
    paths_section = doc.get("paths", {})
    if isinstance(paths_section, dict):
        for key, value in paths_section.items():
            if isinstance(value, str) and value and not Path(value).is_absolute():
                paths_section[key] = str(base / value)
    known = {"paths", "transe", "distill", "model", "train", "eval"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    cfg = PipelineConfig(
        paths=_build_section(PathsConfig, doc, "paths"),
        transe=_build_section(TransEConfig, doc, "transe"),
        distill=_build_section(DistillConfig, doc, "distill"),
        model=_build_section(RerankerConfig, doc, "model"),
        train=_build_section(OptimizerConfig, doc, "train"),
        eval=_build_section(EvalConfig, doc, "eval"),
    )
    cfg.validate()
    return cfg
