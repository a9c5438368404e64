"""Run configuration: validated knobs for every pipeline stage.

Precedence when assembling a config: built-in defaults < config file
(JSON or YAML, same field names) < explicit CLI flags.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .images import sha256_text

ENV_CACHE_DIR = "SEARCHDET_CACHE_DIR"
ENV_SEARCH_API_KEY = "SEARCHDET_SEARCH_API_KEY"
ENV_LLM_ENDPOINT = "SEARCHDET_LLM_ENDPOINT"


def default_cache_dir() -> str:
    return os.environ.get(ENV_CACHE_DIR, str(Path.home() / ".cache" / "searchdet"))


@dataclass
class RunConfig:
    # backends
    backend: str = "fixture"  # {real, fixture}
    fixture_embeddings: str | None = None
    fixture_masks: str | None = None
    engine_dir: str | None = None
    model_id: str = "facebook/dinov2-base"
    sam_model_id: str = "facebook/sam-vit-base"
    # exemplars
    n_pos: int = 5
    n_neg: int = 5
    negative_query_count: int = 1
    use_negatives: bool = True
    context_hint: str = ""
    # query construction
    pooling: str = "attention"  # {attention, mean}
    # selection
    dominance: float = 0.8
    sigma_mult: float = 3.0
    distance: str = "normalized"  # {normalized, raw}
    bin_mean: str = "all"  # {all, bin}
    # regions
    min_area_fraction: float = 0.0005
    max_masks: int = 100
    region_crop: bool = False
    # heatmap
    use_heatmap: bool = True
    heatmap_quantile: float = 0.85
    upsample: str = "bilinear"  # {bilinear, nearest}
    # grounding
    dedupe_iou: float = 0.9
    # io / reproducibility
    cache_dir: str = dataclasses.field(default_factory=default_cache_dir)
    manifest: str | None = None
    out_dir: str = "runs"
    seed: int = 0
    download_workers: int = 4
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.backend in ("real", "fixture"), f"backend must be real|fixture, got {self.backend!r}"),
            (self.pooling in ("attention", "mean"), f"pooling must be attention|mean, got {self.pooling!r}"),
            (self.distance in ("normalized", "raw"), f"distance must be normalized|raw, got {self.distance!r}"),
            (self.bin_mean in ("all", "bin"), f"bin_mean must be all|bin, got {self.bin_mean!r}"),
            (self.upsample in ("bilinear", "nearest"), f"upsample must be bilinear|nearest, got {self.upsample!r}"),
            (self.n_pos >= 1, f"n_pos must be >= 1, got {self.n_pos}"),
            (self.n_neg >= 0, f"n_neg must be >= 0, got {self.n_neg}"),
            (self.negative_query_count >= 0, "negative_query_count must be >= 0"),
            (0.0 < self.heatmap_quantile < 1.0, f"heatmap_quantile must be in (0, 1), got {self.heatmap_quantile}"),
            (0.0 < self.dominance <= 1.0, f"dominance must be in (0, 1], got {self.dominance}"),
            (self.sigma_mult > 0.0, f"sigma_mult must be > 0, got {self.sigma_mult}"),
            (0.0 < self.dedupe_iou <= 1.0, f"dedupe_iou must be in (0, 1], got {self.dedupe_iou}"),
            (0.0 <= self.min_area_fraction < 1.0, "min_area_fraction must be in [0, 1)"),
            (self.max_masks >= 1, "max_masks must be >= 1"),
            (self.download_workers >= 1, "download_workers must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return sha256_text(json.dumps(self.to_dict(), sort_keys=True))

    def replace(self, **overrides) -> "RunConfig":
        return dataclasses.replace(self, **overrides)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_sources(cls, file_path: str | Path | None = None, **overrides) -> "RunConfig":
        """Defaults, overlaid with a config file, overlaid with overrides."""
        values: dict = {}
        if file_path is not None:
            values.update(load_config_file(file_path))
        values.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(values) - cls.field_names()
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        doc = yaml.safe_load(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a single mapping")
    return doc
