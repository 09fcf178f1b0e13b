"""Engine/service configuration, loaded from TOML (NEEDLE_CONFIG overrides)."""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .anomaly import AnomalyConfig
from .embedding import EmbedderDescriptor
from .errors import ConfigError
from .generation import GeneratorDescriptor, RefinementConfig
from .retrieval import FusionConfig
from .tiling import TilingConfig

ENV_CONFIG = "NEEDLE_CONFIG"


@dataclass
class ServiceConfig:
    dataset_root: Path
    index_dir: Path
    trust_path: Path
    embedders: list[EmbedderDescriptor]
    generators: list[GeneratorDescriptor]
    listen: str = "127.0.0.1:8080"
    tiling: TilingConfig = field(default_factory=TilingConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    guides_per_generator: int = 2
    guide_size: tuple[int, int] = (768, 768)
    base_seed: int = 0
    store_kind: str = "auto"
    eta: float = 0.1
    weight_floor: float = 1e-4

    def __post_init__(self):
        if not self.embedders:
            raise ConfigError("at least one embedder must be configured")
        if not self.generators:
            raise ConfigError("at least one generator must be configured")


def _tuple2(value, name: str) -> tuple[int, int]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{name} must be a [w, h] pair")
    return int(value[0]), int(value[1])


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Read the TOML config; relative paths resolve against the file's folder."""
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is None:
        raise ConfigError(f"no config path given and {ENV_CONFIG} is unset")
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    base = path.parent

    def respath(key: str, default: str) -> Path:
        p = Path(raw.get(key, default))
        return p if p.is_absolute() else base / p

    embedders = [
        EmbedderDescriptor(
            embedder_id=e["id"],
            dim=int(e["dim"]),
            endpoint=e["endpoint"],
            version=str(e.get("version", "1")),
        )
        for e in raw.get("embedders", [])
    ]
    generators = [
        GeneratorDescriptor(
            generator_id=g["id"],
            endpoint=g["endpoint"],
            sizes=tuple(tuple(s) for s in g["sizes"]) if "sizes" in g else None,
        )
        for g in raw.get("generators", [])
    ]
    tiling = raw.get("tiling", {})
    fusion = raw.get("fusion", {})
    anomaly = raw.get("anomaly", {})
    refinement = raw.get("refinement", {})
    generation = raw.get("generation", {})
    return ServiceConfig(
        dataset_root=respath("dataset_root", "data/images"),
        index_dir=respath("index_dir", "data/index"),
        trust_path=respath("trust_path", "data/trust.json"),
        listen=raw.get("listen", "127.0.0.1:8080"),
        embedders=embedders,
        generators=generators,
        tiling=TilingConfig(
            d=int(tiling.get("d", 5)),
            min_size=int(tiling.get("min_size", 224)),
            aspect_limit=float(tiling.get("aspect_limit", 3.0)),
            count_mode=tiling.get("count_mode", "intersect"),
        ),
        fusion=FusionConfig(
            k=int(fusion.get("k", 60)),
            tile_multiplier=int(fusion.get("tile_multiplier", 4)),
        ),
        anomaly=AnomalyConfig(
            d_r=int(anomaly.get("d_r", 5)),
            k_lof=anomaly.get("k_lof"),
            tau=float(anomaly.get("tau", 1.5)),
            reducer=anomaly.get("reducer", "pca"),
        ),
        refinement=RefinementConfig(
            prefix=refinement.get("prefix", ""),
            suffix=refinement.get("suffix", ""),
            strip_punctuation=bool(refinement.get("strip_punctuation", True)),
        ),
        guides_per_generator=int(generation.get("guides_per_generator", 2)),
        guide_size=_tuple2(generation.get("guide_size", [768, 768]), "generation.guide_size"),
        base_seed=int(generation.get("base_seed", 0)),
        store_kind=raw.get("store_kind", "auto"),
        eta=float(raw.get("eta", 0.1)),
        weight_floor=float(raw.get("weight_floor", 1e-4)),
    )
