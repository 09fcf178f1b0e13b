"""Self-contained synthetic evaluation: build a world, index it, score queries.

Every query targets one planted item; a hit means the target shows up in the
top-k at all, and average precision grades how early same-concept items
appear. Ground truth is exact because relevance is defined by the world's
concept assignment.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import ServiceConfig
from ..embedding import EmbedderDescriptor
from ..engine import RetrievalEngine
from ..generation import GeneratorDescriptor, QuerySpec
from ..retrieval import FusionConfig
from .metrics import average_precision, hit_rate, mean_average_precision, mean_hit_rate
from .world import SyntheticWorld, export_dataset, make_world, save_world


@dataclass
class EvalSettings:
    world_seed: int = 7
    n_items: int = 1000
    n_concepts: int = 10
    latent_dim: int = 16
    sigma: float = 0.05
    guides_per_query: int = 4
    n_queries: int = 50
    k: int = 10
    relevant_cap: int = 10  # R per query: min(cap, same-concept corpus count)
    image_size: tuple[int, int] = (64, 64)


def build_world_config(
    workdir: str | Path,
    world: SyntheticWorld,
    sigma: float = 0.05,
    n_embedders: int = 2,
    guides_per_generator: int = 4,
    k: int = 10,
    store_kind: str = "auto",
) -> ServiceConfig:
    """Write the world and dataset under workdir and wire mock adapters to them."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    world_path = workdir / "world.json"
    save_world(world, world_path)
    export_dataset(world, workdir / "images")
    embedders = [
        EmbedderDescriptor(
            embedder_id=f"emb-{chr(ord('a') + i)}",
            dim=world.latent_dim,
            endpoint=(
                f"world:{world_path}?kind=embedder&id=emb-{chr(ord('a') + i)}"
                f"&sigma={sigma}&salt={chr(ord('a') + i)}"
            ),
        )
        for i in range(n_embedders)
    ]
    generators = [
        GeneratorDescriptor(
            generator_id="gen-a",
            endpoint=f"world:{world_path}?kind=generator&id=gen-a&sigma={sigma}",
        )
    ]
    return ServiceConfig(
        dataset_root=workdir / "images",
        index_dir=workdir / "index",
        trust_path=workdir / "trust.json",
        embedders=embedders,
        generators=generators,
        fusion=FusionConfig(k=k),
        guides_per_generator=guides_per_generator,
        guide_size=world.image_size,
        store_kind=store_kind,
    )


def run_synthetic_eval(settings: EvalSettings | None = None, workdir: str | Path | None = None) -> dict:
    """Index a fresh synthetic corpus and report per-query AP/hit plus means."""
    settings = settings or EvalSettings()
    if workdir is None:
        with tempfile.TemporaryDirectory(prefix="needle-eval-") as tmp:
            return run_synthetic_eval(settings, tmp)
    world = make_world(
        seed=settings.world_seed,
        n_items=settings.n_items,
        latent_dim=settings.latent_dim,
        concepts=settings.n_concepts,
        image_size=settings.image_size,
    )
    config = build_world_config(
        workdir,
        world,
        sigma=settings.sigma,
        guides_per_generator=settings.guides_per_query,
        k=settings.k,
    )
    engine = RetrievalEngine(config)
    engine.index_dataset(force=True)

    rng = np.random.default_rng(settings.world_seed + 1)
    targets = rng.choice(settings.n_items, size=settings.n_queries, replace=False)
    concept_counts = {
        c: sum(1 for it in world.items if it.concept_id == c)
        for c in range(len(world.concept_names))
    }
    per_query = []
    for qi, target in enumerate(sorted(int(t) for t in targets)):
        item = world.items[target]
        text = f"find item-{target} {world.concept_names[item.concept_id]}"
        outcome = engine.search(
            QuerySpec(query_id=f"eval-{qi}", text=text, topic="general", k=settings.k)
        )
        ranked_ids = [r.image_id for r in outcome.results]
        flags = [world.items[i].concept_id == item.concept_id for i in ranked_ids]
        total_relevant = min(settings.relevant_cap, concept_counts[item.concept_id])
        per_query.append(
            {
                "query": text,
                "target": target,
                "ap": average_precision(flags, total_relevant),
                "hit": hit_rate(ranked_ids, target),
            }
        )
    return {
        "per_query": per_query,
        "mAP": mean_average_precision([q["ap"] for q in per_query]),
        "mHR": mean_hit_rate([q["hit"] for q in per_query]),
    }
