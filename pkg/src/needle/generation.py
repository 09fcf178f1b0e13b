"""Query refinement and guide-image generation through generator adapters."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AdapterError, GenerationError, RefinementError
from .wire import AdapterTransport, decode_png_b64, default_transport

_PUNCTUATION = re.compile(r"[!\"#$%&'()*+,\-./:;<=>?@\[\\\]^_`{|}~]+")
_WHITESPACE = re.compile(r"\s+")


@dataclass
class QuerySpec:
    query_id: str
    text: str
    topic: str = "general"
    k: int = 60
    feedback_mode: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class RefinementConfig:
    prefix: str = ""
    suffix: str = ""
    strip_punctuation: bool = True


@dataclass(frozen=True)
class GeneratorDescriptor:
    generator_id: str
    endpoint: str
    sizes: tuple[tuple[int, int], ...] | None = None  # None: any size accepted


@dataclass(eq=False)
class GuideTuple:
    """One synthetic image standing in for the query inside image space."""

    guide_id: str
    query_id: str
    generator_id: str
    seed: int
    image: np.ndarray
    prompt_used: str
    discarded: bool = False
    discard_reason: str = ""


def refine_query(text: str, config: RefinementConfig | None = None) -> str:
    """Strip punctuation/extra whitespace, then wrap with the configured affixes.

    Example: prefix "a sketch of" turns "a dog" into "a sketch of a dog".
    """
    config = config or RefinementConfig()
    if not text or not text.strip():
        raise RefinementError("query text is empty")
    core = text
    if config.strip_punctuation:
        core = _PUNCTUATION.sub(" ", core)
    core = _WHITESPACE.sub(" ", core).strip()
    prompt = " ".join(part for part in (config.prefix.strip(), core, config.suffix.strip()) if part)
    if not prompt:
        raise RefinementError(f"refinement of {text!r} produced an empty prompt")
    return prompt


def generate_guides(
    generator: GeneratorDescriptor,
    prompt: str,
    m: int,
    size: tuple[int, int] = (768, 768),
    base_seed: int = 0,
    query_id: str = "",
    transport: AdapterTransport | None = None,
) -> list[GuideTuple]:
    """Request m guides with seeds base_seed..base_seed+m-1 from one generator."""
    if m < 1:
        raise ValueError("guide count m must be >= 1")
    if generator.sizes is not None and tuple(size) not in generator.sizes:
        raise GenerationError(
            f"size {size} not supported (offers {generator.sizes})", generator.generator_id
        )
    transport = transport or default_transport()
    width, height = int(size[0]), int(size[1])
    payload = {
        "prompt": prompt,
        "count": m,
        "width": width,
        "height": height,
        "seed": base_seed,
    }
    try:
        resp = transport.post(generator.endpoint, "/v1/generate", payload)
    except AdapterError:
        raise
    except Exception as exc:
        raise GenerationError(f"generate request failed: {exc}", generator.generator_id) from exc
    images = resp.get("images", [])
    if len(images) != m:
        raise GenerationError(
            f"asked for {m} images, adapter returned {len(images)}", generator.generator_id
        )
    guides = []
    for j, item in enumerate(images):
        raster = decode_png_b64(item["png_b64"])
        if raster.shape[1] != width or raster.shape[0] != height:
            raise GenerationError(
                f"image {j} is {raster.shape[1]}x{raster.shape[0]}, requested {width}x{height}",
                generator.generator_id,
            )
        seed = int(item.get("seed", base_seed + j))
        guides.append(
            GuideTuple(
                guide_id=f"{generator.generator_id}:{seed}",
                query_id=query_id,
                generator_id=generator.generator_id,
                seed=seed,
                image=raster,
                prompt_used=prompt,
            )
        )
    return guides


def generate_all(
    generators: Sequence[GeneratorDescriptor],
    prompt: str,
    m_per_generator: int = 2,
    size: tuple[int, int] = (768, 768),
    base_seed: int = 0,
    query_id: str = "",
    transport: AdapterTransport | None = None,
) -> list[GuideTuple]:
    """One flat guide list over all generators, stable registry-then-seed order."""
    guides: list[GuideTuple] = []
    for gen in generators:
        guides.extend(
            generate_guides(
                gen,
                prompt,
                m_per_generator,
                size=size,
                base_seed=base_seed,
                query_id=query_id,
                transport=transport,
            )
        )
    return guides
