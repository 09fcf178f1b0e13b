"""In-process mock adapters speaking the embed/generate wire protocol.

The mock embedder inverts the latent raster codec and adds deterministic
zero-mean observation noise keyed on the exact image bytes, so identical
inputs always embed identically while distinct images draw independent noise.
The mock generator resolves a prompt to a world latent and renders it with
generation noise keyed on (prompt, seed).
"""
from __future__ import annotations

import base64
import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import AdapterError, CodecError, GenerationError
from ..wire import decode_png, encode_png, parse_endpoint_params
from .world import SyntheticWorld, decode_latent_raster, encode_latent_raster, load_world


def _rng_from(*parts: bytes) -> np.random.Generator:
    digest = hashlib.sha256(b"\x1f".join(parts)).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@dataclass
class MockEmbedderAdapter:
    world: SyntheticWorld
    embedder_id: str
    sigma_emb: float = 0.05
    salt: str = ""

    @property
    def dim(self) -> int:
        return self.world.latent_dim

    def info(self) -> dict:
        return {"kind": "embedder", "id": self.embedder_id, "dim": self.dim}

    def embed_bytes(self, png_bytes: bytes) -> np.ndarray:
        raster = decode_png(png_bytes)
        try:
            latent, _ = decode_latent_raster(raster)
        except CodecError as exc:
            raise AdapterError(f"unreadable synthetic raster: {exc}", self.embedder_id) from exc
        if self.sigma_emb > 0:
            rng = _rng_from(png_bytes, self.embedder_id.encode(), self.salt.encode())
            noise = self.sigma_emb * rng.standard_normal(self.dim)
        else:
            noise = 0.0
        return _unit(latent.astype(np.float64) + noise).astype(np.float32)

    def handle(self, path: str, payload: dict) -> dict:
        if path != "/v1/embed":
            raise AdapterError(f"unsupported path {path}", self.embedder_id)
        vectors = []
        for item in payload.get("images", []):
            png_bytes = base64.b64decode(item["png_b64"])
            vec = self.embed_bytes(png_bytes)
            vectors.append({"id": item["id"], "values": [float(x) for x in vec]})
        return {"dim": self.dim, "vectors": vectors}


@dataclass
class MockGeneratorAdapter:
    world: SyntheticWorld
    generator_id: str
    sigma_gen: float = 0.05

    def info(self) -> dict:
        return {"kind": "generator", "id": self.generator_id}

    def generate_latent(self, prompt: str, seed: int) -> np.ndarray:
        try:
            target = self.world.resolve_prompt(prompt)
        except KeyError as exc:
            raise GenerationError(str(exc), self.generator_id) from exc
        if self.sigma_gen > 0:
            rng = _rng_from(
                prompt.encode(),
                seed.to_bytes(8, "little", signed=True),
                self.generator_id.encode(),
                self.world.seed.to_bytes(8, "little", signed=True),
            )
            noise = self.sigma_gen * rng.standard_normal(self.world.latent_dim)
        else:
            noise = 0.0
        return _unit(target.astype(np.float64) + noise).astype(np.float32)

    def handle(self, path: str, payload: dict) -> dict:
        if path != "/v1/generate":
            raise AdapterError(f"unsupported path {path}", self.generator_id)
        prompt = payload["prompt"]
        count = int(payload["count"])
        width, height = int(payload["width"]), int(payload["height"])
        base_seed = int(payload.get("seed", 0))
        images = []
        for j in range(count):
            seed = base_seed + j
            latent = self.generate_latent(prompt, seed)
            raster = encode_latent_raster(latent, (width, height), nonce=seed)
            images.append(
                {
                    "seed": seed,
                    "png_b64": base64.b64encode(encode_png(raster)).decode("ascii"),
                }
            )
        return {"images": images}


_WORLD_CACHE: dict[str, SyntheticWorld] = {}
_CACHE_LOCK = threading.Lock()


def _cached_world(path: str) -> SyntheticWorld:
    key = str(Path(path).resolve())
    with _CACHE_LOCK:
        if key not in _WORLD_CACHE:
            _WORLD_CACHE[key] = load_world(path)
        return _WORLD_CACHE[key]


def adapter_from_endpoint(endpoint: str):
    """Materialize a mock adapter from a ``world:`` endpoint string.

    Examples:
        world:data/world.json?kind=embedder&id=emb-a&sigma=0.05&salt=a
        world:data/world.json?kind=generator&id=gen-a&sigma=0.05
    """
    path, params = parse_endpoint_params(endpoint)
    world = _cached_world(path)
    kind = params.get("kind", "")
    adapter_id = params.get("id", kind)
    sigma = float(params.get("sigma", "0.05"))
    if kind == "embedder":
        return MockEmbedderAdapter(
            world, adapter_id, sigma_emb=sigma, salt=params.get("salt", "")
        )
    if kind == "generator":
        return MockGeneratorAdapter(world, adapter_id, sigma_gen=sigma)
    raise AdapterError(f"endpoint {endpoint!r} must set kind=embedder or kind=generator")
