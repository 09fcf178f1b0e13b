"""Deterministic synthetic semantic world with invertible raster rendering.

Items are unit latent vectors clustered around named concept directions. Each
item renders to a small image whose pixels carry the latent losslessly (a
byte-exact payload strip over a smooth procedural background), so a mock
embedder can recover the latent from the picture alone and the whole
generate -> embed -> retrieve loop closes without any learned model.
"""
from __future__ import annotations

import json
import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CodecError

CODEC_MAGIC = b"LV01"


def _squash(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "", text.lower())


@dataclass(frozen=True)
class NoiseModel:
    sigma_gen: float = 0.05
    sigma_emb: float = 0.05

    def __post_init__(self):
        if self.sigma_gen < 0 or self.sigma_emb < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass
class WorldItem:
    item_id: int
    concept_id: int
    latent: np.ndarray


@dataclass
class SyntheticWorld:
    seed: int
    latent_dim: int
    sigma_item: float
    concept_names: list[str]
    concepts: np.ndarray  # (n_concepts, latent_dim) unit rows
    items: list[WorldItem]
    image_size: tuple[int, int] = (64, 64)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def concept_index(self, name: str) -> int:
        return self.concept_names.index(name)

    def resolve_prompt(self, prompt: str) -> np.ndarray:
        """Latent addressed by a prompt: an item reference or a concept name.

        Item references ("item-17", "item 17") take precedence so targeted
        queries can aim at one specific picture; otherwise the longest concept
        name contained in the prompt wins. Matching ignores punctuation and
        spacing, which query refinement may have rewritten.
        """
        ref = re.search(r"item[\s_-]*(\d+)", prompt, re.IGNORECASE)
        if ref:
            idx = int(ref.group(1))
            if 0 <= idx < len(self.items):
                return self.items[idx].latent
        flat = _squash(prompt)
        matches = [name for name in self.concept_names if _squash(name) in flat]
        if not matches:
            raise KeyError(f"prompt {prompt!r} names no known concept or item")
        best = max(matches, key=lambda n: len(_squash(n)))
        return self.concepts[self.concept_index(best)]

    def render_item(self, item: WorldItem) -> np.ndarray:
        return encode_latent_raster(item.latent, self.image_size, nonce=item.item_id)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def make_world(
    seed: int,
    n_items: int,
    latent_dim: int,
    concepts: int | list[str],
    sigma_item: float = 0.1,
    image_size: tuple[int, int] = (64, 64),
) -> SyntheticWorld:
    """Build a reproducible world; items take concepts round-robin."""
    if latent_dim < 2:
        raise ValueError("latent_dim must be >= 2")
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    if isinstance(concepts, int):
        if concepts < 1:
            raise ValueError("need at least one concept")
        concept_names = [f"concept-{i:02d}" for i in range(concepts)]
    else:
        concept_names = list(concepts)
        if not concept_names:
            raise ValueError("need at least one concept")
    rng = np.random.default_rng(seed)
    concept_mat = np.stack(
        [_unit(rng.standard_normal(latent_dim)) for _ in concept_names]
    ).astype(np.float32)
    items = []
    for i in range(n_items):
        c = i % len(concept_names)
        noise = sigma_item * rng.standard_normal(latent_dim)
        latent = _unit(concept_mat[c].astype(np.float64) + noise).astype(np.float32)
        items.append(WorldItem(item_id=i, concept_id=c, latent=latent))
    return SyntheticWorld(
        seed=seed,
        latent_dim=latent_dim,
        sigma_item=sigma_item,
        concept_names=concept_names,
        concepts=concept_mat,
        items=items,
        image_size=(int(image_size[0]), int(image_size[1])),
    )


def save_world(world: SyntheticWorld, path: str | Path) -> None:
    """Persist the generating parameters; load rebuilds the identical world."""
    Path(path).write_text(
        json.dumps(
            {
                "seed": world.seed,
                "n_items": world.n_items,
                "latent_dim": world.latent_dim,
                "sigma_item": world.sigma_item,
                "concepts": world.concept_names,
                "image_size": list(world.image_size),
            },
            indent=2,
        )
        + "\n"
    )


def load_world(path: str | Path) -> SyntheticWorld:
    params = json.loads(Path(path).read_text())
    return make_world(
        seed=params["seed"],
        n_items=params["n_items"],
        latent_dim=params["latent_dim"],
        concepts=params["concepts"],
        sigma_item=params["sigma_item"],
        image_size=tuple(params.get("image_size", (64, 64))),
    )


def export_dataset(world: SyntheticWorld, directory: str | Path) -> list[Path]:
    """Render every item to <dir>/item-<id>.png; filenames carry the ids."""
    from ..wire import encode_png

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for item in world.items:
        p = directory / f"item-{item.item_id:05d}.png"
        p.write_bytes(encode_png(world.render_item(item)))
        paths.append(p)
    return paths


# --- latent raster codec ----------------------------------------------------
#
# Payload strip layout (bytes, little-endian), written into the image's RGB
# byte stream row-major from pixel (0, 0):
#   magic "LV01" | dim u16 | nonce u64 | dim x f32 | crc32 u32
# The remaining pixels hold a smooth low-amplitude gradient derived from the
# nonce, dim enough to never trip the edge detector.


def encode_latent_raster(
    latent: np.ndarray, size: tuple[int, int], nonce: int = 0
) -> np.ndarray:
    w, h = int(size[0]), int(size[1])
    vec = np.asarray(latent, dtype=np.float32)
    body = CODEC_MAGIC + struct.pack("<HQ", vec.shape[0], nonce & 0xFFFFFFFFFFFFFFFF) + vec.tobytes()
    payload = body + struct.pack("<I", zlib.crc32(body))
    if len(payload) > w * h * 3:
        raise CodecError(f"latent of dim {vec.shape[0]} does not fit a {w}x{h} raster")
    rng = np.random.default_rng(nonce & 0xFFFFFFFF)
    base = int(rng.integers(90, 150))
    rows = np.linspace(0, 20, h).astype(np.uint8)[:, None, None]
    canvas = np.full((h, w, 3), base, dtype=np.uint8) + rows
    flat = canvas.reshape(-1)
    flat[: len(payload)] = np.frombuffer(payload, dtype=np.uint8)
    return canvas


def decode_latent_raster(raster: np.ndarray) -> tuple[np.ndarray, int]:
    arr = np.asarray(raster)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise CodecError("latent raster must be an RGB uint8 image")
    flat = arr.reshape(-1).tobytes()
    if flat[:4] != CODEC_MAGIC:
        raise CodecError("raster carries no latent payload")
    dim, nonce = struct.unpack_from("<HQ", flat, 4)
    body_len = 4 + 10 + dim * 4
    if len(flat) < body_len + 4:
        raise CodecError("latent payload truncated")
    body = flat[:body_len]
    (crc,) = struct.unpack_from("<I", flat, body_len)
    if zlib.crc32(body) != crc:
        raise CodecError("latent payload checksum mismatch")
    vec = np.frombuffer(body[14:body_len], dtype="<f4").copy()
    return vec, nonce
