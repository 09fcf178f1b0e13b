"""Regenerate the golden wire-protocol fixtures.

The fixtures pin the adapter protocol at byte level (canonical JSON: sorted
keys, compact separators, repr floats) with all mock noise set to zero, so
any conforming adapter implementation must reproduce them exactly.

Run from the repository root:  python fixtures/wire/make_fixtures.py
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent


def main() -> None:
    from needle.simlab import make_world
    from needle.simlab.mocks import MockEmbedderAdapter, MockGeneratorAdapter
    from needle.simlab.world import SyntheticWorld, encode_latent_raster
    from needle.wire import canonical_json, encode_png

    seed_world = make_world(seed=1234, n_items=2, latent_dim=8, concepts=["alpha", "beta"])
    concepts = {
        name: [float(x) for x in seed_world.concepts[i]]
        for i, name in enumerate(seed_world.concept_names)
    }
    (HERE / "concepts.json").write_bytes(canonical_json(concepts) + b"\n")

    world = SyntheticWorld(
        seed=0,
        latent_dim=8,
        sigma_item=0.0,
        concept_names=list(concepts),
        concepts=np.array([concepts[n] for n in concepts], dtype=np.float32),
        items=[],
        image_size=(32, 32),
    )
    embedder = MockEmbedderAdapter(world, "mock-embedder", sigma_emb=0.0)
    generator = MockGeneratorAdapter(world, "mock-generator", sigma_gen=0.0)

    (HERE / "info_embedder_response.json").write_bytes(canonical_json(embedder.info()) + b"\n")
    (HERE / "info_generator_response.json").write_bytes(canonical_json(generator.info()) + b"\n")

    generate_request = {"prompt": "alpha", "count": 2, "width": 32, "height": 32, "seed": 7}
    generate_response = generator.handle("/v1/generate", generate_request)
    (HERE / "generate_request.json").write_bytes(canonical_json(generate_request) + b"\n")
    (HERE / "generate_response.json").write_bytes(canonical_json(generate_response) + b"\n")

    def raster_b64(name: str, nonce: int) -> str:
        latent = np.array(concepts[name], dtype=np.float32)
        return base64.b64encode(encode_png(encode_latent_raster(latent, (32, 32), nonce))).decode()

    embed_request = {
        "embedder_id": "mock-embedder",
        "images": [
            {"id": "0", "png_b64": raster_b64("alpha", 7)},
            {"id": "1", "png_b64": raster_b64("beta", 9)},
        ],
    }
    embed_response = embedder.handle("/v1/embed", embed_request)
    (HERE / "embed_request.json").write_bytes(canonical_json(embed_request) + b"\n")
    (HERE / "embed_response.json").write_bytes(canonical_json(embed_response) + b"\n")
    print(f"wrote fixtures to {HERE}")


if __name__ == "__main__":
    main()
