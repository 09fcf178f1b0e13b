import numpy as np
import pytest

from needle.embedding import normalize


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)


def random_unit(rng, dim, embedder_id="e"):
    return normalize(rng.standard_normal(dim), embedder_id)


@pytest.fixture
def small_world(tmp_path):
    """A tiny synthetic world wired to mock adapters, indexed and ready."""
    from needle.engine import RetrievalEngine
    from needle.simlab import make_world
    from needle.simlab.evaluate import build_world_config

    world = make_world(seed=11, n_items=40, latent_dim=8, concepts=4)
    config = build_world_config(tmp_path, world, sigma=0.05, guides_per_generator=4, k=10)
    engine = RetrievalEngine(config)
    engine.index_dataset()
    return world, config, engine
