import json

import pytest

from needle.engine import RetrievalEngine
from needle.errors import ConfigError, GenerationError
from needle.generation import QuerySpec
from needle.simlab import make_world
from needle.simlab.evaluate import build_world_config


class TestIndexDataset:
    def test_store_per_embedder_with_equal_counts(self, small_world):
        world, config, engine = small_world
        stores = engine.stores()
        assert set(stores) == {"emb-a", "emb-b"}
        counts = {e: len(s) for e, s in stores.items()}
        assert counts["emb-a"] == counts["emb-b"] == world.n_items  # one tile per item
        assert (config.index_dir / "emb-a.ndle").exists()
        assert (config.index_dir / "emb-b.ndle").exists()

    def test_manifest_counts_match_store(self, small_world):
        _, config, engine = small_world
        manifest = engine.tile_manifest()
        tiles = sum(len(e.tiles) for e in manifest)
        assert tiles == len(engine.stores()["emb-a"])

    def test_reindex_without_force_conflicts(self, small_world):
        _, _, engine = small_world
        with pytest.raises(ConfigError):
            engine.index_dataset()

    def test_empty_dataset_indexes_to_zero(self, tmp_path):
        world = make_world(seed=1, n_items=4, latent_dim=8, concepts=2)
        config = build_world_config(tmp_path, world)
        for p in (tmp_path / "images").iterdir():
            p.unlink()
        engine = RetrievalEngine(config)
        summary = engine.index_dataset()
        assert summary.images == 0
        assert summary.stores == {"emb-a": 0, "emb-b": 0}

    def test_undecodable_image_reported_not_fatal(self, tmp_path):
        world = make_world(seed=1, n_items=4, latent_dim=8, concepts=2)
        config = build_world_config(tmp_path, world)
        (tmp_path / "images" / "broken.png").write_bytes(b"not a png at all")
        engine = RetrievalEngine(config)
        summary = engine.index_dataset()
        assert summary.images == 4
        assert len(summary.errors) == 1


class TestSearchPipeline:
    def test_outcome_serialization_shape(self, small_world):
        world, _, engine = small_world
        outcome = engine.search(
            QuerySpec(query_id="q1", text=world.concept_names[0], k=5)
        )
        body = outcome.to_json_dict()
        assert body["query_id"] == "q1"
        assert len(body["results"]) == 5
        assert body["results"][0]["rank"] == 1
        assert {g["guide_id"] for g in body["guides"]}
        json.dumps(body)  # must be JSON-serializable as-is

    def test_ranks_are_dense_and_scores_sorted(self, small_world):
        world, _, engine = small_world
        outcome = engine.search(QuerySpec(query_id="q2", text=world.concept_names[1], k=8))
        scores = [r.score for r in outcome.results]
        assert scores == sorted(scores, reverse=True)

    def test_all_guides_discarded_is_error(self, small_world):
        world, _, engine = small_world
        prompt, guides = engine.prepare_guides(
            QuerySpec(query_id="q3", text=world.concept_names[0], k=5)
        )
        for g in guides:
            g.discarded = True
        with pytest.raises(GenerationError):
            engine.complete_search(
                QuerySpec(query_id="q3", text=world.concept_names[0], k=5), prompt, guides
            )

    def test_unknown_concept_fails_generation(self, small_world):
        _, _, engine = small_world
        with pytest.raises(GenerationError):
            engine.search(QuerySpec(query_id="q4", text="xylophone parade", k=5))


class TestFeedback:
    def test_feedback_moves_weights_for_topic_only(self, small_world):
        world, config, engine = small_world
        engine.trust.ensure_topic("general", engine.registry.ids())
        engine.trust.ensure_topic("other", engine.registry.ids())
        before_other = dict(engine.trust.topics["other"])
        outcome = engine.search(
            QuerySpec(query_id="q5", text=world.concept_names[0], topic="general", k=6)
        )
        bad = outcome.results[0].image_id
        engine.apply_feedback(outcome, {bad})
        assert engine.trust.topics["other"] == before_other
        assert abs(sum(engine.trust.topics["general"].values()) - 1.0) <= 1e-9
        assert config.trust_path.exists()

    def test_feedback_persists_to_disk(self, small_world):
        world, config, engine = small_world
        outcome = engine.search(
            QuerySpec(query_id="q6", text=world.concept_names[2], topic="birds", k=6)
        )
        engine.apply_feedback(outcome, {outcome.results[1].image_id})
        from needle.trust import load_trust

        reloaded = load_trust(config.trust_path)
        assert "birds" in reloaded.topics
