"""Acceptance suite: one test per release criterion, each printing a verdict.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. Every expected value here is either arithmetic done in place or the
output of an independent oracle written in this file.
"""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from needle.embedding import cosine_distance, normalize
from needle.simlab import make_world
from needle.simlab.evaluate import build_world_config


@contextmanager
def criterion(number, slug):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number:02d} ({slug}): FAIL")
        raise
    print(f"[acceptance] criterion {number:02d} ({slug}): PASS")


# -- 1: exact estimator equals a brute-force double-loop oracle ---------------


def brute_force_mean_distance_sort(guide_vectors, stores):
    """Oracle: per image, min-tile distance per (guide, embedder), averaged
    with plain loops, then sorted by (mean, id)."""
    sums = {}
    pairs = 0
    for embedder_id, per_guide in guide_vectors.items():
        entries = stores[embedder_id].entries()
        for vec in per_guide.values():
            pairs += 1
            best = {}
            for e in entries:
                d = cosine_distance(vec, e.vector)
                if e.image_id not in best or d < best[e.image_id]:
                    best[e.image_id] = d
            for img, d in best.items():
                sums[img] = sums.get(img, 0.0) + d
    means = {img: s / pairs for img, s in sums.items()}
    return [img for img, _ in sorted(means.items(), key=lambda kv: (kv[1], kv[0]))]


def test_criterion_01_exact_estimator_oracle(tmp_path):
    with criterion(1, "exact-estimator-oracle"):
        start = time.time()
        from needle.engine import RetrievalEngine
        from needle.generation import QuerySpec
        from needle.retrieval import estimate_distance_exact, topk_exact

        # (a) the real pipeline: mock world, 2 embedders, m = 4 guides
        world = make_world(seed=31, n_items=240, latent_dim=8, concepts=6)
        config = build_world_config(tmp_path, world, guides_per_generator=4, k=10)
        engine = RetrievalEngine(config)
        summary = engine.index_dataset()
        assert summary.tiles <= 1000
        query = QuerySpec(query_id="acc1", text=world.concept_names[0], k=10)
        prompt, guides = engine.prepare_guides(query)
        assert len(guides) == 4
        guide_vectors = engine._embed_guides(guides)
        stores = engine.stores()

        estimates = estimate_distance_exact(guide_vectors, stores)
        got = topk_exact(estimates, len(estimates))
        want = brute_force_mean_distance_sort(guide_vectors, stores)
        assert got == want

        # (b) multi-tile images: several tiles per image must collapse to the min
        from needle.vecstore import IndexEntry, build

        rng = np.random.default_rng(77)
        dim = 12
        multi_stores = {}
        multi_guides = {}
        for embedder_id in ("ma", "mb"):
            entries = [
                IndexEntry(
                    tile_id=t,
                    image_id=t % 50,
                    vector=normalize(rng.standard_normal(dim), embedder_id),
                )
                for t in range(400)
            ]
            multi_stores[embedder_id] = build(entries, embedder_id=embedder_id, dim=dim)
            multi_guides[embedder_id] = {
                f"g{j}": normalize(rng.standard_normal(dim), embedder_id) for j in range(4)
            }
        got2 = topk_exact(estimate_distance_exact(multi_guides, multi_stores), 50)
        want2 = brute_force_mean_distance_sort(multi_guides, multi_stores)
        assert got2 == want2
        assert time.time() - start < 10.0


# -- 2: concentration of the mean estimator vs the analytic bound -------------


def test_criterion_02_concentration_grid():
    with criterion(2, "concentration-bound"):
        from needle.simlab import chernoff_bound, concentration_trial

        start = time.time()
        assert chernoff_bound(16, 0.5, 0.5) == pytest.approx(0.8813, abs=1e-4)
        for m in (4, 16, 64):
            for gamma in (0.2, 0.5):
                for delta in (0.3, 0.5):
                    report = concentration_trial(
                        m=m, gamma=gamma, delta_true=delta, trials=10_000, seed=1234
                    )
                    slack = 3.0 * report.binomial_sigma()
                    assert report.empirical_prob <= report.chernoff_bound + slack, (
                        f"m={m} gamma={gamma} delta={delta}: "
                        f"{report.empirical_prob} > {report.chernoff_bound} + {slack}"
                    )
        assert time.time() - start < 60.0


# -- 3: tiling property suite --------------------------------------------------


def test_criterion_03_tiling_properties():
    with criterion(3, "tiling-properties"):
        from needle.tiling import EdgeObject, Rect, TilingConfig, count_objects, smart_tile

        # hand-traced split: two far-apart objects, d=1 -> exactly the halves
        objects = [
            EdgeObject(0, Rect(200, 200, 100, 100)),
            EdgeObject(1, Rect(700, 700, 100, 100)),
        ]
        ts = smart_tile((1000, 1000), objects, TilingConfig(d=1, min_size=100))
        assert ts.tiles == [Rect(0, 0, 500, 1000), Rect(500, 0, 500, 1000)]

        rng = np.random.default_rng(404)
        for trial in range(200):
            w = int(rng.integers(64, 1600))
            h = int(rng.integers(64, 1600))
            config = TilingConfig(
                d=int(rng.integers(1, 8)),
                min_size=int(rng.integers(32, 512)),
                aspect_limit=float(rng.uniform(1.5, 5.0)),
            )
            objs = []
            for i in range(int(rng.integers(0, 25))):
                ow = int(rng.integers(4, w // 4 + 5))
                oh = int(rng.integers(4, h // 4 + 5))
                ox = int(rng.integers(0, max(1, w - ow)))
                oy = int(rng.integers(0, max(1, h - oh)))
                objs.append(EdgeObject(i, Rect(ox, oy, ow, oh)))

            tileset = smart_tile((w, h), objs, config)
            # partition exactness
            assert sum(t.area for t in tileset.tiles) == w * h
            for i, a in enumerate(tileset.tiles):
                for b in tileset.tiles[i + 1 :]:
                    assert not a.intersects(b)
            # stop-condition soundness at every leaf
            for tile in tileset.tiles:
                n = count_objects(objs, tile, config.count_mode)
                assert n <= config.d or tile.w < config.min_size or tile.h < config.min_size
            # determinism
            assert smart_tile((w, h), objs, config).tiles == tileset.tiles
            # d-monotonicity
            bigger_d = TilingConfig(
                d=config.d + 3, min_size=config.min_size, aspect_limit=config.aspect_limit
            )
            assert len(smart_tile((w, h), objs, bigger_d).tiles) <= len(tileset.tiles)


# -- 4: fusion arithmetic and invariances ---------------------------------------


def test_criterion_04_fusion():
    with criterion(4, "rank-fusion"):
        from needle.retrieval import FusionConfig, RankEntry, RankedList, fuse
        from needle.trust import TrustTable

        def ranked(guide, embedder, ids):
            return RankedList(
                guide_id=guide,
                embedder_id=embedder,
                entries=[RankEntry(i, i, 0.1 + 0.01 * p) for p, i in enumerate(ids)],
            )

        def table(weights):
            t = TrustTable()
            t.topics["general"] = dict(weights)
            return t

        a, b, c = 1, 2, 3
        out = fuse(
            [ranked("g0", "e0", [a, b, c]), ranked("g1", "e1", [b, a, c])],
            table({"e0": 0.6, "e1": 0.4}),
            "general",
            FusionConfig(k=3),
        )
        scores = {s.image_id: s.score for s in out}
        assert abs(scores[a] - 0.8) < 1e-12
        assert abs(scores[b] - 0.7) < 1e-12
        assert abs(scores[c] - 1.0 / 3.0) < 1e-12
        assert [s.image_id for s in out] == [a, b, c]

        single = fuse([ranked("g", "e", [9, 4, 7])], table({"e": 1.0}), "general", FusionConfig(k=3))
        assert [s.image_id for s in single] == [9, 4, 7]

        # scaling all weights by c scales scores by c and cannot reorder any
        # pair with distinct scores; exactly tied pairs may flip only through
        # float rounding, so the order check skips score gaps below 1e-9
        rng = np.random.default_rng(55)
        for _ in range(100):
            n_emb = int(rng.integers(1, 4))
            n_img = int(rng.integers(2, 12))
            k = int(rng.integers(1, n_img + 1))
            weights = {f"e{i}": float(rng.uniform(0.05, 1.0)) for i in range(n_emb)}
            lists = []
            for e in weights:
                for g in range(int(rng.integers(1, 3))):
                    perm = rng.permutation(n_img)[: int(rng.integers(1, n_img + 1))]
                    lists.append(ranked(f"{e}g{g}", e, [int(x) for x in perm]))
            scale = float(rng.uniform(0.1, 10.0))
            out1 = fuse(lists, table(weights), "general", FusionConfig(k=k))
            out2 = fuse(
                lists,
                table({e: w * scale for e, w in weights.items()}),
                "general",
                FusionConfig(k=k),
            )
            assert [s.image_id for s in out1] == [s.image_id for s in out2] or all(
                abs(s1.score - s2.score / scale) <= 1e-9 for s1, s2 in zip(out1, out2)
            )
            score1 = {s.image_id: s.score for s in out1}
            pos2 = {s.image_id: i for i, s in enumerate(out2)}
            ids1 = [s.image_id for s in out1]
            for i, x in enumerate(ids1):
                for y in ids1[i + 1 :]:
                    if score1[x] > score1[y] + 1e-9 and y in pos2 and x in pos2:
                        assert pos2[x] < pos2[y]
            for s1, s2 in zip(sorted(out1, key=lambda s: s.image_id),
                              sorted(out2, key=lambda s: s.image_id)):
                assert s2.score == pytest.approx(scale * s1.score, rel=1e-9)


# -- 5: multiplicative weight updates -----------------------------------------


def test_criterion_05_weight_updates():
    with criterion(5, "trust-updates"):
        from needle.trust import TrustTable, update_weights

        t = TrustTable(eta=0.1)
        t.topics["general"] = {"a": 0.5, "b": 0.5}
        update_weights(t, "general", {"a": 1.0, "b": 0.0})
        assert t.topics["general"]["a"] == pytest.approx(0.473684, abs=1e-6)
        assert t.topics["general"]["b"] == pytest.approx(0.526316, abs=1e-6)

        rng = np.random.default_rng(66)
        t = TrustTable(eta=0.1, floor=1e-4)
        embedders = ["a", "b", "c", "d"]
        topics = [f"t{i}" for i in range(5)]
        for topic in topics:
            t.ensure_topic(topic, embedders)
        for _ in range(1000):
            topic = topics[int(rng.integers(len(topics)))]
            others = {o: dict(t.topics[o]) for o in topics if o != topic}
            update_weights(t, topic, {e: float(rng.uniform(0, 1)) for e in embedders})
            weights = t.topics[topic]
            assert abs(sum(weights.values()) - 1.0) <= 1e-9
            assert all(w >= t.floor for w in weights.values())
            for o, before in others.items():
                assert t.topics[o] == before


# -- 6: LOF vs a from-definition oracle ----------------------------------------


def lof_oracle(points, k):
    pts = [list(map(float, p)) for p in points]
    n = len(pts)

    def dist(i, j):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(pts[i], pts[j])))

    def others(i):
        return sorted((dist(i, j), j) for j in range(n) if j != i)

    def lrd(i):
        nn = others(i)[:k]
        k_of = lambda o: others(o)[k - 1][0]
        mean_reach = sum(max(k_of(j), d) for d, j in nn) / k
        return min(1.0 / mean_reach, 1e12) if mean_reach > 0 else 1e12

    return [
        sum(lrd(j) for _, j in others(i)[:k]) / k / lrd(i)
        for i in range(n)
    ]


def test_criterion_06_lof_oracle():
    with criterion(6, "lof-oracle"):
        from needle.anomaly import aggregate_outlier, flag_anomalies, lof_scores

        rng = np.random.default_rng(88)
        for _ in range(100):
            n = int(rng.integers(5, 51))
            d = int(rng.integers(1, 6))
            k = int(rng.integers(2, min(n - 1, 12) + 1))
            pts = rng.standard_normal((n, d)) * float(rng.uniform(0.5, 3.0))
            np.testing.assert_allclose(lof_scores(pts, k), lof_oracle(pts, k), atol=1e-9)

        # planted outlier: 9 points in a unit cluster, one at 10 sigma
        cluster = rng.standard_normal((9, 4))
        outlier = np.full((1, 4), 10.0 * np.std(cluster))
        pts = np.vstack([cluster, outlier])
        scores = lof_scores(pts, 4)
        per_guide = {f"g{i}": float(s) for i, s in enumerate(scores)}
        flagged = flag_anomalies(aggregate_outlier({"e": per_guide}, {"e": 1.0}), tau=1.5)
        assert "g9" in flagged
        assert scores[9] == max(scores)


# -- 7: approximate index recall -----------------------------------------------


def test_criterion_07_ann_recall():
    with criterion(7, "ann-recall"):
        from needle.vecstore import IndexEntry, build

        start = time.time()
        rng = np.random.default_rng(2024)
        n, dim, k, n_queries = 10_000, 64, 10, 100
        raw = rng.standard_normal((n, dim)).astype(np.float32)
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        entries = [
            IndexEntry(tile_id=i, image_id=i, vector=normalize(raw[i], "e"))
            for i in range(n)
        ]
        exact = build(entries, embedder_id="e", dim=dim, index_kind="exact")
        approx = build(
            entries, embedder_id="e", dim=dim, index_kind="hnsw",
            m=16, ef_construction=200, ef_search=100,
        )
        recalls = []
        for _ in range(n_queries):
            q = normalize(rng.standard_normal(dim), "e")
            truth = {r.tile_id for r in exact.knn(q, k)}
            got = {r.tile_id for r in approx.knn(q, k)}
            recalls.append(len(truth & got) / k)
        elapsed = time.time() - start
        assert np.mean(recalls) >= 0.9, f"recall {np.mean(recalls):.4f}"
        assert elapsed < 120.0, f"took {elapsed:.1f}s"


# -- 8: end-to-end synthetic retrieval ------------------------------------------


def test_criterion_08_end_to_end_hit_rate(tmp_path):
    with criterion(8, "end-to-end-hit-rate"):
        from needle.simlab import average_precision
        from needle.simlab.evaluate import EvalSettings, run_synthetic_eval

        assert average_precision([True, False, True], 2) == pytest.approx(5.0 / 6.0)

        report = run_synthetic_eval(
            EvalSettings(
                world_seed=7,
                n_items=1000,
                n_concepts=10,
                latent_dim=16,
                sigma=0.05,
                guides_per_query=4,
                n_queries=50,
                k=10,
            ),
            workdir=tmp_path,
        )
        assert len(report["per_query"]) == 50
        assert report["mHR"] >= 0.9, f"mHR {report['mHR']}"


# -- 9: persistence round-trips -------------------------------------------------


def test_criterion_09_persistence(tmp_path):
    with criterion(9, "persistence"):
        from needle.errors import StoreFormatError
        from needle.trust import TrustTable, load_trust, save_trust
        from needle.vecstore import IndexEntry, build, load, save

        rng = np.random.default_rng(313)
        entries = [
            IndexEntry(tile_id=i, image_id=i // 3, vector=normalize(rng.standard_normal(16), "e"))
            for i in range(200)
        ]
        store = build(entries, embedder_id="e", dim=16)
        path = tmp_path / "store.ndle"
        save(store, path)
        loaded = load(path)
        for _ in range(20):
            q = normalize(rng.standard_normal(16), "e")
            assert store.knn(q, 9) == loaded.knn(q, 9)

        data = path.read_bytes()
        for cut in (3, 10, len(data) // 2, len(data) - 1):
            path.write_bytes(data[:cut])
            with pytest.raises(StoreFormatError):
                load(path)

        t = TrustTable(eta=0.17, floor=2e-4)
        t.topics["general"] = {"a": 1 / 3, "b": 2 / 3}
        t.topics["dogs"] = {"a": 0.9, "b": 0.1}
        first, second = tmp_path / "t1.json", tmp_path / "t2.json"
        save_trust(t, first)
        save_trust(load_trust(first), second)
        assert first.read_bytes() == second.read_bytes()


# -- 10: service state machine over HTTP ----------------------------------------


def test_criterion_10_service_state_machine(tmp_path):
    with criterion(10, "service-state-machine"):
        from fastapi.testclient import TestClient

        from needle.engine import RetrievalEngine
        from needle.service import create_app

        world = make_world(seed=91, n_items=40, latent_dim=8, concepts=4)
        config = build_world_config(tmp_path, world, guides_per_generator=4, k=6)
        engine = RetrievalEngine(config)
        engine.index_dataset()
        client = TestClient(create_app(engine, run_async=False))

        body = client.post(
            "/v1/search",
            json={"text": world.concept_names[0], "k": 6, "feedback_mode": True},
        ).json()
        assert body["state"] == "awaiting_review"
        assert body["results"] is None
        qid = body["query_id"]

        guides = client.get(f"/v1/search/{qid}/guides").json()["guides"]
        assert len(guides) == 4
        keep = [g["guide_id"] for g in guides[:3]]
        session = client.post(f"/v1/search/{qid}/guides/approve", json={"keep": keep}).json()
        assert session["state"] == "done"
        assert len(session["results"]) == 6
        assert sum(1 for g in session["guides"] if g["discarded"]) == 1

        bad = session["results"][0]["image_id"]
        first = client.post(f"/v1/search/{qid}/feedback", json={"irrelevant": [bad]})
        assert first.status_code == 200
        replay = client.post(f"/v1/search/{qid}/feedback", json={"irrelevant": [bad]})
        assert replay.status_code == 409
        assert replay.json()["code"] == "feedback_replay"

        weights = client.get("/v1/weights").json()
        assert abs(sum(weights["topics"]["general"].values()) - 1.0) <= 1e-9
