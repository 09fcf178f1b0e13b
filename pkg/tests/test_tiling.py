import numpy as np
import pytest

from needle.tiling import (
    EdgeObject,
    Rect,
    TilingConfig,
    build_manifest,
    count_objects,
    detect_objects,
    manifest_from_json,
    manifest_to_json,
    render_tile_overlay,
    smart_tile,
)


def obj(i, x, y, w, h):
    return EdgeObject(object_id=i, bbox=Rect(x, y, w, h))


def random_layout(rng, img_w=1024, img_h=1024, max_objects=25):
    n = int(rng.integers(0, max_objects))
    objects = []
    for i in range(n):
        w = int(rng.integers(4, img_w // 4))
        h = int(rng.integers(4, img_h // 4))
        x = int(rng.integers(0, img_w - w))
        y = int(rng.integers(0, img_h - h))
        objects.append(obj(i, x, y, w, h))
    return objects


class TestDetectObjects:
    def test_solid_image_has_no_objects(self):
        img = np.full((120, 80), 200, np.uint8)
        assert detect_objects(img) == []

    def test_filled_square_bbox(self):
        # black 100x100 square at (10, 10) on white; edge ring hugs the border
        img = np.full((200, 200), 255, np.uint8)
        img[10:110, 10:110] = 0
        objects = detect_objects(img)
        assert len(objects) == 1
        bbox = objects[0].bbox
        assert abs(bbox.x - 10) <= 2 and abs(bbox.y - 10) <= 2
        assert abs(bbox.w - 100) <= 2 and abs(bbox.h - 100) <= 2

    def test_deterministic(self, rng):
        img = rng.integers(0, 256, (64, 64), dtype=np.uint8)
        assert detect_objects(img) == detect_objects(img)

    def test_invalid_thresholds(self):
        img = np.zeros((16, 16), np.uint8)
        with pytest.raises(ValueError):
            detect_objects(img, low=200, high=100)

    def test_rgb_input_accepted(self):
        img = np.full((50, 50, 3), 255, np.uint8)
        img[10:40, 10:40] = 0
        assert len(detect_objects(img)) == 1


class TestCountObjects:
    def test_empty_list(self):
        assert count_objects([], Rect(0, 0, 10, 10)) == 0

    def test_contained_object_counted_once(self):
        assert count_objects([obj(0, 2, 2, 3, 3)], Rect(0, 0, 10, 10)) == 1

    def test_straddler_counted_in_both_halves(self):
        # bbox crossing x = 50 in a 100-wide image
        straddler = obj(0, 45, 10, 10, 10)
        left, right = Rect(0, 0, 50, 100), Rect(50, 0, 50, 100)
        assert count_objects([straddler], left) == 1
        assert count_objects([straddler], right) == 1

    def test_centroid_mode_assigns_once(self):
        straddler = obj(0, 45, 10, 10, 10)  # centroid at x=50 -> right half
        left, right = Rect(0, 0, 50, 100), Rect(50, 0, 50, 100)
        assert count_objects([straddler], left, mode="centroid") == 0
        assert count_objects([straddler], right, mode="centroid") == 1


class TestSmartTile:
    def test_no_objects_single_tile(self):
        ts = smart_tile((640, 480), [], TilingConfig())
        assert ts.tiles == [Rect(0, 0, 640, 480)]
        assert ts.full_tile == Rect(0, 0, 640, 480)
        assert ts.all_tiles == [Rect(0, 0, 640, 480)]

    def test_small_image_single_tile(self):
        config = TilingConfig(d=1, min_size=128)
        objects = [obj(i, 2 * i, 2 * i, 4, 4) for i in range(5)]
        ts = smart_tile((100, 100), objects, config)
        assert ts.tiles == [Rect(0, 0, 100, 100)]

    def test_two_object_split(self):
        """Two well-separated objects under d=1 give exactly the two halves."""
        config = TilingConfig(d=1, min_size=100)
        objects = [obj(0, 200, 200, 100, 100), obj(1, 700, 700, 100, 100)]
        ts = smart_tile((1000, 1000), objects, config)
        assert ts.tiles == [Rect(0, 0, 500, 1000), Rect(500, 0, 500, 1000)]
        assert count_objects(objects, ts.tiles[0]) == 1
        assert count_objects(objects, ts.tiles[1]) == 1

    def test_degenerate_1x1(self):
        ts = smart_tile((1, 1), [], TilingConfig(d=1, min_size=1))
        assert ts.tiles == [Rect(0, 0, 1, 1)]

    def _check_partition(self, ts, image_size):
        w, h = image_size
        assert sum(t.area for t in ts.tiles) == w * h
        for i, a in enumerate(ts.tiles):
            assert 0 <= a.x and 0 <= a.y and a.right <= w and a.bottom <= h
            for b in ts.tiles[i + 1 :]:
                assert not a.intersects(b), f"{a} overlaps {b}"

    def test_partition_and_stop_condition_fuzz(self, rng):
        """200 random layouts: exact partition and sound stop conditions."""
        for _ in range(200):
            w = int(rng.integers(64, 1600))
            h = int(rng.integers(64, 1600))
            config = TilingConfig(
                d=int(rng.integers(1, 8)),
                min_size=int(rng.integers(32, 512)),
                aspect_limit=float(rng.uniform(1.5, 5.0)),
            )
            objects = random_layout(rng, w, h)
            ts = smart_tile((w, h), objects, config)
            self._check_partition(ts, (w, h))
            for tile in ts.tiles:
                n = count_objects(objects, tile, config.count_mode)
                assert (
                    n <= config.d or tile.w < config.min_size or tile.h < config.min_size
                ), f"leaf {tile} holds {n} objects under {config}"

    def test_d_monotonicity(self, rng):
        """Raising the per-tile object cap never increases the tile count."""
        for _ in range(40):
            w, h = int(rng.integers(200, 1200)), int(rng.integers(200, 1200))
            objects = random_layout(rng, w, h)
            counts = []
            for d in (1, 2, 4, 8):
                config = TilingConfig(d=d, min_size=64)
                counts.append(len(smart_tile((w, h), objects, config).tiles))
            assert counts == sorted(counts, reverse=True)

    def test_determinism(self, rng):
        objects = random_layout(rng)
        config = TilingConfig(d=2, min_size=100)
        a = smart_tile((1024, 1024), objects, config)
        b = smart_tile((1024, 1024), objects, config)
        assert a.tiles == b.tiles

    def test_aspect_limit_steers_split_axis(self):
        # objects balanced on both axes in a wide strip: horizontal split would
        # produce 600x75 tiles (aspect 8), so the vertical axis must win
        config = TilingConfig(d=1, min_size=100, aspect_limit=3.0)
        objects = [obj(0, 100, 20, 50, 50), obj(1, 450, 80, 50, 50)]
        ts = smart_tile((600, 150), objects, config)
        for tile in ts.tiles:
            assert tile.aspect <= 4.0  # halving 600x150 keeps aspect moderate


class TestManifest:
    def test_multi_leaf_manifest_includes_full_tile(self):
        config = TilingConfig(d=1, min_size=100)
        objects = [obj(0, 200, 200, 100, 100), obj(1, 700, 700, 100, 100)]
        ts = smart_tile((1000, 1000), objects, config)
        entries = build_manifest([(0, ts)])
        assert len(entries[0].tiles) == 3  # two leaves + whole image
        full = [t for t in entries[0].tiles if t.tile_id == entries[0].full_tile_id]
        assert full[0].rect == Rect(0, 0, 1000, 1000)

    def test_single_leaf_manifest_deduplicates(self):
        ts = smart_tile((64, 64), [], TilingConfig())
        entries = build_manifest([(0, ts)])
        assert len(entries[0].tiles) == 1
        assert entries[0].full_tile_id == entries[0].tiles[0].tile_id

    def test_tile_ids_unique_across_images(self):
        ts = smart_tile((64, 64), [], TilingConfig())
        entries = build_manifest([(0, ts), (1, ts), (2, ts)])
        ids = [t.tile_id for e in entries for t in e.tiles]
        assert len(ids) == len(set(ids))

    def test_json_round_trip(self):
        config = TilingConfig(d=1, min_size=100)
        objects = [obj(0, 200, 200, 100, 100), obj(1, 700, 700, 100, 100)]
        entries = build_manifest([(5, smart_tile((1000, 1000), objects, config))])
        assert manifest_from_json(manifest_to_json(entries)) == entries

    def test_overlay_shape(self):
        img = np.full((64, 64, 3), 255, np.uint8)
        ts = smart_tile((64, 64), [], TilingConfig())
        out = render_tile_overlay(img, ts)
        assert out.shape == img.shape
