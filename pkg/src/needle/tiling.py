"""Recursive density-balanced image tiling driven by edge-detected objects.

An image is split in half, vertically or horizontally, until every tile holds
at most ``d`` detected objects or falls under the minimum size. The whole
image is always kept as an additional tile so coarse scenes stay searchable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import DecodeError
from .wire import decode_png


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, top-left origin."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate rect {self}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative origin in {self}")

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def aspect(self) -> float:
        return max(self.w, self.h) / min(self.w, self.h)

    def intersects(self, other: "Rect") -> bool:
        return (
            self.x < other.right
            and other.x < self.right
            and self.y < other.bottom
            and other.y < self.bottom
        )

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px < self.right and self.y <= py < self.bottom


@dataclass(frozen=True)
class EdgeObject:
    """Bounding box of one connected component of the binary edge map."""

    object_id: int
    bbox: Rect


@dataclass(frozen=True)
class TilingConfig:
    d: int = 5
    min_size: int = 224
    aspect_limit: float = 3.0
    count_mode: str = "intersect"  # or "centroid"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("object cap d must be >= 1")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if self.aspect_limit < 1.0:
            raise ValueError("aspect_limit must be >= 1")
        if self.count_mode not in ("intersect", "centroid"):
            raise ValueError(f"unknown count_mode {self.count_mode!r}")


@dataclass
class TileSet:
    """Leaf tiles partitioning one image, plus the full-image tile."""

    image_id: str
    tiles: list[Rect]
    full_tile: Rect
    includes_full_image: bool = True

    @property
    def all_tiles(self) -> list[Rect]:
        """Leaves plus the full tile, deduplicated when the single leaf is the image."""
        if len(self.tiles) == 1 and self.tiles[0] == self.full_tile:
            return list(self.tiles)
        return list(self.tiles) + [self.full_tile]


def load_image(source: bytes | str | Path) -> np.ndarray:
    """Decode PNG/JPEG bytes or a file path into an RGB/grayscale array."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source
    return decode_png(data)


def detect_objects(
    image: np.ndarray | bytes,
    low: int = 100,
    high: int = 200,
    min_area: int = 4,
) -> list[EdgeObject]:
    """Bounding boxes of edge-map connected components, smallest boxes dropped.

    Deterministic for identical input; boxes are ordered by (y, x, w, h).
    """
    if low >= high:
        raise ValueError(f"edge thresholds must satisfy low < high, got {low} >= {high}")
    if isinstance(image, bytes):
        image = decode_png(image)
    arr = np.asarray(image)
    if arr.ndim == 3:
        gray = cv2.cvtColor(arr, cv2.COLOR_RGB2GRAY)
    else:
        gray = arr
    if gray.dtype != np.uint8:
        gray = np.clip(gray, 0, 255).astype(np.uint8)
    edges = cv2.Canny(gray, low, high)
    n, _, stats, _ = cv2.connectedComponentsWithStats(
        (edges > 0).astype(np.uint8), 8, cv2.CV_32S
    )
    boxes = []
    for i in range(1, n):  # label 0 is background
        x, y, w, h, area = (int(v) for v in stats[i])
        if area < min_area:
            continue
        boxes.append((y, x, w, h))
    boxes.sort()
    return [
        EdgeObject(object_id=i, bbox=Rect(x=x, y=y, w=w, h=h))
        for i, (y, x, w, h) in enumerate(boxes)
    ]


def count_objects(objects: list[EdgeObject], region: Rect, mode: str = "intersect") -> int:
    """Objects visible in a region.

    Intersection semantics count a box straddling a split line in both halves;
    centroid semantics assign it to exactly one.
    """
    if mode == "intersect":
        return sum(1 for o in objects if o.bbox.intersects(region))
    if mode == "centroid":
        return sum(
            1
            for o in objects
            if region.contains_point(o.bbox.x + o.bbox.w / 2, o.bbox.y + o.bbox.h / 2)
        )
    raise ValueError(f"unknown count mode {mode!r}")


def smart_tile(
    image_size: tuple[int, int],
    objects: list[EdgeObject],
    config: TilingConfig | None = None,
    image_id: str = "",
) -> TileSet:
    """Recursively halve the image until each tile meets the stop condition.

    A region stops splitting when it holds at most ``config.d`` objects or is
    narrower/shorter than ``config.min_size``. Otherwise the split axis is the
    one that balances object counts best between the two halves; ties go to
    the longer dimension (then vertical), and an axis is rejected when it
    would produce a tile with aspect ratio beyond ``config.aspect_limit``
    while the other axis would not.
    """
    config = config or TilingConfig()
    w, h = int(image_size[0]), int(image_size[1])
    if w <= 0 or h <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    full = Rect(0, 0, w, h)
    leaves: list[Rect] = []

    def halves_v(r: Rect) -> tuple[Rect, Rect]:
        half = r.w // 2
        return Rect(r.x, r.y, half, r.h), Rect(r.x + half, r.y, r.w - half, r.h)

    def halves_h(r: Rect) -> tuple[Rect, Rect]:
        half = r.h // 2
        return Rect(r.x, r.y, r.w, half), Rect(r.x, r.y + half, r.w, r.h - half)

    def split(region: Rect) -> None:
        n_objs = count_objects(objects, region, config.count_mode)
        if n_objs <= config.d or region.w < config.min_size or region.h < config.min_size:
            leaves.append(region)
            return
        # w, h >= min_size >= 1 here, so both half splits are non-degenerate
        # except w == 1 or h == 1 with min_size == 1.
        can_v = region.w >= 2
        can_h = region.h >= 2
        if not can_v and not can_h:
            leaves.append(region)
            return
        left, right = halves_v(region) if can_v else (None, None)
        top, bottom = halves_h(region) if can_h else (None, None)
        bal_v = (
            abs(
                count_objects(objects, left, config.count_mode)
                - count_objects(objects, right, config.count_mode)
            )
            if can_v
            else None
        )
        bal_h = (
            abs(
                count_objects(objects, top, config.count_mode)
                - count_objects(objects, bottom, config.count_mode)
            )
            if can_h
            else None
        )

        def axis_ok(a: Rect, b: Rect) -> bool:
            return max(a.aspect, b.aspect) <= config.aspect_limit

        ok_v = can_v and axis_ok(left, right)
        ok_h = can_h and axis_ok(top, bottom)

        if can_v and can_h:
            if bal_v < bal_h:
                vertical = True
            elif bal_h < bal_v:
                vertical = False
            elif region.w != region.h:
                vertical = region.w > region.h
            else:
                vertical = True
            # veto an over-stretched axis only when the other one is legal
            if vertical and not ok_v and ok_h:
                vertical = False
            elif not vertical and not ok_h and ok_v:
                vertical = True
        else:
            vertical = can_v

        a, b = (left, right) if vertical else (top, bottom)
        split(a)
        split(b)

    split(full)
    return TileSet(image_id=image_id, tiles=leaves, full_tile=full)


@dataclass
class TileRecord:
    tile_id: int
    rect: Rect


@dataclass
class ImageManifestEntry:
    image_id: int
    tiles: list[TileRecord] = field(default_factory=list)
    full_tile_id: int = -1


def build_manifest(tilesets: list[tuple[int, TileSet]], start_tile_id: int = 0) -> list[ImageManifestEntry]:
    """Assign corpus-wide tile ids; the full tile is one of the listed tiles."""
    entries = []
    next_id = start_tile_id
    for image_id, ts in tilesets:
        entry = ImageManifestEntry(image_id=image_id)
        for rect in ts.all_tiles:
            entry.tiles.append(TileRecord(tile_id=next_id, rect=rect))
            if rect == ts.full_tile:
                entry.full_tile_id = next_id
            next_id += 1
        entries.append(entry)
    return entries


def manifest_to_json(entries: list[ImageManifestEntry]) -> list[dict]:
    return [
        {
            "image_id": e.image_id,
            "tiles": [
                {"tile_id": t.tile_id, "x": t.rect.x, "y": t.rect.y, "w": t.rect.w, "h": t.rect.h}
                for t in e.tiles
            ],
            "full_tile_id": e.full_tile_id,
        }
        for e in entries
    ]


def manifest_from_json(data: list[dict]) -> list[ImageManifestEntry]:
    entries = []
    for row in data:
        entries.append(
            ImageManifestEntry(
                image_id=int(row["image_id"]),
                tiles=[
                    TileRecord(
                        tile_id=int(t["tile_id"]),
                        rect=Rect(int(t["x"]), int(t["y"]), int(t["w"]), int(t["h"])),
                    )
                    for t in row["tiles"]
                ],
                full_tile_id=int(row["full_tile_id"]),
            )
        )
    return entries


def save_manifest(entries: list[ImageManifestEntry], path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_json(entries), indent=2) + "\n")


def load_manifest(path: str | Path) -> list[ImageManifestEntry]:
    return manifest_from_json(json.loads(Path(path).read_text()))


def render_tile_overlay(image: np.ndarray, tileset: TileSet) -> np.ndarray:
    """Copy of the image with leaf tile borders drawn, for the CLI debug view."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = cv2.cvtColor(arr, cv2.COLOR_GRAY2RGB)
    out = arr.copy()
    for rect in tileset.tiles:
        cv2.rectangle(
            out,
            (rect.x, rect.y),
            (rect.right - 1, rect.bottom - 1),
            (255, 0, 0),
            1,
        )
    cv2.rectangle(
        out,
        (tileset.full_tile.x, tileset.full_tile.y),
        (tileset.full_tile.right - 1, tileset.full_tile.bottom - 1),
        (0, 255, 0),
        1,
    )
    return out
