"""Hierarchical navigable small-world graph for approximate inner-product k-NN.

Vectors must be unit-norm so that 1 - dot equals cosine distance. Layer
membership follows the usual exponential decay; construction and search are
deterministic for a fixed seed and insertion order, which lets a store file
rebuild an identical graph on load.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

DEFAULT_SEED = 0x9E3D1E


class HnswGraph:
    def __init__(
        self,
        dim: int,
        m: int = 16,
        ef_construction: int = 200,
        ef_search: int = 100,
        seed: int = DEFAULT_SEED,
    ):
        if m < 2:
            raise ValueError("m must be >= 2")
        self.dim = dim
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.seed = seed
        self._ml = 1.0 / math.log(2.0)
        self._vectors = np.zeros((0, dim), dtype=np.float32)
        self._neighbors: list[list[list[int]]] = []  # node -> layer -> ids
        self._entry = -1
        self._max_level = -1
        self._visited = bytearray()

    def __len__(self) -> int:
        return len(self._neighbors)

    def build(self, vectors: np.ndarray) -> "HnswGraph":
        """Insert all rows in order. Rebuilding from the same rows is identical."""
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ValueError(f"expected (n, {self.dim}) vectors, got {vectors.shape}")
        rng = np.random.default_rng(self.seed)
        n = len(vectors)
        self._vectors = vectors
        self._visited = bytearray(n)
        for i in range(n):
            self._insert(i, rng)
        return self

    def _insert(self, node: int, rng: np.random.Generator) -> None:
        level = int(-math.log(rng.uniform(1e-12, 1.0)) * self._ml)
        self._neighbors.append([[] for _ in range(level + 1)])
        if self._entry < 0:
            self._entry = node
            self._max_level = level
            return
        q = self._vectors[node]
        eps = [self._entry]
        for layer in range(self._max_level, level, -1):
            eps = [self._search_layer(q, eps, layer, 1)[0][1]]
        for layer in range(min(level, self._max_level), -1, -1):
            candidates = self._search_layer(q, eps, layer, self.ef_construction)
            cap = self.m0 if layer == 0 else self.m
            selected = self._select_neighbors(candidates, self.m)
            self._neighbors[node][layer] = list(selected)
            for nb in selected:
                links = self._neighbors[nb][layer]
                links.append(node)
                if len(links) > cap:
                    dists = (1.0 - self._vectors[links] @ self._vectors[nb]).tolist()
                    self._neighbors[nb][layer] = self._select_neighbors(
                        sorted(zip(dists, links)), cap
                    )
            eps = selected
        if level > self._max_level:
            self._max_level = level
            self._entry = node

    def _search_layer(
        self, q: np.ndarray, entry_ids: list[int], layer: int, ef: int
    ) -> list[tuple[float, int]]:
        # Greedy beam search; visited marks are cleared before returning so
        # the bytearray can be reused across calls on a single thread.
        vectors = self._vectors
        neighbors = self._neighbors
        visited = self._visited
        for i in entry_ids:
            visited[i] = 1
        stamped = list(entry_ids)
        dists = (1.0 - vectors[entry_ids] @ q).tolist()
        candidates = list(zip(dists, entry_ids))
        heapq.heapify(candidates)
        best = [(-d, i) for d, i in zip(dists, entry_ids)]
        heapq.heapify(best)
        worst = -best[0][0]
        full = len(best) >= ef
        while candidates:
            d, node = heapq.heappop(candidates)
            if full and d > worst:
                break
            fresh = [n for n in neighbors[node][layer] if not visited[n]]
            if not fresh:
                continue
            for n in fresh:
                visited[n] = 1
            stamped.extend(fresh)
            fresh_d = (1.0 - vectors[fresh] @ q).tolist()
            for nb, dd in zip(fresh, fresh_d):
                if not full:
                    heapq.heappush(candidates, (dd, nb))
                    heapq.heappush(best, (-dd, nb))
                    full = len(best) >= ef
                    worst = -best[0][0]
                elif dd < worst:
                    heapq.heappush(candidates, (dd, nb))
                    heapq.heapreplace(best, (-dd, nb))
                    worst = -best[0][0]
        for i in stamped:
            visited[i] = 0
        return sorted((-d, i) for d, i in best)

    def _select_neighbors(self, candidates: list[tuple[float, int]], m: int) -> list[int]:
        # Diversity heuristic: keep a candidate only if it is closer to the
        # query than to every neighbor already kept; backfill with the rest.
        ids = [i for _, i in candidates]
        if len(ids) <= m:
            return ids
        dists = [d for d, _ in candidates]
        gathered = self._vectors[ids]
        min_to_selected = np.full(len(ids), np.inf)
        selected: list[int] = []
        passed_over: list[int] = []
        for j in range(len(ids)):
            if len(selected) >= m:
                break
            if dists[j] < min_to_selected[j]:
                selected.append(ids[j])
                np.minimum(min_to_selected, 1.0 - gathered @ gathered[j], out=min_to_selected)
            else:
                passed_over.append(ids[j])
        for i in passed_over:
            if len(selected) >= m:
                break
            selected.append(i)
        return selected

    def search(self, query: np.ndarray, k: int) -> list[tuple[float, int]]:
        """Approximate k nearest rows as (distance, row) pairs, ascending."""
        if len(self) == 0:
            return []
        q = np.asarray(query, dtype=np.float32)
        eps = [self._entry]
        for layer in range(self._max_level, 0, -1):
            eps = [self._search_layer(q, eps, layer, 1)[0][1]]
        results = self._search_layer(q, eps, 0, max(self.ef_search, k))
        return results[:k]
