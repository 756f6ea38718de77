"""Hierarchical navigable small world graph for approximate k-NN.

In-memory graph over a contiguous float32 matrix. Node addressing is by
*slot* (dense 0..n-1 insertion index); external integer ids map to slots
and never get reused. Deletions tombstone the slot: the node keeps
routing traffic but is filtered from results, and the owning collection
compacts once the dead ratio passes its threshold.

Layer-0 adjacency lives in one flat (capacity x 2M) int32 matrix since
every node has a layer-0 list and that is where search time goes; the
sparse upper layers (a 1/ln(M) fraction of nodes) use plain lists.

Level draws come from a SplitMix64 generator with a persisted seed, so
the same insertion order always produces the same graph, byte for byte.
Reported distances use per-row float64 reductions, which are independent
of batch composition; searches therefore agree with the exact scan
bit-for-bit whenever the frontier covers the whole collection.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Tiny deterministic PRNG; single u64 state, trivially persistable."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_unit(self) -> float:
        """Uniform float in (0, 1]; never 0, safe for log()."""
        return ((self.next_u64() >> 11) + 1) * (1.0 / (1 << 53))


class HnswGraph:
    """The proximity graph itself; callers validate input vectors.

    metric "cosine" expects pre-normalized vectors (distance = 1 - dot);
    "l2" is plain euclidean. M bounds out-degree above layer 0, 2M at
    layer 0; the level multiplier is 1/ln(M).
    """

    def __init__(self, dim: int, m: int, ef_construction: int, metric: str, seed: int):
        self.dim = dim
        self.m = m
        self.ef_construction = ef_construction
        self.metric = metric
        self.rng = SplitMix64(seed)
        self._mult = 1.0 / math.log(m)

        cap = 1024
        self._matrix = np.zeros((cap, dim), dtype=np.float32)
        self._count = 0
        self._ids: list[int] = []
        self._id_arr = np.zeros(cap, dtype=np.int64)
        self._slot_of: dict[int, int] = {}
        self._levels: list[int] = []
        # layer 0: flat adjacency with one overflow slot so append-then-prune
        # works in place; everything else: ragged lists per slot
        self._links0 = np.full((cap, 2 * m + 1), -1, dtype=np.int32)
        self._links0_cnt = np.zeros(cap, dtype=np.int32)
        self._upper: list[list[list[int]] | None] = []
        self._deleted = np.zeros(cap, dtype=bool)
        self._dead_count = 0
        self._entry = -1
        self._max_level = -1

    # -- bookkeeping ---------------------------------------------------------

    def __len__(self) -> int:
        return self._count - self._dead_count

    @property
    def live_count(self) -> int:
        return self._count - self._dead_count

    @property
    def total_count(self) -> int:
        return self._count

    @property
    def dead_count(self) -> int:
        return self._dead_count

    def contains(self, ext_id: int) -> bool:
        slot = self._slot_of.get(ext_id)
        return slot is not None and not self._deleted[slot]

    def ids(self) -> list[int]:
        """Live external ids, insertion order."""
        return [self._ids[s] for s in range(self._count) if not self._deleted[s]]

    def vector(self, ext_id: int) -> np.ndarray:
        slot = self._slot_of[ext_id]
        return self._matrix[slot].copy()

    def level_of(self, slot: int) -> int:
        return self._levels[slot]

    def neighbors(self, slot: int, layer: int) -> list[int]:
        if layer == 0:
            return self._links0[slot, : self._links0_cnt[slot]].tolist()
        upper = self._upper[slot]
        return list(upper[layer - 1]) if upper else []

    def _grow(self, needed: int) -> None:
        cap = self._matrix.shape[0]
        if needed <= cap:
            return
        new_cap = max(cap * 2, needed)

        def grown(arr, fill=0):
            out = np.full((new_cap, *arr.shape[1:]), fill, dtype=arr.dtype)
            out[: self._count] = arr[: self._count]
            return out

        self._matrix = grown(self._matrix)
        self._id_arr = grown(self._id_arr)
        self._links0 = grown(self._links0, fill=-1)
        self._links0_cnt = grown(self._links0_cnt)
        self._deleted = grown(self._deleted)

    # -- distances -----------------------------------------------------------

    def _dist_many(self, query: np.ndarray, slots) -> np.ndarray:
        # per-row einsum: batch-composition independent, unlike BLAS matmul.
        # This is the serving kernel; hits it reports agree bit-for-bit with
        # the exact scan, which uses the same reduction.
        vecs = self._matrix[slots]
        if self.metric == "cosine":
            return 1.0 - np.einsum("ij,j->i", vecs, query)
        diff = vecs - query
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def _dist_build(self, query: np.ndarray, slots) -> np.ndarray:
        # construction kernel: BLAS matvec, ~3x faster; deterministic for a
        # fixed insertion sequence, which is all graph building needs
        vecs = self._matrix[slots]
        if self.metric == "cosine":
            return 1.0 - vecs @ query
        diff = vecs - query
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def _pairwise(self, slots: np.ndarray) -> np.ndarray:
        """Candidate-to-candidate distances for neighbor selection (GEMM)."""
        vecs = self._matrix[slots]
        if self.metric == "cosine":
            return 1.0 - vecs @ vecs.T
        sq = np.einsum("ij,ij->i", vecs, vecs)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (vecs @ vecs.T)
        np.maximum(d2, 0.0, out=d2)
        return np.sqrt(d2)

    # -- core search ---------------------------------------------------------

    def _search_layer(
        self,
        query: np.ndarray,
        entry_slots: list[int],
        layer: int,
        ef: int,
        visited: np.ndarray,
        include_deleted: bool,
        kernel=None,
    ) -> list[tuple[float, int]]:
        """Best-first frontier search on one layer.

        Returns up to `ef` (distance, slot) pairs ascending. Tombstoned
        slots are traversed either way; `include_deleted` controls
        whether they may appear in the returned set (needed during
        construction, excluded when serving queries).
        """
        kernel = kernel or self._dist_many
        entry_slots = list(dict.fromkeys(entry_slots))
        visited[entry_slots] = True
        dists = kernel(query, entry_slots)

        candidates: list[tuple[float, int]] = []
        results: list[tuple[float, int]] = []  # max-heap via (-dist, slot)
        for dist, slot in zip(dists.tolist(), entry_slots):
            heapq.heappush(candidates, (dist, slot))
            if include_deleted or not self._deleted[slot]:
                heapq.heappush(results, (-dist, slot))
        while len(results) > ef:
            heapq.heappop(results)

        deleted = self._deleted
        links0 = self._links0
        cnt0 = self._links0_cnt
        while candidates:
            dist, slot = heapq.heappop(candidates)
            full = len(results) >= ef
            if full and dist > -results[0][0]:
                break
            if layer == 0:
                nbrs = links0[slot, : cnt0[slot]]
            else:
                upper = self._upper[slot]
                nbrs = np.asarray(upper[layer - 1] if upper else (), dtype=np.int32)
            if nbrs.size == 0:
                continue
            nbrs = nbrs[~visited[nbrs]]
            if nbrs.size == 0:
                continue
            visited[nbrs] = True
            nd = kernel(query, nbrs)
            if full:
                keep = nd < -results[0][0]
                nbrs, nd = nbrs[keep], nd[keep]
            for ndist, nslot in zip(nd.tolist(), nbrs.tolist()):
                if len(results) < ef or ndist < -results[0][0]:
                    heapq.heappush(candidates, (ndist, nslot))
                    if include_deleted or not deleted[nslot]:
                        heapq.heappush(results, (-ndist, nslot))
                        if len(results) > ef:
                            heapq.heappop(results)
        out = [(-nd, slot) for nd, slot in results]
        out.sort()
        return out

    def _greedy_descend(
        self, query: np.ndarray, from_level: int, to_level: int, kernel=None
    ) -> list[int]:
        """Single-entry greedy walk from the top down to `to_level` (exclusive)."""
        ep = [self._entry]
        for layer in range(from_level, to_level, -1):
            visited = np.zeros(self._count, dtype=bool)
            found = self._search_layer(
                query, ep, layer, 1, visited, include_deleted=True, kernel=kernel
            )
            ep = [found[0][1]]
        return ep

    # -- neighbor selection (diversity heuristic) -----------------------------

    def _select_neighbors(
        self, candidates: list[tuple[float, int]], m: int, backfill: bool = True
    ) -> list[int]:
        """Keep candidates closer to the base point than to any kept one.

        `candidates` must be ascending (distance-to-base, slot). With
        `backfill`, the nearest pruned candidates top the result back up
        to m; insertion uses that so every new node wires m edges.
        Overflow pruning leaves it off, as production HNSW
        implementations do, letting lists settle at their diverse core.
        """
        c = len(candidates)
        if c <= m:
            return [slot for _, slot in candidates]
        slots = np.fromiter((s for _, s in candidates), dtype=np.int64, count=c)
        pair = self._pairwise(slots)
        # min distance from each candidate to the selected set, kept running
        min_to_sel = np.full(c, np.inf)
        selected: list[int] = []  # candidate indices
        discarded: list[int] = []
        for i, (dist, _slot) in enumerate(candidates):
            if len(selected) == m:
                break
            if dist < min_to_sel[i]:
                selected.append(i)
                np.minimum(min_to_sel, pair[i], out=min_to_sel)
            else:
                discarded.append(i)
        if backfill:
            for i in discarded:
                if len(selected) == m:
                    break
                selected.append(i)
        return [int(slots[i]) for i in selected]

    def _shrink(self, slot: int, layer: int, cap: int) -> None:
        """Prune an overflowing neighbor list down to its diverse core."""
        if layer == 0:
            nbrs = self._links0[slot, : self._links0_cnt[slot]].copy()
        else:
            nbrs = np.asarray(self._upper[slot][layer - 1], dtype=np.int32)
        c = len(nbrs)
        if c <= cap:
            return
        d = self._dist_build(self._matrix[slot], nbrs)
        order = np.lexsort((nbrs, d))
        ranked = list(zip(d[order].tolist(), nbrs[order].tolist()))
        self._set_links(slot, layer, self._select_neighbors(ranked, cap, backfill=False))

    def _set_links(self, slot: int, layer: int, links: list[int]) -> None:
        if layer == 0:
            self._links0[slot, : len(links)] = links
            self._links0_cnt[slot] = len(links)
        else:
            self._upper[slot][layer - 1] = list(links)

    def _append_link(self, slot: int, layer: int, target: int) -> None:
        if layer == 0:
            n = self._links0_cnt[slot]
            self._links0[slot, n] = target
            self._links0_cnt[slot] = n + 1
        else:
            self._upper[slot][layer - 1].append(target)

    # -- mutation --------------------------------------------------------------

    def draw_level(self) -> int:
        return int(-math.log(self.rng.next_unit()) * self._mult)

    def insert(self, ext_id: int, vector: np.ndarray, level: int | None = None) -> None:
        if level is None:
            level = self.draw_level()
        self._grow(self._count + 1)
        slot = self._count
        self._matrix[slot] = vector
        self._ids.append(ext_id)
        self._id_arr[slot] = ext_id
        self._slot_of[ext_id] = slot
        self._levels.append(level)
        self._upper.append([[] for _ in range(level)] if level else None)
        self._count += 1

        if self._entry < 0:
            self._entry = slot
            self._max_level = level
            return

        query = self._matrix[slot]
        ep = self._greedy_descend(query, self._max_level, level, kernel=self._dist_build)
        for layer in range(min(level, self._max_level), -1, -1):
            visited = np.zeros(self._count, dtype=bool)
            candidates = self._search_layer(
                query, ep, layer, self.ef_construction, visited,
                include_deleted=True, kernel=self._dist_build,
            )
            candidates = [(d, s) for d, s in candidates if s != slot]
            chosen = self._select_neighbors(candidates, self.m)
            self._set_links(slot, layer, chosen)
            cap = 2 * self.m if layer == 0 else self.m
            for nslot in chosen:
                self._append_link(nslot, layer, slot)
                degree = (
                    self._links0_cnt[nslot]
                    if layer == 0
                    else len(self._upper[nslot][layer - 1])
                )
                if degree > cap:
                    self._shrink(nslot, layer, cap)
            ep = [s for _, s in candidates] or ep

        if level > self._max_level:
            self._entry = slot
            self._max_level = level

    def mark_deleted(self, ext_id: int) -> bool:
        """Tombstone; returns False if the id is unknown or already dead."""
        slot = self._slot_of.get(ext_id)
        if slot is None or self._deleted[slot]:
            return False
        self._deleted[slot] = True
        self._dead_count += 1
        return True

    # -- queries -----------------------------------------------------------------

    def search(self, query: np.ndarray, k: int, ef: int) -> list[tuple[float, int]]:
        """Approximate k nearest live ids: (distance, id) ascending, ties by id."""
        if self.live_count == 0:
            return []
        query = np.asarray(query, dtype=np.float32)
        ef = max(ef, k)
        ep = self._greedy_descend(query, self._max_level, 0)
        visited = np.zeros(self._count, dtype=bool)
        found = self._search_layer(query, ep, 0, ef, visited, include_deleted=False)
        hits = sorted((dist, self._ids[slot]) for dist, slot in found)
        return hits[:k]

    def exact_search(self, query: np.ndarray, k: int) -> list[tuple[float, int]]:
        """Brute-force scan over live vectors; same sort contract as search."""
        if self.live_count == 0:
            return []
        query = np.asarray(query, dtype=np.float32)
        live = np.flatnonzero(~self._deleted[: self._count])
        dists = self._dist_many(query, live)
        ids = self._id_arr[live]
        order = np.lexsort((ids, dists))[:k]
        return [(float(dists[i]), int(ids[i])) for i in order]

    # -- (de)serialization of topology --------------------------------------------

    def state_rows(self):
        """Slot-ordered (id, deleted, level, links-per-layer) for snapshots."""
        for slot in range(self._count):
            links = [self.neighbors(slot, layer) for layer in range(self._levels[slot] + 1)]
            yield self._ids[slot], bool(self._deleted[slot]), self._levels[slot], links

    def load_state(
        self,
        rows: list[tuple[int, bool, int, list[list[int]]]],
        vectors: list[np.ndarray],
        entry: int,
        max_level: int,
        rng_state: int,
    ) -> None:
        """Restore topology from a snapshot; `vectors` is slot-ordered."""
        self._grow(len(rows))
        for slot, (ext_id, deleted, level, links) in enumerate(rows):
            self._matrix[slot] = vectors[slot]
            self._ids.append(ext_id)
            self._id_arr[slot] = ext_id
            self._slot_of[ext_id] = slot
            self._levels.append(level)
            self._upper.append([list(l) for l in links[1:]] if level else None)
            self._links0[slot, : len(links[0])] = links[0]
            self._links0_cnt[slot] = len(links[0])
            if deleted:
                self._deleted[slot] = True
                self._dead_count += 1
        self._count = len(rows)
        self._entry = entry
        self._max_level = max_level
        self.rng.state = rng_state
