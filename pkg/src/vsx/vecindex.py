"""In-process vector index: exact cosine search, IVF-partitioned quantized ANN
search with tag pre-filtering, streaming upserts, and snapshot persistence.

Vectors are unit-normalized float32; similarity is cosine (max inner product).
Writes are serialized and swap an immutable state object, so concurrent readers
always see a consistent snapshot.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"VSXIDX01"
METRIC_COSINE = 0
NORM_TOLERANCE = 1e-4


class ItemValidationError(ValueError):
    """Raised when one or more items in an upsert batch are invalid."""

    def __init__(self, errors: list[tuple[int, str, str]]):
        self.errors = errors  # (position, item_id, reason)
        lines = "; ".join(f"#{pos} {item_id!r}: {reason}" for pos, item_id, reason in errors[:5])
        more = "" if len(errors) <= 5 else f" (+{len(errors) - 5} more)"
        super().__init__(f"rejected {len(errors)} item(s): {lines}{more}")


class SnapshotFormatError(ValueError):
    """Raised when a snapshot file cannot be loaded."""


class TrainingError(ValueError):
    """Raised when partition training preconditions are not met."""


def normalize(values, dimension: int | None = None) -> np.ndarray:
    """Return a unit-norm float32 copy of `values`; reject non-finite or zero vectors."""
    vec = np.asarray(values, dtype=np.float32)
    if vec.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {vec.shape}")
    if dimension is not None and vec.shape[0] != dimension:
        raise ValueError(f"dimension mismatch: expected {dimension}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("vector has non-finite components")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("zero vector cannot be normalized")
    return vec / np.float32(norm)


@dataclass(frozen=True)
class MetadataTags:
    """Catalog metadata attached to each indexed vector."""

    geo: frozenset[str]
    category: str
    findable: bool = True
    compliant: bool = True
    extra: dict[str, str] = field(default_factory=dict)

    @classmethod
    def make(cls, geo, category, findable=True, compliant=True, extra=None) -> "MetadataTags":
        return cls(frozenset(geo), category, findable, compliant, dict(extra or {}))

    def to_json(self) -> dict:
        return {
            "geo": sorted(self.geo),
            "category": self.category,
            "findable": self.findable,
            "compliant": self.compliant,
            "extra": dict(sorted(self.extra.items())),
        }

    @classmethod
    def from_json(cls, data: dict) -> "MetadataTags":
        return cls.make(
            data["geo"],
            data["category"],
            data.get("findable", True),
            data.get("compliant", True),
            data.get("extra"),
        )


@dataclass(frozen=True)
class IndexedItem:
    item_id: str
    product_id: str
    image_id: str
    vector: np.ndarray
    tags: MetadataTags


@dataclass(frozen=True)
class IndexConfig:
    dimension: int
    metric: str = "cosine"
    num_partitions: int = 256
    nprobe: int = 32
    quantizer: str = "scalar8"  # "none" | "scalar8"
    rerank_depth: int | None = None  # None -> 4*k at search time

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.metric != "cosine":
            raise ValueError(f"unsupported metric {self.metric!r}")
        if self.num_partitions <= 0:
            raise ValueError("num_partitions must be positive")
        if not 1 <= self.nprobe <= self.num_partitions:
            raise ValueError("nprobe must satisfy 1 <= nprobe <= num_partitions")
        if self.quantizer not in ("none", "scalar8"):
            raise ValueError(f"unsupported quantizer {self.quantizer!r}")
        if self.rerank_depth is not None and self.rerank_depth <= 0:
            raise ValueError("rerank_depth must be positive")


@dataclass(frozen=True)
class TagFilter:
    """Index-level filter: geo passes when intersection is non-empty,
    category when equal. `None` fields match everything."""

    geo: frozenset[str] | None = None
    category: str | None = None

    @classmethod
    def make(cls, geo=None, category=None) -> "TagFilter":
        return cls(frozenset(geo) if geo is not None else None, category)

    def matches(self, tags: MetadataTags) -> bool:
        if self.geo is not None and not (self.geo & tags.geo):
            return False
        if self.category is not None and tags.category != self.category:
            return False
        return True


MATCH_ALL = TagFilter()


@dataclass(frozen=True)
class SearchHit:
    item_id: str
    product_id: str
    image_id: str
    score: float
    tags: MetadataTags


@dataclass(frozen=True)
class AnnResult:
    """ANN hits plus response metadata (exact-fallback flag, probe count)."""

    hits: list[SearchHit]
    exact_fallback: bool = False
    probed_partitions: int = 0

    def __iter__(self):
        return iter(self.hits)

    def __len__(self):
        return len(self.hits)


@dataclass(frozen=True)
class _QuantTable:
    """Per-partition scalar 8-bit codes: v ~ mins + codes * scales."""

    mins: np.ndarray  # (D,) float32
    scales: np.ndarray  # (D,) float32
    codes: np.ndarray  # (M, D) uint8, rows aligned with partition members


@dataclass(frozen=True)
class _Partitions:
    centroids: np.ndarray  # (C, D) float32, unit rows
    assignments: np.ndarray  # (N,) int32
    members: list[np.ndarray]  # per partition: sorted row indices
    quant: list[_QuantTable | None]


@dataclass(frozen=True)
class _State:
    ids: list[str]
    id_to_row: dict[str, int]
    matrix: np.ndarray  # (N, D) float32, unit rows
    product_ids: list[str]
    image_ids: list[str]
    tags: list[MetadataTags]
    partitions: _Partitions | None


def spherical_kmeans(sample: np.ndarray, k: int, seed: int = 0, max_iter: int = 25) -> np.ndarray:
    """Spherical k-means on unit vectors; deterministic for a given seed.

    Centroids are re-normalized each iteration; an empty cluster is reseeded
    with the point least well represented by its current centroid.
    """
    n = sample.shape[0]
    if n < k:
        raise TrainingError(
            f"need at least {k} sample vectors to fit {k} partitions, got {n}; "
            "use a smaller num_partitions"
        )
    rng = np.random.default_rng(seed)
    centroids = sample[rng.permutation(n)[:k]].copy()
    assign = np.full(n, -1, dtype=np.int32)
    for _ in range(max_iter):
        sims = sample @ centroids.T
        new_assign = np.argmax(sims, axis=1).astype(np.int32)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        best = sims[np.arange(n), assign]
        order = np.argsort(best, kind="stable")  # worst-represented first, for reseeding
        cursor = 0
        for c in range(k):
            rows = np.nonzero(assign == c)[0]
            if rows.size == 0:
                centroids[c] = sample[order[cursor]]
                cursor += 1
                continue
            mean = sample[rows].sum(axis=0)
            norm = float(np.linalg.norm(mean))
            if norm == 0.0:
                centroids[c] = sample[rows[0]]
            else:
                centroids[c] = mean / np.float32(norm)
    return centroids


class VectorIndex:
    """Cosine-metric vector index with exact and IVF-quantized ANN search."""

    def __init__(self, config: IndexConfig):
        self.config = config
        self._lock = threading.Lock()
        self._state = _State([], {}, np.zeros((0, config.dimension), dtype=np.float32), [], [], [], None)

    def __len__(self) -> int:
        return len(self._state.ids)

    @property
    def trained(self) -> bool:
        return self._state.partitions is not None

    def vector(self, item_id: str) -> np.ndarray:
        """Stored (normalized) vector for an item id."""
        state = self._state
        return state.matrix[state.id_to_row[item_id]].copy()

    def items(self) -> list[IndexedItem]:
        state = self._state
        return [
            IndexedItem(state.ids[r], state.product_ids[r], state.image_ids[r],
                        state.matrix[r].copy(), state.tags[r])
            for r in range(len(state.ids))
        ]

    # -- writes ------------------------------------------------------------

    def upsert(self, items: list[IndexedItem]) -> int:
        """Insert or replace items; the whole batch is rejected if any item is invalid."""
        errors: list[tuple[int, str, str]] = []
        vectors: list[np.ndarray] = []
        for pos, item in enumerate(items):
            try:
                vectors.append(normalize(item.vector, self.config.dimension))
            except ValueError as exc:
                errors.append((pos, item.item_id, str(exc)))
                vectors.append(None)  # type: ignore[arg-type]
                continue
            if not item.tags.geo:
                errors.append((pos, item.item_id, "geo tags must be non-empty"))
            if not item.tags.category:
                errors.append((pos, item.item_id, "category must be non-empty"))
        if errors:
            raise ItemValidationError(errors)

        if not items:
            return 0
        with self._lock:
            state = self._state
            ids = list(state.ids)
            id_to_row = dict(state.id_to_row)
            product_ids = list(state.product_ids)
            image_ids = list(state.image_ids)
            tags = list(state.tags)
            old_n = state.matrix.shape[0]
            num_new = 0
            for item in items:
                if item.item_id not in id_to_row:
                    id_to_row[item.item_id] = len(ids)
                    ids.append(item.item_id)
                    product_ids.append(item.product_id)
                    image_ids.append(item.image_id)
                    tags.append(item.tags)
                    num_new += 1
            if num_new:
                matrix = np.vstack([state.matrix,
                                    np.zeros((num_new, self.config.dimension), dtype=np.float32)])
            else:
                matrix = state.matrix.copy()
            touched: set[int] = set()
            for item, vec in zip(items, vectors):
                row = id_to_row[item.item_id]
                matrix[row] = vec  # duplicate ids within a batch: last write wins
                product_ids[row] = item.product_id
                image_ids[row] = item.image_id
                tags[row] = item.tags
                touched.add(row)
            partitions = None
            if state.partitions is not None:
                partitions = _repartition(matrix, state.partitions.centroids, self.config,
                                          old=state.partitions, touched_rows=touched, old_n=old_n)
            self._state = _State(ids, id_to_row, matrix, product_ids, image_ids, tags, partitions)
        return len(items)

    def delete(self, item_ids: list[str]) -> int:
        """Remove items by id; unknown ids are ignored."""
        with self._lock:
            state = self._state
            doomed = {state.id_to_row[i] for i in item_ids if i in state.id_to_row}
            if not doomed:
                return 0
            keep = [r for r in range(len(state.ids)) if r not in doomed]
            matrix = state.matrix[keep]
            ids = [state.ids[r] for r in keep]
            id_to_row = {item_id: row for row, item_id in enumerate(ids)}
            product_ids = [state.product_ids[r] for r in keep]
            image_ids = [state.image_ids[r] for r in keep]
            tags = [state.tags[r] for r in keep]
            partitions = None
            if state.partitions is not None:
                partitions = _assign_and_quantize(matrix, state.partitions.centroids, self.config)
            self._state = _State(ids, id_to_row, matrix, product_ids, image_ids, tags, partitions)
            return len(doomed)

    def train_partitions(self, sample: np.ndarray | None = None, seed: int = 0) -> np.ndarray:
        """Fit IVF centroids (spherical k-means, <=25 iterations) and assign all items.

        Returns the fitted centroids. `sample` defaults to the stored vectors.
        """
        with self._lock:
            state = self._state
            if sample is None:
                sample_matrix = state.matrix
            else:
                sample_matrix = np.stack([normalize(v, self.config.dimension) for v in sample])
            centroids = spherical_kmeans(sample_matrix, self.config.num_partitions, seed=seed)
            partitions = _assign_and_quantize(state.matrix, centroids, self.config)
            self._state = replace(state, partitions=partitions)
            return centroids.copy()

    # -- reads -------------------------------------------------------------

    def search_exact(self, query, k: int, filter: TagFilter = MATCH_ALL) -> list[SearchHit]:
        """Exact top-k by linear scan over all items passing the filter."""
        if k < 1:
            raise ValueError("k must be >= 1")
        state = self._state
        q = normalize(query, self.config.dimension).astype(np.float64)
        rows = [r for r in range(len(state.ids)) if filter.matches(state.tags[r])]
        return self._top_k(state, np.asarray(rows, dtype=np.int64), q, k)

    def search_ann(self, query, k: int, filter: TagFilter = MATCH_ALL) -> AnnResult:
        """Three-stage ANN search: probe partitions by centroid similarity, score
        filter-passing candidates with quantized vectors, re-rank the best
        candidates at full precision. Falls back to exact search when untrained."""
        if k < 1:
            raise ValueError("k must be >= 1")
        state = self._state
        q = normalize(query, self.config.dimension).astype(np.float64)
        if state.partitions is None:
            hits = self._top_k(state, np.arange(len(state.ids), dtype=np.int64), q, k)
            return AnnResult(hits=hits, exact_fallback=True)
        parts = state.partitions
        q32 = q.astype(np.float32)
        centroid_sims = parts.centroids @ q32
        probe_order = np.argsort(-centroid_sims, kind="stable")[: self.config.nprobe]

        candidate_rows: list[np.ndarray] = []
        approx_scores: list[np.ndarray] = []
        for part in probe_order:
            members = parts.members[part]
            if members.size == 0:
                continue
            mask = np.fromiter((filter.matches(state.tags[r]) for r in members),
                               dtype=bool, count=members.size)
            if not mask.any():
                continue
            rows = members[mask]
            table = parts.quant[part]
            if table is None:
                # full precision, so ranking here matches the re-rank stage exactly
                scores = state.matrix[rows].astype(np.float64) @ q
            else:
                proj = (q32 * table.scales).astype(np.float32)
                offset = np.float32(q32 @ table.mins)
                scores = table.codes[mask].astype(np.float32) @ proj + offset
            candidate_rows.append(rows)
            approx_scores.append(scores.astype(np.float64))
        if not candidate_rows:
            return AnnResult(hits=[], probed_partitions=len(probe_order))

        rows = np.concatenate(candidate_rows)
        approx = np.concatenate(approx_scores)
        depth = max(self.config.rerank_depth or 4 * k, k)
        if rows.size > depth:
            order = sorted(range(rows.size), key=lambda i: (-approx[i], state.ids[rows[i]]))[:depth]
            rows = rows[order]
        hits = self._top_k(state, rows, q, k)
        return AnnResult(hits=hits, probed_partitions=len(probe_order))

    def _top_k(self, state: _State, rows: np.ndarray, q: np.ndarray, k: int) -> list[SearchHit]:
        if rows.size == 0:
            return []
        scores = state.matrix[rows].astype(np.float64) @ q
        order = sorted(range(rows.size), key=lambda i: (-scores[i], state.ids[rows[i]]))[:k]
        return [
            SearchHit(
                item_id=state.ids[rows[i]],
                product_id=state.product_ids[rows[i]],
                image_id=state.image_ids[rows[i]],
                score=float(scores[i]),
                tags=state.tags[rows[i]],
            )
            for i in order
        ]

    # -- persistence ---------------------------------------------------------

    def save_snapshot(self, path: str | Path) -> None:
        """Write the binary snapshot at `path` and the JSONL sidecar at `<path>.meta.jsonl`."""
        path = Path(path)
        state = self._state
        n = len(state.ids)
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC)
            fh.write(struct.pack("<IIQI", self.config.dimension, METRIC_COSINE, n,
                                 self.config.num_partitions))
            for item_id in state.ids:
                raw = item_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            if state.partitions is None:
                fh.write(struct.pack("<I", 0))
            else:
                centroids = state.partitions.centroids
                fh.write(struct.pack("<I", centroids.shape[0]))
                fh.write(centroids.astype("<f4").tobytes())
            fh.write(state.matrix.astype("<f4").tobytes())
        with open(path.with_name(path.name + ".meta.jsonl"), "w", encoding="utf-8") as fh:
            for row in range(n):
                record = {
                    "item_id": state.ids[row],
                    "product_id": state.product_ids[row],
                    "image_id": state.image_ids[row],
                    "tags": state.tags[row].to_json(),
                }
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load_snapshot(cls, path: str | Path, *, nprobe: int | None = None,
                      quantizer: str | None = None, rerank_depth: int | None = None) -> "VectorIndex":
        """Load a snapshot; search knobs (nprobe/quantizer/rerank_depth) default to
        IndexConfig defaults clamped to the stored partition count."""
        path = Path(path)
        data = path.read_bytes()
        if len(data) < len(SNAPSHOT_MAGIC) + 20:
            raise SnapshotFormatError(f"{path}: truncated header")
        if data[:8] != SNAPSHOT_MAGIC:
            raise SnapshotFormatError(f"{path}: bad magic bytes {data[:8]!r}")
        dimension, metric, n, num_partitions = struct.unpack_from("<IIQI", data, 8)
        if metric != METRIC_COSINE:
            raise SnapshotFormatError(f"{path}: unknown metric code {metric}")
        offset = 28
        ids: list[str] = []
        for _ in range(n):
            if offset + 4 > len(data):
                raise SnapshotFormatError(f"{path}: truncated item-id table")
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            if offset + length > len(data):
                raise SnapshotFormatError(f"{path}: truncated item-id table")
            ids.append(data[offset:offset + length].decode("utf-8"))
            offset += length
        if offset + 4 > len(data):
            raise SnapshotFormatError(f"{path}: missing centroid block")
        (n_centroids,) = struct.unpack_from("<I", data, offset)
        offset += 4
        centroid_bytes = n_centroids * dimension * 4
        vector_bytes = n * dimension * 4
        if offset + centroid_bytes + vector_bytes != len(data):
            raise SnapshotFormatError(
                f"{path}: payload size mismatch (expected {offset + centroid_bytes + vector_bytes}"
                f" bytes, file has {len(data)})"
            )
        centroids = None
        if n_centroids:
            centroids = np.frombuffer(data, dtype="<f4", count=n_centroids * dimension,
                                      offset=offset).reshape(n_centroids, dimension).copy()
            offset += centroid_bytes
        matrix = np.frombuffer(data, dtype="<f4", count=n * dimension,
                               offset=offset).reshape(n, dimension).copy()

        sidecar = path.with_name(path.name + ".meta.jsonl")
        if not sidecar.exists():
            raise SnapshotFormatError(f"{sidecar}: metadata sidecar missing")
        product_ids, image_ids, tags = [], [], []
        with open(sidecar, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                if not line.strip():
                    continue
                record = json.loads(line)
                if line_no >= n or record["item_id"] != ids[line_no]:
                    raise SnapshotFormatError(f"{sidecar}:{line_no + 1}: item order mismatch")
                product_ids.append(record["product_id"])
                image_ids.append(record["image_id"])
                tags.append(MetadataTags.from_json(record["tags"]))
        if len(product_ids) != n:
            raise SnapshotFormatError(f"{sidecar}: expected {n} rows, found {len(product_ids)}")

        parts = max(1, num_partitions)
        config = IndexConfig(
            dimension=dimension,
            num_partitions=parts,
            nprobe=min(nprobe if nprobe is not None else 32, parts),
            quantizer=quantizer if quantizer is not None else "scalar8",
            rerank_depth=rerank_depth,
        )
        index = cls(config)
        partitions = None
        if centroids is not None:
            partitions = _assign_and_quantize(matrix, centroids, config)
        index._state = _State(ids, {i: r for r, i in enumerate(ids)}, matrix,
                              product_ids, image_ids, tags, partitions)
        return index


def _quantize_partition(matrix: np.ndarray, members: np.ndarray) -> _QuantTable:
    vectors = matrix[members]
    mins = vectors.min(axis=0)
    spans = vectors.max(axis=0) - mins
    scales = np.where(spans > 0, spans / np.float32(255.0), np.float32(0.0)).astype(np.float32)
    with np.errstate(invalid="ignore", divide="ignore"):
        codes = np.where(scales > 0, np.rint((vectors - mins) / np.where(scales > 0, scales, 1)), 0)
    return _QuantTable(mins.astype(np.float32), scales,
                       np.clip(codes, 0, 255).astype(np.uint8))


def _assign_rows(matrix: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    if matrix.shape[0] == 0:
        return np.zeros(0, dtype=np.int32)
    return np.argmax(matrix @ centroids.T, axis=1).astype(np.int32)


def _build_partitions(matrix: np.ndarray, centroids: np.ndarray,
                      assignments: np.ndarray, config: IndexConfig) -> _Partitions:
    members = [np.nonzero(assignments == c)[0] for c in range(centroids.shape[0])]
    quant: list[_QuantTable | None] = [None] * centroids.shape[0]
    if config.quantizer == "scalar8":
        quant = [_quantize_partition(matrix, m) if m.size else None for m in members]
    return _Partitions(centroids, assignments, members, quant)


def _assign_and_quantize(matrix: np.ndarray, centroids: np.ndarray, config: IndexConfig) -> _Partitions:
    return _build_partitions(matrix, centroids, _assign_rows(matrix, centroids), config)


def _repartition(matrix: np.ndarray, centroids: np.ndarray, config: IndexConfig,
                 old: _Partitions, touched_rows: set[int], old_n: int) -> _Partitions:
    """Reassign only new/replaced rows, then rebuild member lists and the quant
    tables of partitions whose membership changed."""
    n = matrix.shape[0]
    assignments = np.zeros(n, dtype=np.int32)
    assignments[:old_n] = old.assignments
    touched = sorted(touched_rows)
    if touched:
        rows = np.asarray(touched, dtype=np.int64)
        assignments[rows] = _assign_rows(matrix[rows], centroids)
    dirty = {int(assignments[r]) for r in touched} | {int(old.assignments[r]) for r in touched if r < old_n}
    members = [np.nonzero(assignments == c)[0] for c in range(centroids.shape[0])]
    quant: list[_QuantTable | None] = [None] * centroids.shape[0]
    if config.quantizer == "scalar8":
        for c in range(centroids.shape[0]):
            if members[c].size == 0:
                quant[c] = None
            elif c in dirty or old.quant[c] is None or not np.array_equal(members[c], old.members[c]):
                quant[c] = _quantize_partition(matrix, members[c])
            else:
                quant[c] = old.quant[c]
    return _Partitions(centroids, assignments, members, quant)
