"""Online search orchestration: detections are confidence-filtered, merged by
class-agnostic NMS, ranked by the intent proxy, encoded, and matched against
the index under a geo pre-filter; candidates then pass application-layer
shoppability filters, product- and image-level deduplication, broad-class
inference, and a round-robin merge into the final gallery.

Detector superclass labels are never read downstream of NMS; taxonomy enters
only through the broad-class vote over retrieved candidates' metadata, which
demotes rather than removes mismatches.
"""

from __future__ import annotations

import json
import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detect import DetectConfig, Detection, class_agnostic_nms, filter_by_confidence, rank_objects
from .encode import EncodeError, ItemDescriptor
from .vecindex import TagFilter

NO_OBJECTS = "NO_OBJECTS"
NO_CANDIDATES = "NO_CANDIDATES"
UNMAPPED = "UNMAPPED"


@dataclass(frozen=True)
class BroadClassMap:
    """Total map from granular category to customer-facing broad class;
    categories outside the map fall back to the UNMAPPED sentinel."""

    mapping: dict[str, str]

    def broad_class(self, category: str) -> str:
        return self.mapping.get(category, UNMAPPED)

    def digest(self) -> str:
        blob = json.dumps(sorted(self.mapping.items())).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "BroadClassMap":
        mapping: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if "category" not in row or "broad_class" not in row:
                    raise ValueError(f"{path}:{line_no}: rows need category and broad_class")
                mapping[row["category"]] = row["broad_class"]
        return cls(mapping)


@dataclass(frozen=True)
class PipelineConfig:
    k_per_object: int = 24
    dup_cosine_threshold: float = 0.98
    broad_class_vote_m: int = 10
    geo: str = "US"
    final_gallery_size: int = 48

    def __post_init__(self):
        if not 0.0 < self.dup_cosine_threshold <= 1.0:
            raise ValueError("dup_cosine_threshold must lie in (0, 1]")
        if self.broad_class_vote_m > self.k_per_object:
            raise ValueError("broad_class_vote_m cannot exceed k_per_object")
        if min(self.k_per_object, self.broad_class_vote_m, self.final_gallery_size) < 1:
            raise ValueError("sizes must be positive")


@dataclass(frozen=True)
class Candidate:
    """A retrieved catalog image with everything later stages need."""

    item_id: str
    product_id: str
    image_id: str
    score: float
    category: str
    findable: bool
    compliant: bool
    vector: np.ndarray


@dataclass(frozen=True)
class GalleryItem:
    product_id: str
    image_id: str
    score: float
    source_object_rank: int
    broad_class: str
    category: str


@dataclass(frozen=True)
class ObjectGallery:
    detection: Detection
    rank_score: float
    rank: int
    broad_class: str | None
    items: list[GalleryItem]
    warning: str | None = None


@dataclass(frozen=True)
class Gallery:
    query_image_id: str
    per_object: list[ObjectGallery]
    merged: list[GalleryItem]
    trace: dict[str, dict[str, int]]
    reason: str | None = None


@dataclass(frozen=True)
class QueryObject:
    """One candidate object in a query image, with its embedding either
    precomputed or derivable from a synthetic descriptor."""

    detection: Detection
    embedding: np.ndarray | None = None
    descriptor: ItemDescriptor | None = None


@dataclass(frozen=True)
class QueryInput:
    image_id: str
    width: float
    height: float
    objects: list[QueryObject]


def apply_app_filters(candidates: list[Candidate]) -> list[Candidate]:
    """Application-layer shoppability: keep findable and compliant items only."""
    return [c for c in candidates if c.findable and c.compliant]


def dedup(candidates: list[Candidate], dup_cosine_threshold: float) -> list[Candidate]:
    """Product-level first (best-scored hit per product), then image-level: walk
    in order and drop anything whose cosine with an already-kept item exceeds
    the threshold."""
    seen_products: set[str] = set()
    product_level: list[Candidate] = []
    for cand in candidates:
        if cand.product_id in seen_products:
            continue
        seen_products.add(cand.product_id)
        product_level.append(cand)
    kept: list[Candidate] = []
    for cand in product_level:
        if any(float(cand.vector @ other.vector) > dup_cosine_threshold for other in kept):
            continue
        kept.append(cand)
    return kept


def infer_broad_class(candidates: list[Candidate], class_map: BroadClassMap,
                      vote_m: int) -> tuple[str, list[Candidate]]:
    """Majority vote of broad classes over the top vote_m candidates; ties go to
    the best-scored candidate's class. Mismatching candidates are demoted below
    all matching ones, preserving order within each group."""
    if not candidates:
        raise ValueError("cannot infer a broad class from zero candidates")
    voters = candidates[:vote_m]
    votes = Counter(class_map.broad_class(c.category) for c in voters)
    top_count = max(votes.values())
    tied = [label for label, count in votes.items() if count == top_count]
    if len(tied) == 1:
        winner = tied[0]
    else:
        winner = class_map.broad_class(candidates[0].category)
        if winner not in tied:  # best-scored candidate's class may itself be a minority
            winner = min(tied)
    matching = [c for c in candidates if class_map.broad_class(c.category) == winner]
    demoted = [c for c in candidates if class_map.broad_class(c.category) != winner]
    return winner, matching + demoted


def round_robin_merge(per_object_items: list[list[GalleryItem]],
                      final_gallery_size: int) -> list[GalleryItem]:
    """One item per object per cycle, in object-rank order, skipping exhausted
    lists and product ids already emitted by any object."""
    merged: list[GalleryItem] = []
    emitted_products: set[str] = set()
    cursors = [0] * len(per_object_items)
    while len(merged) < final_gallery_size:
        progressed = False
        for obj, items in enumerate(per_object_items):
            if len(merged) >= final_gallery_size:
                break
            cursor = cursors[obj]
            while cursor < len(items) and items[cursor].product_id in emitted_products:
                cursor += 1
            cursors[obj] = cursor
            if cursor >= len(items):
                continue
            merged.append(items[cursor])
            emitted_products.add(items[cursor].product_id)
            cursors[obj] = cursor + 1
            progressed = True
        if not progressed:
            break
    return merged


class SearchPipeline:
    """Stateless orchestration over an index, an encoder, and a broad-class map."""

    def __init__(self, index, encoder, class_map: BroadClassMap,
                 config: PipelineConfig | None = None,
                 detect_config: DetectConfig | None = None):
        self.index = index
        self.encoder = encoder
        self.class_map = class_map
        self.config = config or PipelineConfig()
        self.detect_config = detect_config or DetectConfig()

    def retrieve_for_object(self, embedding: np.ndarray) -> list[Candidate]:
        """ANN search under the geo pre-filter, hydrated with stored vectors."""
        result = self.index.search_ann(embedding, k=self.config.k_per_object,
                                       filter=TagFilter.make(geo={self.config.geo}))
        return [
            Candidate(
                item_id=hit.item_id,
                product_id=hit.product_id,
                image_id=hit.image_id,
                score=hit.score,
                category=hit.tags.category,
                findable=hit.tags.findable,
                compliant=hit.tags.compliant,
                vector=self.index.vector(hit.item_id),
            )
            for hit in result.hits
        ]

    def _object_embedding(self, obj: QueryObject) -> np.ndarray:
        if obj.embedding is not None:
            return np.asarray(obj.embedding, dtype=np.float32)
        if obj.descriptor is None:
            raise EncodeError("query object carries neither embedding nor descriptor")
        return self.encoder.encode(obj.descriptor)

    def search_image(self, query: QueryInput) -> Gallery:
        trace: dict[str, dict[str, int]] = {}
        raw = [obj.detection for obj in query.objects]
        by_detection = {id(obj.detection): obj for obj in query.objects}

        confident = filter_by_confidence(raw, self.detect_config)
        trace["confidence_filter"] = {"in": len(raw), "out": len(confident)}
        kept = class_agnostic_nms(confident, self.detect_config)
        trace["nms"] = {"in": len(confident), "out": len(kept)}
        ranked = rank_objects(kept, query.width, query.height, self.detect_config)
        trace["rank"] = {"in": len(kept), "out": len(ranked)}
        if not ranked:
            trace["retrieve"] = {"in": 0, "out": 0}
            trace["app_filter"] = {"in": 0, "out": 0}
            trace["dedup"] = {"in": 0, "out": 0}
            trace["merge"] = {"in": 0, "out": 0}
            return Gallery(query.image_id, [], [], trace, reason=NO_OBJECTS)

        per_object: list[ObjectGallery] = []
        retrieved_total = filtered_total = deduped_total = 0
        for ranked_obj in ranked:
            source = by_detection[id(ranked_obj.detection)]
            try:
                embedding = self._object_embedding(source)
                candidates = self.retrieve_for_object(embedding)
            except (EncodeError, ValueError) as exc:
                per_object.append(ObjectGallery(ranked_obj.detection, ranked_obj.rank_score,
                                                ranked_obj.rank, None, [],
                                                warning=f"retrieval failed: {exc}"))
                continue
            retrieved_total += len(candidates)
            filtered = apply_app_filters(candidates)
            filtered_total += len(filtered)
            unique = dedup(filtered, self.config.dup_cosine_threshold)
            deduped_total += len(unique)
            if not unique:
                per_object.append(ObjectGallery(ranked_obj.detection, ranked_obj.rank_score,
                                                ranked_obj.rank, None, [],
                                                warning="no candidates after filtering"))
                continue
            broad, ordered = infer_broad_class(unique, self.class_map,
                                               self.config.broad_class_vote_m)
            items = [
                GalleryItem(
                    product_id=c.product_id,
                    image_id=c.image_id,
                    score=c.score,
                    source_object_rank=ranked_obj.rank,
                    broad_class=self.class_map.broad_class(c.category),
                    category=c.category,
                )
                for c in ordered
            ]
            per_object.append(ObjectGallery(ranked_obj.detection, ranked_obj.rank_score,
                                            ranked_obj.rank, broad, items))

        trace["retrieve"] = {"in": retrieved_total, "out": retrieved_total}
        trace["app_filter"] = {"in": retrieved_total, "out": filtered_total}
        trace["dedup"] = {"in": filtered_total, "out": deduped_total}
        merged = round_robin_merge([og.items for og in per_object],
                                   self.config.final_gallery_size)
        trace["merge"] = {"in": deduped_total, "out": len(merged)}
        reason = NO_CANDIDATES if not merged else None
        return Gallery(query.image_id, per_object, merged, trace, reason=reason)
