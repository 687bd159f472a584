"""JSON wire formats shared by the HTTP service, the CLI, and fixtures:
catalog rows, query inputs (precomputed detections/embeddings), and gallery
responses."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .detect import BoundingBox, Detection
from .encode import ItemDescriptor
from .pipeline import Gallery, GalleryItem, QueryInput, QueryObject
from .vecindex import IndexedItem, MetadataTags


class WireFormatError(ValueError):
    """Malformed payload; message names the offending field."""


def catalog_row_to_item(row: dict, encoder=None) -> IndexedItem:
    """Catalog JSONL row to an IndexedItem; rows without a vector are encoded
    from (category, image_id) using the supplied encoder."""
    for name in ("product_id", "image_id", "category", "tags"):
        if name not in row:
            raise WireFormatError(f"catalog row missing field {name!r}")
    tags = row["tags"]
    if not isinstance(tags, dict) or "geo" not in tags:
        raise WireFormatError("catalog row field 'tags.geo' is required")
    vector = row.get("vector")
    if vector is None:
        if encoder is None:
            raise WireFormatError(
                f"row {row['image_id']!r} has no vector and no encoder is configured")
        vector = encoder.encode(ItemDescriptor(row["category"], row["image_id"]))
    else:
        vector = np.asarray(vector, dtype=np.float32)
    return IndexedItem(
        item_id=row["image_id"],
        product_id=row["product_id"],
        image_id=row["image_id"],
        vector=vector,
        tags=MetadataTags.make(
            geo=tags["geo"],
            category=row["category"],
            findable=tags.get("findable", True),
            compliant=tags.get("compliant", True),
            extra=tags.get("extra"),
        ),
    )


def query_from_json(payload: dict) -> QueryInput:
    """Precomputed-query document to a QueryInput."""
    for name in ("image_id", "width", "height", "objects"):
        if name not in payload:
            raise WireFormatError(f"query missing field {name!r}")
    objects: list[QueryObject] = []
    for pos, entry in enumerate(payload["objects"]):
        where = f"objects[{pos}]"
        box = entry.get("box")
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            raise WireFormatError(f"field '{where}.box' must be [x_min, y_min, x_max, y_max]")
        confidence = entry.get("confidence")
        if not isinstance(confidence, (int, float)) or not 0 <= confidence <= 1:
            raise WireFormatError(f"field '{where}.confidence' must lie in [0, 1]")
        try:
            bounding = BoundingBox(*map(float, box)).clamped(
                float(payload["width"]), float(payload["height"]))
            detection = Detection(bounding, float(confidence), entry.get("superclass"))
        except ValueError as exc:
            raise WireFormatError(f"field '{where}.box' invalid: {exc}") from exc
        embedding = entry.get("embedding")
        descriptor = entry.get("descriptor")
        if embedding is not None:
            embedding = np.asarray(embedding, dtype=np.float32)
        parsed_descriptor = None
        if descriptor is not None:
            if "category" not in descriptor or "instance_id" not in descriptor:
                raise WireFormatError(
                    f"field '{where}.descriptor' needs category and instance_id")
            parsed_descriptor = ItemDescriptor(descriptor["category"], descriptor["instance_id"])
        if embedding is None and parsed_descriptor is None:
            raise WireFormatError(
                f"field '{where}' needs either an embedding or a descriptor")
        objects.append(QueryObject(detection, embedding, parsed_descriptor))
    return QueryInput(str(payload["image_id"]), float(payload["width"]),
                      float(payload["height"]), objects)


def _gallery_item_to_json(item: GalleryItem) -> dict:
    return {
        "product_id": item.product_id,
        "image_id": item.image_id,
        "score": item.score,
        "category": item.category,
        "broad_class": item.broad_class,
        "source_object_rank": item.source_object_rank,
    }


def gallery_to_json(gallery: Gallery) -> dict:
    doc = {
        "query_image_id": gallery.query_image_id,
        "objects": [
            {
                "box": [og.detection.box.x_min, og.detection.box.y_min,
                        og.detection.box.x_max, og.detection.box.y_max],
                "rank": og.rank,
                "rank_score": og.rank_score,
                "broad_class": og.broad_class,
                "warning": og.warning,
                "results": [_gallery_item_to_json(item) for item in og.items],
            }
            for og in gallery.per_object
        ],
        "merged": [_gallery_item_to_json(item) for item in gallery.merged],
        "trace": gallery.trace,
    }
    if gallery.reason:
        doc["reason"] = gallery.reason
    return doc


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise WireFormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    return rows


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def dump_json(path: str | Path, doc: dict) -> None:
    """Deterministic JSON file output (sorted keys, fixed separators)."""
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
