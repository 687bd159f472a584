"""Deterministic synthetic dataset generator: a catalog of anchored-embedding
items grouped into categories and broad classes, plus query images with
planted objects. This is the no-model, no-network stand-in used by the
acceptance benchmark and the demo fixtures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encode import ItemDescriptor, SyntheticEncoder, SyntheticWorld


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_categories: int = 20
    items_per_category: int = 50
    noise_sigma: float = 0.1
    seed: int = 7
    dimension: int = 48
    num_queries: int = 100
    max_objects_per_query: int = 3
    geo: str = "US"
    unfindable_every: int = 17  # every n-th item is not findable (0 disables)
    categories_per_broad_class: int = 2


def category_names(spec: SyntheticDatasetSpec) -> list[str]:
    return [f"cat_{i:02d}" for i in range(spec.num_categories)]


def broad_class_rows(spec: SyntheticDatasetSpec) -> list[dict]:
    """Consecutive categories share a broad class (e.g. cat_00/cat_01 -> class_00)."""
    rows = []
    for i, category in enumerate(category_names(spec)):
        rows.append({"category": category,
                     "broad_class": f"class_{i // spec.categories_per_broad_class:02d}"})
    return rows


def build_world(spec: SyntheticDatasetSpec) -> SyntheticWorld:
    return SyntheticWorld(spec.num_categories, spec.noise_sigma, spec.seed,
                          spec.dimension, categories=category_names(spec))


def catalog_rows(spec: SyntheticDatasetSpec, with_vectors: bool = True) -> list[dict]:
    """Catalog JSONL rows; one image per product so the exact-retrieval
    protocol's one-image-per-product precondition holds."""
    encoder = SyntheticEncoder(build_world(spec)) if with_vectors else None
    broad = {row["category"]: row["broad_class"] for row in broad_class_rows(spec)}
    rows = []
    counter = 0
    for c, category in enumerate(category_names(spec)):
        for i in range(spec.items_per_category):
            counter += 1
            image_id = f"img-{c:02d}-{i:03d}"
            row = {
                "product_id": f"prod-{c:02d}-{i:03d}",
                "image_id": image_id,
                "image_uri": f"synthetic://{image_id}",
                "category": category,
                "broad_class": broad[category],
                "tags": {
                    "geo": [spec.geo],
                    "findable": not (spec.unfindable_every
                                     and counter % spec.unfindable_every == 0),
                    "compliant": True,
                },
            }
            if with_vectors:
                row["vector"] = [float(x) for x in
                                 encoder.encode(ItemDescriptor(category, image_id))]
            rows.append(row)
    return rows


def query_rows(spec: SyntheticDatasetSpec) -> list[dict]:
    """Query documents with 1..max_objects planted objects of distinct categories."""
    rng = np.random.default_rng(spec.seed + 1)
    names = category_names(spec)
    queries = []
    for q in range(spec.num_queries):
        n_objects = int(rng.integers(1, spec.max_objects_per_query + 1))
        cats = rng.choice(spec.num_categories, size=n_objects, replace=False)
        objects = []
        for o, cat in enumerate(cats):
            x0, y0 = rng.uniform(0, 300, size=2)
            w, h = rng.uniform(80, 250, size=2)
            objects.append({
                "box": [float(x0), float(y0), float(x0 + w), float(y0 + h)],
                "confidence": float(rng.uniform(0.55, 0.98)),
                "superclass": f"superclass_{int(cat) % 5}",
                "descriptor": {"category": names[int(cat)],
                               "instance_id": f"query-{q:03d}-obj{o}"},
            })
        queries.append({"image_id": f"query-{q:03d}", "width": 640.0, "height": 640.0,
                        "objects": objects})
    return queries
