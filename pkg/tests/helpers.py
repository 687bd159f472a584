"""Shared corpus builders for the test suite."""

import numpy as np

from vsx.vecindex import IndexedItem, MetadataTags


def clustered_vectors(n, dim, clusters, sigma, seed):
    """Unit vectors drawn around `clusters` random unit anchors; returns
    (vectors, cluster_assignments, anchors)."""
    rng = np.random.default_rng(seed)
    anchors = rng.normal(size=(clusters, dim))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    assign = rng.integers(0, clusters, size=n)
    vecs = anchors[assign] + sigma * rng.normal(size=(n, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs.astype(np.float32), assign, anchors.astype(np.float32)


def make_items(vecs, assign, geos=("US",)):
    return [
        IndexedItem(
            item_id=f"i{i:05d}",
            product_id=f"p{i:05d}",
            image_id=f"img{i:05d}",
            vector=vecs[i],
            tags=MetadataTags.make(geos, f"cat{assign[i]:02d}"),
        )
        for i in range(len(vecs))
    ]
