#!/usr/bin/env python3
"""ANN recall/latency sweep: recall@10 of the quantized IVF search against the
exact scan on a clustered synthetic corpus, across nprobe settings."""

import argparse
import time

import numpy as np

from vsx.vecindex import IndexConfig, IndexedItem, MetadataTags, VectorIndex


def clustered(n, dim, clusters, sigma, seed):
    rng = np.random.default_rng(seed)
    anchors = rng.normal(size=(clusters, dim))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    assign = rng.integers(0, clusters, size=n)
    vecs = anchors[assign] + sigma * rng.normal(size=(n, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    queries = anchors[rng.integers(0, clusters, size=100)] + sigma * rng.normal(size=(100, dim))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    return vecs.astype(np.float32), queries.astype(np.float32)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=10_000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--clusters", type=int, default=50)
    parser.add_argument("--sigma", type=float, default=0.15)
    parser.add_argument("--partitions", type=int, default=256)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    vecs, queries = clustered(args.n, args.dim, args.clusters, args.sigma, args.seed)
    for nprobe in (4, 8, 16, 32, 64, args.partitions):
        index = VectorIndex(IndexConfig(dimension=args.dim, num_partitions=args.partitions,
                                        nprobe=nprobe, quantizer="scalar8"))
        index.upsert([
            IndexedItem(f"i{i:05d}", f"p{i:05d}", f"g{i:05d}", vecs[i],
                        MetadataTags.make({"US"}, "cat"))
            for i in range(args.n)
        ])
        index.train_partitions(seed=0)
        recalls = []
        started = time.time()
        for q in queries:
            exact = {h.item_id for h in index.search_exact(q, 10)}
            ann = {h.item_id for h in index.search_ann(q, 10).hits}
            recalls.append(len(exact & ann) / 10)
        elapsed = (time.time() - started) * 1000 / (2 * len(queries))
        print(f"nprobe={nprobe:4d}  recall@10={np.mean(recalls):.4f}  "
              f"~{elapsed:.2f} ms/query (incl. exact baseline)")


if __name__ == "__main__":
    main()
