#!/usr/bin/env python3
"""Generate a synthetic dataset directory: catalog.jsonl, queries.jsonl,
broad_classes.jsonl, and a ready-to-use config.yaml."""

import argparse
from pathlib import Path

from vsx.config import WorldConfig, default_config_yaml
from vsx.synthdata import SyntheticDatasetSpec, broad_class_rows, catalog_rows, query_rows
from vsx.wire import write_jsonl


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=Path, help="output directory")
    parser.add_argument("--categories", type=int, default=20)
    parser.add_argument("--items-per-category", type=int, default=50)
    parser.add_argument("--queries", type=int, default=100)
    parser.add_argument("--sigma", type=float, default=0.1)
    parser.add_argument("--dimension", type=int, default=48)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--partitions", type=int, default=64)
    parser.add_argument("--nprobe", type=int, default=16)
    args = parser.parse_args()

    spec = SyntheticDatasetSpec(
        num_categories=args.categories,
        items_per_category=args.items_per_category,
        noise_sigma=args.sigma,
        seed=args.seed,
        dimension=args.dimension,
        num_queries=args.queries,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_jsonl(args.out / "catalog.jsonl", catalog_rows(spec))
    write_jsonl(args.out / "queries.jsonl", query_rows(spec))
    write_jsonl(args.out / "broad_classes.jsonl", broad_class_rows(spec))
    world = WorldConfig(num_categories=spec.num_categories, noise_sigma=spec.noise_sigma,
                        seed=spec.seed)
    (args.out / "config.yaml").write_text(
        default_config_yaml(str(args.out), spec.dimension, world,
                            args.partitions, args.nprobe))
    print(f"dataset written to {args.out}: {spec.num_categories * spec.items_per_category} "
          f"catalog rows, {spec.num_queries} queries")


if __name__ == "__main__":
    main()
