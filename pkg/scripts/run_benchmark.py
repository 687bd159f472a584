#!/usr/bin/env python3
"""End-to-end synthetic benchmark: generate (or reuse) a dataset, build the
index, run the mock-judged evaluation, and print the per-k report."""

import argparse
import json
import time
from pathlib import Path

from vsx.config import build_runtime, load_config
from vsx.evalrun import build_index_from_catalog, run_eval
from vsx.vecindex import VectorIndex


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dataset", type=Path,
                        help="dataset directory produced by make_dataset.py")
    parser.add_argument("--judge", choices=["mock", "http"], default="mock")
    args = parser.parse_args()

    config = load_config(args.dataset / "config.yaml")
    started = time.time()
    runtime = build_runtime(config, index=VectorIndex(config.index))
    build = build_index_from_catalog(args.dataset / "catalog.jsonl", args.dataset, runtime)
    print(f"indexed {build.indexed} rows ({build.invalid} invalid) "
          f"in {time.time() - started:.1f}s")

    result = run_eval(args.dataset / "queries.jsonl", runtime, judge_kind=args.judge)
    print(f"run {result.run_id} finished in {time.time() - started:.1f}s")
    print(json.dumps(result.report["k"], indent=2, sort_keys=True))
    evaluated = result.report["queries"]["evaluated"]
    print(f"evaluated {evaluated}/{result.report['queries']['total']} queries")


if __name__ == "__main__":
    main()
