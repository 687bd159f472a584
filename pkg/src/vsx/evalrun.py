"""Offline runs: catalog indexing, the judged end-to-end evaluation run
(search every query, judge every returned pair, compute the retrieval report),
and the human/model agreement report. Reports are deterministic given seed and
config; manifests carry run identity, dataset hashes, counts, and timestamps.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Runtime, ServiceConfig
from .encode import EncodeError, ItemDescriptor
from .judge import JudgePair, judge_batch
from .metrics import (
    BinarizationRule,
    RatedResult,
    RatingPairSet,
    agreement_report,
    retrieval_report,
)
from .pipeline import Gallery
from .vecindex import ItemValidationError
from .wire import (
    WireFormatError,
    catalog_row_to_item,
    dump_json,
    gallery_to_json,
    query_from_json,
    read_jsonl,
    write_jsonl,
)


def file_digest(path: str | Path) -> str:
    return hashlib.blake2b(Path(path).read_bytes(), digest_size=16).hexdigest()


# --- index build ----------------------------------------------------------------


@dataclass
class BuildReport:
    total_rows: int
    indexed: int
    invalid: int
    errors: list[str]
    snapshot_path: str


def build_index_from_catalog(catalog_path: str | Path, out_dir: str | Path,
                             runtime: Runtime) -> BuildReport:
    """Encode catalog rows (when they carry no vector), train partitions, and
    write the snapshot + sidecar. Aborts when more than the configured fraction
    of rows is invalid, or when nothing valid remains."""
    config = runtime.config
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_jsonl(catalog_path)
    if not rows:
        raise ValueError(f"{catalog_path}: catalog is empty; refusing to write a snapshot")
    items = []
    errors: list[str] = []
    seen_image_ids: set[str] = set()
    for row_no, row in enumerate(rows, start=1):
        try:
            item = catalog_row_to_item(row, encoder=runtime.encoder)
            if item.item_id in seen_image_ids:
                raise WireFormatError(f"duplicate image_id {item.item_id!r}")
            seen_image_ids.add(item.item_id)
            items.append(item)
        except (WireFormatError, EncodeError, ValueError) as exc:
            errors.append(f"row {row_no}: {exc}")
    invalid_fraction = len(errors) / len(rows)
    if invalid_fraction > config.max_invalid_fraction:
        raise ValueError(
            f"{len(errors)}/{len(rows)} catalog rows invalid "
            f"(limit {config.max_invalid_fraction:.1%}); first: {errors[0]}")
    if not items:
        raise ValueError(f"{catalog_path}: no valid rows; refusing to write a snapshot")

    index = runtime.index
    try:
        index.upsert(items)
    except ItemValidationError as exc:
        raise ValueError(f"catalog rows failed index validation: {exc}") from exc
    if len(items) >= index.config.num_partitions:
        index.train_partitions(seed=config.seed)
    snapshot = out_dir / "index.vsx"
    index.save_snapshot(snapshot)
    return BuildReport(total_rows=len(rows), indexed=len(items), invalid=len(errors),
                       errors=errors, snapshot_path=str(snapshot))


# --- judged evaluation run --------------------------------------------------------


@dataclass
class EvalRunResult:
    run_id: str
    run_dir: Path
    report: dict
    manifest: dict


def _merge_trace(total: dict, trace: dict) -> None:
    for stage, counts in trace.items():
        slot = total.setdefault(stage, {"in": 0, "out": 0})
        slot["in"] += counts["in"]
        slot["out"] += counts["out"]


def _object_embeddings(runtime: Runtime, query) -> dict[int, np.ndarray]:
    """Embedding per object rank, for building judge pairs."""
    embeddings = {}
    for obj in query.objects:
        if obj.embedding is not None:
            embeddings[id(obj.detection)] = np.asarray(obj.embedding, dtype=np.float32)
        elif obj.descriptor is not None:
            embeddings[id(obj.detection)] = runtime.encoder.encode(obj.descriptor)
    return embeddings


def _pairs_for_gallery(runtime: Runtime, query, gallery: Gallery,
                       max_k: int) -> list[JudgePair]:
    by_rank: dict[int, tuple] = {}
    source_embeddings = _object_embeddings(runtime, query)
    for og in gallery.per_object:
        emb = source_embeddings.get(id(og.detection))
        descriptor = next((o.descriptor for o in query.objects
                           if id(o.detection) == id(og.detection)), None)
        by_rank[og.rank] = (emb, descriptor)
    pairs = []
    for position, item in enumerate(gallery.merged[:max_k]):
        emb, descriptor = by_rank.get(item.source_object_rank, (None, None))
        query_category = descriptor.category if descriptor is not None else None
        pairs.append(JudgePair(
            pair_id=f"{gallery.query_image_id}#r{position:03d}",
            query_ref=f"{gallery.query_image_id}/object{item.source_object_rank}",
            result_ref=item.image_id,
            query_category=query_category,
            result_category=item.category,
            query_embedding=emb,
            result_embedding=runtime.index.vector(item.image_id),
        ))
    return pairs


def run_eval(queries_path: str | Path, runtime: Runtime, judge_kind: str | None = None,
             runs_dir: str | Path | None = None) -> EvalRunResult:
    """Search every query, judge all (query, result) pairs at the largest
    configured cutoff, and write the per-k report plus manifest. Ratings are
    cached by content hash, so a rerun is incremental and bit-identical."""
    config = runtime.config
    runs_dir = Path(runs_dir if runs_dir is not None else config.runs_dir)
    backend = runtime.make_judge_backend(judge_kind)
    max_k = max(config.metrics.k_values)

    dataset_hash = file_digest(queries_path)
    run_key = json.dumps({
        "dataset": dataset_hash,
        "config": config.to_snapshot(),
        "backend": backend.signature,
        "index_items": len(runtime.index),
    }, sort_keys=True)
    run_id = hashlib.blake2b(run_key.encode(), digest_size=8).hexdigest()
    run_dir = runs_dir / run_id
    run_dir.mkdir(parents=True, exist_ok=True)

    queries = [query_from_json(row) for row in read_jsonl(queries_path)]
    galleries: list[Gallery] = []
    excluded: list[dict] = []
    trace_totals: dict = {}
    all_pairs: list[JudgePair] = []
    pairs_per_query: list[tuple[str, int]] = []
    for query in queries:
        gallery = runtime.pipeline.search_image(query)
        galleries.append(gallery)
        _merge_trace(trace_totals, gallery.trace)
        if gallery.reason is not None:
            excluded.append({"query_image_id": gallery.query_image_id,
                             "reason": gallery.reason})
            continue
        pairs = _pairs_for_gallery(runtime, query, gallery, max_k)
        pairs_per_query.append((gallery.query_image_id, len(pairs)))
        all_pairs.extend(pairs)

    if not all_pairs:
        raise ValueError("no judgeable pairs: every query was excluded")
    outcomes, judge_manifest = judge_batch(all_pairs, backend, cache_dir=run_dir / "cache")

    judged_queries: list[list[RatedResult]] = []
    cursor = 0
    rating_rows = []
    for query_image_id, n_pairs in pairs_per_query:
        results = []
        for outcome in outcomes[cursor:cursor + n_pairs]:
            rating_rows.append({**outcome.to_json(), "run_id": run_id})
            if outcome.status == "ok":
                results.append(RatedResult(relevance=outcome.rating.category_relevance,
                                           similarity=outcome.rating.visual_similarity))
        cursor += n_pairs
        if results:
            judged_queries.append(results)
        else:
            excluded.append({"query_image_id": query_image_id, "reason": "JUDGE_UNAVAILABLE"})

    relevance_rule = BinarizationRule("relevance", config.metrics.relevance_threshold)
    similarity_rule = BinarizationRule("similarity", config.metrics.similarity_threshold)
    judge_counts = judge_manifest.to_json()
    judge_counts.pop("cache_hits")  # warm/cold runs must render identical reports
    report = {
        "run_id": run_id,
        "k": retrieval_report(judged_queries, list(config.metrics.k_values),
                              relevance_rule, similarity_rule),
        "queries": {
            "total": len(queries),
            "evaluated": len(judged_queries),
            "excluded": excluded,
        },
        "judge": judge_counts,
    }
    manifest = {
        "run_id": run_id,
        "dataset_hash": dataset_hash,
        "backend": backend.signature,
        "config": config.to_snapshot(),
        "trace_totals": trace_totals,
        "judge": judge_manifest.to_json(),
        "timestamps": {"completed_unix": time.time()},
    }
    dump_json(run_dir / "report.json", report)
    dump_json(run_dir / "manifest.json", manifest)
    write_jsonl(run_dir / "ratings.jsonl", rating_rows)
    galleries_doc = [gallery_to_json(g) for g in galleries]
    write_jsonl(run_dir / "galleries.jsonl", galleries_doc)
    return EvalRunResult(run_id=run_id, run_dir=run_dir, report=report, manifest=manifest)


def load_report(runs_dir: str | Path, run_id: str) -> dict:
    path = Path(runs_dir) / run_id / "report.json"
    if not path.exists():
        raise FileNotFoundError(f"no report for run {run_id!r} under {runs_dir}")
    return json.loads(path.read_text())


def report_to_csv(report: dict) -> str:
    """Flatten the per-k table to CSV (one row per cutoff)."""
    lines = ["k,rel_p,vs_p,success,ndcg"]
    for k in sorted(report["k"], key=int):
        row = report["k"][k]
        lines.append(f"{k},{row['rel_p']},{row['vs_p']},{row['success']},{row['ndcg']}")
    return "\n".join(lines) + "\n"


def agreement_to_csv(report: dict) -> str:
    """Flatten the two-task agreement table to CSV (task, metric, estimate, se)."""
    lines = ["task,metric,estimate,se"]
    for task in ("category_relevance", "visual_similarity"):
        for metric in ("kappa_w", "spearman_rho", "mae", "f1", "mcc"):
            cell = report[task][metric]
            lines.append(f"{task},{metric},{cell['estimate']},{cell['se']}")
    return "\n".join(lines) + "\n"


# --- agreement run ------------------------------------------------------------------


def _ratings_by_pair(path: str | Path) -> dict[str, dict]:
    rows = read_jsonl(path)
    by_id: dict[str, dict] = {}
    for row in rows:
        if "pair_id" not in row:
            raise WireFormatError(f"{path}: every rating row needs a pair_id")
        source = row.get("rating") or row
        by_id[row["pair_id"]] = source
    return by_id


def run_agreement(human_path: str | Path, model_path: str | Path,
                  config: ServiceConfig) -> dict:
    """Table-shaped agreement report: both tasks x five metrics, each with a
    bootstrap standard error."""
    human = _ratings_by_pair(human_path)
    model = _ratings_by_pair(model_path)
    missing_in_model = sorted(set(human) - set(model))
    missing_in_human = sorted(set(model) - set(human))
    if missing_in_model or missing_in_human:
        raise ValueError(
            "rating files do not align: "
            f"{len(missing_in_model)} pair ids missing from model file "
            f"(first: {missing_in_model[:3]}), "
            f"{len(missing_in_human)} missing from human file "
            f"(first: {missing_in_human[:3]})")
    ids = sorted(human)
    relevance = RatingPairSet(
        [int(human[i]["category_relevance"]) for i in ids],
        [int(model[i]["category_relevance"]) for i in ids],
        scale=3,
    )
    similarity = RatingPairSet(
        [int(human[i]["visual_similarity"]) for i in ids],
        [int(model[i]["visual_similarity"]) for i in ids],
        scale=5,
    )
    b = config.metrics.bootstrap_b
    seed = config.metrics.bootstrap_seed
    return {
        "n": len(ids),
        "category_relevance": agreement_report(
            relevance, BinarizationRule("relevance", config.metrics.relevance_threshold),
            B=b, seed=seed),
        "visual_similarity": agreement_report(
            similarity, BinarizationRule("similarity", config.metrics.similarity_threshold),
            B=b, seed=seed),
    }
