"""HTTP service: search, streaming index writes, judge evaluation, and stored
report retrieval. Payload problems come back as 4xx with field-level
diagnostics; a missing external adapter (detector/encoder for image queries)
is 503 unless a fixture fallback is configured.

Image-mode searches need a detector endpoint plus an HTTP encoder. At desk
scale, configuring `detector.fixture` replays a canned precomputed query
document for any uploaded image, which keeps the multipart surface exercisable
with no models.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .config import Runtime
from .detect import DetectionsParseError, TransportError, fetch_detections
from .evalrun import load_report
from .judge import JudgePair, judge_batch
from .pipeline import QueryInput, QueryObject
from .vecindex import ItemValidationError
from .wire import WireFormatError, catalog_row_to_item, gallery_to_json, query_from_json


def _bad_request(message: str, field: str | None = None) -> JSONResponse:
    body = {"error": message}
    if field:
        body["field"] = field
    return JSONResponse(status_code=400, content=body)


def _unavailable(message: str) -> JSONResponse:
    return JSONResponse(status_code=503, content={"error": message})


def create_app(runtime: Runtime, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="vsx", docs_url=None, redoc_url=None)
    config = runtime.config

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "items": len(runtime.index),
                "trained": runtime.index.trained}

    def _search_from_payload(payload: dict) -> JSONResponse:
        try:
            query = query_from_json(payload)
        except WireFormatError as exc:
            return _bad_request(str(exc))
        gallery = runtime.pipeline.search_image(query)
        return JSONResponse(content=json.loads(json.dumps(gallery_to_json(gallery))))

    def _search_from_image(image_ref: str) -> JSONResponse:
        if config.detections_fixture:
            fixture = Path(config.detections_fixture)
            if not fixture.exists():
                return _unavailable(f"detections fixture {fixture} missing")
            return _search_from_payload(json.loads(fixture.read_text()))
        if not config.detector_endpoint:
            return _unavailable("no detector endpoint and no fixture fallback configured")
        if config.encoder_kind != "http":
            return _unavailable("image queries need an http encoder; use precomputed mode")
        try:
            doc = fetch_detections(image_ref, config.detector_endpoint)
        except TransportError as exc:
            return _unavailable(str(exc))
        except DetectionsParseError as exc:
            return _bad_request(str(exc))
        objects = []
        for det in doc.detections:
            ref = (f"{image_ref}#box={det.box.x_min:.0f},{det.box.y_min:.0f},"
                   f"{det.box.x_max:.0f},{det.box.y_max:.0f}")
            embedding = runtime.encoder.encode(ref)
            objects.append(QueryObject(det, embedding, None))
        gallery = runtime.pipeline.search_image(
            QueryInput(doc.image_id, doc.width, doc.height, objects))
        return JSONResponse(content=json.loads(json.dumps(gallery_to_json(gallery))))

    @app.post("/v1/search")
    async def search(request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("image")
            if upload is None:
                return _bad_request("multipart search needs an 'image' part", field="image")
            return _search_from_image(getattr(upload, "filename", "upload"))
        try:
            payload = await request.json()
        except json.JSONDecodeError as exc:
            return _bad_request(f"body is not valid JSON: {exc}")
        if "objects" in payload:
            return _search_from_payload(payload)
        if "image_uri" in payload:
            return _search_from_image(payload["image_uri"])
        return _bad_request("body needs either 'objects' (precomputed) or 'image_uri'")

    @app.post("/v1/index/items")
    async def upsert_items(request: Request):
        raw = (await request.body()).decode("utf-8")
        rows = []
        for line_no, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                return _bad_request(f"line {line_no}: invalid JSON: {exc}")
        if not rows:
            return _bad_request("no catalog rows in request body")
        items = []
        for line_no, row in enumerate(rows, start=1):
            try:
                items.append(catalog_row_to_item(row, encoder=runtime.encoder))
            except (WireFormatError, ValueError) as exc:
                return _bad_request(f"line {line_no}: {exc}")
        try:
            count = runtime.index.upsert(items)
        except ItemValidationError as exc:
            return _bad_request(str(exc))
        return {"upserted": count, "items": len(runtime.index)}

    @app.delete("/v1/index/items/{item_id}")
    def delete_item(item_id: str):
        removed = runtime.index.delete([item_id])
        return {"removed": removed, "items": len(runtime.index)}

    @app.post("/v1/eval/judge")
    async def eval_judge(request: Request):
        try:
            payload = await request.json()
        except json.JSONDecodeError as exc:
            return _bad_request(f"body is not valid JSON: {exc}")
        raw_pairs = payload.get("pairs")
        if not isinstance(raw_pairs, list) or not raw_pairs:
            return _bad_request("field 'pairs' must be a non-empty list", field="pairs")
        pairs = []
        for pos, entry in enumerate(raw_pairs):
            where = f"pairs[{pos}]"
            for name in ("pair_id", "query_ref", "result_ref"):
                if name not in entry:
                    return _bad_request(f"missing field '{where}.{name}'", field=name)
            pairs.append(JudgePair(
                pair_id=entry["pair_id"],
                query_ref=entry["query_ref"],
                result_ref=entry["result_ref"],
                query_category=entry.get("query_category"),
                result_category=entry.get("result_category"),
                query_embedding=(np.asarray(entry["query_embedding"], dtype=np.float32)
                                 if entry.get("query_embedding") is not None else None),
                result_embedding=(np.asarray(entry["result_embedding"], dtype=np.float32)
                                  if entry.get("result_embedding") is not None else None),
            ))
        try:
            backend = runtime.make_judge_backend(payload.get("backend"))
        except ValueError as exc:
            return _bad_request(str(exc), field="backend")
        outcomes, manifest = judge_batch(pairs, backend)
        return {"outcomes": [o.to_json() for o in outcomes], "manifest": manifest.to_json()}

    @app.get("/v1/eval/report/{run_id}")
    def eval_report(run_id: str, include: str | None = None):
        try:
            report = load_report(config.runs_dir, run_id)
        except FileNotFoundError as exc:
            return JSONResponse(status_code=404, content={"error": str(exc)})
        if include == "ratings":
            ratings_path = Path(config.runs_dir) / run_id / "ratings.jsonl"
            report["ratings"] = [json.loads(line)
                                 for line in ratings_path.read_text().splitlines() if line]
        return report

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
