"""Detection post-processing for the online serving path: confidence
filtering, class-agnostic NMS, and ranking by a confidence/relative-area
intent proxy. Superclass labels ride along as advisory metadata only and are
never used to route retrieval.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import httpx


class DetectionsParseError(ValueError):
    """Malformed detections payload; message names the offending field."""


class TransportError(RuntimeError):
    """Remote adapter failed after exhausting retries."""


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {(self.x_min, self.y_min, self.x_max, self.y_max)}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def clamped(self, width: float, height: float) -> "BoundingBox":
        return BoundingBox(
            min(max(self.x_min, 0.0), width),
            min(max(self.y_min, 0.0), height),
            min(max(self.x_max, 0.0), width),
            min(max(self.y_max, 0.0), height),
        )


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    superclass: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class DetectConfig:
    confidence_threshold: float = 0.30
    nms_iou_threshold: float = 0.50
    rank_alpha: float = 0.5  # weight on confidence vs relative box area
    max_objects: int = 8

    def __post_init__(self):
        for name in ("confidence_threshold", "nms_iou_threshold", "rank_alpha"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.max_objects < 1:
            raise ValueError("max_objects must be positive")


@dataclass(frozen=True)
class RankedObject:
    detection: Detection
    rank_score: float
    rank: int  # 1-based position after ranking


@dataclass(frozen=True)
class DetectionsDocument:
    image_id: str
    width: float
    height: float
    detections: list[Detection]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def filter_by_confidence(dets: list[Detection], cfg: DetectConfig) -> list[Detection]:
    return [d for d in dets if d.confidence >= cfg.confidence_threshold]


def class_agnostic_nms(dets: list[Detection], cfg: DetectConfig) -> list[Detection]:
    """Greedy NMS that ignores superclass labels entirely.

    Order: confidence descending, ties broken by larger area, then input
    order. A kept box suppresses every remaining box with IoU strictly above
    the threshold.
    """
    order = sorted(range(len(dets)),
                   key=lambda i: (-dets[i].confidence, -dets[i].box.area, i))
    kept: list[Detection] = []
    for i in order:
        if all(iou(dets[i].box, k.box) <= cfg.nms_iou_threshold for k in kept):
            kept.append(dets[i])
    return kept


def rank_objects(dets: list[Detection], image_w: float, image_h: float,
                 cfg: DetectConfig) -> list[RankedObject]:
    """Order detections by rank_alpha*confidence + (1 - rank_alpha)*relative_area,
    truncated to max_objects."""
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")
    image_area = image_w * image_h
    scored = [
        (cfg.rank_alpha * d.confidence + (1.0 - cfg.rank_alpha) * (d.box.area / image_area), i)
        for i, d in enumerate(dets)
    ]
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [
        RankedObject(detection=dets[i], rank_score=score, rank=pos + 1)
        for pos, (score, i) in enumerate(scored[: cfg.max_objects])
    ]


def parse_detections_payload(payload: dict) -> DetectionsDocument:
    """Validate and convert one detections JSON document; boxes are clamped to
    the image bounds rather than rejected."""
    for field_name in ("image_id", "width", "height", "detections"):
        if field_name not in payload:
            raise DetectionsParseError(f"missing field {field_name!r}")
    width, height = payload["width"], payload["height"]
    if not isinstance(width, (int, float)) or width <= 0:
        raise DetectionsParseError(f"field 'width' must be a positive number, got {width!r}")
    if not isinstance(height, (int, float)) or height <= 0:
        raise DetectionsParseError(f"field 'height' must be a positive number, got {height!r}")
    detections: list[Detection] = []
    for pos, entry in enumerate(payload["detections"]):
        where = f"detections[{pos}]"
        box = entry.get("box")
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            raise DetectionsParseError(f"field '{where}.box' must be [x_min, y_min, x_max, y_max]")
        confidence = entry.get("confidence")
        if not isinstance(confidence, (int, float)) or not 0.0 <= confidence <= 1.0:
            raise DetectionsParseError(
                f"field '{where}.confidence' must lie in [0, 1], got {confidence!r}")
        try:
            bounding = BoundingBox(*map(float, box)).clamped(width, height)
        except ValueError as exc:
            raise DetectionsParseError(f"field '{where}.box' invalid: {exc}") from exc
        detections.append(Detection(box=bounding, confidence=float(confidence),
                                    superclass=entry.get("superclass")))
    return DetectionsDocument(str(payload["image_id"]), float(width), float(height), detections)


def load_detections_file(path: str | Path) -> DetectionsDocument:
    with open(path, encoding="utf-8") as fh:
        return parse_detections_payload(json.load(fh))


def fetch_detections(image_ref: str, detector_endpoint: str, *,
                     attempts: int = 3, backoff_s: float = 0.2,
                     client: httpx.Client | None = None,
                     sleep=time.sleep) -> DetectionsDocument:
    """POST the image reference to the detector service and parse its response.

    Transient transport failures are retried with exponential backoff
    (`attempts` total tries); a malformed payload is not retried.
    """
    own_client = client is None
    client = client or httpx.Client(timeout=10.0)
    try:
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                response = client.post(detector_endpoint, json={"image": image_ref})
                response.raise_for_status()
                return parse_detections_payload(response.json())
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    sleep(backoff_s * (2 ** attempt))
        raise TransportError(
            f"detector at {detector_endpoint} unreachable after {attempts} attempts: {last_error}")
    finally:
        if own_client:
            client.close()


def fetch_detections_batch(image_refs: list[str], detector_endpoint: str, *,
                           max_concurrent: int = 8, attempts: int = 3,
                           backoff_s: float = 0.2, client: httpx.Client | None = None,
                           sleep=time.sleep) -> list["DetectionsDocument | Exception"]:
    """Fetch many images with bounded concurrent outstanding requests;
    per-image failures become slots, the batch never aborts."""
    from concurrent.futures import ThreadPoolExecutor

    own_client = client is None
    client = client or httpx.Client(timeout=10.0)

    def one(ref: str):
        try:
            return fetch_detections(ref, detector_endpoint, attempts=attempts,
                                    backoff_s=backoff_s, client=client, sleep=sleep)
        except (TransportError, DetectionsParseError) as exc:
            return exc

    try:
        with ThreadPoolExecutor(max_workers=max(1, max_concurrent)) as executor:
            return list(executor.map(one, image_refs))
    finally:
        if own_client:
            client.close()


def strip_superclasses(dets: list[Detection]) -> list[Detection]:
    """Erase advisory labels; downstream behaviour must not change."""
    return [replace(d, superclass=None) for d in dets]
