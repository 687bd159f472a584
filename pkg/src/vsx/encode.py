"""Encoders producing unit-norm embeddings for catalog images and query
patches. The synthetic encoder is a pure function over (category, instance_id,
seed, sigma) built from fixed random category anchors, so desk-scale tests run
with no model dependencies; the HTTP encoder adapts a remote embedding
service.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np
import httpx

from .vecindex import normalize


class EncodeError(ValueError):
    """A descriptor could not be encoded; stored as a batch slot on partial failure."""


class EncoderTransportError(RuntimeError):
    """Remote encoder failed after exhausting retries."""


@dataclass(frozen=True)
class ItemDescriptor:
    """What the synthetic encoder consumes instead of pixels."""

    category: str
    instance_id: str


@dataclass(frozen=True)
class EncoderSpec:
    kind: str  # "synthetic" | "http"
    dimension: int
    endpoint: str | None = None
    batch_size: int = 32

    def __post_init__(self):
        if self.kind not in ("synthetic", "http"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http encoder requires an endpoint")


def _stable_u32s(*parts: str) -> list[int]:
    """Stable string-derived seed words (process-independent, unlike hash())."""
    digest = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class SyntheticWorld:
    """Category anchors plus per-instance noise: same-category items cluster,
    sigma controls how tightly."""

    def __init__(self, num_categories: int, noise_sigma: float, seed: int,
                 dimension: int, categories: list[str] | None = None):
        if num_categories <= 0:
            raise ValueError("num_categories must be positive")
        if noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if categories is not None and len(categories) != num_categories:
            raise ValueError("categories list must match num_categories")
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        self.dimension = int(dimension)
        self.categories = list(categories) if categories is not None \
            else [f"cat_{i:02d}" for i in range(num_categories)]
        rng = np.random.default_rng(self.seed)
        anchors = rng.normal(size=(num_categories, dimension))
        anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
        self._anchors = {name: anchors[i].astype(np.float32)
                         for i, name in enumerate(self.categories)}

    def anchor(self, category: str) -> np.ndarray:
        if category not in self._anchors:
            raise EncodeError(f"unknown category {category!r}")
        return self._anchors[category].copy()

    def embed(self, descriptor: ItemDescriptor) -> np.ndarray:
        anchor = self.anchor(descriptor.category)
        if self.noise_sigma == 0.0:
            return normalize(anchor)
        rng = np.random.default_rng(
            [self.seed, *_stable_u32s(descriptor.category, descriptor.instance_id)])
        noise = rng.normal(size=self.dimension).astype(np.float32)
        return normalize(anchor + np.float32(self.noise_sigma) * noise)


class SyntheticEncoder:
    """Deterministic encoder over a SyntheticWorld."""

    def __init__(self, world: SyntheticWorld):
        self.world = world
        self.dimension = world.dimension

    def encode(self, descriptor: ItemDescriptor) -> np.ndarray:
        return self.world.embed(descriptor)

    def encode_batch(self, descriptors: list[ItemDescriptor]) -> list[np.ndarray | EncodeError]:
        slots: list[np.ndarray | EncodeError] = []
        for descriptor in descriptors:
            try:
                slots.append(self.encode(descriptor))
            except EncodeError as exc:
                slots.append(exc)
        return slots


class HttpEncoder:
    """Adapter for a remote embedding service (POST /encode)."""

    def __init__(self, spec: EncoderSpec, *, attempts: int = 3, backoff_s: float = 0.2,
                 client: httpx.Client | None = None, sleep=time.sleep):
        if spec.kind != "http":
            raise ValueError("HttpEncoder requires an http EncoderSpec")
        self.spec = spec
        self.dimension = spec.dimension
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.sleep = sleep
        self._client = client or httpx.Client(timeout=30.0)

    def encode(self, ref: str) -> np.ndarray:
        result = self.encode_batch([ref])[0]
        if isinstance(result, EncodeError):
            raise result
        return result

    def encode_batch(self, refs: list[str]) -> list[np.ndarray | EncodeError]:
        slots: list[np.ndarray | EncodeError] = [
            EncodeError(f"no embedding returned for {ref!r}") for ref in refs]
        for start in range(0, len(refs), self.spec.batch_size):
            chunk = refs[start:start + self.spec.batch_size]
            payload = {"images": [{"id": str(start + i), "uri_or_b64": ref}
                                  for i, ref in enumerate(chunk)]}
            body = self._post(payload)
            returned = {e["id"]: e["vector"] for e in body.get("embeddings", [])}
            for i, _ in enumerate(chunk):
                vector = returned.get(str(start + i))
                if vector is None:
                    continue
                if len(vector) != self.dimension:
                    slots[start + i] = EncodeError(
                        f"remote returned dimension {len(vector)}, expected {self.dimension}")
                    continue
                try:
                    slots[start + i] = normalize(np.asarray(vector, dtype=np.float32))
                except ValueError as exc:
                    slots[start + i] = EncodeError(str(exc))
        return slots

    def _post(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            try:
                response = self._client.post(self.spec.endpoint, json=payload)
                response.raise_for_status()
                return response.json()
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
                if attempt + 1 < self.attempts:
                    self.sleep(self.backoff_s * (2 ** attempt))
        raise EncoderTransportError(
            f"encoder at {self.spec.endpoint} unreachable after {self.attempts} attempts: "
            f"{last_error}")


def build_encoder(spec: EncoderSpec, world: SyntheticWorld | None = None,
                  **http_kwargs):
    if spec.kind == "synthetic":
        if world is None:
            raise ValueError("synthetic encoder requires a SyntheticWorld")
        if world.dimension != spec.dimension:
            raise ValueError("world dimension does not match encoder spec")
        return SyntheticEncoder(world)
    return HttpEncoder(spec, **http_kwargs)
