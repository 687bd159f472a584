"""LLM-as-a-judge scoring of query-result pairs: a category-relevance rating
(3-point, 3 is best) and a visual-similarity rating (5-point Likert, 1 is
"extremely similar"), elicited in one multi-task prompt, checked for logical
consistency, and re-elicited at most once on conflict. A deterministic mock
backend rates pairs from embeddings and categories so the full evaluation
suite runs offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

from .pipeline import BroadClassMap

ENV_JUDGE_URL = "VSX_JUDGE_URL"
ENV_JUDGE_KEY = "VSX_JUDGE_KEY"


class JudgeError(Exception):
    pass


class JudgeParseError(JudgeError):
    """No JSON object could be recovered from the response."""


class JudgeValidationError(JudgeError):
    """A response parsed but violated the rating schema."""


class JudgeTransportError(JudgeError):
    """Backend unreachable after exhausting retries."""


@dataclass(frozen=True)
class JudgePair:
    """One query-result pair to be rated."""

    pair_id: str
    query_ref: str
    result_ref: str
    query_category: str | None = None
    result_category: str | None = None
    query_embedding: np.ndarray | None = None
    result_embedding: np.ndarray | None = None
    domain_context: str = "home goods e-commerce"

    def content_key(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "query_ref": self.query_ref,
            "result_ref": self.result_ref,
            "query_category": self.query_category,
            "result_category": self.result_category,
            "query_embedding": None if self.query_embedding is None
            else np.asarray(self.query_embedding, dtype=np.float32).tolist(),
            "result_embedding": None if self.result_embedding is None
            else np.asarray(self.result_embedding, dtype=np.float32).tolist(),
            "domain_context": self.domain_context,
        }


@dataclass(frozen=True)
class JudgeRating:
    category_relevance: int  # 1 irrelevant, 2 related, 3 same/compatible
    visual_similarity: int  # 1 extremely similar .. 5 extremely different
    relevance_justification: str = ""
    similarity_justification: str = ""

    def __post_init__(self):
        if self.category_relevance not in (1, 2, 3):
            raise JudgeValidationError(
                f"category_relevance {self.category_relevance} outside 1..3")
        if self.visual_similarity not in (1, 2, 3, 4, 5):
            raise JudgeValidationError(
                f"visual_similarity {self.visual_similarity} outside 1..5")


@dataclass(frozen=True)
class ConflictRule:
    """A logically incoherent (relevance, similarity) pattern that forces
    one re-elicitation."""

    rule_id: str
    description: str

    def applies(self, rating: JudgeRating) -> bool:
        if self.rule_id == "R1":
            return rating.category_relevance == 1 and rating.visual_similarity <= 2
        if self.rule_id == "R2":
            return rating.category_relevance == 3 and rating.visual_similarity == 5
        raise ValueError(f"unknown conflict rule {self.rule_id!r}")


RULE_IRRELEVANT_BUT_SIMILAR = ConflictRule(
    "R1", "rated extremely/very similar yet the category is irrelevant")
RULE_SAME_BUT_DIFFERENT = ConflictRule(
    "R2", "rated extremely different yet the category is the same/compatible")
DEFAULT_RULES: tuple[ConflictRule, ...] = (RULE_IRRELEVANT_BUT_SIMILAR, RULE_SAME_BUT_DIFFERENT)


def check_consistency(rating: JudgeRating,
                      rules: tuple[ConflictRule, ...] = DEFAULT_RULES) -> str | None:
    """First matching rule id, or None when the rating is coherent."""
    for rule in rules:
        if rule.applies(rating):
            return rule.rule_id
    return None


PROMPT_TEMPLATE = """\
You are an impartial judge on a {domain_context} platform. Assess the retrieved
result against the query object below.

Query object: {query_ref}{query_category_line}
Retrieved result: {result_ref}{result_category_line}

Task 1 - Category relevance, on a 3-point scale:
  3 = same or functionally compatible product category as the query object
  2 = related category serving a similar purpose
  1 = irrelevant category or a clear functional mismatch

Task 2 - Visual similarity of design, color, material and shape, on a 5-point scale:
  1 = Extremely similar
  2 = Very similar
  3 = Somewhat similar
  4 = Different
  5 = Extremely different

Before answering, verify the two ratings are logically coherent (for example, a
result cannot be extremely similar overall yet belong to an irrelevant
category). Resolve any such conflict by revisiting both ratings. Keep that
reasoning to yourself; never include it in the output.

Respond with exactly one JSON object, no other text:
{{"category_relevance": <1-3>, "visual_similarity": <1-5>, "relevance_justification": "<one sentence>", "similarity_justification": "<one sentence>"}}
"""

RE_ELICIT_ADDENDUM = """\

Your previous answer rated category_relevance={relevance} and
visual_similarity={similarity}, which is logically inconsistent ({description}).
Revisit both ratings and respond again with one JSON object in the same schema.
"""

PROMPT_HASH = hashlib.blake2b(PROMPT_TEMPLATE.encode(), digest_size=8).hexdigest()


def build_prompt(pair: JudgePair) -> str:
    """Deterministic multi-task prompt: role framing, both rubrics, the
    consistency instruction, and the response schema."""
    return PROMPT_TEMPLATE.format(
        domain_context=pair.domain_context,
        query_ref=pair.query_ref,
        query_category_line=(f"\nQuery category hint: {pair.query_category}"
                             if pair.query_category else ""),
        result_ref=pair.result_ref,
        result_category_line=(f" (listed category: {pair.result_category})"
                              if pair.result_category else ""),
    )


def _extract_first_object(text: str) -> dict | None:
    """First balanced {...} substring that parses as a JSON object."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        parsed = json.loads(text[start:pos + 1])
                        if isinstance(parsed, dict):
                            return parsed
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    return None


def parse_response(raw: str) -> JudgeRating:
    """Strict-then-lenient parse: exact JSON first, then the first JSON object
    embedded in surrounding prose; scores are range-checked either way."""
    data: dict | None = None
    try:
        loaded = json.loads(raw)
        if isinstance(loaded, dict):
            data = loaded
    except json.JSONDecodeError:
        data = None
    if data is None:
        data = _extract_first_object(raw)
    if data is None:
        raise JudgeParseError("no JSON object found in judge response")
    for key in ("category_relevance", "visual_similarity"):
        if key not in data:
            raise JudgeValidationError(f"missing field {key!r}")
        if not isinstance(data[key], int) or isinstance(data[key], bool):
            raise JudgeValidationError(f"field {key!r} must be an integer")
    return JudgeRating(
        category_relevance=data["category_relevance"],
        visual_similarity=data["visual_similarity"],
        relevance_justification=str(data.get("relevance_justification", "")),
        similarity_justification=str(data.get("similarity_justification", "")),
    )


@dataclass
class JudgeOutcome:
    pair_id: str
    status: str  # "ok" | "unavailable"
    rating: JudgeRating | None
    attempts: int = 1
    conflict_detected: bool = False
    conflict_unresolved: bool = False
    cache_hit: bool = False
    error: str | None = None

    def to_json(self) -> dict:
        record = {
            "pair_id": self.pair_id,
            "status": self.status,
            "rating": None,
            "attempts": self.attempts,
            "conflict_detected": self.conflict_detected,
            "conflict_unresolved": self.conflict_unresolved,
            "error": self.error,
        }
        if self.rating is not None:
            record["rating"] = {
                "category_relevance": self.rating.category_relevance,
                "visual_similarity": self.rating.visual_similarity,
                "relevance_justification": self.rating.relevance_justification,
                "similarity_justification": self.rating.similarity_justification,
            }
        return record

    @classmethod
    def from_json(cls, record: dict) -> "JudgeOutcome":
        rating = None
        if record.get("rating") is not None:
            rating = JudgeRating(**record["rating"])
        return cls(
            pair_id=record["pair_id"],
            status=record["status"],
            rating=rating,
            attempts=record.get("attempts", 1),
            conflict_detected=record.get("conflict_detected", False),
            conflict_unresolved=record.get("conflict_unresolved", False),
            error=record.get("error"),
        )


@dataclass(frozen=True)
class JudgeBackendSpec:
    kind: str  # "mock" | "http"
    endpoint: str | None = None
    model: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    max_concurrent: int = 8

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"unknown judge backend kind {self.kind!r}")
        if self.temperature != 0.0:
            raise ValueError("judge backends run at temperature 0")


class MockJudgeBackend:
    """Pure function of (embeddings, categories, broad-class map): relevance
    from taxonomy agreement, similarity from cosine buckets, conflicts resolved
    deterministically by degrading similarity to 3."""

    SIMILARITY_BUCKETS = ((0.90, 1), (0.75, 2), (0.60, 3), (0.40, 4))

    def __init__(self, class_map: BroadClassMap,
                 rules: tuple[ConflictRule, ...] = DEFAULT_RULES):
        self.class_map = class_map
        self.rules = rules
        self.calls = 0
        self.max_concurrent = 8

    @property
    def signature(self) -> str:
        rule_ids = ",".join(rule.rule_id for rule in self.rules)
        return f"mock:{self.class_map.digest()}:{rule_ids}"

    def rate(self, pair: JudgePair) -> JudgeOutcome:
        self.calls += 1
        if pair.query_embedding is None or pair.result_embedding is None:
            raise JudgeValidationError(f"pair {pair.pair_id}: mock judge requires embeddings")
        if pair.query_category is None or pair.result_category is None:
            raise JudgeValidationError(f"pair {pair.pair_id}: mock judge requires categories")
        q = np.asarray(pair.query_embedding, dtype=np.float64)
        r = np.asarray(pair.result_embedding, dtype=np.float64)
        cosine = float(q @ r / (np.linalg.norm(q) * np.linalg.norm(r)))

        if pair.query_category == pair.result_category:
            relevance = 3
        elif (self.class_map.broad_class(pair.query_category)
              == self.class_map.broad_class(pair.result_category)):
            relevance = 2
        else:
            relevance = 1
        similarity = 5
        for cutoff, bucket in self.SIMILARITY_BUCKETS:
            if cosine >= cutoff:
                similarity = bucket
                break

        conflict = check_consistency(
            JudgeRating(relevance, similarity, "-", "-"), self.rules)
        if conflict is not None:
            similarity = 3
        rating = JudgeRating(
            category_relevance=relevance,
            visual_similarity=similarity,
            relevance_justification=self._relevance_note(pair, relevance),
            similarity_justification=f"embedding cosine {cosine:.3f} maps to bucket {similarity}",
        )
        return JudgeOutcome(pair_id=pair.pair_id, status="ok", rating=rating,
                            attempts=1, conflict_detected=conflict is not None)

    def _relevance_note(self, pair: JudgePair, relevance: int) -> str:
        if relevance == 3:
            return f"same category '{pair.result_category}'"
        if relevance == 2:
            broad = self.class_map.broad_class(pair.result_category)
            return f"related category within broad class '{broad}'"
        return (f"category '{pair.result_category}' unrelated to "
                f"'{pair.query_category}'")


class ElicitingJudgeBackend:
    """Shared elicit/parse/consistency loop; subclasses provide _complete()."""

    def __init__(self, rules: tuple[ConflictRule, ...] = DEFAULT_RULES):
        self.rules = rules
        self.calls = 0
        self.max_concurrent = 8

    @property
    def signature(self) -> str:
        raise NotImplementedError

    def _complete(self, pair: JudgePair, prompt: str) -> str:
        raise NotImplementedError

    def _attempt(self, pair: JudgePair, prompt: str) -> JudgeRating:
        self.calls += 1
        return parse_response(self._complete(pair, prompt))

    def rate(self, pair: JudgePair) -> JudgeOutcome:
        prompt = build_prompt(pair)
        re_elicited = False
        conflict_detected = False
        try:
            rating = self._attempt(pair, prompt)
        except (JudgeParseError, JudgeValidationError) as exc:
            re_elicited = True
            retry_prompt = prompt + (
                "\nYour previous answer could not be used "
                f"({exc}). Respond again with one JSON object in the required schema.\n")
            try:
                rating = self._attempt(pair, retry_prompt)
            except (JudgeParseError, JudgeValidationError) as exc2:
                return JudgeOutcome(pair.pair_id, "unavailable", None, attempts=2,
                                    error=f"unusable response after re-elicitation: {exc2}")

        rule_id = check_consistency(rating, self.rules)
        if rule_id is None:
            return JudgeOutcome(pair.pair_id, "ok", rating,
                                attempts=2 if re_elicited else 1)
        conflict_detected = True
        if re_elicited:
            # the single re-elicitation budget is already spent
            return JudgeOutcome(pair.pair_id, "ok", rating, attempts=2,
                                conflict_detected=True, conflict_unresolved=True)
        rule = next(r for r in self.rules if r.rule_id == rule_id)
        retry_prompt = prompt + RE_ELICIT_ADDENDUM.format(
            relevance=rating.category_relevance,
            similarity=rating.visual_similarity,
            description=rule.description,
        )
        try:
            second = self._attempt(pair, retry_prompt)
        except (JudgeParseError, JudgeValidationError):
            return JudgeOutcome(pair.pair_id, "ok", rating, attempts=2,
                                conflict_detected=True, conflict_unresolved=True)
        unresolved = check_consistency(second, self.rules) is not None
        return JudgeOutcome(pair.pair_id, "ok", second, attempts=2,
                            conflict_detected=True, conflict_unresolved=unresolved)


class HttpJudgeBackend(ElicitingJudgeBackend):
    """Chat-completion-style HTTP judge; endpoint and key come from the spec or
    the VSX_JUDGE_URL / VSX_JUDGE_KEY environment variables."""

    def __init__(self, spec: JudgeBackendSpec, *, client: httpx.Client | None = None,
                 sleep=time.sleep, backoff_s: float = 0.5,
                 rules: tuple[ConflictRule, ...] = DEFAULT_RULES):
        super().__init__(rules=rules)
        endpoint = spec.endpoint or os.environ.get(ENV_JUDGE_URL)
        if not endpoint:
            raise ValueError(f"http judge needs an endpoint (spec or ${ENV_JUDGE_URL})")
        self.spec = spec
        self.endpoint = endpoint
        self.api_key = os.environ.get(ENV_JUDGE_KEY, "")
        self.max_concurrent = spec.max_concurrent
        self.sleep = sleep
        self.backoff_s = backoff_s
        self._client = client or httpx.Client(timeout=60.0)

    @property
    def signature(self) -> str:
        return f"http:{self.spec.model}@{self.endpoint}"

    def _message_content(self, pair: JudgePair, prompt: str) -> list[dict]:
        parts: list[dict] = [{"type": "text", "text": prompt}]
        for ref in (pair.query_ref, pair.result_ref):
            if ref.startswith(("http://", "https://", "data:")):
                parts.append({"type": "image_url", "image_url": {"url": ref}})
        return parts

    def _complete(self, pair: JudgePair, prompt: str) -> str:
        body = {
            "model": self.spec.model,
            "temperature": 0,
            "messages": [
                {"role": "user", "content": self._message_content(pair, prompt)},
            ],
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last_error: Exception | None = None
        for attempt in range(self.spec.max_retries):
            try:
                response = self._client.post(self.endpoint, json=body, headers=headers)
                response.raise_for_status()
                payload = response.json()
                return payload["choices"][0]["message"]["content"]
            except (httpx.TransportError, httpx.HTTPStatusError, KeyError, IndexError) as exc:
                last_error = exc
                if attempt + 1 < self.spec.max_retries:
                    self.sleep(self.backoff_s * (2 ** attempt))
        raise JudgeTransportError(
            f"judge at {self.endpoint} unusable after {self.spec.max_retries} attempts: "
            f"{last_error}")


def judge_pair(pair: JudgePair, backend) -> JudgeOutcome:
    """Rate one pair; backend failures become an 'unavailable' outcome rather
    than an exception, so batch runs degrade per pair."""
    try:
        return backend.rate(pair)
    except JudgeTransportError as exc:
        return JudgeOutcome(pair.pair_id, "unavailable", None, error=str(exc))
    except JudgeError as exc:
        return JudgeOutcome(pair.pair_id, "unavailable", None, error=str(exc))


@dataclass
class BatchManifest:
    backend: str
    prompt_hash: str
    total: int
    ok: int = 0
    re_elicited: int = 0
    unresolved: int = 0
    unavailable: int = 0
    cache_hits: int = 0

    def to_json(self) -> dict:
        return {
            "backend": self.backend,
            "prompt_hash": self.prompt_hash,
            "total": self.total,
            "ok": self.ok,
            "re_elicited": self.re_elicited,
            "unresolved": self.unresolved,
            "unavailable": self.unavailable,
            "cache_hits": self.cache_hits,
        }


def pair_cache_key(pair: JudgePair, backend_signature: str) -> str:
    blob = json.dumps({"pair": pair.content_key(), "backend": backend_signature,
                       "prompt": PROMPT_HASH}, sort_keys=True).encode()
    return hashlib.blake2b(blob, digest_size=16).hexdigest()


def judge_batch(pairs: list[JudgePair], backend, cache_dir: str | Path | None = None,
                max_workers: int | None = None) -> tuple[list[JudgeOutcome], BatchManifest]:
    """Order-preserving bounded-concurrency fan-out with a content-hash cache;
    cached outcomes cost zero backend calls."""
    if not pairs:
        raise ValueError("judge_batch needs at least one pair")
    cache_path = Path(cache_dir) if cache_dir is not None else None
    if cache_path is not None:
        cache_path.mkdir(parents=True, exist_ok=True)
    outcomes: list[JudgeOutcome | None] = [None] * len(pairs)
    pending: list[tuple[int, JudgePair, str | None]] = []
    cache_hits = 0
    for i, pair in enumerate(pairs):
        key = pair_cache_key(pair, backend.signature) if cache_path is not None else None
        if key is not None:
            record = cache_path / f"{key}.json"
            if record.exists():
                outcome = JudgeOutcome.from_json(json.loads(record.read_text()))
                outcome.cache_hit = True
                outcomes[i] = outcome
                cache_hits += 1
                continue
        pending.append((i, pair, key))

    workers = max(1, max_workers or getattr(backend, "max_concurrent", 8))
    if pending:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            fresh = list(executor.map(lambda entry: judge_pair(entry[1], backend), pending))
        for (i, _, key), outcome in zip(pending, fresh):
            outcomes[i] = outcome
            if cache_path is not None and key is not None and outcome.status == "ok":
                (cache_path / f"{key}.json").write_text(
                    json.dumps(outcome.to_json(), sort_keys=True))

    done: list[JudgeOutcome] = [o for o in outcomes if o is not None]
    manifest = BatchManifest(backend=backend.signature, prompt_hash=PROMPT_HASH,
                             total=len(pairs), cache_hits=cache_hits)
    for outcome in done:
        if outcome.status == "ok":
            manifest.ok += 1
        else:
            manifest.unavailable += 1
        if outcome.attempts > 1:
            manifest.re_elicited += 1
        if outcome.conflict_unresolved:
            manifest.unresolved += 1
    return done, manifest
