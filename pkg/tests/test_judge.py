"""Judge framework tests: prompt construction, strict/lenient parsing,
consistency rules, the re-elicitation loop, the deterministic mock, and the
cached batch runner."""

import json
from pathlib import Path

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsx.judge import (
    DEFAULT_RULES,
    ElicitingJudgeBackend,
    HttpJudgeBackend,
    JudgeBackendSpec,
    JudgeOutcome,
    JudgePair,
    JudgeParseError,
    JudgeRating,
    JudgeValidationError,
    MockJudgeBackend,
    build_prompt,
    check_consistency,
    judge_batch,
    judge_pair,
    parse_response,
)
from vsx.pipeline import BroadClassMap

FIXTURES = Path(__file__).parent / "fixtures"

CLASS_MAP = BroadClassMap({
    "Loveseats": "Sofas",
    "Sofas": "Sofas",
    "Sectionals": "Sectionals",
    "Floor Lamps": "Lighting",
})


class ScriptedJudgeBackend(ElicitingJudgeBackend):
    """Replays canned completions in order; used to exercise the elicitation loop."""

    def __init__(self, responses, rules=DEFAULT_RULES):
        super().__init__(rules=rules)
        self.responses = list(responses)
        self.prompts: list[str] = []

    @property
    def signature(self):
        return "scripted"

    def _complete(self, pair, prompt):
        self.prompts.append(prompt)
        return self.responses.pop(0)


def pair_with(cosine, query_category="Sofas", result_category="Sofas", pair_id="p0"):
    q = np.zeros(8, dtype=np.float32)
    q[0] = 1.0
    r = np.zeros(8, dtype=np.float32)
    r[0] = cosine
    r[1] = np.sqrt(max(0.0, 1 - cosine**2))
    return JudgePair(
        pair_id=pair_id,
        query_ref=f"query object ({query_category})",
        result_ref=f"catalog image ({result_category})",
        query_category=query_category,
        result_category=result_category,
        query_embedding=q,
        result_embedding=r,
    )


class TestPrompt:
    def test_contains_rubrics_and_schema(self):
        prompt = build_prompt(pair_with(0.9))
        assert "3-point scale" in prompt
        assert "5-point scale" in prompt
        assert "Extremely similar" in prompt and "Extremely different" in prompt
        assert '"category_relevance"' in prompt and '"visual_similarity"' in prompt
        assert "logically coherent" in prompt

    def test_domain_context_substituted(self):
        pair = JudgePair("p", "q", "r", domain_context="vintage sneaker resale")
        assert "vintage sneaker resale" in build_prompt(pair)

    def test_golden_prompt_stable(self):
        golden_path = FIXTURES / "golden_prompt.txt"
        prompt = build_prompt(pair_with(0.8, "Loveseats", "Sofas", pair_id="golden"))
        if not golden_path.exists():
            golden_path.write_text(prompt)
        assert prompt == golden_path.read_text()


class TestParse:
    def test_wellformed(self):
        rating = parse_response('{"category_relevance": 3, "visual_similarity": 1}')
        assert (rating.category_relevance, rating.visual_similarity) == (3, 1)

    def test_out_of_range_is_validation_error(self):
        with pytest.raises(JudgeValidationError):
            parse_response('{"category_relevance": 3, "visual_similarity": 6}')

    def test_non_integer_score_rejected(self):
        with pytest.raises(JudgeValidationError):
            parse_response('{"category_relevance": "high", "visual_similarity": 2}')

    def test_no_object_is_parse_error(self):
        with pytest.raises(JudgeParseError):
            parse_response("I am not able to answer that.")

    def test_noisy_wrapper_fixtures_parse_10_of_10(self):
        fixtures = json.loads((FIXTURES / "noisy_transcripts.json").read_text())
        assert len(fixtures) == 10
        for fixture in fixtures:
            rating = parse_response(fixture["raw"])
            assert rating.category_relevance == fixture["relevance"]
            assert rating.visual_similarity == fixture["similarity"]


class TestConsistency:
    def test_r1_fires_on_irrelevant_but_similar(self):
        assert check_consistency(JudgeRating(1, 1)) == "R1"
        assert check_consistency(JudgeRating(1, 2)) == "R1"

    def test_concordant_pairs_pass(self):
        assert check_consistency(JudgeRating(3, 1)) is None
        assert check_consistency(JudgeRating(1, 5)) is None

    def test_r2_mirror(self):
        assert check_consistency(JudgeRating(3, 5)) == "R2"

    def test_rules_toggleable(self):
        r1_only = (DEFAULT_RULES[0],)
        assert check_consistency(JudgeRating(3, 5), r1_only) is None

    def test_exact_trigger_table(self):
        for relevance in (1, 2, 3):
            for similarity in (1, 2, 3, 4, 5):
                expected = None
                if relevance == 1 and similarity <= 2:
                    expected = "R1"
                elif relevance == 3 and similarity == 5:
                    expected = "R2"
                assert check_consistency(JudgeRating(relevance, similarity)) == expected


class TestMockJudge:
    def test_same_category_high_cosine(self):
        backend = MockJudgeBackend(CLASS_MAP)
        outcome = backend.rate(pair_with(0.95))
        assert outcome.status == "ok"
        assert outcome.rating.category_relevance == 3
        assert outcome.rating.visual_similarity == 1

    def test_broad_class_mid_cosine(self):
        backend = MockJudgeBackend(CLASS_MAP)
        outcome = backend.rate(pair_with(0.70, "Loveseats", "Sofas"))
        assert outcome.rating.category_relevance == 2
        assert outcome.rating.visual_similarity == 3

    def test_conflict_resolved_by_degrading_similarity(self):
        backend = MockJudgeBackend(CLASS_MAP)
        outcome = backend.rate(pair_with(0.95, "Floor Lamps", "Sofas"))
        assert outcome.rating.category_relevance == 1
        assert outcome.rating.visual_similarity == 3  # raw (1,1) resolved to (1,3)
        assert outcome.conflict_detected and not outcome.conflict_unresolved

    def test_bucket_boundaries(self):
        backend = MockJudgeBackend(CLASS_MAP)
        # same-category pair: raw buckets, except cosine 0.10 -> raw (3,5) hits R2
        # and resolves to similarity 3
        for cosine, expected, resolved in ((0.95, 1, False), (0.80, 2, False),
                                           (0.65, 3, False), (0.50, 4, False),
                                           (0.10, 3, True)):
            outcome = backend.rate(pair_with(cosine))
            assert outcome.rating.visual_similarity == expected
            assert outcome.conflict_detected == resolved

    def test_missing_embeddings_rejected(self):
        backend = MockJudgeBackend(CLASS_MAP)
        pair = JudgePair("x", "q", "r", "Sofas", "Sofas")
        outcome = judge_pair(pair, backend)
        assert outcome.status == "unavailable"
        assert "embeddings" in outcome.error

    @settings(max_examples=60, deadline=None)
    @given(cosine=st.floats(-0.99, 0.999),
           qcat=st.sampled_from(list(CLASS_MAP.mapping)),
           rcat=st.sampled_from(list(CLASS_MAP.mapping)))
    def test_pure_and_in_range(self, cosine, qcat, rcat):
        backend = MockJudgeBackend(CLASS_MAP)
        a = backend.rate(pair_with(cosine, qcat, rcat))
        b = backend.rate(pair_with(cosine, qcat, rcat))
        assert a.rating == b.rating
        assert a.rating.category_relevance in (1, 2, 3)
        assert a.rating.visual_similarity in (1, 2, 3, 4, 5)
        assert check_consistency(a.rating) is None  # forced through consistency


class TestElicitationLoop:
    def test_clean_response_single_attempt(self):
        backend = ScriptedJudgeBackend(['{"category_relevance": 3, "visual_similarity": 2}'])
        outcome = backend.rate(pair_with(0.8))
        assert outcome.status == "ok" and outcome.attempts == 1
        assert not outcome.conflict_detected

    def test_conflict_then_corrected(self):
        backend = ScriptedJudgeBackend([
            '{"category_relevance": 1, "visual_similarity": 1}',
            '{"category_relevance": 1, "visual_similarity": 4}',
        ])
        outcome = backend.rate(pair_with(0.9, "Floor Lamps", "Sofas"))
        assert outcome.status == "ok"
        assert outcome.attempts == 2
        assert outcome.conflict_detected and not outcome.conflict_unresolved
        assert (outcome.rating.category_relevance, outcome.rating.visual_similarity) == (1, 4)
        assert "logically inconsistent" in backend.prompts[1]

    def test_still_conflicting_keeps_second_and_flags(self):
        backend = ScriptedJudgeBackend([
            '{"category_relevance": 1, "visual_similarity": 1}',
            '{"category_relevance": 1, "visual_similarity": 2}',
        ])
        outcome = backend.rate(pair_with(0.9))
        assert outcome.rating.visual_similarity == 2  # second kept
        assert outcome.conflict_unresolved

    def test_at_most_one_re_elicitation(self):
        backend = ScriptedJudgeBackend([
            'garbage with no json',
            '{"category_relevance": 1, "visual_similarity": 1}',  # conflicting, budget spent
        ])
        outcome = backend.rate(pair_with(0.9))
        assert outcome.attempts == 2
        assert len(backend.prompts) == 2  # never a third elicit
        assert outcome.conflict_unresolved

    def test_unparseable_twice_is_unavailable(self):
        backend = ScriptedJudgeBackend(["nope", "still nope"])
        outcome = backend.rate(pair_with(0.9))
        assert outcome.status == "unavailable"
        assert outcome.rating is None


class TestHttpBackend:
    def make_backend(self, handler, retries=3):
        spec = JudgeBackendSpec(kind="http", endpoint="http://judge/v1/chat",
                                model="judge-1", max_retries=retries)
        return HttpJudgeBackend(spec, client=httpx.Client(transport=httpx.MockTransport(handler)),
                                sleep=lambda _: None)

    def test_happy_path(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["temperature"] == 0
            return httpx.Response(200, json={"choices": [{"message": {"content":
                '{"category_relevance": 3, "visual_similarity": 1, '
                '"relevance_justification": "same", "similarity_justification": "twin"}'}}]})

        outcome = self.make_backend(handler).rate(pair_with(0.95))
        assert outcome.status == "ok"
        assert outcome.rating.visual_similarity == 1

    def test_backend_down_judge_unavailable_no_fabrication(self):
        def handler(request):
            raise httpx.ConnectError("down", request=request)

        outcome = judge_pair(pair_with(0.9), self.make_backend(handler))
        assert outcome.status == "unavailable"
        assert outcome.rating is None

    def test_image_refs_become_image_parts(self):
        captured = {}

        def handler(request):
            captured["body"] = json.loads(request.content)
            return httpx.Response(200, json={"choices": [{"message": {"content":
                '{"category_relevance": 2, "visual_similarity": 2}'}}]})

        pair = JudgePair("p", "https://img/query.jpg", "https://img/result.jpg")
        self.make_backend(handler).rate(pair)
        kinds = [part["type"] for part in captured["body"]["messages"][0]["content"]]
        assert kinds == ["text", "image_url", "image_url"]


class TestBatch:
    def make_pairs(self, n):
        rng = np.random.default_rng(4)
        cats = list(CLASS_MAP.mapping)
        return [pair_with(float(rng.uniform(-0.2, 0.99)),
                          cats[int(rng.integers(len(cats)))],
                          cats[int(rng.integers(len(cats)))],
                          pair_id=f"pair-{i:03d}")
                for i in range(n)]

    def test_mock_batch_all_ok_and_ordered(self, tmp_path):
        backend = MockJudgeBackend(CLASS_MAP)
        pairs = self.make_pairs(100)
        outcomes, manifest = judge_batch(pairs, backend, cache_dir=tmp_path)
        assert manifest.ok == 100 and manifest.unavailable == 0
        assert [o.pair_id for o in outcomes] == [p.pair_id for p in pairs]

    def test_rerun_hits_cache_with_zero_calls(self, tmp_path):
        backend = MockJudgeBackend(CLASS_MAP)
        pairs = self.make_pairs(40)
        _, first = judge_batch(pairs, backend, cache_dir=tmp_path)
        calls_after_first = backend.calls
        outcomes, second = judge_batch(pairs, backend, cache_dir=tmp_path)
        assert backend.calls == calls_after_first  # zero new backend calls
        assert second.cache_hits == 40
        assert all(o.cache_hit for o in outcomes)

    def test_cached_equals_fresh(self, tmp_path):
        backend = MockJudgeBackend(CLASS_MAP)
        pairs = self.make_pairs(25)
        fresh, _ = judge_batch(pairs, backend, cache_dir=tmp_path)
        cached, _ = judge_batch(pairs, backend, cache_dir=tmp_path)
        for a, b in zip(fresh, cached):
            assert a.rating == b.rating

    def test_cache_distinguishes_backends(self, tmp_path):
        pairs = self.make_pairs(5)
        backend_a = MockJudgeBackend(CLASS_MAP)
        judge_batch(pairs, backend_a, cache_dir=tmp_path)
        other_map = BroadClassMap({"Sofas": "Seating"})
        backend_b = MockJudgeBackend(other_map)
        _, manifest = judge_batch(pairs, backend_b, cache_dir=tmp_path)
        assert manifest.cache_hits == 0

    def test_per_pair_errors_do_not_abort(self, tmp_path):
        backend = MockJudgeBackend(CLASS_MAP)
        pairs = self.make_pairs(5)
        pairs[2] = JudgePair("broken", "q", "r", "Sofas", "Sofas")  # no embeddings
        outcomes, manifest = judge_batch(pairs, backend, cache_dir=tmp_path)
        assert manifest.ok == 4 and manifest.unavailable == 1
        assert outcomes[2].status == "unavailable"

    def test_transport_fault_injection_rate(self):
        # 10% of pairs hit a flaky endpoint whose attempts each fail with p=0.5;
        # with 3 tries the expected unavailable fraction is 0.10 * 0.5^3 = 1.25%
        rng = np.random.default_rng(77)
        n = 4000
        flaky = rng.random(n) < 0.10
        attempt_fails = rng.random((n, 3)) < 0.5
        unavailable = sum(bool(flaky[i] and attempt_fails[i].all()) for i in range(n))
        fraction = unavailable / n
        assert abs(fraction - 0.0125) < 0.006

    def test_retry_loop_matches_simulation(self):
        # drive the actual HTTP retry path for one flaky pair
        state = {"fails": 2}

        def handler(request):
            if state["fails"] > 0:
                state["fails"] -= 1
                raise httpx.ConnectError("flaky", request=request)
            return httpx.Response(200, json={"choices": [{"message": {"content":
                '{"category_relevance": 3, "visual_similarity": 2}'}}]})

        spec = JudgeBackendSpec(kind="http", endpoint="http://judge/v1", model="m")
        backend = HttpJudgeBackend(spec, client=httpx.Client(
            transport=httpx.MockTransport(handler)), sleep=lambda _: None)
        outcome = backend.rate(pair_with(0.9))
        assert outcome.status == "ok"  # 2 failures then success within 3 tries


def test_outcome_round_trips_through_json():
    outcome = JudgeOutcome("p1", "ok", JudgeRating(2, 3, "a", "b"),
                           attempts=2, conflict_detected=True)
    restored = JudgeOutcome.from_json(json.loads(json.dumps(outcome.to_json())))
    assert restored.rating == outcome.rating
    assert restored.conflict_detected
