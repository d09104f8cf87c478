import json
import math
import re

import pytest
from hypothesis import given, settings, strategies as st

from nlquery.embedding_index import (
    BusinessRule,
    ContextChunk,
    DimensionMismatch,
    NotFound,
    VectorIndex,
    chunk_id,
    cosine,
    embed_text,
    rule_chunk,
)


# --- independent reference implementation (kept deliberately separate from
# --- the package code path; plain loops, no shared helpers)

def reference_embed(text, dim=256):
    slots = [0.0] * dim
    for token in re.findall(r"[a-z0-9]+", text.lower()):
        h = 0xCBF29CE484222325
        for byte in token.encode("utf-8"):
            h = ((h ^ byte) * 0x100000001B3) % (1 << 64)
        slots[h % dim] += 1.0 if h < (1 << 63) else -1.0
    norm = math.sqrt(sum(v * v for v in slots))
    return slots if norm == 0 else [v / norm for v in slots]


def reference_cosine(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def test_embed_empty_text_is_zero_vector():
    vec = embed_text("")
    assert vec == [0.0] * 256
    assert embed_text("  ...  ") == [0.0] * 256


def test_embed_is_bag_of_tokens():
    assert embed_text("total sales") == embed_text("sales total")
    assert embed_text("Total SALES") == embed_text("total sales")


def test_embed_matches_reference():
    for text in ("", "total revenue", "customer orders by status", "x1 y2 z3", "répétition café"):
        assert embed_text(text) == reference_embed(text)


def test_embed_unit_norm():
    vec = embed_text("quantity times price")
    assert abs(math.sqrt(sum(v * v for v in vec)) - 1.0) < 1e-9


def test_cosine_ordering_related_terms():
    # Expected ordering computed with the reference implementation.
    ref_close = reference_cosine(reference_embed("total revenue"), reference_embed("revenue"))
    ref_far = reference_cosine(reference_embed("total revenue"), reference_embed("customer address"))
    assert ref_close > ref_far

    close = cosine(embed_text("total revenue"), embed_text("revenue"))
    far = cosine(embed_text("total revenue"), embed_text("customer address"))
    assert close > far
    assert abs(close - ref_close) < 1e-12
    assert abs(far - ref_far) < 1e-12


def test_cosine_zero_vector_scores_zero():
    assert cosine(embed_text(""), embed_text("anything")) == 0.0


def _index_with(*texts, dim=256):
    index = VectorIndex(dim=dim)
    for i, text in enumerate(texts):
        index.upsert_text("table_doc", f"t{i}", text)
    return index


def test_upsert_then_exact_search_is_rank_one():
    index = _index_with("customer table with names and cities", "orders table with status")
    hits = index.search("customer table with names and cities", top_k=1)
    assert hits[0].chunk.source_ref == "t0"
    assert hits[0].score == pytest.approx(1.0, abs=1e-6)


def test_upsert_same_id_replaces():
    index = VectorIndex()
    chunk = ContextChunk(id="fixed", kind="rule", text="old text", source_ref="r1")
    index.upsert(chunk)
    index.upsert(ContextChunk(id="fixed", kind="rule", text="new text", source_ref="r1"))
    assert len(index) == 1
    assert index.get("fixed").text == "new text"
    assert index.get("fixed").embedding == embed_text("new text")


def test_upsert_wrong_dimension_rejected():
    index = VectorIndex(dim=16)
    chunk = ContextChunk(id="x", kind="rule", text="t", source_ref="r", embedding=[1.0] * 8)
    with pytest.raises(DimensionMismatch):
        index.upsert(chunk)


def test_search_single_chunk_positive_score():
    index = _index_with("customer table holds customer names")
    hits = index.search("customer", top_k=3)
    assert len(hits) == 1
    assert hits[0].score > 0


def test_search_kind_filter():
    index = _index_with("customer table doc")
    assert index.search("customer", top_k=5, kind_filter="rule") == []
    assert len(index.search("customer", top_k=5, kind_filter="table_doc")) == 1


def test_search_top_k_and_ordering():
    index = _index_with("alpha one", "alpha two", "alpha three", "beta four", "gamma five")
    hits = index.search("alpha", top_k=2)
    assert len(hits) == 2
    scores = [h.score for h in hits]
    assert scores == sorted(scores, reverse=True)


def test_search_empty_index_returns_empty():
    assert VectorIndex().search("anything", top_k=3) == []


def test_search_rejects_bad_top_k():
    with pytest.raises(ValueError):
        VectorIndex().search("q", top_k=0)


def test_deactivate_hides_chunk():
    index = _index_with("customer table")
    cid = index.search("customer", top_k=1)[0].chunk.id
    index.deactivate(cid)
    assert index.search("customer", top_k=1) == []
    assert index.get(cid) is not None  # retained for audit


def test_deactivate_unknown_id():
    with pytest.raises(NotFound):
        VectorIndex().deactivate("missing")


def test_reupsert_after_deactivate_reactivates():
    index = VectorIndex()
    chunk = index.upsert_text("rule", "r1", "rule text here")
    index.deactivate(chunk.id)
    index.upsert_text("rule", "r1", "rule text here")
    assert len(index.search("rule text here", top_k=1)) == 1


def test_tie_break_by_id_ascending():
    index = VectorIndex()
    # identical text under different source refs -> identical scores
    a = index.upsert_text("table_doc", "a", "same text")
    b = index.upsert_text("table_doc", "b", "same text")
    hits = index.search("same text", top_k=2)
    assert [h.chunk.id for h in hits] == sorted([a.id, b.id])


@settings(max_examples=60, deadline=None)
@given(
    texts=st.lists(
        # texts whose signed token counts cancel embed to the zero vector and
        # score 0 by definition; the exact-match invariant excludes them
        st.text(alphabet="abcdefghij ", min_size=1, max_size=30).filter(
            lambda s: any(embed_text(s, 64))
        ),
        min_size=1,
        max_size=8,
        unique=True,
    )
)
def test_exact_match_property(texts):
    index = VectorIndex(dim=64)
    for i, text in enumerate(texts):
        index.upsert_text("table_doc", f"s{i}", text)
    for text in texts:
        hits = index.search(text, top_k=1)
        assert hits and hits[0].score == pytest.approx(1.0, abs=1e-6)


def test_sign_cancellation_embeds_to_zero_and_never_matches():
    # "jif" and "ggi" hash to the same slot of a 64-dim index with opposite
    # signs, so their bag cancels to the zero vector; by the zero-vector rule
    # the stored chunk scores 0 against everything, including itself.
    assert not any(embed_text("jif ggi", 64))
    index = VectorIndex(dim=64)
    index.upsert_text("table_doc", "zero", "jif ggi")
    hits = index.search("jif ggi", top_k=1)
    assert hits[0].score == 0.0


@settings(max_examples=60, deadline=None)
@given(
    a=st.text(alphabet="abc def", max_size=20),
    b=st.text(alphabet="abc def", max_size=20),
)
def test_cosine_symmetry(a, b):
    va, vb = embed_text(a, 64), embed_text(b, 64)
    assert abs(cosine(va, vb) - cosine(vb, va)) < 1e-9


def test_insertion_order_does_not_change_results():
    texts = [("table_doc", f"t{i}", f"topic {word} data") for i, word in
             enumerate(["alpha", "beta", "gamma", "delta", "alpha beta"])]
    forward = VectorIndex()
    for kind, ref, text in texts:
        forward.upsert_text(kind, ref, text)
    backward = VectorIndex()
    for kind, ref, text in reversed(texts):
        backward.upsert_text(kind, ref, text)
    for query in ("alpha", "beta gamma", "delta topic", ""):
        fhits = [(h.chunk.id, h.score) for h in forward.search(query, top_k=5)]
        bhits = [(h.chunk.id, h.score) for h in backward.search(query, top_k=5)]
        assert fhits == bhits


def test_persistence_roundtrip(tmp_path):
    index = _index_with("customer table", "orders table", "product table")
    index.upsert(rule_chunk(BusinessRule(rule_id="r1", text="revenue is quantity times price")))
    index.deactivate(chunk_id("table_doc", "t1", "orders table"))
    path = str(tmp_path / "index.jsonl")
    index.save(path)
    loaded = VectorIndex.load(path)
    assert loaded.dim == index.dim
    assert len(loaded) == len(index)
    for query in ("customer", "orders table", "revenue quantity"):
        original = [(h.chunk.id, h.score) for h in index.search(query, top_k=5)]
        restored = [(h.chunk.id, h.score) for h in loaded.search(query, top_k=5)]
        assert original == restored


def test_chunk_id_is_content_addressed():
    assert chunk_id("rule", "r", "text") == chunk_id("rule", "r", "text")
    assert chunk_id("rule", "r", "text") != chunk_id("rule", "r", "other")
    assert chunk_id("rule", "r", "text") != chunk_id("table_doc", "r", "text")


def test_business_rule_requires_text():
    with pytest.raises(ValueError):
        BusinessRule(rule_id="r", text="")


# --- remote embedder adapter -------------------------------------------------


def _remote_embedder(tmp_path, calls, dim=4, vector=None):
    import httpx

    from nlquery.embedding_index import RemoteEmbedder

    def handler(request):
        calls.append(json.loads(request.content))
        return httpx.Response(200, json={"data": [{"embedding": vector or [1.0, 2.0, 2.0, 0.0]}]})

    return RemoteEmbedder(
        url="http://embed.example/v1",
        model="embedder-1",
        dim=dim,
        cache_path=str(tmp_path / "cache.json"),
        client=httpx.Client(transport=httpx.MockTransport(handler)),
    )


def test_remote_embedder_normalizes_and_caches(tmp_path):
    calls = []
    embedder = _remote_embedder(tmp_path, calls)
    vec = embedder("hello world")
    assert abs(math.sqrt(sum(v * v for v in vec)) - 1.0) < 1e-9
    assert calls[0]["model"] == "embedder-1"
    assert calls[0]["input"] == "hello world"

    again = embedder("hello world")
    assert again == vec
    assert len(calls) == 1  # served from cache, no second network call


def test_remote_embedder_cache_survives_restart(tmp_path):
    calls = []
    _remote_embedder(tmp_path, calls)("some text")
    assert len(calls) == 1

    calls2 = []
    fresh = _remote_embedder(tmp_path, calls2)
    fresh("some text")
    assert calls2 == []  # persisted cache hit


def test_remote_embedder_dimension_check(tmp_path):
    calls = []
    embedder = _remote_embedder(tmp_path, calls, dim=8)
    with pytest.raises(DimensionMismatch):
        embedder("text")
