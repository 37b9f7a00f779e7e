import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expal.embedding import (
    EmbedderConfig,
    EmbeddingError,
    HashedTfEmbedder,
    centroid,
    fnv1a_64,
    similarity,
    tokenize,
)

texts = st.text(alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd", "Zs", "Po")), max_size=60)


def test_fnv1a_known_vectors():
    # Published FNV-1a 64 reference values.
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_tokenize_lowercases_and_splits_on_non_alnum():
    assert tokenize("A man, playing; an_electric GUITAR!") == [
        "a", "man", "playing", "an", "electric", "guitar",
    ]


class TestEmbed:
    def test_deterministic(self):
        embedder = HashedTfEmbedder()
        a = embedder.embed("a b")
        b = embedder.embed("a b")
        assert np.array_equal(a.values, b.values)
        fresh = HashedTfEmbedder().embed("a b")
        assert np.array_equal(a.values, fresh.values)

    def test_empty_text_flagged(self):
        vector = HashedTfEmbedder().embed("")
        assert vector.empty
        assert not vector.values.any()

    def test_term_frequencies_normalized(self):
        embedder = HashedTfEmbedder(dimension=64)
        vector = embedder.embed("a a b")
        bucket_a = fnv1a_64(b"a") % 64
        bucket_b = fnv1a_64(b"b") % 64
        assert bucket_a != bucket_b  # no collision for this pair/dimension
        assert vector.values[bucket_a] == pytest.approx(2 / math.sqrt(5))
        assert vector.values[bucket_b] == pytest.approx(1 / math.sqrt(5))

    def test_unit_norm(self):
        vector = HashedTfEmbedder().embed("one two three two")
        assert np.linalg.norm(vector.values) == pytest.approx(1.0, abs=1e-12)

    @given(texts)
    @settings(max_examples=60, deadline=None)
    def test_pure_function(self, text):
        embedder = HashedTfEmbedder(dimension=32)
        first = embedder.embed(text)
        second = HashedTfEmbedder(dimension=32).embed(text)
        assert np.array_equal(first.values, second.values)
        assert first.empty == second.empty


class TestSimilarity:
    def test_self_similarity_is_one(self):
        v = HashedTfEmbedder().embed("a man on a stage")
        assert similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_tokens_orthogonal(self):
        embedder = HashedTfEmbedder()
        a = embedder.embed("guitar stage")
        b = embedder.embed("river meadow")
        assert similarity(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_overlap(self):
        # TF vectors (2,1) and (1,1): cosine = 3/sqrt(10).
        embedder = HashedTfEmbedder()
        value = similarity(embedder.embed("a a b"), embedder.embed("a b"))
        assert value == pytest.approx(3 / math.sqrt(10), abs=1e-12)
        assert value == pytest.approx(0.9486832980505138, abs=1e-12)

    def test_empty_is_neutral_zero(self):
        embedder = HashedTfEmbedder()
        assert similarity(embedder.embed(""), embedder.embed("a")) == 0.0
        assert similarity(embedder.embed(""), embedder.embed("")) == 0.0

    def test_dimension_mismatch(self):
        a = HashedTfEmbedder(dimension=16).embed("a")
        b = HashedTfEmbedder(dimension=32).embed("a")
        with pytest.raises(EmbeddingError, match="mismatch"):
            similarity(a, b)

    @given(st.lists(texts, min_size=2, max_size=6))
    @settings(max_examples=40, deadline=None)
    def test_bounded_by_one(self, batch):
        embedder = HashedTfEmbedder(dimension=32)
        vectors = embedder.embed_many(batch)
        for a in vectors:
            for b in vectors:
                assert abs(similarity(a, b)) <= 1 + 1e-12


class TestCentroid:
    def test_singleton_is_identity(self):
        v = HashedTfEmbedder().embed("a b c")
        assert np.array_equal(centroid([v]), v.values)

    def test_opposite_vectors_cancel(self):
        v = HashedTfEmbedder(dimension=8).embed("x y")
        from expal.embedding import EmbeddingVector

        negated = EmbeddingVector(values=-v.values, empty=False)
        assert np.allclose(centroid([v, negated]), 0.0, atol=1e-15)

    def test_empty_list_rejected(self):
        with pytest.raises(EmbeddingError):
            centroid([])

    def test_mean_similarity_identity_on_random_unit_vectors(self):
        # Brute-force oracle: mean of pairwise dots vs one dot with the mean.
        rng = np.random.Generator(np.random.PCG64(42))
        from expal.embedding import EmbeddingVector

        for _ in range(50):
            d = int(rng.integers(2, 40))
            k = int(rng.integers(1, 8))
            def unit():
                raw = rng.normal(size=d)
                return EmbeddingVector(values=raw / np.linalg.norm(raw), empty=False)
            u = unit()
            vs = [unit() for _ in range(k)]
            naive = sum(similarity(u, v) for v in vs) / k
            fast = float(np.dot(u.values, centroid(vs)))
            assert fast == pytest.approx(naive, abs=1e-12)


def test_config_validation():
    with pytest.raises(EmbeddingError):
        EmbedderConfig(dimension=1)
    with pytest.raises(EmbeddingError):
        EmbedderConfig(backend="remote")
    config = EmbedderConfig(backend="remote", remote_endpoint="http://localhost:9")
    assert config.remote_endpoint


class TestRemoteEmbedder:
    def make_client(self):
        from fastapi.testclient import TestClient

        from expal.embedding import RemoteEmbedder
        from expal.model_service import build_embedding_app

        app = build_embedding_app(dimension=64)
        return RemoteEmbedder("http://embedding", client=TestClient(app))

    def test_matches_builtin(self):
        remote = self.make_client()
        local = HashedTfEmbedder(dimension=64)
        texts = ["a man on a stage", "", "guitar guitar cash"]
        for text in texts:
            r = remote.embed(text)
            l = local.embed(text)
            assert r.empty == l.empty
            assert np.allclose(r.values, l.values, atol=1e-12)

    def test_info_dimension(self):
        remote = self.make_client()
        assert remote.dimension == 64

    def test_transport_failure_surfaces_endpoint(self):
        import httpx

        from expal.embedding import RemoteEmbedder

        class Boom(httpx.BaseTransport):
            def handle_request(self, request):
                raise httpx.ConnectError("refused", request=request)

        client = httpx.Client(transport=Boom(), base_url="http://nowhere:1")
        with pytest.raises(EmbeddingError, match="nowhere"):
            RemoteEmbedder("http://nowhere:1", client=client)
