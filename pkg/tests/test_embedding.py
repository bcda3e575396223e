"""Hashing embeddings, caching, aspect tables, vector persistence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sciatlas.embedding import (
    INSTRUCTIONS,
    AspectVectors,
    CachedEmbeddingProvider,
    EmbeddingError,
    HashingProvider,
    RemoteEmbeddingProvider,
    cosine_similarity,
    embed_aspects,
    load_vectors,
    save_vectors,
)
from sciatlas.extraction import ExtractionSet

from conftest import make_ext

texts = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789 ",
                min_size=1).filter(lambda s: s.strip())


class TestHashingProvider:
    @given(body=texts)
    @settings(max_examples=50, deadline=None)
    def test_unit_norm_and_dtype(self, body):
        vec = HashingProvider(dim=32).embed("inst", body)
        assert vec.dtype == np.float32
        assert vec.shape == (32,)
        assert abs(float(np.linalg.norm(vec)) - 1.0) < 1e-5

    @given(body=texts)
    @settings(max_examples=30, deadline=None)
    def test_deterministic(self, body):
        a = HashingProvider(dim=64, seed=0).embed("inst", body)
        b = HashingProvider(dim=64, seed=0).embed("inst", body)
        assert np.array_equal(a, b)

    def test_instruction_and_seed_sensitivity(self):
        p = HashingProvider(dim=64, seed=0)
        base = p.embed("inst-a", "protein folding")
        assert not np.array_equal(base, p.embed("inst-b", "protein folding"))
        assert not np.array_equal(
            base, HashingProvider(dim=64, seed=1).embed("inst-a", "protein folding"))

    def test_token_order_invariant(self):
        # bag of tokens by construction
        p = HashingProvider(dim=64)
        a = p.embed("i", "alpha beta gamma")
        b = p.embed("i", "gamma alpha beta")
        assert np.allclose(a, b, atol=1e-6)

    def test_empty_body_rejected(self):
        with pytest.raises(EmbeddingError):
            HashingProvider(dim=32).embed("i", "   ")

    def test_batch_matches_single(self):
        p = HashingProvider(dim=32)
        bodies = ["one body", "another body", "third"]
        batch = p.embed_batch("i", bodies)
        for row, body in zip(batch, bodies):
            assert np.array_equal(row, p.embed("i", body))


class TestCosine:
    def test_bounds_and_self(self):
        p = HashingProvider(dim=64)
        a = p.embed("i", "protein folding dynamics")
        assert abs(cosine_similarity(a, a) - 1.0) < 1e-6
        b = p.embed("i", "completely different words here")
        assert -1.0 <= cosine_similarity(a, b) <= 1.0

    def test_shared_tokens_raise_similarity(self):
        p = HashingProvider(dim=256)
        a = p.embed("i", "protein folding structure")
        near = p.embed("i", "protein folding energy")
        far = p.embed("i", "galaxy survey imaging")
        assert cosine_similarity(a, near) > cosine_similarity(a, far)


class TestAspectTable:
    def test_embed_aspects_skips_missing(self):
        exts = ExtractionSet([
            make_ext(1, problem="protein folding", method="transformer"),
            make_ext(2, problem="galaxy shapes", method=None),
            make_ext(3, problem=None, method=None),
        ])
        table = embed_aspects(exts, HashingProvider(dim=32))
        assert table.problem.ids == ["pub-00001", "pub-00002"]
        assert table.method.ids == ["pub-00001"]
        assert table.usage.ids == ["pub-00001"]
        assert table.problem.matrix.shape == (2, 32)

    def test_usage_shares_method_instruction(self):
        assert INSTRUCTIONS["usage"] == INSTRUCTIONS["method"]

    def test_row_lookup(self):
        exts = ExtractionSet([make_ext(1, problem="p one", method="m one"),
                              make_ext(2, problem="p two", method="m two")])
        table = embed_aspects(exts, HashingProvider(dim=32))
        row = table.problem.row("pub-00002")
        assert np.array_equal(row, table.problem.matrix[1])
        with pytest.raises(ValueError):
            table.problem.row("pub-09999")

    def test_save_load_round_trip(self, tmp_path):
        exts = ExtractionSet([make_ext(1, problem="p", method="m")])
        table = embed_aspects(exts, HashingProvider(dim=16))
        save_vectors(table.problem, tmp_path / "problem")
        again = load_vectors(tmp_path / "problem")
        assert again.ids == table.problem.ids
        assert np.array_equal(again.matrix, table.problem.matrix)
        assert again.instruction_id == table.problem.instruction_id
        assert again.provider_id == table.problem.provider_id


class TestCachedProvider:
    class Counting(HashingProvider):
        def __init__(self, **kw):
            super().__init__(**kw)
            self.batch_calls = 0

        def embed_batch(self, instruction, bodies):
            self.batch_calls += 1
            return super().embed_batch(instruction, bodies)

    def test_second_pass_hits_cache(self, tmp_path):
        inner = self.Counting(dim=16)
        provider = CachedEmbeddingProvider(inner, tmp_path / "cache")
        first = provider.embed_batch("i", ["a b", "c d"])
        calls = inner.batch_calls
        second = provider.embed_batch("i", ["a b", "c d"])
        assert inner.batch_calls == calls
        assert np.array_equal(first, second)

    def test_partial_hit_only_fetches_misses(self, tmp_path):
        inner = self.Counting(dim=16)
        provider = CachedEmbeddingProvider(inner, tmp_path / "cache")
        provider.embed_batch("i", ["a b"])
        out = provider.embed_batch("i", ["a b", "new body"])
        assert np.array_equal(out[0], HashingProvider(dim=16).embed("i", "a b"))


class TestRemoteProvider:
    def test_round_trip_and_shape_check(self, fake_backend):
        def responder(path, req):
            assert path == "/embeddings"
            rows = [[float(len(pair[1]))] * 4 for pair in req["input"]]
            return 200, {"data": [{"embedding": r} for r in rows]}

        backend = fake_backend(responder)
        provider = RemoteEmbeddingProvider(backend.url, model_id="e", dim=4)
        out = provider.embed_batch("inst", ["ab", "wxyz"])
        assert out.shape == (2, 4)
        assert out[0, 0] == 2.0 and out[1, 0] == 4.0

    def test_wrong_width_rejected(self, fake_backend):
        backend = fake_backend(
            lambda path, req: (200, {"data": [{"embedding": [1.0, 2.0]}]}))
        provider = RemoteEmbeddingProvider(backend.url, model_id="e", dim=4)
        with pytest.raises(EmbeddingError, match="shape"):
            provider.embed_batch("i", ["one"])

    def test_http_error(self, fake_backend):
        backend = fake_backend(lambda path, req: (500, {}))
        provider = RemoteEmbeddingProvider(backend.url, model_id="e", dim=4)
        with pytest.raises(EmbeddingError, match="500"):
            provider.embed("i", "body")
