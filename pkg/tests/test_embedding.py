import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roieval.embedding import (
    EmbedderConfig,
    HashEmbedder,
    OneHotEmbedder,
    RemoteEmbedder,
    cosine,
    embed_text,
    make_embedder,
)
from roieval.errors import ConfigError, ExternalServiceError, SchemaError


def fnv1a_reference(data: bytes) -> int:
    # written out from the published FNV-1a definition, independent of roieval
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def test_fnv_reference_vectors():
    assert fnv1a_reference(b"") == 0xCBF29CE484222325
    assert fnv1a_reference(b"a") == 0xAF63DC4C8601EC8C


def test_single_gram_bucket():
    emb = HashEmbedder(dimension=256, ngram_size=3)
    raw = emb.raw_counts("abc")
    expected = fnv1a_reference(b"abc") % 256
    assert np.flatnonzero(raw).tolist() == [expected]
    vec = emb.embed("abc")
    assert vec[expected] == 1.0


def test_hash_embedder_deterministic_and_unit():
    emb = HashEmbedder()
    a = emb.embed("Tăng chuyển hóa FDG")
    b = HashEmbedder().embed("Tăng chuyển hóa FDG")
    assert np.array_equal(a, b)
    assert math.isclose(np.linalg.norm(a), 1.0)


def test_hash_embedder_nfc_and_case():
    emb = HashEmbedder()
    decomposed = "gàn"  # 'gàn' with combining grave
    assert cosine(emb.embed(decomposed), emb.embed("GÀN")) == pytest.approx(1.0)


def test_disjoint_ngrams_orthogonal():
    emb = HashEmbedder(dimension=1 << 16)
    u, v = emb.embed("aaaa"), emb.embed("zzzz")
    assert cosine(u, v) == 0.0
    assert cosine(u, u) == pytest.approx(1.0)


def test_empty_text():
    with pytest.raises(SchemaError, match="empty text"):
        HashEmbedder().embed("")
    with pytest.raises(SchemaError, match="empty text"):
        HashEmbedder().embed("   ")


def test_cache_hits_bit_identical():
    emb = HashEmbedder(cache_capacity=2)
    first = emb.embed("liver")
    again = emb.embed("liver")
    assert again is first
    assert emb.computed == 1
    emb.embed("spleen")
    emb.embed("lung")  # evicts liver
    assert np.array_equal(emb.embed("liver"), first)
    assert emb.computed == 4


def test_embed_text_with_config():
    cfg = EmbedderConfig(provider="local-hash", dimension=64)
    assert np.array_equal(embed_text("x y z", cfg), embed_text("x y z", cfg))
    assert embed_text("x y z", cfg).shape == (64,)


def test_config_validation():
    with pytest.raises(ConfigError):
        EmbedderConfig(dimension=1)
    with pytest.raises(ConfigError):
        EmbedderConfig(provider="bert")


def test_one_hot():
    emb = OneHotEmbedder(dimension=8)
    assert cosine(emb.embed("Liver"), emb.embed("liver")) == 1.0
    assert cosine(emb.embed("liver"), emb.embed("lung")) == 0.0


# --- cosine ---------------------------------------------------------------------

def test_cosine_hand_value():
    assert cosine([1, 2, 2], [2, 1, 2]) == pytest.approx(8 / 9, abs=1e-12)


def test_cosine_basis():
    assert cosine([1, 0, 0], [0, 1, 0]) == 0.0
    assert cosine([0, 3, 0], [0, 3, 0]) == 1.0


def test_cosine_errors():
    with pytest.raises(ConfigError):
        cosine([1, 2], [1, 2, 3])
    with pytest.raises(ConfigError):
        cosine([0, 0], [1, 2])


_vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@given(_vec, _vec, st.floats(0.01, 100))
def test_cosine_symmetric_scale_invariant(u, v, k):
    c = cosine(u, v)
    assert -1.0 <= c <= 1.0
    assert c == pytest.approx(cosine(v, u), abs=1e-12)
    assert c == pytest.approx(cosine(np.multiply(u, k), v), abs=1e-9)


# --- remote client ---------------------------------------------------------------

def _service(dim=4, fail_first=0, seen=None):
    state = {"calls": 0}

    def handler(request: httpx.Request):
        state["calls"] += 1
        body = json.loads(request.content)
        if seen is not None:
            seen.append((dict(request.headers), body))
        if state["calls"] <= fail_first:
            raise httpx.ReadTimeout("slow", request=request)
        vecs = [[float(len(t)), 1.0] + [0.0] * (dim - 2) for t in body["texts"]]
        return httpx.Response(200, json={"vectors": vecs})

    return httpx.MockTransport(handler), state


def test_remote_wire_format_and_batching(monkeypatch):
    monkeypatch.setenv("EMBEDDER_API_KEY", "sekret")
    seen = []
    transport, state = _service(seen=seen)
    emb = RemoteEmbedder("http://embed.test/v1", "clin-bert", batch_size=2, transport=transport)
    vecs = emb.embed_many(["a", "bb", "ccc"])
    assert state["calls"] == 2
    assert seen[0][1] == {"model": "clin-bert", "texts": ["a", "bb"]}
    assert seen[1][1] == {"model": "clin-bert", "texts": ["ccc"]}
    assert seen[0][0]["authorization"] == "Bearer sekret"
    assert all(math.isclose(np.linalg.norm(v), 1.0) for v in vecs)
    assert emb.dimension == 4


def test_remote_retry_is_transparent():
    transport, state = _service(fail_first=2)
    emb = RemoteEmbedder("http://e.test", "m", transport=transport, retry_backoff=0)
    first_try = RemoteEmbedder("http://e.test", "m", transport=_service()[0])
    assert np.array_equal(emb.embed("liver"), first_try.embed("liver"))
    assert state["calls"] == 3


def test_remote_gives_up():
    transport, _ = _service(fail_first=10)
    emb = RemoteEmbedder("http://e.test", "m", transport=transport, max_retries=1,
                         retry_backoff=0)
    with pytest.raises(ExternalServiceError):
        emb.embed("x")


def test_remote_dimension_mismatch():
    transport, _ = _service(dim=4)
    emb = RemoteEmbedder("http://e.test", "m", dimension=8, transport=transport)
    with pytest.raises(ExternalServiceError, match="dimension mismatch"):
        emb.embed("x")


def test_remote_requires_endpoint(monkeypatch):
    monkeypatch.delenv("EMBEDDER_ENDPOINT", raising=False)
    with pytest.raises(ConfigError):
        make_embedder(EmbedderConfig(provider="remote", model_name="m"))


def test_concurrent_fetch_once():
    gate = threading.Event()
    calls = []

    def handler(request):
        calls.append(json.loads(request.content)["texts"])
        gate.wait(1)
        return httpx.Response(200, json={"vectors": [[1.0, 2.0]]})

    emb = RemoteEmbedder("http://e.test", "m", transport=httpx.MockTransport(handler))
    with ThreadPoolExecutor(8) as pool:
        futs = [pool.submit(emb.embed, "same") for _ in range(8)]
        gate.set()
        out = [f.result() for f in futs]
    assert len(calls) == 1
    assert all(o is out[0] for o in out)


@pytest.mark.network
def test_live_embedding_service():
    emb = make_embedder(EmbedderConfig(provider="remote", model_name="default"))
    assert math.isclose(np.linalg.norm(emb.embed("liver")), 1.0)
