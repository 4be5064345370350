"""Embedding provider tests: hash encoder determinism and the remote client."""

from __future__ import annotations

import numpy as np
import pytest

from asmrag.embedding import (
    ENDPOINT_ENV_VAR,
    ProviderConfig,
    embed_batch,
    hash_encode,
    normalize,
)
from asmrag.errors import DimMismatch, EmptyText, RemoteUnavailable, ZeroVector


def test_normalize_unit():
    v = normalize([3.0, 4.0])
    assert v.dtype == np.float32
    assert v == pytest.approx([0.6, 0.8])
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)


def test_normalize_zero_vector():
    with pytest.raises(ZeroVector):
        normalize([0.0, 0.0])


def test_normalize_scale_invariant_power_of_two():
    x = np.array([1.5, -2.25, 0.5, 8.0])
    assert np.array_equal(normalize(x), normalize(4.0 * x))


def test_normalize_rejects_non_finite():
    with pytest.raises(ValueError):
        normalize([1.0, float("nan")])


def test_hash_encode_deterministic():
    a = hash_encode("mov eax, 1\nret", 64)
    b = hash_encode("mov eax, 1\nret", 64)
    assert np.array_equal(a, b)
    assert a.dtype == np.float32
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)


def test_hash_encode_seed_and_dim_sensitivity():
    t = "xor eax, 0x5a"
    assert not np.array_equal(hash_encode(t, 64, seed=0), hash_encode(t, 64, seed=1))
    assert hash_encode(t, 32).shape == (32,)


def test_hash_encode_empty_token_stream_is_basis_vector():
    for text in ("", "   \n\t  "):
        v = hash_encode(text, 16)
        assert v[0] == 1.0
        assert np.count_nonzero(v) == 1


def test_hash_encode_unigram_is_order_insensitive():
    a = hash_encode("push pop ret", 128, ngram=1)
    b = hash_encode("ret push pop", 128, ngram=1)
    assert np.array_equal(a, b)


def test_hash_encode_bigram_is_order_sensitive():
    a = hash_encode("push pop ret", 128, ngram=2)
    b = hash_encode("ret pop push", 128, ngram=2)
    assert not np.array_equal(a, b)


def test_hash_encode_similar_texts_are_close():
    base = "\n".join(f"mov r{i}, 0x{i:04x}" for i in range(20))
    near = base.replace("0x0005", "0xffff")
    far = "\n".join(f"xor r{i}, 0x{i + 99:04x}" for i in range(20))
    sim_near = float(np.dot(hash_encode(base, 256), hash_encode(near, 256)))
    sim_far = float(np.dot(hash_encode(base, 256), hash_encode(far, 256)))
    assert sim_near > 0.8 > sim_far


def test_embed_batch_hash_path():
    cfg = ProviderConfig(dim=64)
    vs = embed_batch(["mov eax, 1", "ret"], cfg)
    assert len(vs) == 2
    assert np.array_equal(vs[0], hash_encode("mov eax, 1", 64))


def test_embed_batch_rejects_empty():
    cfg = ProviderConfig(dim=64)
    with pytest.raises(EmptyText):
        embed_batch([], cfg)
    with pytest.raises(EmptyText):
        embed_batch(["ok", ""], cfg)


def test_provider_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig(kind="quantum")
    with pytest.raises(ValueError):
        ProviderConfig(dim=4)
    with pytest.raises(ValueError):
        ProviderConfig(kind="remote")  # no endpoint anywhere


# -- remote provider ---------------------------------------------------------

def _echo_route(dim):
    def handler(body):
        # deterministic unnormalized vectors; client must normalize
        vecs = []
        for i, _ in enumerate(body["texts"]):
            v = [0.0] * dim
            v[i % dim] = 3.0
            v[(i + 1) % dim] = 4.0
            vecs.append(v)
        return 200, {"vectors": vecs}
    return handler


def test_remote_embed_normalizes(stub_server):
    with stub_server({"/embed": _echo_route(8)}) as url:
        cfg = ProviderConfig(kind="remote", dim=8, endpoint=url)
        vs = embed_batch(["a", "b"], cfg)
    assert vs[0][0] == pytest.approx(0.6)
    assert vs[0][1] == pytest.approx(0.8)
    assert np.linalg.norm(vs[1]) == pytest.approx(1.0, abs=1e-6)


def test_remote_embed_batches_preserve_order(stub_server):
    with stub_server({"/embed": _echo_route(8)}) as url:
        cfg = ProviderConfig(kind="remote", dim=8, endpoint=url, max_batch=2)
        vs = embed_batch(["a", "b", "c", "d", "e"], cfg)
    assert len(vs) == 5
    # batches of 2: global index 4 is index 0 of its chunk
    assert vs[4][0] == pytest.approx(0.6)


def test_remote_dim_mismatch(stub_server):
    with stub_server({"/embed": _echo_route(6)}) as url:
        cfg = ProviderConfig(kind="remote", dim=8, endpoint=url, retries=0)
        with pytest.raises(DimMismatch):
            embed_batch(["a"], cfg)


def test_remote_count_mismatch(stub_server):
    def short(body):
        return 200, {"vectors": [[1.0] * 8]}
    with stub_server({"/embed": short}) as url:
        cfg = ProviderConfig(kind="remote", dim=8, endpoint=url, retries=0)
        with pytest.raises(DimMismatch):
            embed_batch(["a", "b"], cfg)


def test_remote_server_error_exhausts_retries(stub_server):
    calls = []
    def failing(body):
        calls.append(1)
        return 503, {"error": "overloaded"}
    with stub_server({"/embed": failing}) as url:
        cfg = ProviderConfig(kind="remote", dim=8, endpoint=url, retries=2)
        with pytest.raises(RemoteUnavailable):
            embed_batch(["a"], cfg)
    assert len(calls) == 3  # initial try plus two retries


def test_remote_connection_refused():
    cfg = ProviderConfig(kind="remote", dim=8,
                         endpoint="http://127.0.0.1:9", retries=0,
                         timeout_ms=500)
    with pytest.raises(RemoteUnavailable):
        embed_batch(["a"], cfg)


def test_endpoint_env_var_overrides(stub_server, monkeypatch):
    with stub_server({"/embed": _echo_route(8)}) as url:
        monkeypatch.setenv(ENDPOINT_ENV_VAR, url)
        cfg = ProviderConfig(kind="remote", dim=8, endpoint="http://127.0.0.1:9")
        assert cfg.resolved_endpoint() == url
        vs = embed_batch(["a"], cfg)
    assert vs[0][0] == pytest.approx(0.6)
