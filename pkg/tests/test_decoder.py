import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scenehyper.decoder import Decoder, DecoderConfig, DecoderLayer, MultiHeadAttention, attention
from scenehyper.errors import ConfigurationError, ShapeError
from scenehyper.harness.gradcheck import check_gradients
from scenehyper.hypernet import GeneratedParams, LayerShape, SceneHyperNetwork

D = torch.float64


def layer(seed=0, width=8, heads=2):
    torch.manual_seed(seed)
    return DecoderLayer(width, heads, 16, dtype=D)


class TestAttention:
    def test_single_key(self):
        torch.manual_seed(0)
        mha = MultiHeadAttention(8, 2, dtype=D)
        kv = torch.randn(1, 1, 8, dtype=D)
        a, _ = attention(torch.randn(1, 3, 8, dtype=D), kv, kv, 2, mha)
        b, _ = attention(torch.randn(1, 3, 8, dtype=D), kv, kv, 2, mha)
        expected = mha.out_proj(mha.v_proj(kv))
        assert torch.allclose(a, expected.expand_as(a)) and torch.allclose(a, b)

    def test_identical_keys_uniform(self):
        keys = torch.randn(1, 1, 8, dtype=D).expand(1, 5, 8)
        _, w = attention(torch.randn(1, 3, 8, dtype=D), keys, keys, 4)
        assert torch.allclose(w, torch.full_like(w, 0.2), atol=1e-15)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([1, 2, 4, 8]))
    def test_rows_sum_to_one(self, seed, heads):
        g = torch.Generator().manual_seed(seed)
        q = torch.randn(2, 4, 8, generator=g, dtype=D)
        k = torch.randn(2, 6, 8, generator=g, dtype=D) * 5
        _, w = attention(q, k, k, heads)
        assert w.shape == (2, heads, 4, 6)
        assert torch.max(torch.abs(w.sum(-1) - 1)) <= 1e-9

    def test_indivisible(self):
        with pytest.raises(ConfigurationError):
            attention(torch.randn(1, 2, 6), torch.randn(1, 2, 6), torch.randn(1, 2, 6), 4)
        with pytest.raises(ConfigurationError):
            DecoderConfig(width=10, heads=4)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            MultiHeadAttention(8, 2)(torch.randn(1, 2, 8), torch.randn(1, 2, 6), torch.randn(1, 2, 6))


class TestDecoderLayer:
    def test_zero_generated_gives_bias(self):
        net = layer()
        b = torch.randn(8, dtype=D)
        out = net(torch.randn(1, 4, 8, dtype=D), torch.randn(1, 5, 8, dtype=D),
                  GeneratedParams(torch.zeros(8, 8, dtype=D), b))
        assert torch.equal(out, b.expand(1, 4, 8))

    def test_fusion_disabled_is_plain_layer(self):
        net = layer()
        x, mem = torch.randn(1, 4, 8, dtype=D), torch.randn(1, 5, 8, dtype=D)
        h = net.norm1(x + net.self_attn(x, x, x))
        h = net.norm2(h + net.cross_attn(h, mem, mem))
        plain = net.norm3(h + net.ffn(h))
        assert torch.allclose(net(x, mem), plain)

    def test_identity_fusion(self):
        net = layer()
        x, mem = torch.randn(1, 4, 8, dtype=D), torch.randn(1, 5, 8, dtype=D)
        ident = GeneratedParams(torch.eye(8, dtype=D), torch.zeros(8, dtype=D))
        assert torch.allclose(net(x, mem, ident), net(x, mem))

    def test_deterministic(self):
        x, mem = torch.randn(2, 4, 8, dtype=D), torch.randn(2, 5, 8, dtype=D)
        assert torch.equal(layer(3)(x, mem), layer(3)(x, mem))


def decoder(seed=0):
    torch.manual_seed(seed)
    return Decoder(DecoderConfig(num_layers=2, width=8, heads=2, ffn_width=8), 6, dtype=D)


def inputs(seed=0, b=2, k=5, m=7):
    g = torch.Generator().manual_seed(seed)
    return (torch.randn(b, k, 6, generator=g, dtype=D), torch.rand(b, k, 3, generator=g, dtype=D),
            torch.randn(b, m, 6, generator=g, dtype=D), torch.rand(b, m, 3, generator=g, dtype=D))


def hypernet(seed=0, **kw):
    torch.manual_seed(seed)
    return SceneHyperNetwork(LayerShape.for_mode(8, 8, 4, 4, "msa"), c_a=4, c_s=5, n_d=3, dtype=D, **kw)


class TestDecoder:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_candidate_permutation_equivariance(self, seed):
        dec = decoder(seed)
        cand, pos, mem, mpos = inputs(seed)
        gen = hypernet(seed)(torch.rand(2, 3, 3, dtype=D))
        perm = torch.randperm(5, generator=torch.Generator().manual_seed(seed))
        out = dec(cand, pos, mem, mpos, gen)
        permuted = dec(cand[:, perm], pos[:, perm], mem, mpos, gen)
        assert torch.allclose(permuted, out[:, perm], atol=1e-12)

    def test_query_changes_every_layer(self):
        dec, net = decoder(), hypernet()
        cand, pos, mem, mpos = inputs()
        q1, q2 = torch.rand(2, 3, 3, dtype=D), torch.rand(2, 3, 3, dtype=D)
        x1 = x2 = dec.cand_proj(cand) + dec.cand_pos(pos)
        memory = dec.mem_proj(mem) + dec.mem_pos(mpos)
        g1, g2 = net(q1), net(q2)
        for lay in dec.layers:
            x1, x2 = lay(x1, memory, g1), lay(x2, memory, g2)
            assert not torch.allclose(x1, x2)

    def test_specific_off_is_query_invariant(self):
        dec, net = decoder(), hypernet(use_specific=False)
        cand, pos, mem, mpos = inputs()
        a = dec(cand, pos, mem, mpos, net(torch.rand(2, 3, 3, dtype=D)))
        b = dec(cand, pos, mem, mpos, net(torch.rand(2, 3, 3, dtype=D)))
        assert torch.equal(a, b)

    def test_embedding_gradients(self):
        dec, net = decoder(), hypernet()
        cand, pos, mem, mpos = inputs()
        q = torch.rand(2, 3, 3, dtype=D)
        w = torch.randn(2, 5, 8, dtype=D)

        def objective():
            return (w * dec(cand, pos, mem, mpos, net(q))).sum()

        assert check_gradients(objective, [net.z_a, net.z_s]) <= 1e-4
