import numpy as np
import pytest

from gflfad import autodiff as ad
from gflfad.autodiff import Tensor
from gflfad.fusion import CrossAttentionBlock, Fusion, FusionConfig, multi_head_cross_attention
from gflfad.nn import MultiHeadAttention, scaled_dot_product_attention


def softmax_ref(z):
    z = z - z.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def ln_ref(x, g, b):
    return (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * g + b


def gelu_ref(x):
    return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))


def lin(layer, x):
    return x @ layer.weight.data + layer.bias.data


def mha_ref(mha, q, kv):
    # per-head attention on column slices, concatenated, then W^O
    h = mha.heads
    d = q.shape[-1]
    dk = d // h
    Q, K, V = lin(mha.wq, q), lin(mha.wk, kv), lin(mha.wv, kv)
    heads = []
    for i in range(h):
        sl = slice(i * dk, (i + 1) * dk)
        a = softmax_ref(Q[:, sl] @ K[:, sl].T / np.sqrt(dk))
        heads.append(a @ V[:, sl])
    return lin(mha.wo, np.concatenate(heads, axis=1))


def randomize(module, rng, scale=0.5):
    for _, p in module.named_parameters():
        p.data = rng.normal(scale=scale, size=p.shape)


# -- projections -------------------------------------------------------------


def test_zero_inputs_give_bias_rows():
    rng = np.random.default_rng(0)
    fus = Fusion(6, 4, FusionConfig(8, 2), rng)
    fus.proj_bn.bias.data = rng.normal(size=8)
    fus.proj_crer.bias.data = rng.normal(size=8)
    q, kv = fus.project_to_common(Tensor(np.zeros((1, 3, 6))), Tensor(np.zeros((1, 5, 4))))
    np.testing.assert_array_equal(q.data[0], np.tile(fus.proj_bn.bias.data, (3, 1)))
    np.testing.assert_array_equal(kv.data[0], np.tile(fus.proj_crer.bias.data, (5, 1)))


def test_identity_projection_passthrough():
    fus = Fusion(8, 8, FusionConfig(8, 2), np.random.default_rng(0))
    fus.proj_bn.weight.data = np.eye(8)
    x = np.random.default_rng(1).normal(size=(1, 3, 8))
    q, _ = fus.project_to_common(Tensor(x), Tensor(x))
    np.testing.assert_array_equal(q.data, x)


def test_projections_are_independent():
    fus = Fusion(8, 8, FusionConfig(8, 2), np.random.default_rng(0))
    assert not np.array_equal(fus.proj_bn.weight.data, fus.proj_crer.weight.data)


def test_projection_gradient():
    fus = Fusion(6, 4, FusionConfig(8, 2), np.random.default_rng(2))
    bn = Tensor(np.random.default_rng(3).normal(size=(1, 3, 6)))
    crer = Tensor(np.random.default_rng(4).normal(size=(1, 4, 4)))
    w = Tensor(np.random.default_rng(5).normal(size=(1, 3, 8)))

    def loss():
        q, _ = fus.project_to_common(bn, crer)
        return ad.sum_(ad.mul(q, w))

    assert ad.grad_check_params(loss, fus.proj_bn.parameters()) < 1e-5


# -- attention ---------------------------------------------------------------


def test_single_key_returns_value_row():
    rng = np.random.default_rng(0)
    q = Tensor(rng.normal(size=(1, 5, 4)))
    k = Tensor(rng.normal(size=(1, 1, 4)))
    v = Tensor(rng.normal(size=(1, 1, 4)))
    out, w = scaled_dot_product_attention(q, k, v)
    np.testing.assert_array_equal(w.data, np.ones((1, 5, 1)))
    np.testing.assert_allclose(out.data[0], np.tile(v.data[0], (5, 1)), rtol=1e-15)


def test_orthogonal_queries_attend_uniformly():
    q = Tensor(np.array([[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]]))
    k = Tensor(np.array([[[0.0, 1.0, 0.0], [0.0, 0.0, 3.0], [0.0, -1.0, 1.0]]]))
    v = Tensor(np.random.default_rng(1).normal(size=(1, 3, 3)))
    out, _ = scaled_dot_product_attention(q, k, v)
    np.testing.assert_allclose(out.data[0], np.tile(v.data[0].mean(0), (2, 1)), rtol=1e-12)


def test_identity_single_head_orthogonal():
    mha = MultiHeadAttention(3, 1, np.random.default_rng(0))
    for lin_ in (mha.wq, mha.wk, mha.wv, mha.wo):
        lin_.weight.data = np.eye(3)
    q = Tensor(np.array([[[1.0, 0.0, 0.0]]]))
    kv = Tensor(np.array([[[0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]]))
    out = mha(q, kv)
    np.testing.assert_allclose(out.data[0, 0], kv.data[0].mean(0), rtol=1e-12)


def test_mha_matches_closed_form():
    rng = np.random.default_rng(6)
    mha = MultiHeadAttention(8, 2, rng)
    randomize(mha, rng)
    q, kv = rng.normal(size=(2, 8)), rng.normal(size=(3, 8))
    out = mha(Tensor(q[None]), Tensor(kv[None])).data[0]
    np.testing.assert_allclose(out, mha_ref(mha, q, kv), rtol=1e-12, atol=1e-12)


def test_cross_block_matches_closed_form():
    rng = np.random.default_rng(7)
    blk = CrossAttentionBlock(8, 2, rng)
    randomize(blk, rng)
    q, kv = rng.normal(size=(2, 8)), rng.normal(size=(3, 8))
    out = multi_head_cross_attention(Tensor(q[None]), Tensor(kv[None]), blk).data[0]

    x = q + mha_ref(blk.attn, ln_ref(q, blk.norm_q.gamma.data, blk.norm_q.beta.data), ln_ref(kv, blk.norm_kv.gamma.data, blk.norm_kv.beta.data))
    h = ln_ref(x, blk.norm_ff.gamma.data, blk.norm_ff.beta.data)
    ref = x + lin(blk.ffn.fc2, gelu_ref(lin(blk.ffn.fc1, h)))
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_attention_weights_are_distributions():
    rng = np.random.default_rng(8)
    mha = MultiHeadAttention(8, 4, rng)
    randomize(mha, rng, scale=2.0)
    _, w = mha(Tensor(rng.normal(size=(2, 5, 8))), Tensor(rng.normal(size=(2, 7, 8))), return_weights=True)
    assert (w.data >= 0).all()
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-9)


def test_key_value_permutation_invariance():
    rng = np.random.default_rng(9)
    blk = CrossAttentionBlock(8, 2, rng)
    randomize(blk, rng)
    q, kv = rng.normal(size=(1, 4, 8)), rng.normal(size=(1, 6, 8))
    perm = rng.permutation(6)
    a = blk(Tensor(q), Tensor(kv)).data
    b = blk(Tensor(q), Tensor(kv[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("n_vis,n", [(1, 1), (1, 9), (5, 9), (9, 9)])
def test_output_rows_follow_queries(n_vis, n):
    fus = Fusion(6, 4, FusionConfig(8, 2), np.random.default_rng(0))
    out = fus(Tensor(np.ones((2, n_vis, 6))), Tensor(np.ones((2, n, 4))))
    assert out.shape == (2, n_vis, 8)


def test_heads_must_divide():
    with pytest.raises(ValueError):
        FusionConfig(d_model=10, heads=4)


def test_width_mismatch():
    blk = CrossAttentionBlock(8, 2, np.random.default_rng(0))
    with pytest.raises(ad.ShapeError):
        multi_head_cross_attention(Tensor(np.ones((1, 2, 8))), Tensor(np.ones((1, 2, 6))), blk)


def test_fusion_block_gradient():
    rng = np.random.default_rng(10)
    fus = Fusion(6, 4, FusionConfig(8, 2), rng)
    randomize(fus, rng, scale=0.3)
    bn = Tensor(rng.normal(size=(1, 2, 6)))
    crer = Tensor(rng.normal(size=(1, 3, 4)))
    w = Tensor(rng.normal(size=(1, 2, 8)))
    loss = lambda: ad.sum_(ad.mul(fus(bn, crer), w))  # noqa: E731
    assert ad.grad_check_params(loss, fus.parameters()) < 1e-4


def test_single_branch_fallbacks():
    fus = Fusion(6, 4, FusionConfig(8, 2), np.random.default_rng(0))
    bn, crer = Tensor(np.ones((1, 2, 6))), Tensor(np.ones((1, 3, 4)))
    assert fus(bn, None).shape == (1, 2, 8)
    assert fus(None, crer).shape == (1, 3, 8)
    with pytest.raises(ValueError):
        fus(None, None)
