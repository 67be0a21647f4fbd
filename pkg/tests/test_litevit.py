import numpy as np
import pytest

from litesam.config import BackboneConfig
from litesam.litevit import MSPM, LiteViTBlock, PatchMerge, build_backbone, pooled_self_attention
from litesam.profile import count_macs, count_params, profile
from litesam.tensor import Conv2d, ContractError, Module, Tensor, no_grad, ops, precision
from litesam.tensor.nn import Parameter


def _zero_all(module: Module):
    for name, p in module.named_parameters():
        if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name.endswith("norm.weight"):
            p.data[:] = 1
        else:
            p.data[:] = 0


def test_patch_merge_shapes():
    rng = np.random.default_rng(0)
    stem = PatchMerge(3, 64, 7, 4, rng)
    with no_grad():
        assert stem(Tensor(np.zeros((1, 3, 64, 64), np.float32))).shape == (1, 64, 16, 16)
        pm = PatchMerge(64, 96, 3, 2, rng)
        assert pm(Tensor(np.zeros((1, 64, 16, 16), np.float32))).shape == (1, 96, 8, 8)
        with pytest.raises(ContractError):
            pm(Tensor(np.zeros((1, 64, 15, 15), np.float32)))


def test_patch_merge_zero_in_zero_out():
    pm = PatchMerge(8, 16, 3, 2, np.random.default_rng(1))
    pm.conv.bias.data[:] = 0
    with no_grad():
        out = pm.conv(Tensor(np.zeros((1, 8, 8, 8))))
    assert np.all(out.data == 0)


def test_backbone_shape_law():
    cfg = BackboneConfig(input_size=64)
    net = build_backbone(cfg)
    with no_grad():
        feats = net(Tensor(np.random.default_rng(2).normal(size=(1, 3, 64, 64)).astype(np.float32)))
    assert [f.shape for f in feats] == [(1, 64, 16, 16), (1, 96, 8, 8), (1, 128, 4, 4), (1, 256, 2, 2)]
    with pytest.raises(ContractError):
        net(Tensor(np.zeros((1, 3, 48, 48), np.float32)))


def test_backbone_deterministic():
    cfg = BackboneConfig(input_size=64)
    x = Tensor(np.random.default_rng(3).normal(size=(1, 3, 64, 64)).astype(np.float32))
    with no_grad():
        a = build_backbone(cfg, seed=5)(x)
        b = build_backbone(cfg, seed=5)(x)
    assert all(np.array_equal(u.data, v.data) for u, v in zip(a, b))


@pytest.mark.parametrize("attention", [False, True])
def test_zero_weight_block_is_identity(attention):
    cfg = BackboneConfig(embed_dims=[8, 8, 8, 8])
    block = LiteViTBlock(8, cfg, attention, np.random.default_rng(4))
    _zero_all(block)
    x = np.random.default_rng(5).normal(size=(1, 8, 8, 8))
    with no_grad(), precision(np.float64):
        out = block(Tensor(x))
    assert np.array_equal(out.data, x)


def test_block_shape_preserved():
    cfg = BackboneConfig()
    block = LiteViTBlock(96, cfg, False, np.random.default_rng(6))
    with no_grad():
        assert block(Tensor(np.zeros((1, 96, 20, 20), np.float32))).shape == (1, 96, 20, 20)


def test_mspm_single_scale_without_attention_is_bias():
    m = MSPM(4, [1], False, np.random.default_rng(7))
    x = np.random.default_rng(8).normal(size=(1, 4, 6, 6))
    with no_grad(), precision(np.float64):
        out = m(Tensor(x)).data
    assert np.allclose(out, m.fuse.bias.data.reshape(1, 4, 1, 1), atol=0, rtol=0)


def test_mspm_constant_interior_is_attention_only():
    m = MSPM(4, [3, 5], True, np.random.default_rng(9))
    x = np.full((1, 4, 16, 16), 1.5)
    with no_grad(), precision(np.float64):
        out = m(Tensor(x)).data
        attn = (pooled_self_attention(Tensor(x)) * ops.reshape(m.attn_scale, (1, 4, 1, 1))).data
    interior = (slice(None), slice(None), slice(2, -2), slice(2, -2))
    expected = attn + m.fuse.bias.data.reshape(1, 4, 1, 1)
    assert np.allclose(out[interior], expected[interior], atol=1e-12)


def test_mspm_matches_composition():
    rng = np.random.default_rng(10)
    m = MSPM(8, [3, 5], True, rng)
    x = rng.normal(size=(1, 8, 16, 16))
    with no_grad(), precision(np.float64):
        out = m(Tensor(x)).data
        xt = Tensor(x)
        pools = (ops.avg_pool2d(xt, 3, 1, 1).data - x) + (ops.avg_pool2d(xt, 5, 1, 2).data - x)
        fused = ops.conv2d(Tensor(pools), m.fuse.weight, m.fuse.bias).data
        # reference attention: 4x4 pooled tokens, plain softmax attention, bilinear back
        tok = ops.avg_pool2d(xt, 4, 4).data.reshape(8, 16).T
        s = tok @ tok.T / np.sqrt(8)
        a = np.exp(s - s.max(1, keepdims=True))
        a /= a.sum(1, keepdims=True)
        grid = (a @ tok).T.reshape(1, 8, 4, 4)
        up = ops.upsample_bilinear(Tensor(grid), (16, 16)).data
    expected = fused + up * m.attn_scale.data.reshape(1, 8, 1, 1)
    assert np.allclose(out, expected, atol=1e-12)


# -- profiling -----------------------------------------------------------------
def test_conv_1x1_params():
    assert count_params(Conv2d(4, 8, 1, np.random.default_rng(0))) == 40


def test_default_backbone_params_window():
    n = count_params(build_backbone())
    assert 0.99e6 <= n <= 1.33e6


def test_pruned_backbone_params_window():
    n = count_params(build_backbone(BackboneConfig(embed_dims=[32, 64, 96, 128], attn_stages=[])))
    assert abs(n - 0.54e6) <= 0.15 * 0.54e6


def test_macs_scale_by_four_without_attention():
    cfg = BackboneConfig(attn_stages=[], input_size=64)
    net = build_backbone(cfg)
    a, b = count_macs(net, 64), count_macs(net, 128)
    assert b == 4 * a


def test_scalability_configs_run_and_grow():
    sizes = []
    for dims in ([32, 64, 96, 128], [64, 96, 128, 256], [96, 128, 192, 384], [128, 160, 256, 512]):
        net = build_backbone(BackboneConfig(embed_dims=dims, input_size=64))
        with no_grad():
            feats = net(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
        assert feats[-1].shape == (1, dims[-1], 2, 2)
        sizes.append(count_params(net))
    assert sizes == sorted(sizes) and len(set(sizes)) == 4


def test_profile_report_shape():
    rep = profile(build_backbone(BackboneConfig(input_size=64)), 64)
    assert set(rep) == {"params", "macs", "input_size", "per_module"}
    assert sum(rep["per_module"]["macs"].values()) == rep["macs"]
    assert sum(rep["per_module"]["params"].values()) == rep["params"]
