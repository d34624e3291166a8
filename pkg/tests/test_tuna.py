import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from swin_tuna.backbone import (
    BackboneConfig,
    backbone_forward,
    backbone_layout,
    swin_block_vanilla,
    swin_large,
    toy_config,
)
from swin_tuna.errors import ConfigError, ContractError
from swin_tuna.gradcheck import run_gradcheck
from swin_tuna.head import HeadConfig
from swin_tuna.model import build_model, full_layout
from swin_tuna.params import ParamStore
from swin_tuna.tensor import Tensor
from swin_tuna.tuna import (
    TunaConfig,
    ablation_arms,
    block_forward,
    count_params,
    inject,
    tuna_block_layout,
    tuna_forward,
    tuna_layout,
)
from test_backbone import block_params


def block_count_oracle(C, d, k):
    """Bias-inclusive count of one adapter plus its s1 vector and s2 scalar."""
    down = C * d + d
    dw = d * k * k + d
    pw = d * d + d
    up = d * C + C
    return down + dw + pw + up + C + 1


def adapter_params(rng, C, d, k, scale=0.3, zero=False):
    shapes = {"down_w": (C, d), "down_b": (d,), "dw_w": (d, 1, k, k), "dw_b": (d,),
              "pw_w": (d, d, 1, 1), "pw_b": (d,), "up_w": (d, C), "up_b": (C,)}
    return {n: Tensor(np.zeros(s) if zero else rng.standard_normal(s) * scale) for n, s in shapes.items()}


def host_with_scales(rng, C, heads, w, s1, s2):
    host = block_params(rng, C, heads, w)
    host["s1"] = Tensor(np.full(C, s1))
    host["s2"] = Tensor(np.asarray(s2, dtype=np.float64))
    return host


# -- tuna_forward ---------------------------------------------------------

def test_zero_adapter_is_identity(rng):
    x = Tensor(rng.standard_normal((2, 16, 8)))
    out = tuna_forward(x, adapter_params(rng, 8, 4, 3, zero=True), (4, 4))
    assert out.data.tobytes() == x.data.tobytes()


def test_single_token_matches_dense_oracle(rng):
    C, d = 6, 3
    p = adapter_params(rng, C, d, 1, scale=0.7)
    x = rng.standard_normal((4, 1, C))
    out = tuna_forward(Tensor(x), p, (1, 1)).data
    P = {k: v.data for k, v in p.items()}
    down = x @ P["down_w"] + P["down_b"]
    conv = (down * P["dw_w"][:, 0, 0, 0] + P["dw_b"]) @ P["pw_w"][:, :, 0, 0].T + P["pw_b"]
    up = (conv + down) @ P["up_w"] + P["up_b"]
    ref = 0.5 * up * (1 + erf(up / np.sqrt(2))) + x
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


def test_tuna_forward_token_count_contract(rng):
    with pytest.raises(ContractError):
        tuna_forward(Tensor(np.zeros((1, 15, 8))), adapter_params(rng, 8, 4, 3), (4, 4))


def test_tuna_forward_dropout_only_in_training(rng):
    x = Tensor(rng.standard_normal((1, 16, 8)))
    p = adapter_params(rng, 8, 4, 3)
    a = tuna_forward(x, p, (4, 4), training=False, dropout_p=0.5).data
    b = tuna_forward(x, p, (4, 4), training=True, rng=np.random.default_rng(0), dropout_p=0.5).data
    assert a.tobytes() == tuna_forward(x, p, (4, 4)).data.tobytes()
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("name", ["tuna_forward", "tuna_block_parallel", "tuna_block_sequential"])
def test_gradcheck_composed_paths(name):
    (res,) = run_gradcheck([name])
    assert res.passed, res.line()


# -- block_forward --------------------------------------------------------

@pytest.mark.parametrize("structure", ["parallel", "sequential"])
@pytest.mark.parametrize("shift", [False, True])
def test_neutral_injection_equals_vanilla(rng, structure, shift):
    C, heads, w = 8, 2, 4
    host = host_with_scales(rng, C, heads, w, 1.0, 0.0)
    adapter = adapter_params(rng, C, 4, 3)
    z = Tensor(rng.standard_normal((2, 64, C)))
    cfg = TunaConfig(structure=structure)
    out = block_forward(z, host, adapter, cfg, (8, 8), heads, w, shift)
    ref = swin_block_vanilla(z, host, (8, 8), heads, w, shift).z_out
    assert out.data.tobytes() == ref.data.tobytes()


@pytest.mark.parametrize("structure", ["parallel", "sequential"])
def test_half_s1_halves_frozen_branch(rng, structure):
    C, heads, w = 8, 2, 4
    host = host_with_scales(rng, C, heads, w, 0.5, 0.0)
    z = Tensor(rng.standard_normal((1, 64, C)))
    out = block_forward(z, host, adapter_params(rng, C, 4, 3), TunaConfig(structure=structure), (8, 8), heads, w, False).data
    ref = swin_block_vanilla(z, host, (8, 8), heads, w, False).z_out.data
    np.testing.assert_array_equal(out, ref * 0.5)
    pos = (ref > 0).all(-1)
    np.testing.assert_array_equal(out[pos].argmax(-1), ref[pos].argmax(-1))


def test_default_init_tuna_branch_contributes_zero(rng):
    C, heads, w = 8, 2, 4
    cfg = TunaConfig()
    host = host_with_scales(rng, C, heads, w, cfg.s1_init, cfg.s2_init)
    z = Tensor(rng.standard_normal((1, 64, C)))
    out = block_forward(z, host, adapter_params(rng, C, 4, 3), cfg, (8, 8), heads, w, True).data
    ref = swin_block_vanilla(z, host, (8, 8), heads, w, True).z_out.data
    np.testing.assert_array_equal(out, ref * cfg.s1_init)


def test_s2_scales_tuna_branch(rng):
    C, heads, w = 8, 2, 4
    host = host_with_scales(rng, C, heads, w, 1.0, 0.25)
    adapter = adapter_params(rng, C, 4, 3)
    z = Tensor(rng.standard_normal((1, 64, C)))
    out = block_forward(z, host, adapter, TunaConfig(), (8, 8), heads, w, False).data
    ref = swin_block_vanilla(z, host, (8, 8), heads, w, False).z_out.data + 0.25 * tuna_forward(z, adapter, (8, 8)).data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_freeze_contract_only_trainable_get_grads(toy_model):
    model = toy_model
    for n in model.store.names(component="scales"):
        model.store[n].data[...] = 0.5  # nonzero s2 so adapter grads are nonzero
    img = np.random.default_rng(0).random((1, 3, 32, 32))
    model(img).sum().backward()
    for n in model.store.frozen_names():
        assert model.store[n].grad is None, n
    nonzero = {n for n in model.store if model.store[n].grad is not None and np.any(model.store[n].grad)}
    assert nonzero <= set(model.store.trainable_names())
    assert any(n.startswith("tuna.") for n in nonzero)
    assert any(n.endswith(".s1") for n in nonzero) and any(n.endswith(".s2") for n in nonzero)


# -- inject and layout ----------------------------------------------------

def test_inject_counts_and_freeze_mask(rng):
    bb = toy_config()
    store = ParamStore.from_layout(backbone_layout(bb), rng)
    for n in list(store)[:3]:
        store.set_trainable(n, True)  # inject must re-freeze the backbone
    inject(store, bb, TunaConfig(), rng)
    instances = {n.rsplit(".", 1)[0] for n in store.names(component="tuna")}
    assert len(instances) == 5
    backbone_names = {n for n in store if n.startswith("backbone.")}
    trainable_backbone = set(store.trainable_names()) & backbone_names
    assert trainable_backbone == {f"{p.replace('tuna.', 'backbone.', 1)}.{s}" for p in instances for s in ("s1", "s2")}
    assert all(store[n].data.tobytes() == np.full_like(store[n].data, 1e-6).tobytes() for n in store if n.endswith(".s1"))
    assert all(store[n].data == 0 for n in store if n.endswith(".s2"))
    for n in store.names(component="tuna"):
        if n.endswith("_b"):
            assert not store[n].data.any()
        else:
            assert 0 < np.abs(store[n].data).max() <= 0.04 + 1e-12


def test_hierarchy_law_per_stage():
    bb = swin_large()
    for name, cfg in ablation_arms().items():
        shapes = {i.name: i.shape for i in tuna_layout(bb, cfg)}
        for i in range(4):
            k = [7, 5, 5, 3][i] if cfg.adaptive_convolution else 3
            d = [64, 64, 96, 192][i] if cfg.adaptive_embedding else 64
            C = bb.embed_dims[i]
            for j in range(bb.depths[i]):
                pre = f"tuna.stages.{i}.blocks.{j}"
                assert shapes[f"{pre}.dw_w"] == (d, 1, k, k), name
                assert shapes[f"{pre}.down_w"] == (C, d)
                assert shapes[f"{pre}.pw_w"] == (d, d, 1, 1)


def test_config_validation():
    with pytest.raises(ConfigError):
        TunaConfig(kernel_sizes=[7, 4, 5, 3])
    with pytest.raises(ConfigError):
        TunaConfig(bottleneck_dims=[64, 64, 96])
    with pytest.raises(ConfigError):
        TunaConfig(structure="stacked")


# -- counting -------------------------------------------------------------

def test_one_block_count():
    infos = tuna_block_layout("t", "b", 192, 64, 7, TunaConfig())
    assert count_params(infos) == 32_385 == block_count_oracle(192, 64, 7)
    assert 12_352 + 3_200 + 4_160 + 12_480 + 192 + 1 == 32_385


def test_swin_l_adapters_only():
    layout = full_layout(swin_large(), HeadConfig(), TunaConfig(), "tuna")
    assert count_params(layout, "adapters_only") == 4_336_664
    bb_total = count_params(backbone_layout(swin_large()))
    assert count_params(layout, "adapters_only") / bb_total < 0.03


def test_count_filters_are_nested():
    for preset in ("tuna", "linear_probe", "full_ft"):
        layout = full_layout(toy_config(), HeadConfig(), TunaConfig(), preset)
        assert count_params(layout, "all") >= count_params(layout, "trainable")
    lp = full_layout(toy_config(), HeadConfig(), None, "linear_probe")
    assert count_params(lp, "trainable") == sum(i.numel for i in lp if i.component == "head")
    with pytest.raises(ConfigError):
        count_params(lp, "frozen")


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(1, 32), st.sampled_from([1, 3, 5, 7]))
def test_block_count_matches_oracle(C, d, k):
    assert count_params(tuna_block_layout("t", "b", C, d, k, TunaConfig())) == block_count_oracle(C, d, k)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=4, max_size=4), st.integers(2, 40))
def test_adapter_count_linear_in_depth_quadratic_in_dim(depths, d):
    bb = BackboneConfig(embed_dims=[8, 16, 32, 64], depths=depths, num_heads=[1, 2, 4, 8], window_size=4)
    double = BackboneConfig(embed_dims=[8, 16, 32, 64], depths=[2 * x for x in depths], num_heads=[1, 2, 4, 8], window_size=4)

    def n(cfg, dim):
        return count_params(tuna_layout(cfg, TunaConfig(bottleneck_dims=[dim] * 4)), "adapters_only")

    assert n(double, d) == 2 * n(bb, d)
    # second difference in d isolates the pointwise d*d term: 2 per block
    assert n(bb, d + 1) - 2 * n(bb, d) + n(bb, d - 1) == 2 * sum(depths)


def test_injected_forward_neutral_equals_vanilla_on_toy(rng):
    cfg = TunaConfig(s1_init=1.0, s2_init=0.0)
    model = build_model(toy_config(), HeadConfig(), cfg, "tuna", seed=3)
    img = Tensor(rng.random((2, 3, 32, 32)))
    a = backbone_forward(img, model.store, model.backbone, cfg)
    b = backbone_forward(img, model.store, model.backbone, None)
    for x, y in zip(a.features, b.features):
        assert x.data.tobytes() == y.data.tobytes()
