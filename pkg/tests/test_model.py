import numpy as np
import pytest

from sdinet.model import VARIANTS, ConfigError, ModelConfig, SdiNet
from sdinet.tensor import Tensor, no_grad

TINY = dict(base_channels=4, feb_count=1, residual_blocks=1)


def _model(variant="full", dtype="f32", seed=0, **kw):
    cfg = ModelConfig.variant(variant, **{**TINY, **kw})
    return SdiNet(cfg, dtype=dtype).init(seed)


def _pair(shape, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return (Tensor(rng.uniform(0, 1, size=shape).astype(dtype)),
            Tensor(rng.uniform(0, 1, size=shape).astype(dtype)))


# ---------------------------------------------------------------------------
# configuration


def test_variant_switches():
    assert ModelConfig.variant("full").use_caim and ModelConfig.variant("full").use_pcab
    v0 = ModelConfig.variant("v0")
    assert v0.v0_heuristic and not v0.use_caim and not v0.use_pcab
    v1 = ModelConfig.variant("v1")
    assert v1.use_pcab and not v1.use_caim
    v2 = ModelConfig.variant("v2")
    assert v2.use_caim and not v2.use_pcab
    v3 = ModelConfig.variant("v3")
    assert v3.use_caim and v3.use_pcab  # frequency loss is disabled in training, not here


def test_variant_unknown():
    with pytest.raises(ConfigError):
        ModelConfig.variant("v9")


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        ModelConfig(base_channels=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(v0_heuristic=True, use_caim=True).validate()
    with pytest.raises(ConfigError):
        ModelConfig(use_pcab=True, feb_count=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(residual_blocks=-1).validate()
    with pytest.raises(ConfigError):
        ModelConfig(attention_scope="diag").validate()


def test_config_dict_roundtrip():
    cfg = ModelConfig.variant("v1", base_channels=8, feb_count=3)
    d = cfg.to_dict()
    assert ModelConfig.from_dict(d) == cfg
    # string-coerced values, as read back from checkpoint metadata
    d2 = {k: str(v) for k, v in d.items()}
    assert ModelConfig.from_dict(d2) == cfg


# ---------------------------------------------------------------------------
# structure


def test_input_validation():
    m = _model()
    with pytest.raises(ConfigError):
        m.forward(*_pair((1, 1, 16, 16)))  # wrong channel count
    with pytest.raises(ConfigError):
        m.forward(*_pair((1, 3, 18, 18)))  # not divisible by 4
    l, r = _pair((1, 3, 16, 16))
    with pytest.raises(ConfigError):
        m.forward(l, Tensor(np.zeros((1, 3, 16, 32), dtype=np.float32)))


def test_v0_needs_divisible_by_8():
    m = _model("v0")
    with pytest.raises(ConfigError):
        m.forward(*_pair((1, 3, 20, 20)))
    with no_grad():
        el, er = m.forward(*_pair((1, 3, 16, 16)))
    assert el.shape == (1, 3, 16, 16)


def test_shared_encoder_symmetry():
    m = _model()
    l, _ = _pair((1, 3, 16, 16), 3)
    with no_grad():
        el, er = m.forward(l, Tensor(l.data.copy()))
    assert el.data.tobytes() == er.data.tobytes()


def test_identity_at_init():
    m = _model(dtype="f64", seed=5)
    cf = m.feat_channels
    f_l, f_r = _pair((1, cf, 8, 8), 6, np.float64)
    with no_grad():
        sf_l, sf_r = m.csim(f_l, f_r)
    assert sf_l.data.tobytes() == f_l.data.tobytes()
    assert sf_r.data.tobytes() == f_r.data.tobytes()


def test_caim_pre_residual_convexity():
    # each attention output element lies within [min, max] of the value rows
    m = _model(dtype="f64", seed=7)
    cf = m.feat_channels
    f_l, f_r = _pair((1, cf, 8, 8), 8, np.float64)
    with no_grad():
        out_l, out_r = m.caim(f_l, f_r)
        v_l = m.caim_v(f_l)
        v_r = m.caim_v(f_r)
    for out, f, v in ((out_l, f_l, v_l), (out_r, f_r, v_r)):
        pre = out.data - f.data  # f64, so the subtraction is clean at 1e-5
        lo = v.data.min(axis=3, keepdims=True) - 1e-5  # per epipolar row
        hi = v.data.max(axis=3, keepdims=True) + 1e-5
        assert np.all(pre >= lo) and np.all(pre <= hi)


def test_attention_scope_full():
    m = _model(dtype="f64", attention_scope="full")
    with no_grad():
        el, er = m.forward(*_pair((1, 3, 16, 16), 9, np.float64))
    assert el.shape == (1, 3, 16, 16)
    assert np.isfinite(el.data).all() and np.isfinite(er.data).all()


def test_output_shape_and_range_small():
    for variant in VARIANTS:
        m = _model(variant)
        with no_grad():
            el, er = m.forward(*_pair((2, 3, 16, 16), 10))
        for out in (el, er):
            assert out.shape == (2, 3, 16, 16)
            assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)
            assert np.isfinite(out.data).all()


def test_weight_sharing_single_registry():
    m = _model()
    names = m.registry.names()
    assert len(names) == len(set(names))
    # no left/right-specific parameters exist anywhere
    assert not [n for n in names if "left" in n or "right" in n and "gamma" not in n]
    assert "pcab.gamma_l" in m.registry and "pcab.gamma_r" in m.registry
