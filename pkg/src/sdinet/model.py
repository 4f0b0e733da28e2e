"""The full network: shared feature encoder, cross-view interaction
(row-wise attention followed by a gated stack of feature enhancing blocks),
and shared feature decoder, plus the ablation variants used in experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .layers import (
    Conv2d,
    FeatureEnhancingBlock,
    LayerNorm2d,
    ParamRegistry,
    ResidualBlock,
    init_parameters,
)
from .tensor import (
    Tensor,
    add,
    concat_channels,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_lastdim,
    transpose,
    upsample_bilinear_x2,
)


class ConfigError(ValueError):
    pass


VARIANTS = ("full", "v0", "v1", "v2", "v3")


@dataclass
class ModelConfig:
    base_channels: int = 16
    feb_count: int = 10
    residual_blocks: int = 8
    use_caim: bool = True
    use_pcab: bool = True
    v0_heuristic: bool = False
    attention_scope: str = "row"  # "row" (per epipolar row) or "full" (all spatial positions)
    cross_value: bool = False  # value projection from the opposite view instead of the residual's view
    attention_reduction: int = 4

    def validate(self):
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.v0_heuristic and (self.use_caim or self.use_pcab):
            raise ConfigError("v0_heuristic excludes use_caim and use_pcab")
        if self.use_pcab and self.feb_count < 1:
            raise ConfigError("feb_count must be >= 1 when use_pcab")
        if self.residual_blocks < 0:
            raise ConfigError("residual_blocks must be >= 0")
        if self.attention_scope not in ("row", "full"):
            raise ConfigError(f"unknown attention_scope {self.attention_scope!r}")
        return self

    @classmethod
    def variant(cls, name: str, **overrides) -> "ModelConfig":
        """Ablation table rows: v0 heuristic interaction, v1 PCAB only,
        v2 CAIM only, v3 same structure as full (frequency loss disabled
        at the training level)."""
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
        switches = {
            "full": dict(use_caim=True, use_pcab=True, v0_heuristic=False),
            "v0": dict(use_caim=False, use_pcab=False, v0_heuristic=True),
            "v1": dict(use_caim=False, use_pcab=True, v0_heuristic=False),
            "v2": dict(use_caim=True, use_pcab=False, v0_heuristic=False),
            "v3": dict(use_caim=True, use_pcab=True, v0_heuristic=False),
        }[name]
        switches.update(overrides)
        return cls(**switches).validate()

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            if f.type in ("bool", bool) or isinstance(getattr(cls, f.name, None), bool):
                v = v in (True, "true", "True", "1", 1)
            elif isinstance(getattr(cls, f.name, None), int):
                v = int(v)
            kwargs[f.name] = v
        return cls(**kwargs).validate()


class SdiNet:
    """Shared encoder, cross-view interaction, shared decoder.

    One parameter registry backs both views, so the two branches share
    weights by construction.
    """

    def __init__(self, config: ModelConfig, dtype: str = "f32"):
        config.validate()
        self.config = config
        reg = ParamRegistry(dtype)
        self.registry = reg
        c = config.base_channels
        cf = 4 * c
        self.feat_channels = cf

        # encoder: H -> H -> H/2 -> H/4
        self.enc_in = Conv2d(reg, "encoder.conv_in", 3, c, k=3)
        self.enc_down1 = Conv2d(reg, "encoder.down1", c, 2 * c, k=3, stride=2)
        self.enc_down2 = Conv2d(reg, "encoder.down2", 2 * c, cf, k=3, stride=2)

        if config.use_caim:
            self.caim_ln = LayerNorm2d(reg, "caim.ln", cf)
            self.caim_q = Conv2d(reg, "caim.q", cf, cf, k=1)
            self.caim_k = Conv2d(reg, "caim.k", cf, cf, k=1)
            self.caim_v = Conv2d(reg, "caim.v", cf, cf, k=1)

        if config.use_pcab:
            self.febs = [
                FeatureEnhancingBlock(reg, f"pcab.feb{i}", cf, config.attention_reduction)
                for i in range(config.feb_count)
            ]
            self.gamma_l = reg.add("pcab.gamma_l", (1,), "gate")
            self.gamma_r = reg.add("pcab.gamma_r", (1,), "gate")

        if config.v0_heuristic:
            self.v0_mix1 = Conv2d(reg, "v0.mix1", 2 * cf, cf, k=3, stride=2)
            self.v0_mix2 = Conv2d(reg, "v0.mix2", 2 * cf, cf, k=3, stride=2)
            self.v0_post = Conv2d(reg, "v0.post", cf, cf, k=1)

        # decoder: H/4 -> H/2 -> H
        self.res_blocks = [ResidualBlock(reg, f"decoder.res{i}", cf) for i in range(config.residual_blocks)]
        self.dec_up1 = Conv2d(reg, "decoder.up1", cf, 2 * c, k=3)
        self.dec_fuse1 = Conv2d(reg, "decoder.fuse1", 4 * c, 2 * c, k=1)
        self.dec_up2 = Conv2d(reg, "decoder.up2", 2 * c, c, k=3)
        self.dec_fuse2 = Conv2d(reg, "decoder.fuse2", 2 * c, c, k=1)
        self.dec_head = Conv2d(reg, "decoder.head", c, 3, k=3)

    def init(self, seed: int) -> "SdiNet":
        init_parameters(self.registry, seed)
        return self

    # -- stages ------------------------------------------------------------

    def _check_input(self, x: Tensor):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ConfigError(f"expected [N,3,H,W] input, got {x.shape}")
        _, _, h, w = x.shape
        if h % 4 or w % 4:
            raise ConfigError(f"H and W must be divisible by 4, got {h}x{w}")
        if self.config.v0_heuristic and (h % 8 or w % 8):
            raise ConfigError("the v0 heuristic needs H and W divisible by 8")

    def encode(self, image: Tensor):
        self._check_input(image)
        s0 = relu(self.enc_in(image))
        s1 = relu(self.enc_down1(s0))
        feat = relu(self.enc_down2(s1))
        return feat, (s0, s1)

    def _tokens(self, x: Tensor):
        n, c, h, w = x.shape
        t = transpose(x, (0, 2, 3, 1))
        if self.config.attention_scope == "row":
            return reshape(t, (n * h, w, c))
        return reshape(t, (n, h * w, c))

    def _untokens(self, t: Tensor, like_shape):
        n, c, h, w = like_shape
        if self.config.attention_scope == "row":
            t = reshape(t, (n, h, w, c))
        else:
            t = reshape(t, (n, h, w, c))
        return transpose(t, (0, 3, 1, 2))

    def caim(self, f_l: Tensor, f_r: Tensor):
        """Row-wise scaled dot-product attention between the two views, with
        a residual back onto each view's own features."""
        if f_l.shape != f_r.shape:
            raise ConfigError(f"caim inputs must share a shape: {f_l.shape} vs {f_r.shape}")
        n, c, h, w = f_l.shape
        q_l = self.caim_q(self.caim_ln(f_l))
        k_r = self.caim_k(self.caim_ln(f_r))
        v_l = self.caim_v(f_l)
        v_r = self.caim_v(f_r)
        if self.config.cross_value:
            v_l, v_r = v_r, v_l
        qt = self._tokens(q_l)
        kt = self._tokens(k_r)
        vlt = self._tokens(v_l)
        vrt = self._tokens(v_r)
        logits = scale(matmul(qt, transpose(kt, (0, 2, 1))), 1.0 / math.sqrt(c))
        w_l = softmax_lastdim(logits)
        w_r = softmax_lastdim(transpose(logits, (0, 2, 1)))
        out_rl = self._untokens(matmul(w_l, vlt), f_l.shape)
        out_lr = self._untokens(matmul(w_r, vrt), f_r.shape)
        return add(out_rl, f_l), add(out_lr, f_r)

    def pcab(self, x_l: Tensor, x_r: Tensor, f_l: Tensor, f_r: Tensor):
        """FEB stack on each view (shared weights), then zero-initialized
        gated fusion back onto the original features."""
        r_l, r_r = x_l, x_r
        for feb in self.febs:
            r_l = feb(r_l)
            r_r = feb(r_r)
        sf_l = add(mul(self.gamma_l, r_l), f_l)
        sf_r = add(mul(self.gamma_r, r_r), f_r)
        return sf_l, sf_r

    def v0_interaction(self, f_l: Tensor, f_r: Tensor):
        """Two-round concatenate-and-downsample interaction; a trailing
        upsample + 1x1 conv restores the feature resolution."""
        if f_l.shape != f_r.shape:
            raise ConfigError("v0 inputs must share a shape")
        d = relu(self.v0_mix1(concat_channels([f_l, f_r])))
        u = upsample_bilinear_x2(d)
        s_l = relu(self.v0_mix2(concat_channels([u, f_l])))
        s_r = relu(self.v0_mix2(concat_channels([u, f_r])))
        sf_l = self.v0_post(upsample_bilinear_x2(s_l))
        sf_r = self.v0_post(upsample_bilinear_x2(s_r))
        return sf_l, sf_r

    def csim(self, f_l: Tensor, f_r: Tensor):
        cfg = self.config
        if cfg.v0_heuristic:
            return self.v0_interaction(f_l, f_r)
        if cfg.use_caim:
            x_l, x_r = self.caim(f_l, f_r)
        else:
            x_l, x_r = f_l, f_r
        if cfg.use_pcab:
            return self.pcab(x_l, x_r, f_l, f_r)
        return x_l, x_r

    def decode(self, sf: Tensor, skips):
        s0, s1 = skips
        x = sf
        for rb in self.res_blocks:
            x = rb(x)
        x = self.dec_up1(upsample_bilinear_x2(x))
        if x.shape[2:] != s1.shape[2:]:
            raise ConfigError(f"skip resolution mismatch: {x.shape} vs {s1.shape}")
        x = self.dec_fuse1(concat_channels([x, s1]))
        x = self.dec_up2(upsample_bilinear_x2(x))
        if x.shape[2:] != s0.shape[2:]:
            raise ConfigError(f"skip resolution mismatch: {x.shape} vs {s0.shape}")
        x = self.dec_fuse2(concat_channels([x, s0]))
        return sigmoid(self.dec_head(x))

    def forward(self, i_l: Tensor, i_r: Tensor):
        if i_l.shape != i_r.shape:
            raise ConfigError(f"view shapes differ: {i_l.shape} vs {i_r.shape}")
        f_l, skips_l = self.encode(i_l)
        f_r, skips_r = self.encode(i_r)
        sf_l, sf_r = self.csim(f_l, f_r)
        return self.decode(sf_l, skips_l), self.decode(sf_r, skips_r)

    def __call__(self, i_l: Tensor, i_r: Tensor):
        return self.forward(i_l, i_r)
