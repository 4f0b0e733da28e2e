"""Registered finite-difference gradient checks, shared by the CLI and the
test suite. All checks run in f64; f32 finite differences are noise-dominated.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .layers import ChannelAttention, FeatureEnhancingBlock, ParamRegistry, PixelAttention, init_parameters
from .losses import fft_loss, l1_loss, total_loss
from .model import ModelConfig, SdiNet
from .tensor import GradCheckReport, Tensor, backward, grad_check, no_grad


def _rand(shape, seed, lo=-1.0, hi=1.0):
    return Tensor(np.random.default_rng(seed).uniform(lo, hi, size=shape).astype(np.float64))


def check_params(build_loss, params, eps=1e-6, max_coords=20, seed=0, name="params"):
    """Finite-difference check of d(loss)/d(param) for every listed tensor,
    sampling up to max_coords coordinates per tensor."""
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss = build_loss()
    backward(loss)
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for p in params}
    worst = None
    max_err = 0.0
    n_checked = 0
    for p in params:
        base = p.data.copy()
        coords = T._select_coords(p.data.shape, max_coords, rng)
        for idx in coords:
            p.data[idx] = base[idx] + eps
            with no_grad():
                fp = build_loss().item()
            p.data[idx] = base[idx] - eps
            with no_grad():
                fm = build_loss().item()
            p.data[idx] = base[idx]
            if not (math.isfinite(fp) and math.isfinite(fm)):
                return GradCheckReport(name, math.inf, idx, n_checked, failure=f"non-finite loss at {idx}")
            gn = (fp - fm) / (2.0 * eps)
            ga = analytic[id(p)][idx]
            rel = T._fd_rel_err(ga, gn, fp, fm, eps)
            n_checked += 1
            if rel > max_err:
                max_err, worst = rel, idx
        p.grad = None
    return GradCheckReport(name, max_err, worst, n_checked)


# ---------------------------------------------------------------------------
# individual checks


def _check_gelu():
    return grad_check(T.gelu, _rand((4, 7), 1, -3, 3), name="gelu")


def _check_softmax():
    return grad_check(T.softmax_lastdim, _rand((3, 5), 2, -2, 2), eps=1e-6, name="softmax")


def _check_matmul():
    b = _rand((5, 3), 31)
    return grad_check(lambda a: T.matmul(a, b), _rand((4, 5), 3), name="matmul")


def _check_conv2d():
    reg = ParamRegistry("f64")
    w = reg.add("w", (3, 2, 3, 3), "conv_weight")
    bias = reg.add("b", (3,), "bias")
    init_parameters(reg, 4)
    bias.data[...] = np.random.default_rng(5).uniform(-0.5, 0.5, size=3)
    x = _rand((1, 2, 5, 5), 6)

    def f():
        return T.sum_all(T.mul(T.conv2d(Tensor(x.data, requires_grad=False), w, bias), _proj((1, 3, 5, 5), 7)))

    rep_in = grad_check(lambda a: T.conv2d(a, w, bias), x, name="conv2d")
    rep_p = check_params(f, [w, bias], name="conv2d.params")
    return _merge("conv2d", rep_in, rep_p)


def _check_layer_norm():
    reg = ParamRegistry("f64")
    gamma = reg.add("g", (4,), "ln_gamma")
    beta = reg.add("b", (4,), "ln_beta")
    init_parameters(reg, 8)
    gamma.data[...] = np.random.default_rng(9).uniform(0.5, 1.5, size=4)
    beta.data[...] = np.random.default_rng(10).uniform(-0.5, 0.5, size=4)
    return grad_check(lambda a: T.layer_norm(a, gamma, beta), _rand((1, 4, 2, 2), 11), name="layer_norm")


def _attention_module(cls, seed):
    reg = ParamRegistry("f64")
    mod = cls(reg, "m", 4)
    init_parameters(reg, seed)
    return mod


def _check_channel_attention():
    mod = _attention_module(ChannelAttention, 12)
    return grad_check(mod, _rand((1, 4, 3, 3), 13), name="channel_attention")


def _check_pixel_attention():
    mod = _attention_module(PixelAttention, 14)
    return grad_check(mod, _rand((1, 4, 3, 3), 15), name="pixel_attention")


def _check_feb():
    reg = ParamRegistry("f64")
    feb = FeatureEnhancingBlock(reg, "feb", 4)
    init_parameters(reg, 16)
    return grad_check(feb, _rand((1, 4, 4, 4), 17), name="feb")


def _check_caim():
    model = SdiNet(ModelConfig(base_channels=1, feb_count=1, residual_blocks=1), dtype="f64").init(18)
    f_r = _rand((1, 4, 4, 4), 19)

    def f(a):
        out_l, out_r = model.caim(a, f_r)
        return T.add(out_l, out_r)

    return grad_check(f, _rand((1, 4, 4, 4), 20), name="caim_row_attention")


def _check_fft_loss():
    target = _rand((1, 2, 4, 4), 21, 0.0, 1.0)
    return grad_check(lambda a: fft_loss(a, target), _rand((1, 2, 4, 4), 22, 0.0, 1.0), name="fft_loss")


def _check_l1_loss():
    target = _rand((1, 2, 4, 4), 23, 0.0, 1.0)
    return grad_check(lambda a: l1_loss(a, target), _rand((1, 2, 4, 4), 24, 0.2, 0.8), name="l1_loss")


def _check_full_model(max_coords=20):
    cfg = ModelConfig(base_channels=4, feb_count=1, residual_blocks=1)
    model = SdiNet(cfg, dtype="f64").init(25)
    rng = np.random.default_rng(26)
    il = Tensor(rng.uniform(0.05, 0.4, size=(1, 3, 16, 16)))
    ir = Tensor(rng.uniform(0.05, 0.4, size=(1, 3, 16, 16)))
    gl = Tensor(rng.uniform(0.3, 0.9, size=(1, 3, 16, 16)))
    gr = Tensor(rng.uniform(0.3, 0.9, size=(1, 3, 16, 16)))

    def build_loss():
        el, er = model.forward(il, ir)
        return total_loss(el, er, gl, gr).total

    # small step: a parameter perturbation shifts every downstream relu/abs
    # pre-activation, so larger steps cross kinks; the cancellation guard in
    # _fd_rel_err covers the shrinking noise floor
    params = [model.registry[n] for n in model.registry.names()]
    return check_params(build_loss, params, eps=1e-7, max_coords=max_coords, name="full_model")


_proj_cache = {}


def _proj(shape, seed):
    key = (shape, seed)
    if key not in _proj_cache:
        _proj_cache[key] = Tensor(np.random.default_rng(seed).standard_normal(shape))
    return _proj_cache[key]


def _merge(name, *reports):
    for r in reports:
        if r.failure is not None:
            return GradCheckReport(name, math.inf, r.worst_index, r.n_checked, failure=r.failure)
    worst = max(reports, key=lambda r: r.max_rel_err)
    return GradCheckReport(name, worst.max_rel_err, worst.worst_index,
                           sum(r.n_checked for r in reports))


CHECKS = {
    "gelu": (_check_gelu, 1e-4),
    "softmax": (_check_softmax, 1e-4),
    "matmul": (_check_matmul, 1e-4),
    "conv2d": (_check_conv2d, 1e-4),
    "layer_norm": (_check_layer_norm, 1e-4),
    "channel_attention": (_check_channel_attention, 1e-4),
    "pixel_attention": (_check_pixel_attention, 1e-4),
    "feb": (_check_feb, 1e-4),
    "caim_row_attention": (_check_caim, 1e-4),
    "fft_loss": (_check_fft_loss, 1e-4),
    "l1_loss": (_check_l1_loss, 1e-4),
    "full_model": (_check_full_model, 1e-3),
}


def run_suite(names=None, tol=None):
    """Run the registered checks. Returns [(name, report, tol, ok)];
    a given tol overrides every check's default."""
    results = []
    for name, (fn, default_tol) in CHECKS.items():
        if names is not None and name not in names:
            continue
        report = fn()
        t = default_tol if tol is None else tol
        results.append((name, report, t, report.ok(t)))
    return results
