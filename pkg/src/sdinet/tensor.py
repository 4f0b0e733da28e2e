"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays in row-major order (f32 for training, f64 for
gradient checks). Every differentiable op records a backward closure on a
global tape in execution order; ``backward(loss)`` replays the tape in
reverse, accumulating gradients additively across fan-out, and clears it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

DTYPES = {"f32": np.float32, "f64": np.float64}
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DimensionError(ValueError):
    """Shapes are incompatible for the requested operation."""


class UsageError(RuntimeError):
    """The autodiff machinery was used outside its contract."""


class GradTape:
    """Execution-ordered list of (output tensor, backward closure) nodes."""

    def __init__(self):
        self.nodes = []
        self.enabled = True

    def clear(self):
        self.nodes.clear()


_tape = GradTape()


def tape() -> GradTape:
    return _tape


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._prev = _tape.enabled
        _tape.enabled = False
        return self

    def __exit__(self, *exc):
        _tape.enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.asarray(arr, dtype=DTYPES.get(dtype, dtype))
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return "f32" if self.data.dtype == np.float32 else "f64"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(DTYPES[dtype]), requires_grad=self.requires_grad)

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _from_op(data: np.ndarray, inputs, fn) -> Tensor:
    rq = _tape.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rq)
    if rq:
        _tape.nodes.append((out, fn))
    return out


def _check_broadcast(a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def _backward(g):
        _accum(a, g)
        _accum(b, g)

    return _from_op(a.data + b.data, (a, b), _backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def _backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _from_op(a.data - b.data, (a, b), _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def _backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _from_op(a.data * b.data, (a, b), _backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def _backward(g):
        _accum(a, g * c)

    return _from_op(a.data * c, (a,), _backward)


def abs_(a: Tensor) -> Tensor:
    def _backward(g):
        _accum(a, g * np.sign(a.data))

    return _from_op(np.abs(a.data), (a,), _backward)


def clamp01(a: Tensor) -> Tensor:
    mask = (a.data > 0.0) & (a.data < 1.0)

    def _backward(g):
        _accum(a, g * mask)

    return _from_op(np.clip(a.data, 0.0, 1.0), (a,), _backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def _backward(g):
        _accum(a, g * mask)

    return _from_op(a.data * mask, (a,), _backward)


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))

    def _backward(g):
        _accum(a, g * y * (1.0 - y))

    return _from_op(y, (a,), _backward)


def gelu(a: Tensor) -> Tensor:
    # exact-erf formulation: 0.5 * x * (1 + erf(x / sqrt(2)))
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    y = x * phi

    def _backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accum(a, g * (phi + x * pdf))

    return _from_op(y, (a,), _backward)


# ---------------------------------------------------------------------------
# matmul / softmax


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires at least 2-D operands")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dims differ: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} vs {b.shape}")

    def _backward(g):
        _accum(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        _accum(b, np.matmul(a.data.swapaxes(-1, -2), g))

    return _from_op(np.matmul(a.data, b.data), (a, b), _backward)


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    if x.shape[-1] < 1:
        raise DimensionError("softmax over empty last dimension")
    if np.isnan(x).any():
        raise ValueError("softmax input contains NaN")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, y * (g - dot))

    return _from_op(y, (a,), _backward)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp, kh, kw, stride, ho, wo):
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(dcols, xp_shape, kh, kw, stride, ho, wo):
    n, c, hp, wp = xp_shape
    dxp = np.zeros(xp_shape, dtype=dcols.dtype)
    d = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d[:, :, i, j]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1, padding: int = None) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and OIHW weight")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d channel mismatch: input {c}, weight expects {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError("conv2d kernel sizes must be odd")
    if stride not in (1, 2):
        raise DimensionError("conv2d stride must be 1 or 2")
    p = (kh - 1) // 2 if padding is None else int(padding)
    ho = (h + 2 * p - kh) // stride + 1
    wo = (w + 2 * p - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError("conv2d output would be empty")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(co, -1)
    out = np.matmul(wmat, cols).reshape(n, co, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    xp_shape = xp.shape

    def _backward(g):
        gmat = g.reshape(n, co, ho * wo)
        if weight.requires_grad:
            dw = np.einsum("nol,nkl->ok", gmat, cols).reshape(weight.shape)
            _accum(weight, dw)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gmat)
            dxp = _col2im(dcols, xp_shape, kh, kw, stride, ho, wo)
            _accum(x, dxp[:, :, p : p + h, p : p + w] if p else dxp)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _from_op(out, inputs, _backward)


# ---------------------------------------------------------------------------
# layer norm (over the channel axis at each spatial location)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 4:
        raise DimensionError("layer_norm expects NCHW input")
    c = x.shape[1]
    if c < 1:
        raise DimensionError("layer_norm over zero channels")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gc = gamma.data.reshape(1, c, 1, 1)
    out = gc * xhat + beta.data.reshape(1, c, 1, 1)

    def _backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gc
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _from_op(out, (x, gamma, beta), _backward)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_all(a: Tensor) -> Tensor:
    def _backward(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _from_op(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), _backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def _backward(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _from_op(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), _backward)


def global_avg_pool(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise DimensionError("global_avg_pool expects NCHW input")
    _, _, h, w = a.shape

    def _backward(g):
        _accum(a, np.broadcast_to(g / (h * w), a.data.shape))

    return _from_op(a.data.mean(axis=(2, 3), keepdims=True), (a,), _backward)


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of nothing")
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.shape[0] != ref.shape[0] or t.shape[2:] != ref.shape[2:]:
            raise DimensionError(f"concat_channels shape mismatch: {ref.shape} vs {t.shape}")
    sizes = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accum(t, g[:, lo:hi])

    return _from_op(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), _backward)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape

    def _backward(g):
        _accum(a, g.reshape(orig))

    return _from_op(a.data.reshape(shape), (a,), _backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def _backward(g):
        _accum(a, g.transpose(inv))

    return _from_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), _backward)


_INTERP_CACHE = {}


def _interp_matrix_x2(n: int, dtype) -> np.ndarray:
    # rows sum to 1, so constants are preserved exactly
    key = (n, np.dtype(dtype).str)
    m = _INTERP_CACHE.get(key)
    if m is not None:
        return m
    m = np.zeros((2 * n, n), dtype=dtype)
    for i in range(2 * n):
        c = (i + 0.5) / 2.0 - 0.5
        if c <= 0.0:
            m[i, 0] = 1.0
        elif c >= n - 1:
            m[i, n - 1] = 1.0
        else:
            j = int(math.floor(c))
            t = c - j
            m[i, j] = 1.0 - t
            m[i, j + 1] = t
    _INTERP_CACHE[key] = m
    return m


def upsample_bilinear_x2(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise DimensionError("upsample expects NCHW input")
    _, _, h, w = a.shape
    mh = _interp_matrix_x2(h, a.data.dtype)
    mw = _interp_matrix_x2(w, a.data.dtype)
    t = np.einsum("ah,nchw->ncaw", mh, a.data)
    out = np.einsum("bw,ncaw->ncab", mw, t)

    def _backward(g):
        t2 = np.einsum("bw,ncab->ncaw", mw, g)
        _accum(a, np.einsum("ah,ncaw->nchw", mh, t2))

    return _from_op(out, (a,), _backward)


# ---------------------------------------------------------------------------
# 2-D DFT per channel


def fft2_per_channel(x: Tensor):
    """Unnormalized forward 2-D DFT over the spatial axes of an NCHW tensor.

    Returns (real, imag). Backward goes through the adjoint transform.
    """
    if x.ndim != 4:
        raise DimensionError("fft2_per_channel expects NCHW input")
    f = np.fft.fft2(x.data, axes=(-2, -1))
    re_data = np.ascontiguousarray(f.real).astype(x.data.dtype, copy=False)
    im_data = np.ascontiguousarray(f.imag).astype(x.data.dtype, copy=False)

    def _backward_re(g):
        _accum(x, np.fft.fft2(g, axes=(-2, -1)).real.astype(x.data.dtype, copy=False))

    def _backward_im(g):
        _accum(x, np.fft.fft2(g, axes=(-2, -1)).imag.astype(x.data.dtype, copy=False))

    re = _from_op(re_data, (x,), _backward_re)
    im = _from_op(im_data, (x,), _backward_im)
    return re, im


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor, retain_tape: bool = False):
    if loss.data.size != 1:
        raise UsageError("backward requires a scalar loss")
    if not loss.requires_grad:
        raise UsageError("loss was not recorded on the tape (nothing requires grad)")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(_tape.nodes):
        if out.grad is not None:
            fn(out.grad)
    if not retain_tape:
        _tape.clear()


class GradCheckReport:
    """Result of a finite-difference gradient comparison."""

    def __init__(self, name, max_rel_err, worst_index, n_checked, failure=None):
        self.name = name
        self.max_rel_err = max_rel_err
        self.worst_index = worst_index
        self.n_checked = n_checked
        self.failure = failure

    def ok(self, tol) -> bool:
        return self.failure is None and self.max_rel_err < tol

    def __repr__(self):
        if self.failure:
            return f"GradCheckReport({self.name}: FAILED {self.failure})"
        return (
            f"GradCheckReport({self.name}: max_rel_err={self.max_rel_err:.3e} "
            f"at {self.worst_index} over {self.n_checked} coords)"
        )


def _fd_rel_err(ga: float, gn: float, fp: float, fm: float, eps: float) -> float:
    """Relative error |ga - gn| / (|ga| + |gn| + 1e-12), except that
    differences below the central-difference cancellation floor
    (machine eps times the function scale, divided by the step) are
    indistinguishable from zero and count as exact."""
    floor = 8.0 * np.finfo(np.float64).eps * max(abs(fp), abs(fm), 1e-3) / eps
    diff = abs(ga - gn)
    if diff <= floor:
        return 0.0
    return diff / (abs(ga) + abs(gn) + 1e-12)


def _select_coords(shape, max_coords, rng):
    total = int(np.prod(shape)) if shape else 1
    if max_coords is None or total <= max_coords:
        return [np.unravel_index(i, shape) if shape else () for i in range(total)]
    flat = rng.choice(total, size=max_coords, replace=False)
    return [np.unravel_index(int(i), shape) for i in sorted(flat)]


def grad_check(f, x: Tensor, eps: float = 1e-6, tol: float = 1e-4, max_coords=None, seed: int = 0, name: str = "f"):
    """Compare reverse-mode gradients of sum(f(x) * R) against central differences.

    R is a fixed random projection so the whole Jacobian is exercised.
    f must be deterministic; x should be f64.
    """
    rng = np.random.default_rng(seed)
    xt = Tensor(x.data.astype(np.float64), requires_grad=True)
    y = f(xt)
    r = Tensor(rng.standard_normal(y.shape).astype(np.float64))
    loss = sum_all(mul(y, r))
    backward(loss)
    ga = xt.grad.copy()

    def projected(arr):
        with no_grad():
            out = f(Tensor(arr))
        return float((out.data * r.data).sum())

    worst = None
    max_err = 0.0
    coords = _select_coords(xt.data.shape, max_coords, rng)
    base = xt.data.copy()
    for idx in coords:
        pert = base.copy()
        pert[idx] = base[idx] + eps
        fp = projected(pert)
        pert[idx] = base[idx] - eps
        fm = projected(pert)
        gn = (fp - fm) / (2.0 * eps)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            return GradCheckReport(name, math.inf, idx, len(coords), failure=f"non-finite value at {idx}")
        rel = _fd_rel_err(ga[idx], gn, fp, fm, eps)
        if rel > max_err:
            max_err, worst = rel, idx
    if not np.isfinite(ga).all():
        return GradCheckReport(name, math.inf, None, len(coords), failure="non-finite analytic gradient")
    return GradCheckReport(name, max_err, worst, len(coords))
