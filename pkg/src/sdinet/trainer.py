"""Adam optimization, the training and evaluation loops, and binary
checkpoint persistence.

Loss log format, one record per step:
    step<TAB>epoch<TAB>lr<TAB>l1<TAB>fre<TAB>total
Checkpoints are written at epoch boundaries; save -> load -> resume
reproduces a straight run bitwise (single-threaded).
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import StereoSample, random_crop_pair, write_grayscale
from .layers import ParamRegistry
from .losses import error_map, psnr, ssim, total_loss
from .model import ModelConfig, SdiNet
from .tensor import Tensor, UsageError, backward, no_grad

MAGIC = b"SDIN"
FORMAT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.float32, 1: np.float64}


class CheckpointError(RuntimeError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam over a parameter registry; grads are cleared
    after every step."""

    def __init__(self, registry: ParamRegistry, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.registry = registry
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in registry.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in registry.items()}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.registry.items():
            if p.grad is None:
                raise UsageError(f"parameter {name!r} has no gradient; run backward first")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def lr_schedule(epoch: int, lr0: float = 1e-4, half_every: int = 100) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * 0.5 ** (epoch // half_every)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 700
    batch_size: int = 2
    lr0: float = 1e-4
    lr_half_every: int = 100
    lam: float = 0.1
    seed: int = 0
    patch: Optional[tuple] = None
    max_steps: Optional[int] = None
    shuffle: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr0 <= 0 or self.lr_half_every < 1:
            raise ValueError("invalid training configuration")
        self.model.validate()
        return self


@dataclass
class TrainState:
    model: SdiNet
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0


def init_state(cfg: TrainConfig) -> TrainState:
    cfg.validate()
    model = SdiNet(cfg.model).init(cfg.seed)
    return TrainState(model, Adam(model.registry), np.random.default_rng(cfg.seed + 1))


def _batch_tensors(batch):
    ll = Tensor(np.stack([s.low_left for s in batch]))
    lr = Tensor(np.stack([s.low_right for s in batch]))
    gl = Tensor(np.stack([s.gt_left for s in batch]))
    gr = Tensor(np.stack([s.gt_right for s in batch]))
    return ll, lr, gl, gr


def _check_finite(breakdown, step):
    for name in ("l1_left", "l1_right", "fre_left", "fre_right"):
        if not math.isfinite(getattr(breakdown, name).item()):
            raise NonFiniteLossError(f"non-finite value in {name} at step {step}")


def train(samples, cfg: TrainConfig, state: Optional[TrainState] = None, log_file=None):
    """Run epochs [state.epoch, cfg.epochs); returns (state, log_lines)."""
    cfg.validate()
    if not samples:
        raise ValueError("training dataset is empty")
    if state is None:
        state = init_state(cfg)
    log_lines = []
    n = len(samples)
    for epoch in range(state.epoch, cfg.epochs):
        if cfg.max_steps is not None and state.step >= cfg.max_steps:
            break
        lr = lr_schedule(epoch, cfg.lr0, cfg.lr_half_every)
        order = state.rng.permutation(n) if cfg.shuffle else np.arange(n)
        for b0 in range(0, n, cfg.batch_size):
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                break
            batch = [samples[i] for i in order[b0 : b0 + cfg.batch_size]]
            if cfg.patch is not None:
                batch = [random_crop_pair(s, cfg.patch, state.rng) for s in batch]
            ll, lrr, gl, gr = _batch_tensors(batch)
            el, er = state.model.forward(ll, lrr)
            breakdown = total_loss(el, er, gl, gr, lam=cfg.lam)
            _check_finite(breakdown, state.step)
            backward(breakdown.total)
            state.optimizer.step(lr)
            state.step += 1
            vals = breakdown.as_floats()
            l1 = vals["l1_left"] + vals["l1_right"]
            fre = vals["fre_left"] + vals["fre_right"]
            line = f"{state.step}\t{epoch}\t{lr!r}\t{l1!r}\t{fre!r}\t{vals['total']!r}"
            log_lines.append(line)
            if log_file is not None:
                log_file.write(line + "\n")
        state.epoch = epoch + 1
    return state, log_lines


def evaluate(samples, model: SdiNet, error_map_dir=None) -> dict:
    """Mean per-view PSNR/SSIM over a dataset; optionally writes error maps."""
    stats = {"left": {"psnr": [], "ssim": []}, "right": {"psnr": [], "ssim": []}}
    with no_grad():
        for s in samples:
            el, er = model.forward(Tensor(s.low_left[None]), Tensor(s.low_right[None]))
            for view, pred, gt in (("left", el.data[0], s.gt_left), ("right", er.data[0], s.gt_right)):
                stats[view]["psnr"].append(psnr(pred, gt))
                stats[view]["ssim"].append(ssim(pred, gt))
                if error_map_dir is not None:
                    os.makedirs(error_map_dir, exist_ok=True)
                    write_grayscale(error_map(pred, gt),
                                    os.path.join(error_map_dir, f"{s.id}_{view}.png"))
    return {
        view: {metric: float(np.mean(vals)) for metric, vals in d.items()}
        for view, d in stats.items()
    } | {"count": len(samples)}


# ---------------------------------------------------------------------------
# checkpoint persistence


def _write_tensor(f, name: str, arr: np.ndarray):
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<Q", d))
    f.write(struct.pack("<B", _DTYPE_TAGS[arr.dtype]))
    f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("corrupt checkpoint: truncated file")
    return b


def _read_tensor(f):
    (nlen,) = struct.unpack("<I", _read_exact(f, 4))
    name = _read_exact(f, nlen).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    shape = tuple(struct.unpack("<Q", _read_exact(f, 8))[0] for _ in range(rank))
    (tag,) = struct.unpack("<B", _read_exact(f, 1))
    if tag not in _TAG_DTYPES:
        raise CheckpointError(f"corrupt checkpoint: unknown dtype tag {tag}")
    dt = np.dtype(_TAG_DTYPES[tag]).newbyteorder("<")
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(f, count * dt.itemsize)
    arr = np.frombuffer(raw, dtype=dt).reshape(shape).astype(_TAG_DTYPES[tag])
    return name, arr


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(json.loads(self.meta["model_config"]))


def save_checkpoint(path, state: TrainState):
    model = state.model
    opt = state.optimizer
    meta = {
        "model_config": json.dumps(model.config.to_dict()),
        "dtype": model.registry.dtype,
        "epoch": str(state.epoch),
        "step": str(state.step),
        "adam_t": str(opt.t),
        "adam_beta1": repr(opt.beta1),
        "adam_beta2": repr(opt.beta2),
        "adam_eps": repr(opt.eps),
        "rng_state": json.dumps(state.rng.bit_generator.state),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta_text = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_text)))
    buf.write(meta_text)
    names = model.registry.names()
    total = len(names) * 3
    buf.write(struct.pack("<I", total))
    for name in names:
        _write_tensor(buf, name, model.registry[name].data)
        _write_tensor(buf, "adam.m:" + name, opt.m[name])
        _write_tensor(buf, "adam.v:" + name, opt.v[name])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic bytes {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        (mlen,) = struct.unpack("<I", _read_exact(f, 4))
        meta = {}
        for line in _read_exact(f, mlen).decode("utf-8").splitlines():
            k, _, v = line.partition("=")
            meta[k] = v
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(count):
            name, arr = _read_tensor(f)
            tensors[name] = arr
    return Checkpoint(meta, tensors)


def restore_state(ckpt: Checkpoint) -> TrainState:
    model = SdiNet(ckpt.model_config, dtype=ckpt.meta.get("dtype", "f32"))
    opt = Adam(model.registry,
               beta1=float(ckpt.meta["adam_beta1"]),
               beta2=float(ckpt.meta["adam_beta2"]),
               eps=float(ckpt.meta["adam_eps"]))
    opt.t = int(ckpt.meta["adam_t"])
    for name, p in model.registry.items():
        for key, dest in ((name, p.data), ("adam.m:" + name, opt.m[name]), ("adam.v:" + name, opt.v[name])):
            if key not in ckpt.tensors:
                raise CheckpointError(f"checkpoint is missing tensor {key!r}")
            arr = ckpt.tensors[key]
            if arr.shape != dest.shape:
                raise CheckpointError(
                    f"tensor {key!r} shape {arr.shape} disagrees with config shape {dest.shape}")
            dest[...] = arr
    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(ckpt.meta["rng_state"])
    return TrainState(model, opt, rng, epoch=int(ckpt.meta["epoch"]), step=int(ckpt.meta["step"]))


def load_model(path) -> SdiNet:
    return restore_state(load_checkpoint(path)).model
