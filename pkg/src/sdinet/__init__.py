"""Low-light stereo image enhancement with a dual-branch encoder/decoder
and cross-view attention, on a from-scratch autodiff tensor core."""

from .data import StereoSample, SynthConfig, load_dataset, synth_generate
from .losses import LossBreakdown, error_map, fft_loss, l1_loss, psnr, ssim, total_loss
from .model import ModelConfig, SdiNet
from .tensor import Tensor, backward, grad_check, no_grad
from .trainer import Adam, TrainConfig, evaluate, init_state, lr_schedule, train

__all__ = [
    "Adam",
    "LossBreakdown",
    "ModelConfig",
    "SdiNet",
    "StereoSample",
    "SynthConfig",
    "Tensor",
    "TrainConfig",
    "backward",
    "error_map",
    "evaluate",
    "fft_loss",
    "grad_check",
    "init_state",
    "l1_loss",
    "load_dataset",
    "lr_schedule",
    "no_grad",
    "psnr",
    "ssim",
    "synth_generate",
    "total_loss",
    "train",
]
