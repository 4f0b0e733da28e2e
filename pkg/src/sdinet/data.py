"""Image I/O, dataset ingestion, patch cropping, and the procedural
synthetic stereo low-light generator.

Synthetic scenes are layered: a background gradient plus rectangles,
ellipses, and sinusoid-textured patches, each carrying an integer disparity.
The right view evaluates every layer at x + d (a shift left by d pixels),
nearer layers painted last, so ground-truth correspondence is exact. The
low-light pair is clip(alpha * gt**gamma + noise).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

SUBDIRS = ("low_left", "low_right", "gt_left", "gt_right")


class DataError(ValueError):
    pass


@dataclass
class StereoSample:
    id: str
    low_left: np.ndarray
    low_right: np.ndarray
    gt_left: np.ndarray
    gt_right: np.ndarray
    meta: Optional[dict] = None

    def images(self):
        return (self.low_left, self.low_right, self.gt_left, self.gt_right)

    @property
    def height(self):
        return self.gt_left.shape[1]

    @property
    def width(self):
        return self.gt_left.shape[2]


# ---------------------------------------------------------------------------
# image I/O


def read_image(path) -> np.ndarray:
    """8-bit RGB file -> float32 [3,H,W] in [0,1] (v / 255)."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if img.mode != "RGB":
        raise DataError(f"{path}: expected an 8-bit RGB image, got mode {img.mode!r}")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(img: np.ndarray, path):
    """float [3,H,W] in [0,1] -> 8-bit RGB file, round(v*255) half-up."""
    if img.ndim == 2:
        img = np.stack([img] * 3)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"write_image expects [3,H,W], got {img.shape}")
    b = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(b.transpose(1, 2, 0), mode="RGB").save(path)


def write_grayscale(img: np.ndarray, path):
    """float [H,W] in [0,1] -> 8-bit grayscale file."""
    if img.ndim != 2:
        raise DataError(f"write_grayscale expects [H,W], got {img.shape}")
    b = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(b, mode="L").save(path)


# ---------------------------------------------------------------------------
# dataset directory layout


def load_dataset(root_dir) -> list:
    """root/{low_left,low_right,gt_left,gt_right}/<id>.png, sorted by id."""
    root = str(root_dir)
    low_left_dir = os.path.join(root, "low_left")
    if not os.path.isdir(low_left_dir):
        return []
    ids = sorted(os.path.splitext(f)[0] for f in os.listdir(low_left_dir) if f.endswith(".png"))
    samples = []
    for sid in ids:
        images = {}
        for sub in SUBDIRS:
            path = os.path.join(root, sub, sid + ".png")
            if not os.path.isfile(path):
                raise DataError(f"sample {sid!r}: missing {sub}/{sid}.png")
            images[sub] = read_image(path)
        shapes = {img.shape for img in images.values()}
        if len(shapes) != 1:
            raise DataError(f"sample {sid!r}: image sizes disagree: {sorted(shapes)}")
        samples.append(StereoSample(sid, images["low_left"], images["low_right"],
                                    images["gt_left"], images["gt_right"]))
    return samples


def write_sample(sample: StereoSample, root_dir):
    for sub in SUBDIRS:
        os.makedirs(os.path.join(root_dir, sub), exist_ok=True)
        write_image(getattr(sample, sub), os.path.join(root_dir, sub, sample.id + ".png"))


def write_manifest(samples, root_dir):
    lines = []
    for s in samples:
        m = s.meta or {}
        disp = ",".join(str(d) for d in m.get("disparities", []))
        lines.append(
            f"{s.id}\tseed={m.get('seed', '')}\tdisparities={disp}\t"
            f"alpha={m.get('alpha', '')}\tgamma={m.get('gamma', '')}\tsigma={m.get('sigma', '')}"
        )
    with open(os.path.join(root_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class SynthConfig:
    seed: int = 0
    height: int = 64
    width: int = 64
    layer_count: int = 4
    disparity_max: int = 6
    alpha_range: tuple = (0.25, 0.5)
    gamma_range: tuple = (1.5, 2.5)
    sigma_range: tuple = (0.0, 0.015)

    def validate(self):
        if self.height % 4 or self.width % 4:
            raise DataError("height and width must be divisible by 4")
        if not (0 <= self.disparity_max < self.width / 8):
            raise DataError("disparity_max must satisfy 0 <= d < W/8")
        if not (0.0 < self.alpha_range[0] <= self.alpha_range[1] <= 1.0):
            raise DataError("alpha range must lie in (0, 1]")
        if self.gamma_range[0] < 1.0 or self.gamma_range[0] > self.gamma_range[1]:
            raise DataError("gamma range must be >= 1")
        if self.sigma_range[0] < 0.0 or self.sigma_range[0] > self.sigma_range[1]:
            raise DataError("sigma range must be >= 0")
        if self.layer_count < 0:
            raise DataError("layer_count must be >= 0")
        return self


def _layer_pattern(rng, kind, xx, yy, h, w):
    # moderate dynamic range around mid-gray; desk-scale scenes are kept
    # gentle enough that short CI reference runs can overfit them
    if kind == "gradient":
        c0 = rng.uniform(0.38, 0.62, size=3)
        c1 = rng.uniform(0.38, 0.62, size=3)
        t = (0.6 * xx / w + 0.4 * yy / h)
        return c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]
    # sinusoidal texture
    base = rng.uniform(0.42, 0.58, size=3)
    amp = rng.uniform(0.02, 0.06, size=3)
    fx = rng.uniform(0.02, 0.12)
    fy = rng.uniform(0.02, 0.12)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    wave = np.sin(2.0 * np.pi * (fx * xx + fy * yy)[None] + phase[:, None, None])
    return base[:, None, None] + amp[:, None, None] * wave


def _layer_mask(kind, params, xx, yy):
    if kind == "rect":
        x0, x1, y0, y1 = params
        return (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
    cx, cy, rx, ry = params
    return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0


def synth_generate(config: SynthConfig) -> StereoSample:
    config.validate()
    rng = np.random.default_rng(config.seed)
    h, w = config.height, config.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    layers = []
    bg_kind = "gradient" if rng.random() < 0.7 else "texture"
    for i in range(config.layer_count):
        mask_kind = "rect" if rng.random() < 0.5 else "ellipse"
        if mask_kind == "rect":
            x0 = rng.uniform(0.05, 0.6) * w
            y0 = rng.uniform(0.05, 0.6) * h
            params = (x0, x0 + rng.uniform(0.2, 0.4) * w, y0, y0 + rng.uniform(0.2, 0.4) * h)
        else:
            params = (rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h,
                      rng.uniform(0.1, 0.3) * w, rng.uniform(0.1, 0.3) * h)
        pat_kind = "gradient" if rng.random() < 0.5 else "texture"
        layers.append((mask_kind, params, pat_kind))

    # disparities: nearer layers (painted later) shift more
    if config.layer_count and config.disparity_max:
        disparities = sorted(int(d) for d in rng.integers(0, config.disparity_max + 1, size=config.layer_count))
    else:
        disparities = [0] * config.layer_count

    def render_view(is_right):
        # pattern coefficients come from a per-sample RNG shared by both views
        prng = np.random.default_rng(config.seed + 1)
        canvas = _layer_pattern(prng, bg_kind, xx, yy, h, w)  # background has zero disparity
        for (mask_kind, params, pat_kind), d in zip(layers, disparities):
            off = float(d) if is_right else 0.0
            m = _layer_mask(mask_kind, params, xx + off, yy)
            pat = _layer_pattern(prng, pat_kind, xx + off, yy, h, w)
            canvas = np.where(m[None], pat, canvas)
        return np.clip(canvas, 0.0, 1.0)

    gt_left = render_view(False)
    gt_right = render_view(True)

    alpha = float(rng.uniform(*config.alpha_range))
    gamma = float(rng.uniform(*config.gamma_range))
    sigma = float(rng.uniform(*config.sigma_range))

    def degrade(gt):
        dark = np.clip(alpha * gt**gamma, 0.0, 1.0)
        if sigma > 0.0:
            dark = dark + rng.normal(0.0, sigma, size=gt.shape)
        return np.clip(dark, 0.0, 1.0)

    low_left = degrade(gt_left)
    low_right = degrade(gt_right)
    meta = {"seed": config.seed, "disparities": disparities, "alpha": alpha, "gamma": gamma, "sigma": sigma}
    return StereoSample(f"{config.seed:08d}",
                        low_left.astype(np.float32), low_right.astype(np.float32),
                        gt_left.astype(np.float32), gt_right.astype(np.float32), meta=meta)


def synth_dataset(base_config: SynthConfig, count: int, out_dir=None) -> list:
    samples = []
    for i in range(count):
        cfg = SynthConfig(**{**base_config.__dict__, "seed": base_config.seed + i})
        samples.append(synth_generate(cfg))
    if out_dir is not None:
        for s in samples:
            write_sample(s, out_dir)
        write_manifest(samples, out_dir)
    return samples


# ---------------------------------------------------------------------------
# cropping


def random_crop_pair(sample: StereoSample, patch, rng) -> StereoSample:
    """One crop window applied identically to all four images.

    rng may be a seed or a numpy Generator (drawn from twice)."""
    ph, pw = patch
    if ph % 4 or pw % 4:
        raise DataError("patch sides must be divisible by 4")
    h, w = sample.height, sample.width
    if ph > h or pw > w:
        raise DataError(f"patch {ph}x{pw} larger than image {h}x{w}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    y0 = int(rng.integers(0, h - ph + 1))
    x0 = int(rng.integers(0, w - pw + 1))
    crop = lambda img: np.ascontiguousarray(img[:, y0 : y0 + ph, x0 : x0 + pw])
    return StereoSample(sample.id, crop(sample.low_left), crop(sample.low_right),
                        crop(sample.gt_left), crop(sample.gt_right), meta=sample.meta)
