"""Image tensors, PNG I/O, the blur-downsample-noise degradation and PSNR/SSIM.

Images travel through the package as ``torch.Tensor`` batches laid out
``(batch, channels, height, width)`` with values in ``[0, 1]``.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

PSNR_INF = math.inf
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_Y_WEIGHTS = (65.481 / 255.0, 128.553 / 255.0, 24.966 / 255.0)
_Y_OFFSET = 16.0 / 255.0


def check_image(x, name: str = "image") -> torch.Tensor:
    """Validate and return ``x`` as a float image batch of shape (B, C, H, W)."""
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x)
    if not isinstance(x, torch.Tensor):
        raise TypeError(f"{name} must be a tensor or ndarray, got {type(x).__name__}")
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if x.ndim != 4:
        raise ValueError(f"{name} must have shape (B, C, H, W), got {tuple(x.shape)}")
    b, c, h, w = x.shape
    if b < 1 or h < 1 or w < 1:
        raise ValueError(f"{name} has an empty dimension: {tuple(x.shape)}")
    if c not in (1, 3):
        raise ValueError(f"{name} must have 1 or 3 channels, got {c}")
    if not torch.is_floating_point(x):
        x = x.float()
    return x


def _check_pair(a, b):
    a = check_image(a, "a")
    b = check_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


# I/O -------------------------------------------------------------------------

def load_image(path) -> torch.Tensor:
    """Read an 8-bit raster as a (1, 3, H, W) float32 tensor in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            if im.mode not in ("RGB", "RGBA", "L", "P", "LA"):
                raise ValueError(f"unsupported image mode {im.mode!r} in {path}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ValueError(f"unsupported image format: {path}") from exc
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"zero-size image: {path}")
    t = torch.from_numpy(arr.copy()).permute(2, 0, 1).float().div_(255.0)
    return t.unsqueeze(0)


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """Quantize a single image (C, H, W) or (1, C, H, W) to an HxWxC uint8 array."""
    x = x.detach()
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ValueError("to_uint8 expects a single image")
        x = x[0]
    arr = (x.clamp(0, 1) * 255.0).round().to(torch.uint8).cpu().numpy()
    arr = np.transpose(arr, (1, 2, 0))
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    return arr


def save_image(x: torch.Tensor, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(x)).save(path, format="PNG")


IMAGE_SUFFIXES = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# Degradation -------------------------------------------------------------------

def cubic(x, a: float = -0.5):
    """Keys cubic convolution kernel; ``a=-0.5`` is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def bicubic_kernel(scale: int) -> np.ndarray:
    """Anti-aliased 2-D bicubic downsampling kernel for integer ``scale``.

    The cubic is stretched by ``scale`` and sampled at the HR pixel offsets
    around the LR pixel center, so the tap count is ``4*scale`` (even scale)
    or ``4*scale + 1`` (odd scale). Normalized to unit sum.
    """
    if scale < 1:
        raise ValueError("scale must be >= 1")
    taps = 4 * scale + (scale % 2)
    offsets = np.arange(taps) - (taps - 1) / 2.0
    k1 = cubic(offsets / scale)
    k1 = k1 / k1.sum()
    return np.outer(k1, k1)


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of ``y = (x * k) downsampled by s + n``."""

    kernel: np.ndarray = field(default=None)
    scale: int = 4
    noise_sigma: float = 0.0

    def __post_init__(self):
        if int(self.scale) != self.scale or self.scale < 1:
            raise ValueError(f"scale must be a positive integer, got {self.scale}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        kernel = bicubic_kernel(self.scale) if self.kernel is None else self.kernel
        kernel = np.array(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.size == 0:
            raise ValueError("kernel must be a non-empty 2-D array")
        if not np.all(np.isfinite(kernel)):
            raise ValueError("kernel has non-finite entries")
        if abs(kernel.sum() - 1.0) > 1e-6:
            raise ValueError(f"kernel must sum to 1, sums to {kernel.sum():.8f}")
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "scale", int(self.scale))

    @classmethod
    def identity(cls) -> "DegradationSpec":
        return cls(kernel=np.ones((1, 1)), scale=1, noise_sigma=0.0)


def symmetric_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into [0, n) by half-sample mirroring."""
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def _tap_window(n_in: int, scale: int, taps: int) -> tuple[np.ndarray, int]:
    start = (scale - taps) // 2
    lo = start
    hi = (n_in // scale - 1) * scale + start + taps - 1
    return symmetric_index(np.arange(lo, hi + 1), n_in), -lo


def _make_generator(rng) -> torch.Generator | None:
    if rng is None or isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(int(rng))
    return g


def degrade(hr, spec: DegradationSpec | None = None, rng=None) -> torch.Tensor:
    """Apply blur with ``spec.kernel``, stride-``scale`` sampling and optional noise.

    Borders are handled by symmetric extension. ``rng`` (seed or
    ``torch.Generator``) drives the Gaussian noise; noisy output is clipped
    to [0, 1].
    """
    spec = spec or DegradationSpec()
    hr = check_image(hr, "hr")
    b, c, h, w = hr.shape
    s = spec.scale
    if h % s or w % s:
        raise ValueError(f"image size {h}x{w} is not divisible by scale {s}")
    kh, kw = spec.kernel.shape
    rows, _ = _tap_window(h, s, kh)
    cols, _ = _tap_window(w, s, kw)
    x = hr.to(torch.float64)
    x = x.index_select(2, torch.from_numpy(rows)).index_select(3, torch.from_numpy(cols))
    # conv2d is correlation; flip for a true convolution
    weight = torch.from_numpy(spec.kernel[::-1, ::-1].copy())
    weight = weight.to(torch.float64).expand(c, 1, kh, kw)
    y = F.conv2d(x, weight, stride=s, groups=c)
    y = y.to(hr.dtype)
    if spec.noise_sigma > 0:
        gen = _make_generator(rng)
        noise = torch.randn(y.shape, generator=gen, dtype=y.dtype)
        y = (y + spec.noise_sigma * noise).clamp_(0.0, 1.0)
    return y


def resize_matrix(n_in: int, n_out: int, a: float = -0.5) -> np.ndarray:
    """Dense (n_out, n_in) bicubic interpolation matrix for upscaling."""
    scale = n_out / n_in
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    base = np.floor(centers).astype(int)
    m = np.zeros((n_out, n_in))
    for t in range(-1, 3):
        pos = base + t
        wts = cubic(centers - pos, a)
        np.add.at(m, (np.arange(n_out), symmetric_index(pos, n_in)), wts)
    return m / m.sum(axis=1, keepdims=True)


def bicubic_upsample(lr, scale: int) -> torch.Tensor:
    """Plain bicubic (a=-0.5) upscaling by an integer factor; not clipped."""
    lr = check_image(lr, "lr")
    _, _, h, w = lr.shape
    mh = torch.from_numpy(resize_matrix(h, h * scale)).to(lr.dtype)
    mw = torch.from_numpy(resize_matrix(w, w * scale)).to(lr.dtype)
    return torch.einsum("ph,bchw,qw->bcpq", mh, lr, mw)


# Metrics --------------------------------------------------------------------------

def rgb_to_y(x: torch.Tensor) -> torch.Tensor:
    """ITU-R BT.601 luma of a [0, 1] RGB batch, in [16/255, 235/255]."""
    if x.shape[1] == 1:
        return x
    wr, wg, wb = _Y_WEIGHTS
    y = wr * x[:, 0:1] + wg * x[:, 1:2] + wb * x[:, 2:3] + _Y_OFFSET
    return y


def _prepare(a, b, space: str, crop_border: int):
    if space not in ("rgb", "y"):
        raise ValueError(f"metric space must be 'rgb' or 'y', got {space!r}")
    a, b = _check_pair(a, b)
    a = a.detach().to(torch.float64)
    b = b.detach().to(torch.float64)
    if space == "y":
        a, b = rgb_to_y(a), rgb_to_y(b)
    if crop_border:
        cb = int(crop_border)
        if 2 * cb >= min(a.shape[-2:]):
            raise ValueError("crop_border removes the whole image")
        a = a[..., cb:-cb, cb:-cb]
        b = b[..., cb:-cb, cb:-cb]
    return a, b


def psnr_per_image(a, b, space: str = "rgb", crop_border: int = 0) -> np.ndarray:
    """PSNR in dB per batch element, peak value 1.0; ``inf`` where MSE is 0."""
    a, b = _prepare(a, b, space, crop_border)
    mse = ((a - b) ** 2).flatten(1).mean(dim=1).numpy()
    out = np.full(mse.shape, PSNR_INF)
    nz = mse > 0
    out[nz] = 10.0 * np.log10(1.0 / mse[nz])
    return out


def finite_mean(values: Iterable[float]) -> float:
    """Mean over finite entries; ``inf`` if every entry is infinite."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("no values to average")
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return PSNR_INF
    return float(finite.mean())


def psnr(a, b, space: str = "rgb", crop_border: int = 0) -> float:
    return finite_mean(psnr_per_image(a, b, space, crop_border))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(ax**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_per_image(a, b, space: str = "rgb", crop_border: int = 0) -> np.ndarray:
    """Mean SSIM per batch element over valid 11x11 Gaussian windows, channel-averaged."""
    a, b = _prepare(a, b, space, crop_border)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c = a.shape[1]
    win = gaussian_window().expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(z):
        return F.conv2d(z, win, groups=c)

    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return (num / den).flatten(1).mean(dim=1).numpy()


def ssim(a, b, space: str = "rgb", crop_border: int = 0) -> float:
    return float(np.mean(ssim_per_image(a, b, space, crop_border)))


@dataclass
class MetricResult:
    psnr_db: float
    ssim: float
    n_images: int

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if not -1.0 - 1e-9 <= self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"ssim out of range: {self.ssim}")


@dataclass
class MetricRow:
    image_id: str
    psnr_db: float
    ssim: float


def summarize(rows: Sequence[MetricRow]) -> MetricResult:
    if not rows:
        raise ValueError("no metric rows")
    return MetricResult(
        psnr_db=finite_mean(r.psnr_db for r in rows),
        ssim=float(np.mean([r.ssim for r in rows])),
        n_images=len(rows),
    )


def write_metrics_csv(rows: Sequence[MetricRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "psnr_db", "ssim"])
        for r in rows:
            writer.writerow([r.image_id, repr(float(r.psnr_db)), repr(float(r.ssim))])


def read_metrics_csv(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        return [
            MetricRow(row["image_id"], float(row["psnr_db"]), float(row["ssim"]))
            for row in csv.DictReader(fh)
        ]


def degrade_folder(src, dst, spec: DegradationSpec, seed: int = 0) -> list[Path]:
    """Degrade every image in ``src`` into PNGs under ``dst``. Returns written paths."""
    out = []
    os.makedirs(dst, exist_ok=True)
    for i, path in enumerate(list_images(src)):
        hr = load_image(path)
        _, _, h, w = hr.shape
        s = spec.scale
        hr = hr[..., : h - h % s, : w - w % s]
        lr = degrade(hr, spec, rng=seed * 1_000_003 + i)
        target = Path(dst) / (path.stem + ".png")
        save_image(lr, target)
        out.append(target)
    return out
