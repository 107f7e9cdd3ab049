"""Unpaired datasets, the procedural toy task, evaluation and the ablation runner."""
from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import imaging
from .imaging import DegradationSpec, MetricResult, MetricRow
from .training import (
    CheckpointBundle,
    LossLog,
    System,
    TrainConfig,
    system_from_checkpoint,
    train_all,
)
from .ubcdtn import UnpairedBatch
from .variants import VARIANTS, AblationVariant, active_terms, get_variant

log = logging.getLogger(__name__)

__all__ = [
    "AblationVariant", "VARIANTS", "active_terms", "UnpairedDatasetSpec", "build_dataset",
    "InMemoryUnpairedDataset", "ToyDataset", "evaluate", "run_ablation",
]

_SCALE_SUFFIX = re.compile(r"(x\d+)$", re.IGNORECASE)


def image_id(path) -> str:
    """File stem with any ``x4``-style scale suffix removed (``0001x4.png`` -> ``0001``)."""
    return _SCALE_SUFFIX.sub("", Path(path).stem)


# Datasets -------------------------------------------------------------------------------

class _CropSampler:
    """Draws aligned random crops; every batch is a pure function of (step, batch_size, seed)."""

    def __init__(self, patch_size: int, scale: int, degradation: DegradationSpec):
        if degradation.scale != scale:
            raise ValueError("degradation scale does not match dataset scale")
        self.patch_size = patch_size
        self.scale = scale
        self.degradation = degradation

    # subclasses provide these
    n_hr: int
    n_lr: int

    def hr_image(self, i: int) -> torch.Tensor:
        raise NotImplementedError

    def lr_image(self, i: int) -> torch.Tensor:
        raise NotImplementedError

    @staticmethod
    def _crop(rng, img, size):
        _, _, h, w = img.shape
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        out = img[..., top: top + size, left: left + size]
        if rng.random() < 0.5:
            out = out.flip(-1)
        return out

    def batch(self, step: int, batch_size: int, seed: int = 0) -> UnpairedBatch:
        rng = np.random.default_rng([int(seed), int(step)])
        hr_size = self.patch_size * self.scale
        hr = torch.cat([self._crop(rng, self.hr_image(int(i)), hr_size)
                        for i in rng.integers(0, self.n_hr, batch_size)])
        lr_real = torch.cat([self._crop(rng, self.lr_image(int(i)), self.patch_size)
                             for i in rng.integers(0, self.n_lr, batch_size)])
        noise_seed = int(rng.integers(0, 2**63 - 1))
        lr_degraded = imaging.degrade(hr, self.degradation, rng=noise_seed)
        return UnpairedBatch(lr_degraded=lr_degraded, lr_real=lr_real, hr=hr)


class InMemoryUnpairedDataset(_CropSampler):
    def __init__(self, hr_images: Sequence[torch.Tensor], lr_real_images: Sequence[torch.Tensor],
                 patch_size: int = 32, scale: int = 4, degradation: DegradationSpec | None = None,
                 hr_ids: Sequence[str] | None = None, lr_ids: Sequence[str] | None = None):
        super().__init__(patch_size, scale, degradation or DegradationSpec(scale=scale))
        hr_size = patch_size * scale
        self.hr_images = [imaging.check_image(x) for x in hr_images]
        self.lr_images = [imaging.check_image(x) for x in lr_real_images]
        if not self.hr_images or not self.lr_images:
            raise ValueError("both HR and real-LR image sets must be nonempty")
        for x in self.hr_images:
            if min(x.shape[-2:]) < hr_size:
                raise ValueError(f"HR image {tuple(x.shape[-2:])} smaller than the {hr_size}px HR crop")
        for x in self.lr_images:
            if min(x.shape[-2:]) < patch_size:
                raise ValueError(f"LR image {tuple(x.shape[-2:])} smaller than the {patch_size}px crop")
        self.hr_ids = list(hr_ids) if hr_ids is not None else [f"hr{i}" for i in range(len(self.hr_images))]
        self.lr_ids = list(lr_ids) if lr_ids is not None else [f"lr{i}" for i in range(len(self.lr_images))]
        self.n_hr, self.n_lr = len(self.hr_images), len(self.lr_images)

    def hr_image(self, i):
        return self.hr_images[i]

    def lr_image(self, i):
        return self.lr_images[i]


@dataclass
class UnpairedDatasetSpec:
    """Two image folders split into disjoint source-id sets.

    ``hr_range``/``lr_range`` are 1-based inclusive positions in the sorted
    union of image ids (``(1, 1725)`` and ``(1726, 3450)`` for DF2K). When
    omitted, the first half of the ids feeds HR and the second half feeds
    real LR.
    """

    hr_dir: str
    lr_real_dir: str
    patch_size: int = 32
    scale: int = 4
    hr_range: tuple[int, int] | None = None
    lr_range: tuple[int, int] | None = None

    def split(self) -> tuple[list[Path], list[Path]]:
        hr_files = {image_id(p): p for p in imaging.list_images(self.hr_dir)}
        lr_files = {image_id(p): p for p in imaging.list_images(self.lr_real_dir)}
        if not hr_files or not lr_files:
            raise ValueError("HR and real-LR directories must both contain images")
        ids = sorted(set(hr_files) | set(lr_files))
        if self.hr_range is None and self.lr_range is None:
            half = len(ids) // 2
            hr_ids, lr_ids = ids[:half], ids[half:]
        else:
            if self.hr_range is None or self.lr_range is None:
                raise ValueError("give both hr_range and lr_range or neither")
            (a, b), (c, d) = self.hr_range, self.lr_range
            hr_ids, lr_ids = ids[a - 1: b], ids[c - 1: d]
        if set(hr_ids) & set(lr_ids):
            raise ValueError("HR and real-LR id ranges overlap")
        hr = [hr_files[i] for i in hr_ids if i in hr_files]
        lr = [lr_files[i] for i in lr_ids if i in lr_files]
        if not hr or not lr:
            raise ValueError("split left no HR or no real-LR images")
        return hr, lr


def build_dataset(spec: UnpairedDatasetSpec, degradation: DegradationSpec | None = None) -> InMemoryUnpairedDataset:
    """Load the split image sets; images too small for one crop are skipped with a warning."""
    hr_paths, lr_paths = spec.split()
    hr_size = spec.patch_size * spec.scale

    def load(paths, min_size):
        imgs, ids = [], []
        for p in paths:
            img = imaging.load_image(p)
            if min(img.shape[-2:]) < min_size:
                warnings.warn(f"skipping undersized image {p} ({img.shape[-1]}x{img.shape[-2]})")
                continue
            imgs.append(img)
            ids.append(image_id(p))
        return imgs, ids

    hr, hr_ids = load(hr_paths, hr_size)
    lr, lr_ids = load(lr_paths, spec.patch_size)
    if not hr or not lr:
        raise ValueError("no usable images after skipping undersized ones")
    return InMemoryUnpairedDataset(hr, lr, spec.patch_size, spec.scale,
                                   degradation or DegradationSpec(scale=spec.scale),
                                   hr_ids=hr_ids, lr_ids=lr_ids)


# Procedural toy task -------------------------------------------------------------------------

def toy_hr_image(index: int, size: int = 160, seed: int = 0) -> torch.Tensor:
    """Deterministic high-contrast texture: saturated color field plus hard-edged shapes and stripes."""
    rng = np.random.default_rng([int(seed), 7919, int(index)])
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((3, size, size))
    for c in range(3):
        field = sum(
            rng.uniform(0.15, 0.3) * np.sin(2 * np.pi * (rng.uniform(0.5, 2) * xx * rng.choice([-1, 1])
                                                          + rng.uniform(0.5, 2) * yy) + rng.uniform(0, 2 * np.pi))
            for _ in range(3)
        )
        img[c] = np.where(field > 0, 0.05, 0.95) + 0.1 * np.tanh(4 * field)
    for _ in range(rng.integers(4, 8)):
        color = rng.choice([0.05, 0.95], 3)[:, None, None]
        kind = rng.integers(0, 3)
        cx, cy = rng.uniform(0, 1, 2)
        if kind == 0:
            r = rng.uniform(0.05, 0.2)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
        elif kind == 1:
            hw, hh = rng.uniform(0.05, 0.25, 2)
            mask = (np.abs(xx - cx) < hw) & (np.abs(yy - cy) < hh)
        else:
            period = rng.uniform(0.04, 0.12)
            theta = rng.uniform(0, np.pi)
            proj = xx * np.cos(theta) + yy * np.sin(theta)
            mask = ((proj / period) % 1.0 < 0.5) & ((xx - cx) ** 2 + (yy - cy) ** 2 < 0.06)
        img = np.where(mask[None], color, img)
    return torch.from_numpy(np.clip(img, 0, 1)).float().unsqueeze(0)


def gaussian_kernel(sigma: float, taps: int) -> np.ndarray:
    ax = np.arange(taps) - (taps - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def toy_real_degradation(scale: int = 4) -> DegradationSpec:
    """Hidden "real-world" degradation of the toy task: a wider Gaussian blur than bicubic, noise-free."""
    return DegradationSpec(kernel=gaussian_kernel(0.6 * scale, 4 * scale), scale=scale, noise_sigma=0.0)


class ToyDataset(InMemoryUnpairedDataset):
    """Unpaired toy corpus.

    HR training images and the sources of the real LR images use disjoint
    index ranges; validation pairs come from a third range.
    """

    def __init__(self, n_hr: int = 24, n_lr: int = 24, patch_size: int = 32, scale: int = 4,
                 hr_size: int | None = None, seed: int = 0, degradation: DegradationSpec | None = None,
                 real_degradation: DegradationSpec | None = None):
        hr_size = hr_size or patch_size * scale + 2 * 4 * scale
        self.seed = seed
        self.full_size = hr_size
        self.real_degradation = real_degradation or toy_real_degradation(scale)
        hr = [toy_hr_image(i, hr_size, seed) for i in range(n_hr)]
        lr = [imaging.degrade(toy_hr_image(n_hr + i, hr_size, seed), self.real_degradation,
                              rng=seed * 100_003 + n_hr + i)
              for i in range(n_lr)]
        super().__init__(hr, lr, patch_size, scale, degradation or DegradationSpec(scale=scale),
                         hr_ids=[f"toy{i:04d}" for i in range(n_hr)],
                         lr_ids=[f"toy{n_hr + i:04d}" for i in range(n_lr)])

    def validation(self, n: int = 6, size: int | None = None) -> list[tuple[str, torch.Tensor, torch.Tensor]]:
        """Paired (id, real LR, HR) samples from ids after the training ranges."""
        size = size or self.patch_size * self.scale
        first = self.n_hr + self.n_lr
        out = []
        for i in range(first, first + n):
            hr = toy_hr_image(i, size, self.seed)
            lr = imaging.degrade(hr, self.real_degradation, rng=self.seed * 100_003 + i)
            out.append((f"toy{i:04d}", lr, hr))
        return out


# Evaluation ------------------------------------------------------------------------------------

@dataclass
class EvalResult:
    rows: list[MetricRow]
    summary: MetricResult | None
    outputs: dict[str, torch.Tensor]


def _predictor(model, scale: int | None) -> tuple[Callable, int]:
    if isinstance(model, str):
        if model != "bicubic":
            raise ValueError(f"unknown baseline {model!r}")
        if scale is None:
            raise ValueError("bicubic baseline needs a scale")
        return (lambda lr: imaging.bicubic_upsample(lr, scale).clamp(0, 1)), scale
    if isinstance(model, CheckpointBundle):
        model = system_from_checkpoint(model)
    if isinstance(model, System):
        return model.predict, model.config.scale
    if callable(model):
        return model, scale
    raise TypeError(f"cannot evaluate a {type(model).__name__}")


def load_validation_dir(val_dir) -> list[tuple[str, torch.Tensor, torch.Tensor | None]]:
    """Read ``val_dir/LR`` (required) and ``val_dir/HR`` (optional), matched by image id."""
    val_dir = Path(val_dir)
    lr_dir = next((val_dir / n for n in ("LR", "lr") if (val_dir / n).is_dir()), val_dir)
    hr_dir = next((val_dir / n for n in ("HR", "hr") if (val_dir / n).is_dir()), None)
    hr_files = {image_id(p): p for p in imaging.list_images(hr_dir)} if hr_dir else {}
    samples = []
    for p in imaging.list_images(lr_dir):
        key = image_id(p)
        hr = imaging.load_image(hr_files[key]) if key in hr_files else None
        samples.append((key, imaging.load_image(p), hr))
    if not samples:
        raise ValueError(f"no validation images in {lr_dir}")
    return samples


def evaluate(model, val, metric_space: str = "rgb", crop_border: int = 0, metrics: bool = True,
             out_dir=None, scale: int | None = None) -> EvalResult:
    """Super-resolve every validation LR image and score it against its HR image.

    ``model`` is a checkpoint, a :class:`System`, a callable mapping an LR
    batch to an SR batch, or ``"bicubic"``. ``val`` is a directory (see
    :func:`load_validation_dir`) or a sequence of ``(id, lr, hr)``.
    """
    samples = load_validation_dir(val) if isinstance(val, (str, Path)) else list(val)
    predict, _ = _predictor(model, scale)
    rows, outputs = [], {}
    for key, lr, hr in samples:
        with torch.no_grad():
            sr = predict(lr).clamp(0, 1)
        outputs[key] = sr
        if out_dir is not None:
            imaging.save_image(sr, Path(out_dir) / f"{key}.png")
        if not metrics:
            continue
        if hr is None:
            raise ValueError(f"no ground truth for validation image {key!r}")
        rows.append(MetricRow(
            key,
            float(imaging.psnr(sr, hr, metric_space, crop_border)),
            float(imaging.ssim(sr, hr, metric_space, crop_border)),
        ))
    summary = imaging.summarize(rows) if rows else None
    return EvalResult(rows, summary, outputs)


# Ablation ----------------------------------------------------------------------------------------

def run_ablation(variant, config: TrainConfig, data, val, loss_log: LossLog | None = None,
                 metric_space: str = "rgb", crop_border: int = 0):
    """Train the reduced system for ``variant`` through all three stages and evaluate it.

    Returns ``(MetricResult, final checkpoint, loss log)``. Numbers at toy
    scale are toy numbers.
    """
    variant = get_variant(variant)
    config = config.replace(variant=variant.id)
    loss_log = loss_log if loss_log is not None else LossLog()
    ckpt = train_all(config, data, loss_log=loss_log)
    result = evaluate(ckpt, val, metric_space=metric_space, crop_border=crop_border)
    log.info("variant %s: PSNR %.3f dB, SSIM %.4f (toy scale)", variant.id,
             result.summary.psnr_db, result.summary.ssim)
    return result.summary, ckpt, loss_log
