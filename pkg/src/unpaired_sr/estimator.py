"""scikit-learn style wrapper around the three-stage training pipeline."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import imaging
from .harness import InMemoryUnpairedDataset
from .training import LossLog, TrainConfig, system_from_checkpoint, train_all


def check_images(X, name: str = "X") -> list[torch.Tensor]:
    """Coerce ``X`` into a list of (1, C, H, W) float images in [0, 1].

    Accepts a (B, C, H, W) or (C, H, W) tensor, a channels-last ndarray
    (H, W, C) or (N, H, W, C), or a list mixing any of those. uint8 data
    is rescaled by 1/255.
    """
    items = list(X) if isinstance(X, (list, tuple)) else [X]
    out = []
    for item in items:
        if isinstance(item, np.ndarray):
            arr = item
            if arr.ndim == 2:
                arr = arr[..., None]
            if arr.ndim in (3, 4) and arr.shape[-1] in (1, 3) and arr.shape[-3] not in (1, 3):
                arr = np.moveaxis(arr, -1, -3)
            scale = 255.0 if arr.dtype == np.uint8 else 1.0
            t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32) / scale)
        elif isinstance(item, torch.Tensor):
            t = item.float() / 255.0 if item.dtype == torch.uint8 else item
        else:
            raise TypeError(f"{name} entries must be arrays or tensors, got {type(item).__name__}")
        t = imaging.check_image(t, name)
        if not torch.isfinite(t).all():
            raise ValueError(f"{name} contains non-finite values")
        out.extend(t[i:i + 1] for i in range(t.shape[0]))
    if not out:
        raise ValueError(f"{name} is empty")
    return out


def _stack(images: list[torch.Tensor], name: str) -> torch.Tensor:
    shapes = {tuple(x.shape) for x in images}
    if len(shapes) != 1:
        raise ValueError(f"{name} images differ in shape: {sorted(shapes)}")
    return torch.cat(images)


class UnpairedSuperResolver(TransformerMixin, BaseEstimator):
    """Learn super-resolution from unpaired HR images and real LR images.

    ``fit(X, y)`` takes HR images ``X`` and real low-resolution images
    ``y``; the two sets need not correspond. ``transform`` maps bicubically
    degraded LR images into the real-LR domain, ``predict`` super-resolves
    LR images and ``score`` is the mean PSNR against HR references.
    """

    def __init__(self, scale=4, variant="E", steps_pretrain_ubcdtn=500, steps_pretrain_sesrn=300,
                 steps_joint=100, batch_size=8, patch_size=32, lr=None, seed=0, toy=True,
                 deterministic=True):
        self.scale = scale
        self.variant = variant
        self.steps_pretrain_ubcdtn = steps_pretrain_ubcdtn
        self.steps_pretrain_sesrn = steps_pretrain_sesrn
        self.steps_joint = steps_joint
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.lr = lr
        self.seed = seed
        self.toy = toy
        self.deterministic = deterministic

    def make_config(self) -> TrainConfig:
        params = dict(
            scale=self.scale, variant=self.variant, steps_pretrain_ubcdtn=self.steps_pretrain_ubcdtn,
            steps_pretrain_sesrn=self.steps_pretrain_sesrn, steps_joint=self.steps_joint,
            batch_size=self.batch_size, patch_size=self.patch_size, seed=self.seed,
            deterministic=self.deterministic,
        )
        # None keeps the preset's learning rate
        if self.lr is not None:
            params["lr"] = self.lr
        return TrainConfig.toy(**params) if self.toy else TrainConfig(**params)

    def fit(self, X, y):
        config = self.make_config()
        hr = check_images(X, "X")
        lr_real = check_images(y, "y")
        data = InMemoryUnpairedDataset(hr, lr_real, config.patch_size, config.scale, config.degradation)
        self.loss_log_ = LossLog()
        self.checkpoint_ = train_all(config, data, loss_log=self.loss_log_)
        self.system_ = system_from_checkpoint(self.checkpoint_)
        self.config_ = config
        return self

    def transform(self, X):
        """Translate degraded LR images into the real-LR domain."""
        check_is_fitted(self, "system_")
        if not self.system_.uses_ubcdtn:
            raise ValueError(f"variant {self.variant} has no domain translator")
        lr = _stack(check_images(X), "X")
        with torch.no_grad():
            return self.system_.cycle.g_a.eval()(lr)

    def predict(self, X):
        check_is_fitted(self, "system_")
        return self.system_.predict(_stack(check_images(X), "X"))

    def score(self, X, y, sample_weight=None):
        """Mean PSNR (dB) of ``predict(X)`` against HR references ``y``."""
        sr = self.predict(X)
        hr = _stack(check_images(y, "y"), "y")
        return float(imaging.psnr(sr, hr))
