"""Semantic-encoder guided super-resolution: generator, joint critic and its losses."""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn as nn

from .nets import RelativisticLogits, is_frozen, relativistic_logits
from .ubcdtn import LossReport, _check_reduction, _check_shapes, _require_squashed

SR_TAGS = {
    "content": "L_content",
    "adv_G_SR": "L^RaLS_{G_SR}",
    "pixel": "L_pixel",
}
SR_TERMS = ("content", "adv_G_SR", "pixel")


@dataclass
class SRLossWeights:
    lambda_con: float = 1.0
    lambda_adv: float = 1e-3
    lambda_pixel: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def as_map(self) -> dict[str, float]:
        return dict(zip(SR_TERMS, (self.lambda_con, self.lambda_adv, self.lambda_pixel)))


class SRBundle(nn.Module):
    def __init__(self, g_sr, se_hr, se_lr, d_sr, phi):
        super().__init__()
        for name, m in (("se_hr", se_hr), ("se_lr", se_lr), ("phi", phi)):
            if not is_frozen(m):
                raise ValueError(f"{name} must be a frozen network")
        self.g_sr, self.se_hr, self.se_lr, self.d_sr, self.phi = g_sr, se_hr, se_lr, d_sr, phi


@dataclass
class DiscriminationTuple:
    image: torch.Tensor
    semantics: torch.Tensor
    provenance: str


def super_resolve(bundle: SRBundle, lr):
    """Super-resolve ``lr`` and clip into [0, 1]."""
    return bundle.g_sr(lr).clamp(0.0, 1.0)


def make_tuples(bundle: SRBundle, hr, sr, lr_real_like):
    """Real tuple ``(hr, se_hr(hr))`` and fake tuple ``(sr, se_lr(lr_real_like))``."""
    _check_shapes(hr, sr)
    real = DiscriminationTuple(hr, bundle.se_hr(hr), "real")
    fake = DiscriminationTuple(sr, bundle.se_lr(lr_real_like), "fake")
    if real.semantics.shape != fake.semantics.shape:
        raise ValueError(
            f"semantics length mismatch: {tuple(real.semantics.shape)} vs {tuple(fake.semantics.shape)}"
        )
    return real, fake


def score(d_sr, t: DiscriminationTuple):
    return d_sr(t.image, t.semantics)


def rals_d_loss(logits: RelativisticLogits):
    _require_squashed(logits, False)
    return ((logits.d_real - 1) ** 2).mean() + ((logits.d_fake + 1) ** 2).mean()


def rals_g_loss(logits: RelativisticLogits):
    _require_squashed(logits, False)
    return ((logits.d_fake - 1) ** 2).mean() + ((logits.d_real + 1) ** 2).mean()


def content_loss(phi, hr, sr, reduction: str = "mean"):
    """Squared feature distance at the content extractor's layer.

    ``mean`` averages over all elements; ``sum`` sums.
    """
    _check_shapes(hr, sr)
    _check_reduction(reduction)
    if not is_frozen(phi):
        raise ValueError("content extractor must be frozen")
    sq = (phi(hr) - phi(sr)) ** 2
    return sq.mean() if reduction == "mean" else sq.sum()


def pixel_loss(sr, hr, reduction: str = "mean", root: bool = False):
    """Pixel-wise L2 loss.

    Default is the mean squared error. ``root=True`` uses per-image
    Euclidean norms, made resolution independent under ``mean``.
    ``sum`` averages per-image squared (or, with ``root``, plain) norms
    over the batch.
    """
    _check_shapes(sr, hr)
    _check_reduction(reduction)
    diff = (sr - hr).flatten(1)
    if root:
        d = torch.linalg.vector_norm(diff, dim=1)
        if reduction == "mean":
            d = d / diff.shape[1] ** 0.5
        return d.mean()
    if reduction == "mean":
        return (diff**2).mean()
    return (diff**2).sum(dim=1).mean()


def sesrn_total(weights: SRLossWeights, content, adv_g, pixel) -> LossReport:
    terms = {"content": content, "adv_G_SR": adv_g, "pixel": pixel}
    for k, v in terms.items():
        if not torch.isfinite(torch.as_tensor(v)).all():
            raise ValueError(f"non-finite SR loss term {k}")
    return LossReport.weighted(terms, weights.as_map(), SR_TAGS)


def sr_critic_logits(bundle: SRBundle, hr, sr, lr_real_like) -> RelativisticLogits:
    real, fake = make_tuples(bundle, hr, sr, lr_real_like)
    return relativistic_logits(score(bundle.d_sr, real), score(bundle.d_sr, fake), squash=False)


def sesrn_d_loss(bundle: SRBundle, hr, sr, lr_real_like):
    return rals_d_loss(sr_critic_logits(bundle, hr, sr.detach(), lr_real_like.detach()))


def sesrn_losses(bundle: SRBundle, weights: SRLossWeights, lr_real_like, hr,
                 reduction: str = "mean", pixel_root: bool = False) -> tuple[LossReport, torch.Tensor]:
    """Generator-side report for one batch; also returns the (unclipped) SR output."""
    sr = bundle.g_sr(lr_real_like)
    adv = rals_g_loss(sr_critic_logits(bundle, hr, sr, lr_real_like))
    report = sesrn_total(
        weights,
        content_loss(bundle.phi, hr, sr, reduction),
        adv,
        pixel_loss(sr, hr, reduction, root=pixel_root),
    )
    return report, sr
