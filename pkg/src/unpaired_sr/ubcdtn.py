"""Bi-directional cycle domain transfer between degraded and real-world LR images.

The forward module translates artificially degraded LR images into the
real-world LR domain with ``g_a`` (judged by ``d_b``); the backward module
maps real LR images to synthetic degraded ones with ``g_b`` (judged by
``d_a``). Cycle, identity and cycle-perceptual losses tie the two together.

Any of ``g_b``, ``d_a``, ``d_b``, ``fe_a``, ``fe_b`` may be ``None``; the
loss terms needing a missing network are then left out of the report.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Mapping

import torch
import torch.nn as nn

from .nets import RelativisticLogits, is_frozen, relativistic_logits

LOG_EPS = 1e-12
REDUCTIONS = ("mean", "sum")

TERM_TAGS = {
    "adv_G_A": "L^adv_{G_A}",
    "cyc_G_B": "L^cyc_{G_B}",
    "idt_degraded": "L^idt_{degraded}",
    "percep_FE_A": "L^percep_{FE_A}",
    "adv_G_B": "L^adv_{G_B}",
    "cyc_G_A": "L^cyc_{G_A}",
    "idt_real": "L^idt_{real_LR}",
    "percep_FE_B": "L^percep_{FE_B}",
}
FORWARD_TERMS = ("adv_G_A", "cyc_G_B", "idt_degraded", "percep_FE_A")
BACKWARD_TERMS = ("adv_G_B", "cyc_G_A", "idt_real", "percep_FE_B")


@dataclass
class ForwardWeights:
    w1: float = 1.0
    w2: float = 10.0
    w3: float = 1.0
    w4: float = 1.0

    def __post_init__(self):
        _check_nonnegative(self)

    def as_map(self) -> dict[str, float]:
        return dict(zip(FORWARD_TERMS, (self.w1, self.w2, self.w3, self.w4)))


@dataclass
class BackwardWeights:
    l1: float = 1.0
    l2: float = 10.0
    l3: float = 1.0
    l4: float = 1.0

    def __post_init__(self):
        _check_nonnegative(self)

    def as_map(self) -> dict[str, float]:
        return dict(zip(BACKWARD_TERMS, (self.l1, self.l2, self.l3, self.l4)))


def _check_nonnegative(obj):
    for f in fields(obj):
        if getattr(obj, f.name) < 0:
            raise ValueError(f"{type(obj).__name__}.{f.name} must be >= 0")


@dataclass
class LossReport:
    """Named loss terms, their weights, and the weighted total."""

    terms: dict[str, torch.Tensor]
    weights: dict[str, float]
    equation_tags: dict[str, str]
    total: torch.Tensor

    @classmethod
    def weighted(cls, terms: Mapping, weights: Mapping[str, float],
                 tags: Mapping[str, str] | None = None) -> "LossReport":
        terms = {k: torch.as_tensor(v, dtype=torch.get_default_dtype()) if not isinstance(v, torch.Tensor) else v
                 for k, v in terms.items()}
        missing = set(terms) - set(weights)
        if missing:
            raise KeyError(f"no weight for terms {sorted(missing)}")
        used = {k: float(weights[k]) for k in terms}
        # accumulate in float64 so the total reproduces the term-wise weighted sum to 1e-9
        total = sum((used[k] * t.double() for k, t in terms.items()), torch.zeros((), dtype=torch.float64))
        tags = tags or {}
        return cls(dict(terms), used, {k: tags.get(k, k) for k in terms}, total)

    def values(self) -> dict[str, float]:
        return {k: float(torch.as_tensor(v).detach()) for k, v in self.terms.items()}

    def weighted_sum(self) -> float:
        return sum(self.weights[k] * float(torch.as_tensor(v).detach()) for k, v in self.terms.items())

    def check(self, tol: float = 1e-9) -> None:
        total = float(self.total.detach())
        if abs(self.weighted_sum() - total) > tol * max(1.0, abs(total)):
            raise AssertionError(f"report total {total} != weighted sum {self.weighted_sum()}")

    def merge(self, other: "LossReport") -> "LossReport":
        clash = set(self.terms) & set(other.terms)
        if clash:
            raise KeyError(f"duplicate loss terms {sorted(clash)}")
        return LossReport(
            {**self.terms, **other.terms},
            {**self.weights, **other.weights},
            {**self.equation_tags, **other.equation_tags},
            self.total + other.total,
        )


@dataclass
class UnpairedBatch:
    lr_degraded: torch.Tensor
    lr_real: torch.Tensor
    hr: torch.Tensor | None = None


class CycleBundle(nn.Module):
    def __init__(self, g_a, g_b=None, d_a=None, d_b=None, fe_a=None, fe_b=None):
        super().__init__()
        for name, fe in (("fe_a", fe_a), ("fe_b", fe_b)):
            if fe is not None and not is_frozen(fe):
                raise ValueError(f"{name} must be a frozen network")
        self.g_a, self.g_b = g_a, g_b
        self.d_a, self.d_b = d_a, d_b
        self.fe_a, self.fe_b = fe_a, fe_b

    def generators(self):
        return [m for m in (self.g_a, self.g_b) if m is not None]


# Elementary losses -------------------------------------------------------------------

def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _check_reduction(reduction):
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")


def l1_distance(a, b, reduction: str = "mean"):
    """Mean absolute difference; ``sum`` sums per image and averages over the batch."""
    _check_shapes(a, b)
    _check_reduction(reduction)
    diff = (a - b).abs()
    if reduction == "mean":
        return diff.mean()
    return diff.flatten(1).sum(dim=1).mean()


def cycle_loss(recon, original, reduction: str = "mean"):
    return l1_distance(recon, original, reduction)


def identity_loss(idt, original, reduction: str = "mean"):
    return l1_distance(idt, original, reduction)


def feature_distance(fa, fb, reduction: str = "mean"):
    """Batch mean of per-image Euclidean feature distance.

    ``mean`` divides each image's norm by the square root of its element
    count (a per-image RMS); ``sum`` keeps the raw norm.
    """
    _check_shapes(fa, fb)
    _check_reduction(reduction)
    d = torch.linalg.vector_norm((fa - fb).flatten(1), dim=1)
    if reduction == "mean":
        d = d / (fa[0].numel() ** 0.5)
    return d.mean()


def cycle_perceptual_loss(fe, recon, original, reduction: str = "mean"):
    _check_shapes(recon, original)
    if not is_frozen(fe):
        raise ValueError("feature extractor must be frozen")
    return feature_distance(fe(recon), fe(original), reduction)


def _require_squashed(logits: RelativisticLogits, want: bool):
    if logits.squashed != want:
        kind = "sigmoid-squashed" if want else "raw"
        raise ValueError(f"expected {kind} relativistic logits")


def _safe_log(x):
    return torch.log(torch.clamp(x, min=LOG_EPS))


def ragan_d_loss(logits: RelativisticLogits):
    _require_squashed(logits, True)
    return -_safe_log(logits.d_real).mean() - _safe_log(1 - logits.d_fake).mean()


def ragan_g_loss(logits: RelativisticLogits):
    _require_squashed(logits, True)
    return -_safe_log(1 - logits.d_real).mean() - _safe_log(logits.d_fake).mean()


# Module totals -------------------------------------------------------------------------

def forward_translate(bundle: CycleBundle, lr_degraded):
    """Degraded LR to real-like LR."""
    return bundle.g_a(lr_degraded)


def forward_total(bundle: CycleBundle, weights: ForwardWeights, batch: UnpairedBatch,
                  reduction: str = "mean") -> LossReport:
    """Generator-side loss of the forward module."""
    deg, real = batch.lr_degraded, batch.lr_real
    terms = {}
    fake = bundle.g_a(deg)
    if bundle.d_b is not None:
        logits = relativistic_logits(bundle.d_b(real), bundle.d_b(fake), squash=True)
        terms["adv_G_A"] = ragan_g_loss(logits)
    if bundle.g_b is not None:
        recon = bundle.g_b(fake)
        terms["cyc_G_B"] = cycle_loss(recon, deg, reduction)
        terms["idt_degraded"] = identity_loss(bundle.g_b(deg), deg, reduction)
        if bundle.fe_a is not None:
            terms["percep_FE_A"] = cycle_perceptual_loss(bundle.fe_a, recon, deg, reduction)
    return LossReport.weighted(terms, weights.as_map(), TERM_TAGS)


def backward_total(bundle: CycleBundle, weights: BackwardWeights, batch: UnpairedBatch,
                   reduction: str = "mean") -> LossReport:
    """Generator-side loss of the backward module (mirror image of ``forward_total``)."""
    if bundle.g_b is None:
        raise ValueError("backward module needs g_b")
    deg, real = batch.lr_degraded, batch.lr_real
    terms = {}
    syn = bundle.g_b(real)
    if bundle.d_a is not None:
        logits = relativistic_logits(bundle.d_a(deg), bundle.d_a(syn), squash=True)
        terms["adv_G_B"] = ragan_g_loss(logits)
    recon = bundle.g_a(syn)
    terms["cyc_G_A"] = cycle_loss(recon, real, reduction)
    terms["idt_real"] = identity_loss(bundle.g_a(real), real, reduction)
    if bundle.fe_b is not None:
        terms["percep_FE_B"] = cycle_perceptual_loss(bundle.fe_b, recon, real, reduction)
    return LossReport.weighted(terms, weights.as_map(), TERM_TAGS)


def ubcdtn_total(forward_report: LossReport, backward_report: LossReport | None) -> LossReport:
    if backward_report is None:
        return forward_report
    return forward_report.merge(backward_report)


def forward_d_loss(bundle: CycleBundle, batch: UnpairedBatch, fake=None):
    """``d_b`` loss: real LR vs translated degraded LR (``fake`` is detached)."""
    if fake is None:
        with torch.no_grad():
            fake = bundle.g_a(batch.lr_degraded)
    logits = relativistic_logits(bundle.d_b(batch.lr_real), bundle.d_b(fake.detach()), squash=True)
    return ragan_d_loss(logits)


def backward_d_loss(bundle: CycleBundle, batch: UnpairedBatch, syn=None):
    """``d_a`` loss: degraded LR vs synthesized LR."""
    if syn is None:
        with torch.no_grad():
            syn = bundle.g_b(batch.lr_real)
    logits = relativistic_logits(bundle.d_a(batch.lr_degraded), bundle.d_a(syn.detach()), squash=True)
    return ragan_d_loss(logits)
