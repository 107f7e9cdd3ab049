import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from unpaired_sr.nets import (
    FeatureExtractorSpec,
    SRGeneratorSpec,
    build_feature_extractor,
    build_joint_discriminator,
    build_semantic_encoder,
    build_sr_generator,
    relativistic_logits,
)
from unpaired_sr.sesrn import (
    SR_TERMS,
    SRBundle,
    SRLossWeights,
    content_loss,
    make_tuples,
    pixel_loss,
    rals_d_loss,
    rals_g_loss,
    sesrn_d_loss,
    sesrn_losses,
    sesrn_total,
    super_resolve,
)


def _rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def _phi():
    return build_feature_extractor(FeatureExtractorSpec(q=2, r=2, width=4, seed=1, pre_activation=True)).double()


def _bundle():
    torch.manual_seed(0)
    g = build_sr_generator(SRGeneratorSpec(n_dnb=1, base_channels=8, growth_channels=4))
    se_hr = build_semantic_encoder(True, 8, 4, 4, 2, seed=5)
    se_lr = build_semantic_encoder(False, 8, 4, 4, 2, seed=5)
    d = build_joint_discriminator(8, (3, 32, 32), 2, sem_hidden=8, fc_hidden=8)
    phi = build_feature_extractor(FeatureExtractorSpec(q=1, r=1, width=2))
    return SRBundle(g, se_hr, se_lr, d, phi)


# RaLS


def test_rals_unit_margin():
    logits = relativistic_logits(torch.tensor([1.0]), torch.tensor([0.0]), squash=False)
    assert rals_d_loss(logits).item() == 0
    assert rals_g_loss(logits).item() == 8


def test_rals_symmetric_point():
    logits = relativistic_logits(torch.full((5,), 0.3), torch.full((5,), 0.3), squash=False)
    assert rals_d_loss(logits).item() == 2
    assert rals_g_loss(logits).item() == 2


def test_rals_matches_loop_oracle():
    rng = np.random.default_rng(3)
    cr, cf = rng.normal(size=7), rng.normal(size=4)
    dr = [v - cf.mean() for v in cr]
    df = [v - cr.mean() for v in cf]
    d_ref = sum((v - 1) ** 2 for v in dr) / 7 + sum((v + 1) ** 2 for v in df) / 4
    g_ref = sum((v - 1) ** 2 for v in df) / 4 + sum((v + 1) ** 2 for v in dr) / 7
    logits = relativistic_logits(torch.from_numpy(cr), torch.from_numpy(cf), squash=False)
    assert abs(rals_d_loss(logits).item() - d_ref) < 1e-7
    assert abs(rals_g_loss(logits).item() - g_ref) < 1e-7


def test_rals_rejects_squashed():
    with pytest.raises(ValueError):
        rals_g_loss(relativistic_logits(torch.zeros(2), torch.zeros(2), squash=True))


# Content and pixel losses


def test_content_loss_zero_and_monotone():
    phi = _phi()
    hr = _rand(2, 3, 16, 16, seed=1)
    noise = torch.randn(hr.shape, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    assert content_loss(phi, hr, hr).item() == 0
    small = content_loss(phi, hr, hr + 0.01 * noise).item()
    large = content_loss(phi, hr, hr + 0.1 * noise).item()
    assert 0 < small < large


def test_content_loss_matches_feature_loop_oracle():
    phi = _phi()
    a, b = _rand(2, 3, 16, 16, seed=3), _rand(2, 3, 16, 16, seed=4)
    fa, fb = phi(a).numpy().ravel(), phi(b).numpy().ravel()
    acc = 0.0
    for v, w in zip(fa, fb):
        acc += (float(v) - float(w)) ** 2
    assert abs(content_loss(phi, a, b, "sum").item() - acc) < 1e-6
    assert abs(content_loss(phi, a, b).item() - acc / fa.size) < 1e-6


def test_pixel_loss_examples():
    hr = _rand(2, 3, 8, 8, seed=5)
    assert pixel_loss(hr, hr).item() == 0
    assert pixel_loss(hr + 0.5, hr).item() == pytest.approx(0.25, abs=1e-12)
    assert pixel_loss(hr + 0.5, hr, root=True).item() == pytest.approx(0.5, abs=1e-12)


def test_pixel_loss_matches_loop_oracle():
    a, b = _rand(2, 3, 5, 6, seed=6), _rand(2, 3, 5, 6, seed=7)
    flat_a, flat_b = a.numpy().ravel(), b.numpy().ravel()
    acc = 0.0
    for v, w in zip(flat_a, flat_b):
        acc += (float(v) - float(w)) ** 2
    assert abs(pixel_loss(a, b).item() - acc / flat_a.size) < 1e-7
    assert abs(pixel_loss(a, b, "sum").item() - acc / 2) < 1e-7


# Totals


def test_sesrn_total_unit_terms():
    assert float(sesrn_total(SRLossWeights(), 1.0, 1.0, 1.0).total) == pytest.approx(2.001, abs=1e-12)
    assert float(sesrn_total(SRLossWeights(), 0.0, 0.0, 0.0).total) == 0
    rep = sesrn_total(SRLossWeights(0.7, 0.2, 3), torch.tensor(0.123), torch.tensor(4.56), torch.tensor(0.789))
    rep.check(1e-9)
    with pytest.raises(ValueError):
        sesrn_total(SRLossWeights(), math.nan, 1.0, 1.0)
    with pytest.raises(ValueError):
        SRLossWeights(lambda_adv=-1)


# Tuples and the full SR loss


def test_tuples_have_matching_semantics_and_hr_images():
    b = _bundle()
    lr = torch.rand(2, 3, 8, 8)
    hr = torch.rand(2, 3, 32, 32)
    sr = super_resolve(b, lr).detach()
    assert sr.shape == hr.shape
    assert float(sr.min()) >= 0 and float(sr.max()) <= 1
    real, fake = make_tuples(b, hr, sr, lr)
    assert (real.provenance, fake.provenance) == ("real", "fake")
    assert real.semantics.shape == fake.semantics.shape == (2, 8)
    assert fake.image is sr
    with pytest.raises(ValueError):
        make_tuples(b, hr, lr, lr)


def test_sesrn_losses_report():
    b = _bundle()
    lr, hr = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 32, 32)
    rep, sr = sesrn_losses(b, SRLossWeights(), lr, hr)
    assert set(rep.terms) == set(SR_TERMS)
    rep.check(1e-9)
    assert sr.shape == hr.shape
    d = sesrn_d_loss(b, hr, sr, lr)
    assert torch.isfinite(d)


def test_bundle_requires_frozen_encoders():
    b = _bundle()
    with pytest.raises(ValueError):
        SRBundle(b.g_sr, nn.Conv2d(3, 3, 1), b.se_lr, b.d_sr, b.phi)
