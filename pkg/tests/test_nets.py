import subprocess
import sys

import pytest
import torch
import torch.nn as nn

from unpaired_sr import nets
from unpaired_sr.nets import (
    CheckpointError,
    FeatureExtractorSpec,
    SRGeneratorSpec,
    build_conv_discriminator,
    build_feature_extractor,
    build_joint_discriminator,
    build_semantic_encoder,
    build_sr_generator,
    build_unet_generator,
    relativistic_logits,
)


# Translators


def test_unet_shape_range_and_determinism():
    g = build_unet_generator(3, 8, 3).eval()
    x = torch.rand(1, 3, 32, 32)
    y = g(x).detach()
    assert y.shape == x.shape
    assert float(y.min()) >= 0 and float(y.max()) <= 1
    assert torch.equal(g(x), y)


def test_unet_rejects_indivisible_size():
    with pytest.raises(ValueError):
        build_unet_generator(3, 4, 3)(torch.rand(1, 3, 20, 20))


def test_unet_every_parameter_is_live():
    torch.manual_seed(0)
    g = build_unet_generator(3, 2, 2).double().eval()
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    base = g(x)
    for name, p in g.named_parameters():
        with torch.no_grad():
            idx = (0,) * p.ndim
            old = p[idx].item()
            p[idx] = old + 0.5
            changed = not torch.equal(g(x), base)
            p[idx] = old
        assert changed, name


# Critics


def test_conv_discriminator_scores_and_zero_head():
    d = build_conv_discriminator(3, 4)
    assert d(torch.rand(8, 3, 32, 32)).shape == (8,)
    nn.init.zeros_(d.head.weight)
    nn.init.zeros_(d.head.bias)
    assert torch.equal(d(torch.rand(4, 3, 32, 32)), torch.zeros(4))
    convs = [m for m in d.features.modules() if isinstance(m, nn.Conv2d)]
    assert len(convs) == 9
    assert [c.stride[0] for c in convs] == list(nets.DISC_STRIDES)
    with pytest.raises(ValueError):
        d(torch.rand(2, 3, 16, 16))


def test_joint_discriminator_semantics_path_is_live():
    torch.manual_seed(0)
    d = build_joint_discriminator(16, (3, 32, 32), 4, sem_hidden=8, fc_hidden=8).eval()
    img, sem = torch.rand(2, 3, 32, 32), torch.randn(2, 16)
    assert d(img, sem).shape == (2,)
    assert not torch.equal(d(img, sem), d(img, sem + 0.5))
    nn.init.zeros_(d.fcm[-1].weight)
    nn.init.zeros_(d.fcm[-1].bias)
    assert torch.equal(d(img, sem), torch.zeros(2))


def test_joint_discriminator_shape_checks():
    d = build_joint_discriminator(16, (3, 32, 32), 4)
    with pytest.raises(ValueError):
        d(torch.rand(2, 3, 16, 16), torch.randn(2, 16))
    with pytest.raises(ValueError):
        d(torch.rand(2, 3, 32, 32), torch.randn(2, 8))


# Frozen extractors


def test_feature_extractor_frozen_and_deterministic():
    fe = build_feature_extractor(FeatureExtractorSpec(width=4))
    assert nets.is_frozen(fe)
    assert all(not p.requires_grad for p in fe.parameters())
    fe.train()
    assert not fe.training
    x = torch.rand(1, 3, 16, 16)
    assert torch.equal(fe(x), fe(x))
    with pytest.raises(ValueError):
        nets.trainable_parameters(fe)


def test_feature_extractor_layer_address():
    fe = build_feature_extractor(FeatureExtractorSpec(q=3, r=3, width=4))
    convs = [m for m in fe.body if isinstance(m, nn.Conv2d)]
    assert len(convs) == 2 + 2 + 3
    assert fe(torch.rand(1, 3, 16, 16)).shape == (1, 16, 4, 4)
    with pytest.raises(ValueError):
        FeatureExtractorSpec(q=3, r=1)
    with pytest.raises(ValueError):
        FeatureExtractorSpec(mode="pretrained", width=8)


def test_pre_activation_tap_can_be_negative():
    fe = build_feature_extractor(FeatureExtractorSpec(q=2, r=2, width=4, pre_activation=True))
    assert float(fe(torch.rand(1, 3, 16, 16)).min()) < 0


_SEED_SCRIPT = """
import hashlib, sys, torch
from unpaired_sr.nets import FeatureExtractorSpec, build_feature_extractor, build_semantic_encoder
fe = build_feature_extractor(FeatureExtractorSpec(width=4, seed=int(sys.argv[1])))
se = build_semantic_encoder(True, 8, 4, 4, 3, seed=int(sys.argv[1]))
h = hashlib.sha256()
for m in (fe, se):
    for k, v in sorted(m.state_dict().items()):
        h.update(k.encode()); h.update(v.numpy().tobytes())
print(h.hexdigest())
"""


def _fingerprint(seed):
    out = subprocess.run([sys.executable, "-c", _SEED_SCRIPT, str(seed)], capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_fixed_random_weights_reproduce_across_processes():
    a, b, c = _fingerprint(7), _fingerprint(7), _fingerprint(8)
    assert a == b
    assert a != c


def test_semantic_encoders_share_length_and_separate_inputs():
    se_hr = build_semantic_encoder(True, 16, 4, 4, 3, seed=1)
    se_lr = build_semantic_encoder(False, 16, 4, 4, 3, seed=1)
    hr, lr = torch.rand(6, 3, 128, 128), torch.rand(6, 3, 32, 32)
    assert se_hr(hr).shape == se_lr(lr).shape == (6, 16)
    assert torch.equal(se_lr(lr), se_lr(lr))
    v = se_lr(lr)
    dists = torch.cdist(v, v) + torch.eye(6)
    assert float(dists.min()) > 0


# SR generator


def test_sr_generator_shape():
    g = build_sr_generator(SRGeneratorSpec(n_dnb=1, base_channels=8, growth_channels=4)).eval()
    x = torch.rand(1, 3, 16, 16)
    assert g(x).shape == (1, 3, 64, 64)
    assert torch.equal(g(x), g(x))


def test_sr_generator_zeroed_trunk_equals_shallow_path():
    torch.manual_seed(0)
    g = build_sr_generator(SRGeneratorSpec(n_dnb=2, base_channels=8, growth_channels=4)).eval()
    with torch.no_grad():
        for p in g.mdbm.parameters():
            p.zero_()
    x = torch.rand(2, 3, 12, 12)
    assert torch.allclose(g(x), g.shallow_path(x), atol=1e-6)


def test_sr_spec_validation():
    with pytest.raises(ValueError):
        SRGeneratorSpec(n_ridb_per_dnb=2)
    with pytest.raises(ValueError):
        SRGeneratorSpec(upscale=3)


def test_dnb_residual_structure():
    torch.manual_seed(0)
    dnb = nets.DNB(4, 2, 0.2)
    x = torch.randn(1, 4, 8, 8)
    assert torch.allclose(dnb(x), x + 0.2 * dnb.ridbs(x))
    assert len(dnb.ridbs) == 3


# Relativistic logits


def test_relativistic_logits_examples():
    out = relativistic_logits(torch.zeros(4), torch.zeros(4), squash=True)
    assert torch.equal(out.d_real, torch.full((4,), 0.5))
    assert torch.equal(out.d_fake, torch.full((4,), 0.5))
    out = relativistic_logits(torch.tensor([2.0]), torch.tensor([0.0]), squash=True)
    assert abs(out.d_real.item() - 0.8808) < 1e-4
    assert abs(out.d_fake.item() - 0.1192) < 1e-4
    out = relativistic_logits(torch.tensor([1.0]), torch.tensor([0.0]), squash=False)
    assert out.d_real.item() == 1 and out.d_fake.item() == -1
    with pytest.raises(ValueError):
        relativistic_logits(torch.tensor([]), torch.zeros(1), squash=False)


# Parameter bookkeeping


def test_golden_parameter_counts():
    def conv(i, o, k=3, bias=True):
        return i * o * k * k + (o if bias else 0)

    w = [8, 16, 32, 64]
    unet = conv(3, 8) + conv(8, 8) + conv(8, 3, 1)
    for i in range(3):
        unet += conv(w[i], w[i + 1]) + conv(w[i + 1], w[i + 1])
        unet += w[i + 1] * w[i] * 4 + w[i]  # transposed conv
        unet += conv(2 * w[i], w[i])
    assert nets.count_parameters(build_unet_generator(3, 8, 3)) == unet

    widths = [8 * m for m in nets.DISC_WIDTH_MULT]
    disc, c_in = 0, 3
    for i, c in enumerate(widths):
        disc += conv(c_in, c, bias=(i == 0)) + (2 * c if i else 0)
        c_in = c
    disc += widths[-1] + 1
    assert nets.count_parameters(build_conv_discriminator(3, 8)) == disc


def test_param_manifest_lists_shapes():
    m = nn.Linear(3, 2)
    assert nets.param_manifest(m) == [("weight", (2, 3)), ("bias", (2,))]


# Tensor files


def test_tensor_file_roundtrip_byte_identical(tmp_path):
    g = build_unet_generator(3, 4, 2)
    d = build_conv_discriminator(3, 2)
    state = {**{f"g.{k}": v for k, v in g.state_dict().items()},
             **{f"d.{k}": v for k, v in d.state_dict().items()}}
    nets.save_tensors(tmp_path / "a.bin", state, {"note": "x"})
    loaded, meta = nets.load_tensors(tmp_path / "a.bin")
    assert meta == {"note": "x"}
    nets.save_tensors(tmp_path / "b.bin", loaded, meta)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    for k, v in state.items():
        assert loaded[k].dtype == v.dtype
        assert torch.equal(loaded[k], v)


def test_tensor_file_rejects_truncation_and_corruption(tmp_path):
    blob = nets.encode_tensors({"w": torch.randn(10)})
    with pytest.raises(CheckpointError, match="checksum"):
        nets.decode_tensors(blob[:-5])
    flipped = bytearray(blob)
    flipped[30] ^= 1
    with pytest.raises(CheckpointError):
        nets.decode_tensors(bytes(flipped))
    with pytest.raises(CheckpointError):
        nets.decode_tensors(b"junk")


def test_module_save_load(tmp_path):
    a, b = nn.Linear(4, 3), nn.Linear(4, 3)
    nets.save_module(a, tmp_path / "m.bin")
    nets.load_module(b, tmp_path / "m.bin")
    assert torch.equal(a.weight, b.weight)
    assert torch.equal(a.bias, b.bias)
