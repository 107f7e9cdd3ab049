"""Network constructors, the relativistic-logit primitive and the tensor file format.

Every network is an ``nn.Module`` carrying a ``frozen`` flag. Frozen
networks (feature extractors, semantic encoders) never require gradients
and stay in eval mode.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .imaging import resize_matrix

LRELU_SLOPE = 0.2
VGG16_BLOCKS = (2, 2, 3, 3, 3)
VGG19_BLOCKS = (2, 2, 4, 4, 4)
VGG_WIDTHS = (1, 2, 4, 8, 8)
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class FrozenModule(nn.Module):
    """Module whose parameters never train; ``train()`` is a no-op."""

    frozen = True

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        return super().train(False)

    def train(self, mode: bool = True):
        return super().train(False)


def is_frozen(module: nn.Module) -> bool:
    return bool(getattr(module, "frozen", False))


def trainable_parameters(*modules: nn.Module) -> list[nn.Parameter]:
    """Parameters of the given modules; raises if any module is frozen."""
    params = []
    for m in modules:
        if m is None:
            continue
        if is_frozen(m):
            raise ValueError(f"{type(m).__name__} is frozen and cannot be optimized")
        params.extend(m.parameters())
    return params


def param_manifest(module: nn.Module) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, tuple(p.shape)) for name, p in module.named_parameters()]


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _lrelu():
    return nn.LeakyReLU(LRELU_SLOPE)


# U-Net translator -----------------------------------------------------------------

class UNetGenerator(nn.Module):
    """Resolution-preserving U-Net with stride-2 downsampling and transposed-conv upsampling."""

    frozen = False

    def __init__(self, in_channels: int = 3, base_channels: int = 32, depth: int = 3):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.depth = depth
        widths = [base_channels * 2**i for i in range(depth + 1)]
        self.inc = nn.Sequential(
            nn.Conv2d(in_channels, widths[0], 3, 1, 1), _lrelu(),
            nn.Conv2d(widths[0], widths[0], 3, 1, 1), _lrelu(),
        )
        self.down = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(widths[i], widths[i + 1], 3, 2, 1), _lrelu(),
                nn.Conv2d(widths[i + 1], widths[i + 1], 3, 1, 1), _lrelu(),
            )
            for i in range(depth)
        )
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, 2) for i in range(depth)
        )
        self.fuse = nn.ModuleList(
            nn.Sequential(nn.Conv2d(2 * widths[i], widths[i], 3, 1, 1), _lrelu())
            for i in range(depth)
        )
        self.head = nn.Conv2d(widths[0], in_channels, 1)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)) and m is not self.head:
                nn.init.kaiming_normal_(m.weight, a=LRELU_SLOPE, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)

    def forward(self, x):
        h, w = x.shape[-2:]
        step = 2**self.depth
        if h % step or w % step:
            raise ValueError(f"U-Net of depth {self.depth} needs sizes divisible by {step}, got {h}x{w}")
        skips = [self.inc(x)]
        for block in self.down:
            skips.append(block(skips[-1]))
        y = skips.pop()
        for i in reversed(range(self.depth)):
            y = self.fuse[i](torch.cat([self.up[i](y), skips[i]], dim=1))
        return torch.sigmoid(self.head(y))


def build_unet_generator(in_channels: int = 3, base_channels: int = 32, depth: int = 3) -> UNetGenerator:
    return UNetGenerator(in_channels, base_channels, depth)


# Discriminators --------------------------------------------------------------------

DISC_WIDTH_MULT = (1, 1, 2, 2, 4, 4, 8, 8, 8)
DISC_STRIDES = (1, 2, 1, 2, 1, 2, 1, 2, 1)
DISC_MIN_SIZE = 32


def conv_stack(in_channels: int, widths) -> nn.Sequential:
    """Nine 3x3 convs, strides alternating 1/2, BN after all but the first."""
    if len(widths) != len(DISC_STRIDES):
        raise ValueError(f"discriminator needs {len(DISC_STRIDES)} widths, got {len(widths)}")
    layers = []
    c_in = in_channels
    for i, (c_out, stride) in enumerate(zip(widths, DISC_STRIDES)):
        block = [nn.Conv2d(c_in, c_out, 3, stride, 1, bias=(i == 0))]
        if i > 0:
            block.append(nn.BatchNorm2d(c_out))
        block.append(_lrelu())
        layers.append((f"conv{i + 1}", nn.Sequential(*block)))
        c_in = c_out
    stack = nn.Sequential()
    for name, block in layers:
        stack.add_module(name, block)
    return stack


def _check_min_size(x, min_size=DISC_MIN_SIZE):
    if min(x.shape[-2:]) < min_size:
        raise ValueError(f"discriminator input must be at least {min_size}x{min_size}, got {tuple(x.shape[-2:])}")


class ConvDiscriminator(nn.Module):
    """Critic ``C(x)``: one raw score per sample, no final sigmoid."""

    frozen = False

    def __init__(self, in_channels: int = 3, base_channels: int = 64, widths=None):
        super().__init__()
        widths = tuple(widths) if widths is not None else tuple(base_channels * m for m in DISC_WIDTH_MULT)
        self.features = conv_stack(in_channels, widths)
        self.head = nn.Linear(widths[-1], 1)

    def forward(self, x):
        _check_min_size(x)
        f = self.features(x).mean(dim=(2, 3))
        return self.head(f).squeeze(1)


def build_conv_discriminator(in_channels: int = 3, base_channels: int = 64, widths=None) -> ConvDiscriminator:
    return ConvDiscriminator(in_channels, base_channels, widths)


class JointDiscriminator(nn.Module):
    """Scores an (image, semantics) tuple.

    The image-level sub-net is the nine-conv stack with global pooling, the
    semantics-level sub-net an MLP; their outputs are concatenated and
    passed through a fully connected module to a single raw score.
    """

    frozen = False

    def __init__(self, d_sem: int, image_shape, base_channels: int = 64, widths=None,
                 sem_hidden: int = 128, fc_hidden: int = 128):
        super().__init__()
        self.d_sem = d_sem
        self.image_shape = tuple(image_shape)
        c = self.image_shape[0]
        widths = tuple(widths) if widths is not None else tuple(base_channels * m for m in DISC_WIDTH_MULT)
        self.image_net = conv_stack(c, widths)
        self.semantic_net = nn.Sequential(
            nn.Linear(d_sem, sem_hidden), _lrelu(),
            nn.Linear(sem_hidden, sem_hidden), _lrelu(),
        )
        self.fcm = nn.Sequential(
            nn.Linear(widths[-1] + sem_hidden, fc_hidden), _lrelu(),
            nn.Linear(fc_hidden, 1),
        )

    def forward(self, image, semantics):
        if tuple(image.shape[1:]) != self.image_shape:
            raise ValueError(f"image shape {tuple(image.shape[1:])} != expected {self.image_shape}")
        if semantics.ndim != 2 or semantics.shape[1] != self.d_sem:
            raise ValueError(f"semantics must be (B, {self.d_sem}), got {tuple(semantics.shape)}")
        if semantics.shape[0] != image.shape[0]:
            raise ValueError("image and semantics batch sizes differ")
        f_img = self.image_net(image).mean(dim=(2, 3))
        f_sem = self.semantic_net(semantics)
        return self.fcm(torch.cat([f_img, f_sem], dim=1)).squeeze(1)


def build_joint_discriminator(d_sem: int, image_shape, base_channels: int = 64, widths=None,
                              sem_hidden: int = 128, fc_hidden: int = 128) -> JointDiscriminator:
    return JointDiscriminator(d_sem, image_shape, base_channels, widths, sem_hidden, fc_hidden)


# Frozen VGG-style encoders ----------------------------------------------------------

@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Address of a VGG19-style layer: conv ``q`` inside the block ending at maxpool ``r``.

    ``q=3, r=3`` is Conv3_3. ``pre_activation`` taps the conv output before
    its ReLU.
    """

    q: int = 3
    r: int = 3
    mode: str = "fixed-random"
    width: int = 64
    seed: int = 0
    pre_activation: bool = False

    def __post_init__(self):
        if self.mode not in ("fixed-random", "pretrained"):
            raise ValueError(f"mode must be 'fixed-random' or 'pretrained', got {self.mode!r}")
        if not 1 <= self.r <= len(VGG19_BLOCKS):
            raise ValueError(f"r={self.r} does not address a VGG19 block")
        if not 1 <= self.q <= VGG19_BLOCKS[self.r - 1]:
            raise ValueError(f"q={self.q} does not address a conv in block {self.r}")
        if self.mode == "pretrained" and self.width != 64:
            raise ValueError("pretrained weights require width=64")


def _vgg_layers(in_channels, blocks, width, n_blocks, last_conv=None, pre_activation=False):
    """VGG feature layers for the first ``n_blocks`` blocks, truncated at ``last_conv`` of the final block."""
    layers = []
    c_in = in_channels
    for b in range(n_blocks):
        c_out = width * VGG_WIDTHS[b]
        n_conv = blocks[b]
        final = b == n_blocks - 1
        if final and last_conv is not None:
            n_conv = last_conv
        for i in range(n_conv):
            layers.append(nn.Conv2d(c_in, c_out, 3, 1, 1))
            if not (final and last_conv is not None and i == n_conv - 1 and pre_activation):
                layers.append(nn.ReLU())
            c_in = c_out
        if not (final and last_conv is not None):
            layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers), c_in


def _seeded_init(module: nn.Module, seed: int):
    g = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu", generator=g)
            nn.init.zeros_(m.bias)


def _load_vgg_features(arch: str):
    try:
        import torchvision
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("pretrained mode requires torchvision") from exc
    ctor = getattr(torchvision.models, arch)
    try:
        return ctor(weights="DEFAULT").features
    except Exception as exc:
        raise RuntimeError(f"pretrained {arch} weights are not available on this host: {exc}") from exc


def _copy_conv_weights(dst: nn.Sequential, src: nn.Sequential):
    src_convs = [m for m in src if isinstance(m, nn.Conv2d)]
    dst_convs = [m for m in dst.modules() if isinstance(m, nn.Conv2d)]
    with torch.no_grad():
        for d, s in zip(dst_convs, src_convs):
            d.weight.copy_(s.weight)
            d.bias.copy_(s.bias)


class FeatureExtractor(FrozenModule):
    """Frozen VGG19-style encoder returning the feature map at ``spec``'s layer."""

    def __init__(self, spec: FeatureExtractorSpec = FeatureExtractorSpec(), in_channels: int = 3):
        super().__init__()
        self.spec = spec
        self.body, self.out_channels = _vgg_layers(
            in_channels, VGG19_BLOCKS, spec.width, spec.r, last_conv=spec.q,
            pre_activation=spec.pre_activation,
        )
        if spec.mode == "pretrained":
            _copy_conv_weights(self.body, _load_vgg_features("vgg19"))
            self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
            self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))
        else:
            _seeded_init(self.body, spec.seed)
            self.register_buffer("mean", torch.full((1, in_channels, 1, 1), 0.5))
            self.register_buffer("std", torch.full((1, in_channels, 1, 1), 0.5))
        self.freeze()

    def forward(self, x):
        return self.body((x - self.mean) / self.std)


def build_feature_extractor(spec: FeatureExtractorSpec = FeatureExtractorSpec(), in_channels: int = 3) -> FeatureExtractor:
    return FeatureExtractor(spec, in_channels)


class SemanticEncoder(FrozenModule):
    """Frozen VGG16-style encoder mapping an image to a ``d_sem`` vector.

    HR and LR variants share the trunk weights (same seed); the HR variant
    runs ``log2(scale)`` more pooled blocks so both see comparable
    receptive fields, and each has its own linear projection head.
    """

    def __init__(self, hr_variant: bool, d_sem: int = 128, width: int = 64, scale: int = 4,
                 lr_blocks: int = 3, seed: int = 0, mode: str = "fixed-random", in_channels: int = 3):
        super().__init__()
        extra = int(round(math.log2(scale)))
        if 2**extra != scale:
            raise ValueError("scale must be a power of two")
        n_blocks = lr_blocks + extra if hr_variant else lr_blocks
        if n_blocks > len(VGG16_BLOCKS):
            raise ValueError(f"HR variant would need {n_blocks} VGG16 blocks; lower lr_blocks")
        self.hr_variant = hr_variant
        self.d_sem = d_sem
        self.trunk, c = _vgg_layers(in_channels, VGG16_BLOCKS, width, n_blocks)
        self.project = nn.Linear(c, d_sem)
        if mode == "pretrained":
            _copy_conv_weights(self.trunk, _load_vgg_features("vgg16"))
            mean, std = _IMAGENET_MEAN, _IMAGENET_STD
        elif mode == "fixed-random":
            _seeded_init(self.trunk, seed)
            mean, std = (0.5,) * in_channels, (0.5,) * in_channels
        else:
            raise ValueError(f"unknown mode {mode!r}")
        g = torch.Generator().manual_seed(int(seed) + (2 if hr_variant else 1))
        with torch.no_grad():
            self.project.weight.normal_(0.0, 1.0 / math.sqrt(c), generator=g)
            self.project.bias.zero_()
        self.register_buffer("mean", torch.tensor(mean).view(1, -1, 1, 1))
        self.register_buffer("std", torch.tensor(std).view(1, -1, 1, 1))
        self.freeze()

    def forward(self, x):
        f = self.trunk((x - self.mean) / self.std)
        return self.project(f.mean(dim=(2, 3)))


def build_semantic_encoder(hr_variant: bool, d_sem: int = 128, width: int = 64, scale: int = 4,
                           lr_blocks: int = 3, seed: int = 0, mode: str = "fixed-random") -> SemanticEncoder:
    return SemanticEncoder(hr_variant, d_sem=d_sem, width=width, scale=scale,
                           lr_blocks=lr_blocks, seed=seed, mode=mode)


# Super-resolution generator ---------------------------------------------------------

@dataclass(frozen=True)
class SRGeneratorSpec:
    n_dnb: int = 4
    n_ridb_per_dnb: int = 3
    base_channels: int = 64
    growth_channels: int = 32
    residual_scale: float = 0.2
    upscale: int = 4
    in_channels: int = 3
    image_skip: bool = True

    def __post_init__(self):
        if self.n_dnb < 1:
            raise ValueError("n_dnb must be >= 1")
        if self.n_ridb_per_dnb != 3:
            raise ValueError("each dense nested block holds exactly 3 RIDBs")
        if self.upscale not in (2, 4, 8):
            raise ValueError("upscale must be 2, 4 or 8")
        if not 0 < self.residual_scale <= 1:
            raise ValueError("residual_scale must lie in (0, 1]")


class RIDB(nn.Module):
    """Four densely connected conv+LReLU layers, 1x1 fusion, local residual add."""

    def __init__(self, channels: int, growth: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels + i * growth, growth, 3, 1, 1) for i in range(4)
        )
        self.fusion = nn.Conv2d(channels + 4 * growth, channels, 1)
        self.act = _lrelu()

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(self.act(conv(torch.cat(feats, dim=1))))
        return x + self.fusion(torch.cat(feats, dim=1))


class DNB(nn.Module):
    def __init__(self, channels: int, growth: int, residual_scale: float):
        super().__init__()
        self.ridbs = nn.Sequential(*(RIDB(channels, growth) for _ in range(3)))
        self.residual_scale = residual_scale

    def forward(self, x):
        return x + self.residual_scale * self.ridbs(x)


class _BicubicSkip(nn.Module):
    def __init__(self, scale: int):
        super().__init__()
        self.scale = scale
        self._cache = {}

    def forward(self, x):
        h, w = x.shape[-2:]
        key = (h, w, x.dtype)
        if key not in self._cache:
            mh = torch.from_numpy(resize_matrix(h, h * self.scale)).to(x.dtype)
            mw = torch.from_numpy(resize_matrix(w, w * self.scale)).to(x.dtype)
            self._cache[key] = (mh, mw)
        mh, mw = self._cache[key]
        return torch.einsum("ph,bchw,qw->bcpq", mh, x, mw)


class SRGenerator(nn.Module):
    """Shallow features, dense nested blocks with global residual, pixel-shuffle upsampling.

    With ``image_skip`` the bicubic upscale of the input is added to the
    reconstruction, so the trunk learns a residual. Output is not clipped.
    """

    frozen = False

    def __init__(self, spec: SRGeneratorSpec = SRGeneratorSpec()):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        self.sfm = nn.Conv2d(spec.in_channels, c, 3, 1, 1)
        self.mdbm = nn.Sequential(
            *(DNB(c, spec.growth_channels, spec.residual_scale) for _ in range(spec.n_dnb)),
            nn.Conv2d(c, c, 3, 1, 1),
        )
        stages = []
        for _ in range(int(round(math.log2(spec.upscale)))):
            stages += [nn.Conv2d(c, 4 * c, 3, 1, 1), nn.PixelShuffle(2), _lrelu()]
        self.um = nn.Sequential(*stages)
        self.reconstruct = nn.Conv2d(c, spec.in_channels, 3, 1, 1)
        self.skip = _BicubicSkip(spec.upscale) if spec.image_skip else None
        if self.skip is not None:
            # start as plain bicubic upsampling; the trunk then learns a correction
            nn.init.zeros_(self.reconstruct.weight)
            nn.init.zeros_(self.reconstruct.bias)

    def shallow_path(self, x):
        """Output with the dense-block trunk removed: upsampled shallow features only."""
        return self._tail(x, self.sfm(x))

    def _tail(self, x, features):
        out = self.reconstruct(self.um(features))
        if self.skip is not None:
            out = out + self.skip(x)
        return out

    def forward(self, x):
        if min(x.shape[-2:]) < 8:
            raise ValueError(f"SR generator input must be at least 8x8, got {tuple(x.shape[-2:])}")
        f_sf = self.sfm(x)
        f_gf = self.mdbm(f_sf)
        return self._tail(x, f_sf + f_gf)


def build_sr_generator(spec: SRGeneratorSpec = SRGeneratorSpec()) -> SRGenerator:
    return SRGenerator(spec)


# Relativistic logits -------------------------------------------------------------------

@dataclass
class RelativisticLogits:
    d_real: torch.Tensor
    d_fake: torch.Tensor
    squashed: bool


def relativistic_logits(c_real, c_fake, squash: bool) -> RelativisticLogits:
    """Score each population relative to the batch mean of the other.

    ``d_real[i] = f(c_real[i] - mean(c_fake))`` and symmetrically for
    ``d_fake``; ``f`` is the sigmoid when ``squash`` else the identity.
    """
    c_real = torch.as_tensor(c_real).reshape(-1)
    c_fake = torch.as_tensor(c_fake).reshape(-1)
    if c_real.numel() == 0 or c_fake.numel() == 0:
        raise ValueError("critic score batches must be nonempty")
    d_real = c_real - c_fake.mean()
    d_fake = c_fake - c_real.mean()
    if squash:
        d_real, d_fake = torch.sigmoid(d_real), torch.sigmoid(d_fake)
    return RelativisticLogits(d_real, d_fake, squash)


# Tensor file format ---------------------------------------------------------------------

MAGIC = b"USRTENS\x00"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


def encode_tensors(tensors: dict[str, torch.Tensor], meta: dict | None = None) -> bytes:
    """Serialize named tensors.

    Layout: 8-byte magic, uint32 version, uint64 header length, UTF-8 JSON
    header (``meta`` plus a manifest of name/shape/dtype/offset/count), the
    payload as little-endian float32 in manifest order, and a trailing
    SHA-256 of all preceding bytes. Integer tensors are stored as float32
    and restored to their recorded dtype, so they must fit in 24 bits.
    """
    manifest = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        arr = t.to(torch.float64).numpy().astype("<f4").reshape(-1)
        if not torch.is_floating_point(t) and np.any(np.abs(arr) > 2**24):
            raise CheckpointError(f"integer tensor {name} exceeds float32 exact range")
        manifest.append({
            "name": name, "shape": list(t.shape), "dtype": str(t.dtype).replace("torch.", ""),
            "offset": offset, "count": int(arr.size),
        })
        chunks.append(arr.tobytes())
        offset += arr.size * 4
    header = json.dumps({"meta": meta or {}, "tensors": manifest}, sort_keys=True,
                        separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_tensors(blob: bytes) -> tuple[dict[str, torch.Tensor], dict]:
    fixed = len(MAGIC) + 12
    if len(blob) < fixed + _DIGEST or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a tensor file or truncated")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is corrupt or truncated")
    version, hlen = struct.unpack("<IQ", body[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    header = json.loads(body[fixed: fixed + hlen])
    payload = memoryview(body)[fixed + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        arr = np.frombuffer(payload[start: start + 4 * entry["count"]], dtype="<f4")
        t = torch.from_numpy(arr.copy()).reshape(entry["shape"])
        tensors[entry["name"]] = t.to(getattr(torch, entry["dtype"]))
    return tensors, header["meta"]


def save_tensors(path, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_tensors(tensors, meta))


def load_tensors(path) -> tuple[dict[str, torch.Tensor], dict]:
    return decode_tensors(Path(path).read_bytes())


def save_module(module: nn.Module, path, meta: dict | None = None) -> None:
    save_tensors(path, dict(module.state_dict()), meta)


def load_module(module: nn.Module, path) -> dict:
    tensors, meta = load_tensors(path)
    module.load_state_dict(tensors)
    return meta
