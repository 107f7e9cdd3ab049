"""Three-stage training schedule, configuration and checkpoints.

Stages: UBCDTN pretraining, SESRN pretraining on ``g_a``-translated LR
inputs with ``g_a`` held fixed, then joint training of both. Optimizer
moments are reset at every stage boundary.

A data source is any object with ``batch(step, batch_size, seed)``
returning an :class:`UnpairedBatch` whose ``hr`` and ``lr_degraded``
fields are aligned (``lr_degraded`` is the degradation of ``hr``) and whose
``lr_real`` comes from disjoint source images. Batches must be a pure
function of ``(step, batch_size, seed)``; that is what makes resumed runs
reproduce uninterrupted ones.
"""
from __future__ import annotations

import configparser
import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn

from . import imaging
from .nets import (
    FeatureExtractorSpec,
    SRGeneratorSpec,
    build_conv_discriminator,
    build_feature_extractor,
    build_joint_discriminator,
    build_semantic_encoder,
    build_sr_generator,
    build_unet_generator,
    decode_tensors,
    encode_tensors,
    trainable_parameters,
)
from .sesrn import SRBundle, SRLossWeights, sesrn_d_loss, sesrn_losses
from .ubcdtn import (
    BackwardWeights,
    CycleBundle,
    ForwardWeights,
    LossReport,
    UnpairedBatch,
    backward_d_loss,
    backward_total,
    forward_d_loss,
    forward_total,
    ubcdtn_total,
)
from .variants import B_READINGS, built_networks, get_variant

log = logging.getLogger(__name__)

STAGES = ("init", "pretrain_ubcdtn", "pretrain_sesrn", "joint")

# Iteration counts reported for full-scale training.
FULL_STEPS = {"steps_pretrain_ubcdtn": 50_000, "steps_pretrain_sesrn": 50_000, "steps_joint": 100_000}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class NetConfig:
    unet_base: int = 32
    unet_depth: int = 3
    disc_base: int = 64
    fe_q: int = 3
    fe_r: int = 3
    fe_width: int = 64
    phi_q: int = 3
    phi_r: int = 3
    phi_width: int = 64
    encoder_mode: str = "fixed-random"
    encoder_seed: int = 0
    sr_channels: int = 64
    sr_growth: int = 32
    n_dnb: int = 4
    residual_scale: float = 0.2
    image_skip: bool = True
    d_sem: int = 128
    se_width: int = 64
    se_lr_blocks: int = 3
    jd_base: int = 64
    jd_hidden: int = 128


@dataclass
class TrainConfig:
    lr: float = 1e-4
    # critics learn at lr * lr_critic_scale
    lr_critic_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8
    steps_pretrain_ubcdtn: int = 1000
    steps_pretrain_sesrn: int = 1000
    steps_joint: int = 1000
    seed: int = 0
    device: str = "cpu"
    deterministic: bool = True
    scale: int = 4
    noise_sigma: float = 0.0
    patch_size: int = 32
    sum_reduction: bool = False
    pixel_root_norm: bool = False
    coupled_gradients: bool = False
    variant: str = "E"
    variant_b_reading: str = "strict"
    hr_dir: str = ""
    lr_real_dir: str = ""
    sample_every: int = 0
    nets: NetConfig = field(default_factory=NetConfig)
    forward: ForwardWeights = field(default_factory=ForwardWeights)
    backward: BackwardWeights = field(default_factory=BackwardWeights)
    sr: SRLossWeights = field(default_factory=SRLossWeights)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not self.lr_critic_scale > 0:
            raise ValueError("lr_critic_scale must be > 0")
        if not 0 <= self.beta1 < self.beta2 < 1:
            raise ValueError("need 0 <= beta1 < beta2 < 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in FULL_STEPS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.variant_b_reading not in B_READINGS:
            raise ValueError(f"variant_b_reading must be one of {B_READINGS}")
        get_variant(self.variant)

    @property
    def reduction(self) -> str:
        return "sum" if self.sum_reduction else "mean"

    @property
    def degradation(self) -> imaging.DegradationSpec:
        return imaging.DegradationSpec(scale=self.scale, noise_sigma=self.noise_sigma)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """Full-scale settings: 50k/50k/100k iterations and 64-channel networks."""
        return cls(**{**FULL_STEPS, **overrides})

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale settings sized for CPU runs on the procedural toy task."""
        nets = NetConfig(
            unet_base=8, unet_depth=3, disc_base=4, fe_width=8, phi_width=8,
            sr_channels=16, sr_growth=8, n_dnb=2, d_sem=32, se_width=8, jd_base=4, jd_hidden=32,
        )
        base = dict(
            lr=3e-3, lr_critic_scale=0.1, steps_pretrain_ubcdtn=500, steps_pretrain_sesrn=300, steps_joint=100,
            nets=nets,
            # fixed-random content features are ~10x larger than pixel errors
            sr=SRLossWeights(lambda_con=0.1),
        )
        base.update(overrides)
        return cls(**base)

    # Serialization -----------------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        subs = {"nets": NetConfig, "forward": ForwardWeights, "backward": BackwardWeights, "sr": SRLossWeights}
        for key, klass in subs.items():
            if key in d and isinstance(d[key], dict):
                d[key] = klass(**d[key])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self, path) -> None:
        parser = configparser.ConfigParser()
        d = self.to_dict()
        parser["train"] = {k: _ini_value(v) for k, v in d.items() if not isinstance(v, dict)}
        for section in _SECTIONS:
            parser[section] = {k: _ini_value(v) for k, v in d[_SECTIONS[section]].items()}
        with open(path, "w") as fh:
            parser.write(fh)

    @classmethod
    def from_ini(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        """Read an INI file; keys not present keep the values of ``base`` (defaults if None)."""
        if not Path(path).is_file():
            raise FileNotFoundError(f"no such config file: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        d = (base or cls()).to_dict()
        known = set(_SECTIONS) | {"train"}
        unknown = set(parser.sections()) - known
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        for section in parser.sections():
            target = d if section == "train" else d[_SECTIONS[section]]
            for key, raw in parser[section].items():
                if key not in target or isinstance(target[key], dict):
                    raise ValueError(f"unknown config key [{section}] {key}")
                target[key] = _parse_like(raw, target[key])
        return cls.from_dict(d)


_SECTIONS = {
    "nets": "nets",
    "weights.forward": "forward",
    "weights.backward": "backward",
    "weights.sr": "sr",
}


def _ini_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _parse_like(raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw.strip()


# System construction ---------------------------------------------------------------------

class System(nn.Module):
    """All networks of one experiment, wired per the configured ablation variant."""

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.config = config
        n = config.nets
        variant = get_variant(config.variant)
        self.variant = variant
        nets = built_networks(variant, config.variant_b_reading)
        self.backward_module = variant.backward_module

        def fe(q, r, width, pre=False, seed_offset=0):
            spec = FeatureExtractorSpec(q=q, r=r, mode=n.encoder_mode, width=width,
                                        seed=n.encoder_seed + seed_offset, pre_activation=pre)
            return build_feature_extractor(spec)

        g_a = build_unet_generator(3, n.unet_base, n.unet_depth) if "G_A" in nets else None
        self.cycle = CycleBundle(
            g_a=g_a,
            g_b=build_unet_generator(3, n.unet_base, n.unet_depth) if "G_B" in nets else None,
            d_a=build_conv_discriminator(3, n.disc_base) if "D_A" in nets else None,
            d_b=build_conv_discriminator(3, n.disc_base) if "D_B" in nets else None,
            fe_a=fe(n.fe_q, n.fe_r, n.fe_width) if "FE_A" in nets else None,
            fe_b=fe(n.fe_q, n.fe_r, n.fe_width) if "FE_B" in nets else None,
        )
        hr_size = config.patch_size * config.scale
        self.sr = SRBundle(
            g_sr=build_sr_generator(SRGeneratorSpec(
                n_dnb=n.n_dnb, base_channels=n.sr_channels, growth_channels=n.sr_growth,
                residual_scale=n.residual_scale, upscale=config.scale, image_skip=n.image_skip,
            )),
            se_hr=build_semantic_encoder(True, n.d_sem, n.se_width, config.scale, n.se_lr_blocks,
                                         seed=n.encoder_seed + 10, mode=n.encoder_mode),
            se_lr=build_semantic_encoder(False, n.d_sem, n.se_width, config.scale, n.se_lr_blocks,
                                         seed=n.encoder_seed + 10, mode=n.encoder_mode),
            d_sr=build_joint_discriminator(n.d_sem, (3, hr_size, hr_size), n.jd_base,
                                           sem_hidden=n.jd_hidden, fc_hidden=n.jd_hidden),
            phi=fe(n.phi_q, n.phi_r, n.phi_width, pre=True, seed_offset=20),
        )

    @property
    def uses_ubcdtn(self) -> bool:
        return self.cycle.g_a is not None

    def real_like(self, lr_degraded):
        """Input the SR network trains on: translated LR, or the degraded LR itself without UBCDTN."""
        if not self.uses_ubcdtn:
            return lr_degraded
        return self.cycle.g_a(lr_degraded)

    def predict(self, lr):
        with torch.no_grad(), eval_mode(self):
            return self.sr.g_sr(lr).clamp(0.0, 1.0)


def build_system(config: TrainConfig) -> System:
    torch.manual_seed(config.seed)
    return System(config)


@contextlib.contextmanager
def eval_mode(module: nn.Module):
    was = module.training
    module.eval()
    try:
        yield module
    finally:
        module.train(was)


@contextlib.contextmanager
def constant(*modules):
    """Treat the modules' parameters as constants (no gradient) inside the block."""
    params = [p for m in modules if m is not None for p in m.parameters() if p.requires_grad]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p in params:
            p.requires_grad_(True)


def make_adam(config: TrainConfig, *modules, critic: bool = False) -> torch.optim.Adam | None:
    params = trainable_parameters(*modules)
    if not params:
        return None
    lr = config.lr * (config.lr_critic_scale if critic else 1.0)
    return torch.optim.Adam(params, lr=lr, betas=(config.beta1, config.beta2))


def stage_optimizers(system: System, stage: str) -> dict[str, torch.optim.Adam]:
    cfg, cyc, sr = system.config, system.cycle, system.sr
    opts = {}
    if stage in ("pretrain_ubcdtn", "joint") and system.uses_ubcdtn:
        opts["d_b"] = make_adam(cfg, cyc.d_b, critic=True)
        if system.backward_module:
            opts["d_a"] = make_adam(cfg, cyc.d_a, critic=True)
        opts["g"] = make_adam(cfg, *cyc.generators())
    if stage in ("pretrain_sesrn", "joint"):
        opts["d_sr"] = make_adam(cfg, sr.d_sr, critic=True)
        opts["g_sr"] = make_adam(cfg, sr.g_sr)
    return {k: v for k, v in opts.items() if v is not None}


# One training iteration per stage -----------------------------------------------------------

def _check_finite(terms: dict, stage: str, step: int):
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise TrainingDiverged(f"non-finite loss term {name!r} at {stage} step {step}")


def _step(opt, loss):
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()


def ubcdtn_critic_steps(system: System, opts, batch: UnpairedBatch, stage: str, step: int) -> dict:
    """Update D_B then D_A against translations computed with the current generators."""
    cyc = system.cycle
    critic = {}
    with torch.no_grad():
        fake = cyc.g_a(batch.lr_degraded)
        syn = cyc.g_b(batch.lr_real) if system.backward_module else None
    if cyc.d_b is not None:
        critic["D_B"] = forward_d_loss(cyc, batch, fake)
        _check_finite(critic, stage, step)
        _step(opts["d_b"], critic["D_B"])
    if system.backward_module and cyc.d_a is not None:
        critic["D_A"] = backward_d_loss(cyc, batch, syn)
        _check_finite(critic, stage, step)
        _step(opts["d_a"], critic["D_A"])
    return {k: v.detach() for k, v in critic.items()}


def ubcdtn_generator_report(system: System, batch: UnpairedBatch) -> LossReport:
    cfg, cyc = system.config, system.cycle
    fwd = forward_total(cyc, cfg.forward, batch, cfg.reduction)
    bwd = backward_total(cyc, cfg.backward, batch, cfg.reduction) if system.backward_module else None
    return ubcdtn_total(fwd, bwd)


def ubcdtn_iteration(system: System, opts, batch: UnpairedBatch, stage: str = "pretrain_ubcdtn",
                     step: int = 0):
    """D_B, D_A, then the generator pair. Returns (generator report, critic losses)."""
    critic = ubcdtn_critic_steps(system, opts, batch, stage, step)
    with constant(system.cycle.d_a, system.cycle.d_b):
        report = ubcdtn_generator_report(system, batch)
        _check_finite(report.terms, stage, step)
        _step(opts["g"], report.total)
    return report, critic


def sesrn_iteration(system: System, opts, hr, lr_like, stage: str = "pretrain_sesrn", step: int = 0):
    cfg, sr = system.config, system.sr
    with torch.no_grad():
        sr_img = sr.g_sr(lr_like)
    d_loss = sesrn_d_loss(sr, hr, sr_img, lr_like)
    _check_finite({"D_SR": d_loss}, stage, step)
    _step(opts["d_sr"], d_loss)
    with constant(sr.d_sr):
        report, _ = sesrn_losses(sr, cfg.sr, lr_like, hr, cfg.reduction, cfg.pixel_root_norm)
        _check_finite(report.terms, stage, step)
        _step(opts["g_sr"], report.total)
    return report, {"D_SR": d_loss.detach()}


def joint_iteration(system: System, opts, batch: UnpairedBatch, step: int = 0):
    """One joint step.

    Returns ``(joint, sesrn_report, ubcdtn_report, critic)``; the joint
    report's total is the UBCDTN total plus the SESRN total.
    """
    cfg, cyc, sr = system.config, system.cycle, system.sr
    if not system.uses_ubcdtn:
        report, critic = sesrn_iteration(system, opts, batch.hr, batch.lr_degraded, "joint", step)
        return report, report, None, critic
    if not cfg.coupled_gradients:
        u_report, critic = ubcdtn_iteration(system, opts, batch, "joint", step)
        with torch.no_grad():
            lr_like = cyc.g_a(batch.lr_degraded)
        s_report, c2 = sesrn_iteration(system, opts, batch.hr, lr_like, "joint", step)
        critic.update(c2)
    else:
        # SR losses backpropagate into g_a; one combined generator update
        critic = ubcdtn_critic_steps(system, opts, batch, "joint", step)
        with torch.no_grad():
            lr_like = cyc.g_a(batch.lr_degraded)
            sr_img = sr.g_sr(lr_like)
        d_loss = sesrn_d_loss(sr, batch.hr, sr_img, lr_like)
        _check_finite({"D_SR": d_loss}, "joint", step)
        _step(opts["d_sr"], d_loss)
        critic["D_SR"] = d_loss.detach()
        with constant(cyc.d_a, cyc.d_b, sr.d_sr):
            u_report = ubcdtn_generator_report(system, batch)
            s_report, _ = sesrn_losses(sr, cfg.sr, cyc.g_a(batch.lr_degraded), batch.hr,
                                       cfg.reduction, cfg.pixel_root_norm)
            _check_finite({**u_report.terms, **s_report.terms}, "joint", step)
            opts["g"].zero_grad(set_to_none=True)
            opts["g_sr"].zero_grad(set_to_none=True)
            (u_report.total + s_report.total).backward()
            opts["g"].step()
            opts["g_sr"].step()
    joint = LossReport(
        {**u_report.terms, **s_report.terms},
        {**u_report.weights, **s_report.weights},
        {**u_report.equation_tags, **s_report.equation_tags},
        u_report.total.detach().double() + s_report.total.detach().double(),
    )
    return joint, s_report, u_report, critic


# Checkpoints ------------------------------------------------------------------------------

@dataclass
class CheckpointBundle:
    stage: str
    step: int
    config: TrainConfig
    state: dict[str, torch.Tensor]
    optim: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def restore(self, system: System, opts: dict | None = None) -> None:
        system.load_state_dict(self.state)
        if opts:
            load_optimizer_states(opts, self.optim)


def snapshot(system: System, stage: str, step: int, opts: dict | None = None) -> CheckpointBundle:
    state = {k: v.detach().clone() for k, v in system.state_dict().items()}
    return CheckpointBundle(stage, step, system.config, state, optimizer_states(opts or {}))


def optimizer_states(opts: dict) -> dict[str, torch.Tensor]:
    flat = {}
    for name, opt in opts.items():
        for idx, st in opt.state_dict()["state"].items():
            for key, value in st.items():
                flat[f"{name}.{idx}.{key}"] = torch.as_tensor(value).detach().clone()
    return flat


def load_optimizer_states(opts: dict, flat: dict[str, torch.Tensor]) -> None:
    for name, opt in opts.items():
        sd = opt.state_dict()
        state = {}
        prefix = name + "."
        for key, value in flat.items():
            if key.startswith(prefix):
                idx, field_name = key[len(prefix):].split(".", 1)
                state.setdefault(int(idx), {})[field_name] = value.clone()
        sd["state"] = state
        opt.load_state_dict(sd)


def save_checkpoint(bundle: CheckpointBundle, path) -> None:
    tensors = {f"net/{k}": v for k, v in bundle.state.items()}
    tensors.update({f"optim/{k}": v for k, v in bundle.optim.items()})
    meta = {
        "kind": "unpaired_sr.checkpoint",
        "stage": bundle.stage,
        "step": bundle.step,
        "config_hash": bundle.config_hash,
        "config": bundle.config.to_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_tensors(tensors, meta))


def load_checkpoint(path) -> CheckpointBundle:
    tensors, meta = decode_tensors(Path(path).read_bytes())
    if meta.get("kind") != "unpaired_sr.checkpoint":
        raise ValueError(f"{path} is not a training checkpoint")
    config = TrainConfig.from_dict(meta["config"])
    if config.config_hash() != meta["config_hash"]:
        raise ValueError("checkpoint config hash does not match its stored config")
    state = {k[4:]: v for k, v in tensors.items() if k.startswith("net/")}
    optim = {k[6:]: v for k, v in tensors.items() if k.startswith("optim/")}
    return CheckpointBundle(meta["stage"], int(meta["step"]), config, state, optim)


# Logging ------------------------------------------------------------------------------------

class LossLog:
    """Collects per-step loss values; optionally appends ``step,term,value`` rows to a CSV."""

    def __init__(self, csv_path=None):
        self.records: list[dict] = []
        self.csv_path = Path(csv_path) if csv_path else None
        if self.csv_path and not self.csv_path.exists():
            self.csv_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.csv_path, "w", newline="") as fh:
                csv.writer(fh).writerow(["step", "term", "value"])

    def append(self, stage: str, step: int, report: LossReport, extra: dict | None = None, **parts):
        rec = {"stage": stage, "step": step, "total": float(report.total.detach()), **report.values()}
        for name, value in (extra or {}).items():
            rec[name] = float(value)
        for name, part in parts.items():
            if part is not None:
                rec[f"total_{name}"] = float(part.total.detach())
        self.records.append(rec)
        if self.csv_path:
            with open(self.csv_path, "a", newline="") as fh:
                w = csv.writer(fh)
                for key, value in rec.items():
                    if key not in ("stage", "step"):
                        w.writerow([step, key, repr(value)])
        return rec

    def series(self, key: str = "total", stage: str | None = None) -> list[float]:
        return [r[key] for r in self.records if stage is None or r["stage"] == stage]


def save_sample_grid(path, lr, real_like, sr, hr) -> None:
    """One-row PNG: LR | real-like LR | SR | HR, LR panels nearest-upscaled to HR size."""
    size = hr.shape[-2:]
    up = lambda x: torch.nn.functional.interpolate(x[:1], size=size, mode="nearest")
    row = torch.cat([up(lr), up(real_like), sr[:1].clamp(0, 1), hr[:1]], dim=3)
    imaging.save_image(row, path)


# Stages --------------------------------------------------------------------------------------

def _configure_determinism(config: TrainConfig):
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(config.seed)


def _system_from(config: TrainConfig, ckpts) -> System:
    system = build_system(config)
    for ck in ckpts:
        if ck is not None:
            system.load_state_dict(ck.state)
    return system


def _run_stage(stage: str, config: TrainConfig, data, n_steps: int, ckpts=(), resume=None,
               loss_log: LossLog | None = None, out_dir=None, callback: Callable | None = None,
               system: System | None = None) -> CheckpointBundle:
    _configure_determinism(config)
    if system is None:
        system = _system_from(config, ckpts)
    if stage == "pretrain_ubcdtn" and not system.uses_ubcdtn:
        return snapshot(system, stage, 0)
    opts = stage_optimizers(system, stage)
    start = 0
    if resume is not None:
        if resume.stage != stage:
            raise ValueError(f"cannot resume {stage} from a {resume.stage} checkpoint")
        resume.restore(system, opts)
        start = resume.step
    loss_log = loss_log if loss_log is not None else LossLog()
    system.train()
    for step in range(start, n_steps):
        batch = data.batch(step, config.batch_size, config.seed)
        if stage == "pretrain_ubcdtn":
            report, critic = ubcdtn_iteration(system, opts, batch, stage, step)
            rec = loss_log.append(stage, step, report, critic)
        elif stage == "pretrain_sesrn":
            with torch.no_grad():
                lr_like = system.real_like(batch.lr_degraded)
            report, critic = sesrn_iteration(system, opts, batch.hr, lr_like, stage, step)
            rec = loss_log.append(stage, step, report, critic)
        else:
            report, s_report, u_report, critic = joint_iteration(system, opts, batch, step)
            rec = loss_log.append(stage, step, report, critic, ubcdtn=u_report, sesrn=s_report)
        if config.sample_every and out_dir and (step + 1) % config.sample_every == 0:
            with torch.no_grad(), eval_mode(system):
                lr_like = system.real_like(batch.lr_degraded)
                save_sample_grid(Path(out_dir) / f"{stage}_{step + 1:06d}.png",
                                 batch.lr_degraded, lr_like, system.sr.g_sr(lr_like), batch.hr)
        if (step + 1) % 100 == 0:
            log.info("%s step %d/%d total %.4f", stage, step + 1, n_steps, rec["total"])
        if callback is not None:
            callback(stage, step, rec, system)
    return snapshot(system, stage, max(n_steps, start), opts)


def pretrain_ubcdtn(config: TrainConfig, data, resume: CheckpointBundle | None = None, **kw) -> CheckpointBundle:
    """Stage 1: adversarial, cycle, identity and cycle-perceptual training of the translators."""
    return _run_stage("pretrain_ubcdtn", config, data, config.steps_pretrain_ubcdtn, resume=resume, **kw)


def pretrain_sesrn(config: TrainConfig, ubcdtn_ckpt: CheckpointBundle | None, data,
                   resume: CheckpointBundle | None = None, **kw) -> CheckpointBundle:
    """Stage 2: SR training on (g_a(degrade(hr)), hr) pairs with g_a fixed."""
    return _run_stage("pretrain_sesrn", config, data, config.steps_pretrain_sesrn,
                      ckpts=(ubcdtn_ckpt,), resume=resume, **kw)


def train_joint(config: TrainConfig, ckpts, data, resume: CheckpointBundle | None = None, **kw) -> CheckpointBundle:
    """Stage 3: alternate UBCDTN and SESRN updates under the summed objective."""
    if isinstance(ckpts, CheckpointBundle):
        ckpts = (ckpts,)
    return _run_stage("joint", config, data, config.steps_joint, ckpts=tuple(ckpts), resume=resume, **kw)


def train_all(config: TrainConfig, data, loss_log: LossLog | None = None, out_dir=None) -> CheckpointBundle:
    loss_log = loss_log if loss_log is not None else LossLog()
    c1 = pretrain_ubcdtn(config, data, loss_log=loss_log, out_dir=out_dir)
    c2 = pretrain_sesrn(config, c1, data, loss_log=loss_log, out_dir=out_dir)
    return train_joint(config, (c1, c2), data, loss_log=loss_log, out_dir=out_dir)


def system_from_checkpoint(ckpt: CheckpointBundle) -> System:
    system = build_system(ckpt.config)
    system.load_state_dict(ckpt.state)
    system.eval()
    return system
