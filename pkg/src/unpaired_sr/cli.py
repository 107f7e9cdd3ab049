"""Command-line entry point: ``unpaired-sr {degrade,train,infer,eval,ablate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import imaging
from .harness import ToyDataset, UnpairedDatasetSpec, build_dataset, evaluate, load_validation_dir, run_ablation
from .training import (
    CheckpointBundle,
    LossLog,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    pretrain_sesrn,
    pretrain_ubcdtn,
    save_checkpoint,
    system_from_checkpoint,
    train_joint,
)
from .variants import VARIANTS

log = logging.getLogger("unpaired_sr")

STAGE_NAMES = {"ubcdtn": "pretrain_ubcdtn", "sesrn": "pretrain_sesrn", "joint": "joint"}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI file with [train], [nets] and [weights.*] sections")
    p.add_argument("--toy", action="store_true", help="start from desk-scale settings and the procedural toy data")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--hr-dir", type=Path)
    p.add_argument("--lr-dir", type=Path, help="real low-resolution images (unpaired with --hr-dir)")
    p.add_argument("--steps", type=int, help="override the step count of every selected stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unpaired-sr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="blur, downsample and add noise to every image in a folder")
    p.add_argument("src", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run one training stage or the full schedule")
    _add_common(p)
    p.add_argument("--stage", choices=(*STAGE_NAMES, "all"), default="all")
    p.add_argument("--init", type=Path, nargs="*", default=[],
                   help="checkpoints of earlier stages to start from")
    p.add_argument("--resume", type=Path, help="checkpoint of the same stage to continue")

    p = sub.add_parser("infer", help="super-resolve a folder of LR images")
    p.add_argument("src", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint or the bicubic baseline")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--bicubic", action="store_true", help="evaluate bicubic upsampling instead")
    p.add_argument("--scale", type=int, default=4, help="upscale factor for --bicubic")
    p.add_argument("--val", type=Path, help="folder with LR/ and HR/ subfolders")
    p.add_argument("--toy", action="store_true", help="use the toy validation set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric-space", choices=("rgb", "y"), default="rgb")
    p.add_argument("--crop-border", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("eval"))
    p.add_argument("--save-images", action="store_true")

    p = sub.add_parser("ablate", help="train and evaluate one ablation variant")
    _add_common(p)
    p.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    p.add_argument("--val", type=Path)
    p.add_argument("--metric-space", choices=("rgb", "y"), default="rgb")
    p.add_argument("--crop-border", type=int, default=0)
    return parser


def load_config(args) -> TrainConfig:
    base = TrainConfig.toy() if args.toy else TrainConfig()
    config = TrainConfig.from_ini(args.config, base) if args.config else base
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.deterministic:
        changes["deterministic"] = True
    if args.hr_dir:
        changes["hr_dir"] = str(args.hr_dir)
    if args.lr_dir:
        changes["lr_real_dir"] = str(args.lr_dir)
    if args.steps is not None:
        changes.update(steps_pretrain_ubcdtn=args.steps, steps_pretrain_sesrn=args.steps, steps_joint=args.steps)
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    return config.replace(**changes) if changes else config


def load_data(config: TrainConfig, toy: bool):
    if config.hr_dir and config.lr_real_dir:
        spec = UnpairedDatasetSpec(config.hr_dir, config.lr_real_dir, config.patch_size, config.scale)
        return build_dataset(spec, config.degradation)
    if toy:
        return ToyDataset(patch_size=config.patch_size, scale=config.scale, seed=config.seed,
                          degradation=config.degradation)
    raise ValueError("training data needed: pass --hr-dir and --lr-dir (or set them in --config), or use --toy")


def cmd_degrade(args) -> int:
    spec = imaging.DegradationSpec(scale=args.scale, noise_sigma=args.noise_sigma)
    written = imaging.degrade_folder(args.src, args.out, spec, seed=args.seed)
    print(f"wrote {len(written)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args)
    data = load_data(config, args.toy)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    config.to_ini(out / "config.ini")
    loss_log = LossLog(out / "losses.csv")
    inits = [load_checkpoint(p) for p in args.init]
    resume = load_checkpoint(args.resume) if args.resume else None
    kw = dict(loss_log=loss_log, out_dir=out / "samples")

    def by_stage(stage):
        return next((c for c in inits if c.stage == stage), None)

    stages = list(STAGE_NAMES) if args.stage == "all" else [args.stage]
    ckpts: dict[str, CheckpointBundle] = {}
    for name in stages:
        stage = STAGE_NAMES[name]
        res = resume if resume is not None and resume.stage == stage else None
        if name == "ubcdtn":
            ck = pretrain_ubcdtn(config, data, resume=res, **kw)
        elif name == "sesrn":
            ck = pretrain_sesrn(config, ckpts.get("pretrain_ubcdtn") or by_stage("pretrain_ubcdtn"),
                                data, resume=res, **kw)
        else:
            prior = [ckpts.get(s) or by_stage(s) for s in ("pretrain_ubcdtn", "pretrain_sesrn")]
            ck = train_joint(config, [c for c in prior if c is not None], data, resume=res, **kw)
        ckpts[stage] = ck
        path = out / f"{stage}.ckpt"
        save_checkpoint(ck, path)
        print(f"{stage}: {ck.step} steps, checkpoint {path}")
    return 0


def cmd_infer(args) -> int:
    system = system_from_checkpoint(load_checkpoint(args.checkpoint))
    paths = imaging.list_images(args.src)
    if not paths:
        raise ValueError(f"no images in {args.src}")
    for p in paths:
        imaging.save_image(system.predict(imaging.load_image(p)), args.out / f"{p.stem}.png")
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def _val_set(args, scale: int):
    if args.val:
        return load_validation_dir(args.val)
    if args.toy:
        return ToyDataset(scale=scale, seed=args.seed, n_hr=1, n_lr=1).validation()
    raise ValueError("pass --val DIR or --toy")


def cmd_eval(args) -> int:
    if args.bicubic == bool(args.checkpoint):
        raise ValueError("pass exactly one of --checkpoint or --bicubic")
    if args.bicubic:
        model, scale = "bicubic", args.scale
    else:
        model = load_checkpoint(args.checkpoint)
        scale = model.config.scale
    result = evaluate(model, _val_set(args, scale), metric_space=args.metric_space,
                      crop_border=args.crop_border, scale=scale,
                      out_dir=args.out / "images" if args.save_images else None)
    imaging.write_metrics_csv(result.rows, args.out / "metrics.csv")
    s = result.summary
    print(f"PSNR {s.psnr_db:.3f} dB  SSIM {s.ssim:.4f}  ({s.n_images} images)")
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args)
    data = load_data(config, args.toy)
    val = load_validation_dir(args.val) if args.val else data.validation() if isinstance(data, ToyDataset) else None
    if val is None:
        raise ValueError("pass --val DIR for non-toy ablations")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    summary, ckpt, _ = run_ablation(args.variant, config, data, val, loss_log=LossLog(out / "losses.csv"),
                                    metric_space=args.metric_space, crop_border=args.crop_border)
    save_checkpoint(ckpt, out / f"variant_{args.variant}.ckpt")
    record = {"variant": args.variant, "psnr_db": summary.psnr_db, "ssim": summary.ssim,
              "n_images": summary.n_images, "scale": "toy" if args.toy else "custom"}
    (out / f"variant_{args.variant}.json").write_text(json.dumps(record, indent=2))
    label = " (toy scale)" if args.toy else ""
    print(f"variant {args.variant}{label}: PSNR {summary.psnr_db:.3f} dB  SSIM {summary.ssim:.4f}")
    return 0


COMMANDS = {"degrade": cmd_degrade, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
