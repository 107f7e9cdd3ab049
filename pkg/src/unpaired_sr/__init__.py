"""Unpaired real-world image super-resolution."""
from .estimator import UnpairedSuperResolver, check_images
from .harness import ToyDataset, UnpairedDatasetSpec, build_dataset, evaluate, run_ablation
from .imaging import DegradationSpec, degrade, psnr, ssim
from .training import (
    TrainConfig,
    load_checkpoint,
    pretrain_sesrn,
    pretrain_ubcdtn,
    save_checkpoint,
    train_all,
    train_joint,
)

__all__ = [
    "UnpairedSuperResolver", "check_images", "ToyDataset", "UnpairedDatasetSpec", "build_dataset",
    "evaluate", "run_ablation", "DegradationSpec", "degrade", "psnr", "ssim", "TrainConfig",
    "load_checkpoint", "save_checkpoint", "pretrain_ubcdtn", "pretrain_sesrn", "train_joint", "train_all",
]
__version__ = "0.1.0"
