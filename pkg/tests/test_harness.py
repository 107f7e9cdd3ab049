import math

import numpy as np
import pytest
import torch

from unpaired_sr import imaging
from unpaired_sr.harness import (
    InMemoryUnpairedDataset,
    ToyDataset,
    UnpairedDatasetSpec,
    build_dataset,
    evaluate,
    image_id,
    load_validation_dir,
)
from unpaired_sr.sesrn import SR_TERMS, sesrn_losses
from unpaired_sr.training import TrainConfig, build_system, snapshot, ubcdtn_generator_report
from unpaired_sr.ubcdtn import BACKWARD_TERMS, FORWARD_TERMS
from unpaired_sr.variants import VARIANTS, active_terms, built_networks, get_variant


@pytest.fixture(scope="module")
def toy():
    return ToyDataset(n_hr=3, n_lr=3, seed=0)


def _write_folder(path, ids, size, seed=0):
    rng = np.random.default_rng(seed)
    for i in ids:
        imaging.save_image(torch.from_numpy(rng.random((1, 3, size, size))).float(), path / f"{i}.png")


# Datasets


def test_crop_shapes(toy):
    b = toy.batch(0, 4)
    assert b.hr.shape == (4, 3, 128, 128)
    assert b.lr_real.shape == (4, 3, 32, 32)
    assert b.lr_degraded.shape == (4, 3, 32, 32)


def test_batches_are_seeded(toy):
    a, b, c = toy.batch(5, 2, seed=1), toy.batch(5, 2, seed=1), toy.batch(6, 2, seed=1)
    assert torch.equal(a.hr, b.hr) and torch.equal(a.lr_real, b.lr_real)
    assert not torch.equal(a.hr, c.hr)


def test_toy_split_is_disjoint(toy):
    assert not set(toy.hr_ids) & set(toy.lr_ids)
    val_ids = {k for k, _, _ in toy.validation(3)}
    assert not val_ids & (set(toy.hr_ids) | set(toy.lr_ids))


def test_build_dataset_split_disjoint(tmp_path):
    hr_dir, lr_dir = tmp_path / "hr", tmp_path / "lr"
    ids = [f"{i:04d}" for i in range(1, 9)]
    _write_folder(hr_dir, ids, 128)
    _write_folder(lr_dir, ids, 32)
    ds = build_dataset(UnpairedDatasetSpec(str(hr_dir), str(lr_dir), patch_size=32))
    assert ds.hr_ids == ids[:4] and ds.lr_ids == ids[4:]
    ds = build_dataset(UnpairedDatasetSpec(str(hr_dir), str(lr_dir), 32, 4, (1, 3), (4, 8)))
    assert not set(ds.hr_ids) & set(ds.lr_ids)
    assert ds.batch(0, 2).hr.shape == (2, 3, 128, 128)
    with pytest.raises(ValueError):
        UnpairedDatasetSpec(str(hr_dir), str(lr_dir), 32, 4, (1, 5), (4, 8)).split()


def test_build_dataset_skips_undersized(tmp_path):
    hr_dir, lr_dir = tmp_path / "hr", tmp_path / "lr"
    _write_folder(hr_dir, ["01", "02"], 128)
    _write_folder(hr_dir, ["03"], 64)
    _write_folder(lr_dir, ["04", "05", "06"], 32)
    spec = UnpairedDatasetSpec(str(hr_dir), str(lr_dir), 32, 4, (1, 3), (4, 6))
    with pytest.warns(UserWarning, match="undersized"):
        ds = build_dataset(spec)
    assert ds.hr_ids == ["01", "02"]


def test_empty_inputs_rejected(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    with pytest.raises(ValueError):
        build_dataset(UnpairedDatasetSpec(str(tmp_path / "a"), str(tmp_path / "b")))
    with pytest.raises(ValueError):
        InMemoryUnpairedDataset([], [torch.rand(1, 3, 32, 32)])


def test_image_id_strips_scale_suffix():
    assert image_id("x/0001x4.png") == "0001"
    assert image_id("0001.png") == "0001"


# Evaluation


def test_oracle_model_scores_infinite_psnr(toy):
    val = toy.validation(3)
    truth = {id(lr): hr for _, lr, hr in val}
    res = evaluate(lambda lr: truth[id(lr)], val)
    assert all(r.psnr_db == math.inf and r.ssim == pytest.approx(1.0, abs=1e-12) for r in res.rows)
    assert res.summary.psnr_db == math.inf and res.summary.ssim == pytest.approx(1.0)


def test_bicubic_baseline_is_finite(toy):
    res = evaluate("bicubic", toy.validation(3), scale=4)
    assert all(math.isfinite(r.psnr_db) for r in res.rows)
    assert 5 < res.summary.psnr_db < 40


def test_mean_aggregation(toy):
    res = evaluate("bicubic", toy.validation(4), scale=4)
    psnrs = [r.psnr_db for r in res.rows]
    assert abs(res.summary.psnr_db - sum(psnrs) / len(psnrs)) <= 1e-9
    assert abs(res.summary.ssim - sum(r.ssim for r in res.rows) / 4) <= 1e-9


def test_evaluate_leaves_checkpoint_untouched(toy):
    ck = snapshot(build_system(TrainConfig.toy()), "joint", 0)
    before = {k: v.clone() for k, v in ck.state.items()}
    evaluate(ck, toy.validation(1))
    assert all(torch.equal(before[k], ck.state[k]) for k in before)


def test_missing_ground_truth(tmp_path):
    _write_folder(tmp_path / "LR", ["a", "b"], 16)
    _write_folder(tmp_path / "HR", ["a"], 64)
    val = load_validation_dir(tmp_path)
    assert [hr is None for _, _, hr in val] == [False, True]
    with pytest.raises(ValueError, match="ground truth"):
        evaluate("bicubic", val, scale=4)
    out = evaluate("bicubic", val, scale=4, metrics=False, out_dir=tmp_path / "SR")
    assert out.summary is None
    assert sorted(p.name for p in (tmp_path / "SR").iterdir()) == ["a.png", "b.png"]


# Ablation wiring


# Rows of the component tick matrix.
TICKS = {
    "A": {"SESRN"},
    "B": {"SESRN", "G_A", "D_B"},
    "C": {"SESRN", "G_A", "G_B", "FE_A", "FE_B"},
    "D": {"SESRN", "G_A", "G_B", "D_A", "D_B"},
    "E": {"SESRN", "G_A", "G_B", "D_A", "D_B", "FE_A", "FE_B"},
}


def test_variant_components_match_table():
    assert {k: set(v.components) for k, v in VARIANTS.items()} == TICKS
    with pytest.raises(ValueError):
        get_variant("F")


def test_variant_term_sets():
    sets = {v: active_terms(v) for v in VARIANTS}
    assert sets["A"] == set(SR_TERMS)
    assert sets["B"] == set(SR_TERMS) | {"adv_G_A"}
    assert not sets["C"] & {"adv_G_A", "adv_G_B"}
    assert not sets["D"] & {"percep_FE_A", "percep_FE_B"}
    assert sets["E"] == set(SR_TERMS) | set(FORWARD_TERMS) | set(BACKWARD_TERMS)
    assert len(set(sets.values())) == 5


def test_variant_b_forward_cycle_reading():
    assert "G_B" in built_networks(get_variant("B"), "forward_cycle")
    assert active_terms("B", "forward_cycle") == set(SR_TERMS) | {"adv_G_A", "cyc_G_B", "idt_degraded"}


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_built_system_reports_exactly_active_terms(variant, toy):
    cfg = TrainConfig.toy(variant=variant)
    system = build_system(cfg)
    batch = toy.batch(0, 2)
    terms = set()
    if system.uses_ubcdtn:
        terms |= set(ubcdtn_generator_report(system, batch).terms)
    rep, _ = sesrn_losses(system.sr, cfg.sr, system.real_like(batch.lr_degraded), batch.hr)
    terms |= set(rep.terms)
    assert terms == active_terms(variant)
