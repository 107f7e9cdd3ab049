import json

import pytest
import torch

from unpaired_sr import imaging
from unpaired_sr.cli import build_parser, main
from unpaired_sr.training import load_checkpoint


def _images(folder, n, size):
    for i in range(n):
        imaging.save_image(torch.rand(1, 3, size, size, generator=torch.Generator().manual_seed(i)),
                           folder / f"{i:04d}.png")


def test_parser_has_all_subcommands():
    parser = build_parser()
    for cmd in ("degrade", "train", "infer", "eval", "ablate"):
        assert parser.parse_args([cmd, "x", "--out", "o", "--checkpoint", "c"] if cmd == "infer"
                                 else [cmd, "x", "--out", "o"] if cmd == "degrade"
                                 else [cmd, "--variant", "A"] if cmd == "ablate" else [cmd]).command == cmd
    with pytest.raises(SystemExit):
        parser.parse_args(["ablate", "--variant", "F"])


def test_degrade_folder(tmp_path, capsys):
    _images(tmp_path / "hr", 2, 64)
    assert main(["degrade", str(tmp_path / "hr"), "--out", str(tmp_path / "lr"), "--noise-sigma", "0.01"]) == 0
    out = sorted((tmp_path / "lr").iterdir())
    assert [p.name for p in out] == ["0000.png", "0001.png"]
    assert imaging.load_image(out[0]).shape == (1, 3, 16, 16)
    assert "wrote 2 images" in capsys.readouterr().out


def test_train_eval_infer_roundtrip(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--toy", "--steps", "1", "--seed", "3", "--out", str(run)]) == 0
    for name in ("config.ini", "losses.csv", "pretrain_ubcdtn.ckpt", "pretrain_sesrn.ckpt", "joint.ckpt"):
        assert (run / name).is_file(), name
    ck = load_checkpoint(run / "joint.ckpt")
    assert (ck.stage, ck.step, ck.config.seed) == ("joint", 1, 3)

    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run / "joint.ckpt"), "--toy", "--out", str(ev), "--save-images"]) == 0
    assert (ev / "metrics.csv").read_text().splitlines()[0].startswith("image")
    assert len(list((ev / "images").iterdir())) == 6

    _images(tmp_path / "lr", 2, 16)
    assert main(["infer", str(tmp_path / "lr"), "--checkpoint", str(run / "joint.ckpt"),
                 "--out", str(tmp_path / "sr")]) == 0
    assert imaging.load_image(tmp_path / "sr" / "0000.png").shape == (1, 3, 64, 64)


def test_train_single_stage_from_init(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--toy", "--steps", "1", "--stage", "ubcdtn", "--out", str(run)]) == 0
    assert main(["train", "--toy", "--steps", "1", "--stage", "sesrn", "--init", str(run / "pretrain_ubcdtn.ckpt"),
                 "--out", str(run)]) == 0
    assert load_checkpoint(run / "pretrain_sesrn.ckpt").stage == "pretrain_sesrn"
    assert main(["train", "--toy", "--steps", "2", "--stage", "ubcdtn", "--resume",
                 str(run / "pretrain_ubcdtn.ckpt"), "--out", str(tmp_path / "r2")]) == 0
    assert load_checkpoint(tmp_path / "r2" / "pretrain_ubcdtn.ckpt").step == 2


def test_eval_bicubic_on_folder(tmp_path):
    _images(tmp_path / "val" / "HR", 2, 64)
    assert main(["degrade", str(tmp_path / "val" / "HR"), "--out", str(tmp_path / "val" / "LR")]) == 0
    out = tmp_path / "e"
    assert main(["eval", "--bicubic", "--val", str(tmp_path / "val"), "--out", str(out)]) == 0
    assert len((out / "metrics.csv").read_text().splitlines()) >= 3


def test_ablate_writes_summary(tmp_path):
    assert main(["ablate", "--variant", "A", "--toy", "--steps", "1", "--out", str(tmp_path)]) == 0
    record = json.loads((tmp_path / "variant_A.json").read_text())
    assert record["variant"] == "A" and record["scale"] == "toy"
    assert (tmp_path / "variant_A.ckpt").is_file()


def test_failures_exit_nonzero(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 1
    assert main(["eval", "--toy", "--out", str(tmp_path)]) == 1
    assert main(["infer", str(tmp_path / "missing"), "--checkpoint", str(tmp_path / "none.ckpt"),
                 "--out", str(tmp_path)]) == 1
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--toy", "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err


def test_diverged_run_exits_3(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[train]\nlr = 1e18\nlr_critic_scale = 1.0\n")
    code = main(["train", "--toy", "--steps", "30", "--stage", "ubcdtn", "--config", str(cfg),
                 "--out", str(tmp_path / "run")])
    assert code == 3
