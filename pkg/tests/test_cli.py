"""End-to-end CLI checks through the in-process entry point."""
import os

import numpy as np
import pytest

from mfcd import cli, codec, synth, xform
from mfcd.model import DEFAULT_CONFIG, ModelConfig, count_flops, save_model_config

TINY_MODEL = ModelConfig(in_channels=3, clip_len=12, height=32, width=32,
                         stage_widths=(4,), blocks_per_stage=1, fibers=2,
                         classes=8)


@pytest.fixture(scope="module")
def tiny_dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "tiny"
    rc = cli.run(["synth", "--out", str(path), "--samples-per-class", "5",
                  "--seed", "0"])
    assert rc == 0
    return str(path)


@pytest.fixture(scope="module")
def tiny_model_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.config"
    save_model_config(path, TINY_MODEL, 0)
    return str(path)


@pytest.fixture(scope="module")
def raw_video_file(tmp_path_factory):
    rng = np.random.default_rng(11)
    video = rng.integers(0, 256, size=(27, 32, 32, 3), dtype=np.uint8)
    path = tmp_path_factory.mktemp("vid") / "clip.mfrv"
    codec.write_raw_video(path, video)
    return str(path), video


# ---------------------------------------------------------------------------
# encode / decode

def test_encode_decode_round_trip(raw_video_file, tmp_path, capsys):
    src, video = raw_video_file
    enc = str(tmp_path / "clip.mfcv")
    dec = str(tmp_path / "back.mfrv")
    assert cli.run(["encode", "--in", src, "--out", enc]) == 0
    out = capsys.readouterr().out
    assert "encoded 27 frames" in out and "3 GOPs" in out
    assert cli.run(["decode", "--in", enc, "--out", dec]) == 0
    np.testing.assert_array_equal(codec.read_raw_video(dec), video)


def test_encode_missing_input_exit_code(tmp_path, capsys):
    rc = cli.run(["encode", "--in", str(tmp_path / "nope.mfrv"),
                  "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# xform

def test_xform_emits_readable_clips(raw_video_file, tmp_path, capsys):
    src, video = raw_video_file
    out_dir = str(tmp_path / "clips")
    assert cli.run(["xform", "--in", src, "--out", out_dir,
                    "--format", "full"]) == 0
    # 27 frames at GOP 12 -> GOPs of 12, 12 and 3; xform emits one clip each
    files = sorted(os.listdir(out_dir))
    assert files == ["clip_0000.mfct", "clip_0001.mfct", "clip_0002.mfct"]
    clip, fmt = xform.read_clip(os.path.join(out_dir, files[0]))
    assert fmt == xform.FULL
    assert clip.shape == (3, 12, 32, 32)


# ---------------------------------------------------------------------------
# synth

def test_synth_writes_balanced_dataset(tiny_dataset_dir, capsys):
    dataset = synth.load_dataset(tiny_dataset_dir)
    assert len(dataset) == 5 * len(synth.CLASS_NAMES)
    labels = [s.label for s in dataset]
    assert all(labels.count(c) == 5 for c in range(len(synth.CLASS_NAMES)))


# ---------------------------------------------------------------------------
# flops

def test_flops_defaults_match_count_flops(capsys):
    assert cli.run(["flops"]) == 0
    out = capsys.readouterr().out
    assert f"per-clip FLOPs {count_flops(DEFAULT_CONFIG)}" in out


def test_flops_paper_scale_per_video(capsys):
    # 8.53 GFLOPs per clip, 15 clips per video
    assert cli.run(["flops", "--per-clip-gflops", "8.53",
                    "--clips-per-video", "15"]) == 0
    out = capsys.readouterr().out
    assert "per-video total (15 clips) 127.95 GFLOPs" in out


def test_flops_paper_scale_total_budget(capsys):
    assert cli.run(["flops", "--per-clip-gflops", "1.4",
                    "--clips-per-video", "750"]) == 0
    out = capsys.readouterr().out
    assert "per-video total (750 clips) 1050 GFLOPs" in out


# ---------------------------------------------------------------------------
# train / distill / eval round trip (tiny settings)

def test_train_eval_distill_round_trip(tiny_dataset_dir, tiny_model_config,
                                       tmp_path, capsys):
    teacher = str(tmp_path / "teacher")
    rc = cli.run(["train-teacher", "--data", tiny_dataset_dir,
                  "--model-config", tiny_model_config, "--epochs", "1",
                  "--out", teacher])
    assert rc == 0
    out = capsys.readouterr().out
    assert "final test accuracy" in out
    for suffix in (".ckpt", ".config", ".csv"):
        assert os.path.exists(teacher + suffix)
    with open(teacher + ".csv", encoding="utf-8") as fh:
        assert fh.readline().strip() == "epoch,ce,hint,sl,total,train_acc,test_acc"

    rc = cli.run(["eval", "--data", tiny_dataset_dir, "--model", teacher,
                  "--format", "raw"])
    assert rc == 0
    assert "accuracy" in capsys.readouterr().out

    student = str(tmp_path / "student")
    rc = cli.run(["distill", "--data", tiny_dataset_dir, "--teacher", teacher,
                  "--epochs", "1", "--out", student, "--format", "full"])
    assert rc == 0
    assert os.path.exists(student + ".ckpt")


def test_train_plain_writes_model(tiny_dataset_dir, tiny_model_config,
                                  tmp_path, capsys):
    out = str(tmp_path / "plain")
    rc = cli.run(["train-plain", "--data", tiny_dataset_dir,
                  "--model-config", tiny_model_config, "--epochs", "1",
                  "--out", out, "--format", "res"])
    assert rc == 0
    assert os.path.exists(out + ".ckpt")


# ---------------------------------------------------------------------------
# eval at chance level with an untrained model

def test_eval_untrained_model_is_chance_level(tmp_path, capsys):
    data_dir = str(tmp_path / "chance")
    assert cli.run(["synth", "--out", data_dir, "--samples-per-class", "56",
                    "--seed", "1"]) == 0
    capsys.readouterr()
    assert cli.run(["eval", "--data", data_dir, "--format", "raw",
                    "--seed", "0"]) == 0
    out = capsys.readouterr().out
    acc = float(out.split("accuracy ")[1].split()[0])
    assert abs(acc - 1.0 / 8.0) < 0.08  # 448 videos, 8 classes


# ---------------------------------------------------------------------------
# ablate

def test_ablate_reports_all_four_formats(tiny_dataset_dir, tiny_model_config,
                                         tmp_path, capsys):
    out_csv = str(tmp_path / "ablate.csv")
    rc = cli.run(["ablate", "--data", tiny_dataset_dir,
                  "--model-config", tiny_model_config, "--epochs", "1",
                  "--out", out_csv])
    assert rc == 0
    with open(out_csv, encoding="utf-8") as fh:
        lines = fh.read().strip().split("\n")
    assert lines[0] == "format,distilled,test_accuracy"
    rows = [line.split(",") for line in lines[1:]]
    assert [r[0] for r in rows] == ["full", "ires", "res", "raw"]
    assert [r[1] for r in rows] == ["yes", "no", "no", "no"]
    for r in rows:
        assert 0.0 <= float(r[2]) <= 1.0


# ---------------------------------------------------------------------------
# plumbing

def test_unknown_subcommand_exit_code(capsys):
    assert cli.run(["frobnicate"]) == 2


def test_missing_required_argument_exit_code(capsys):
    assert cli.run(["encode", "--in", "x"]) == 2


def test_config_echo(tmp_path, capsys):
    cli.run(["flops", "--seed", "3"])
    out = capsys.readouterr().out
    assert "config seed=3" in out
    assert "config clips_per_video=15" in out
