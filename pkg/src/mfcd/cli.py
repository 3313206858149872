"""Command-line surface for the whole pipeline.

One binary with subcommands: generate data, encode/decode, emit clips,
train the teacher, train or distill students, evaluate, report FLOPs, and
run the four-format ablation.  Every run echoes its fully resolved
configuration so results are reproducible from the output alone.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import codec, distill, synth, xform
from .model import (DEFAULT_CONFIG, Model, ModelConfig, build, count_flops,
                    count_params, load_model_config, save_model_config)

__all__ = ["run", "main"]

_FORMAT_CHOICES = ("full", "ires", "res", "raw")


def _echo_config(args: argparse.Namespace) -> None:
    skip = {"func", "command"}
    for key in sorted(vars(args)):
        if key not in skip:
            print(f"config {key}={getattr(args, key)}")


def _load_model_spec(path: str | None) -> tuple[ModelConfig, int]:
    if path is None:
        return DEFAULT_CONFIG, 0
    return load_model_config(path)


def _load_train_cfg(args) -> distill.DistillConfig:
    cfg = (distill.load_distill_config(args.config) if args.config
           else distill.DistillConfig())
    cfg = replace(cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, epochs=args.epochs)
    return cfg


def _load_split(args):
    dataset = synth.load_dataset(args.data)
    return synth.split(dataset, args.train_fraction, args.seed)


def _write_model(prefix: str, model: Model, config: ModelConfig, seed: int,
                 report: distill.TrainReport) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    model.save(prefix + ".ckpt")
    save_model_config(prefix + ".config", config, seed)
    with open(prefix + ".csv", "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())


def _read_model(prefix: str) -> tuple[Model, ModelConfig]:
    config, seed = load_model_config(prefix + ".config")
    return Model.load(prefix + ".ckpt", config, seed, dtype=np.float32), config


# ---------------------------------------------------------------------------
# subcommands

def _cmd_synth(args) -> int:
    cfg = synth.SynthConfig(samples_per_class=args.samples_per_class,
                            background=args.background,
                            noise_amplitude=args.noise_amplitude,
                            seed=args.seed)
    dataset = synth.generate(cfg)
    synth.save_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} samples ({cfg.classes} classes) to {args.out}")
    return 0


def _cmd_encode(args) -> int:
    video = codec.read_raw_video(getattr(args, "in"))
    stream = codec.encode(video, args.block, args.search, args.gop)
    blob = codec.serialize(stream)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"encoded {video.shape[0]} frames into {len(stream.gops)} GOPs "
          f"({len(blob)} bytes)")
    return 0


def _cmd_decode(args) -> int:
    with open(getattr(args, "in"), "rb") as fh:
        stream = codec.parse(fh.read())
    video = codec.decode(stream)
    codec.write_raw_video(args.out, video)
    print(f"decoded {video.shape[0]} frames to {args.out}")
    return 0


def _cmd_xform(args) -> int:
    video = codec.read_raw_video(getattr(args, "in"))
    stream = codec.encode(video, args.block, args.search, args.gop)
    os.makedirs(args.out, exist_ok=True)
    count = 0
    offset = 0
    for gi, gop in enumerate(stream.gops):
        raw = video[offset:offset + gop.num_frames]
        offset += gop.num_frames
        if args.format == xform.RES_ONLY and gop.num_frames < 2:
            continue
        clip = xform.assemble_clip(gop, args.format, args.block, raw=raw)
        xform.write_clip(os.path.join(args.out, f"clip_{gi:04d}.mfct"),
                         clip, args.format)
        count += 1
    print(f"wrote {count} {args.format} clips to {args.out}")
    return 0


def _cmd_train_teacher(args) -> int:
    train, test = _load_split(args)
    mconfig, mseed = _load_model_spec(args.model_config)
    cfg = _load_train_cfg(args)
    model, report = distill.train_teacher(train, test, mconfig, cfg)
    _write_model(args.out, model, mconfig, mseed, report)
    sys.stdout.write(report.to_text())
    print(f"log: wall clock {report.wall_clock:.1f}s")
    print(f"final test accuracy {report.final_test_acc:.4f}")
    return 0


def _cmd_train_plain(args) -> int:
    train, test = _load_split(args)
    mconfig, mseed = _load_model_spec(args.model_config)
    cfg = _load_train_cfg(args)
    model, report = distill.train_student(train, test, mconfig, cfg,
                                          clip_format=args.format)
    _write_model(args.out, model, mconfig, mseed, report)
    sys.stdout.write(report.to_text())
    print(f"log: wall clock {report.wall_clock:.1f}s")
    print(f"final test accuracy {report.final_test_acc:.4f}")
    return 0


def _cmd_distill(args) -> int:
    train, test = _load_split(args)
    teacher, tconfig = _read_model(args.teacher)
    mconfig, mseed = _load_model_spec(args.model_config)
    if args.model_config is None:
        mconfig = tconfig   # same architecture keeps hint shapes aligned
    cfg = _load_train_cfg(args)
    cfg = replace(cfg, tau=args.tau, lambda1=args.lambda1, lambda2=args.lambda2)
    model, report = distill.distill_student(train, test, teacher, mconfig, cfg,
                                            student_format=args.format)
    _write_model(args.out, model, mconfig, mseed, report)
    sys.stdout.write(report.to_text())
    print(f"log: wall clock {report.wall_clock:.1f}s")
    print(f"final test accuracy {report.final_test_acc:.4f}")
    return 0


def _cmd_eval(args) -> int:
    dataset = synth.load_dataset(args.data)
    if args.model is not None:
        model, mconfig = _read_model(args.model)
    else:
        mconfig, mseed = _load_model_spec(args.model_config)
        model = build(mconfig, args.seed if args.model_config is None else mseed,
                      dtype=np.float32)
    clips, labels, vids = distill.make_clips(dataset, args.format,
                                             gop_len=mconfig.clip_len)
    acc = distill.evaluate(model, clips, labels, vids)
    print(f"accuracy {acc:.6f} over {len(dataset)} videos ({args.format})")
    return 0


def _cmd_flops(args) -> int:
    if args.per_clip_gflops is not None:
        per_clip = args.per_clip_gflops
    else:
        mconfig, _ = _load_model_spec(args.model_config)
        flops = count_flops(mconfig)
        per_clip = flops / 1e9
        print(f"params {count_params(mconfig)}")
        print(f"per-clip FLOPs {flops}")
    total = per_clip * args.clips_per_video
    print(f"per-clip GFLOPs {per_clip:g}")
    print(f"per-video total ({args.clips_per_video} clips) {total:g} GFLOPs")
    return 0


ABLATE_HEADER = "format,distilled,test_accuracy"


def _cmd_ablate(args) -> int:
    train, test = _load_split(args)
    mconfig, _ = _load_model_spec(args.model_config)
    cfg = _load_train_cfg(args)
    teacher, t_report = distill.train_teacher(train, test, mconfig, cfg)
    _, full_report = distill.distill_student(train, test, teacher, mconfig, cfg,
                                             student_format=xform.FULL)
    _, ires_report = distill.train_student(train, test, mconfig, cfg,
                                           clip_format=xform.I_PLUS_RES)
    _, res_report = distill.train_student(train, test, mconfig, cfg,
                                          clip_format=xform.RES_ONLY)
    rows = [ABLATE_HEADER,
            f"{xform.FULL},yes,{full_report.final_test_acc:.6f}",
            f"{xform.I_PLUS_RES},no,{ires_report.final_test_acc:.6f}",
            f"{xform.RES_ONLY},no,{res_report.final_test_acc:.6f}",
            f"{xform.RAW},no,{t_report.final_test_acc:.6f}"]
    table = "\n".join(rows) + "\n"
    sys.stdout.write(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcd",
        description="compressed-domain action recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, train=False):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1,
                       help="reserved; the pipeline currently runs single-threaded")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
            p.add_argument("--train-fraction", type=float, default=0.8)
        if train:
            p.add_argument("--config", default=None, help="train config file")
            p.add_argument("--model-config", default=None, help="model config file")
            p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("synth", help="generate the MovingShapes dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--samples-per-class", type=int, default=64)
    p.add_argument("--background", choices=("solid", "noise"), default="solid")
    p.add_argument("--noise-amplitude", type=int, default=2)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("encode", help="encode a raw video file")
    common(p)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block", type=int, default=codec.DEFAULT_BLOCK)
    p.add_argument("--search", type=int, default=codec.DEFAULT_SEARCH)
    p.add_argument("--gop", type=int, default=codec.DEFAULT_GOP)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a compressed stream")
    common(p)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("xform", help="emit clips in any format")
    common(p)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=_FORMAT_CHOICES, default="full")
    p.add_argument("--block", type=int, default=codec.DEFAULT_BLOCK)
    p.add_argument("--search", type=int, default=codec.DEFAULT_SEARCH)
    p.add_argument("--gop", type=int, default=codec.DEFAULT_GOP)
    p.set_defaults(func=_cmd_xform)

    p = sub.add_parser("train-teacher", help="train the raw-domain teacher")
    common(p, data=True, train=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=_cmd_train_teacher)

    p = sub.add_parser("train-plain", help="train a student without distillation")
    common(p, data=True, train=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--format", choices=_FORMAT_CHOICES, default="full")
    p.set_defaults(func=_cmd_train_plain)

    p = sub.add_parser("distill", help="distill a compressed-domain student")
    common(p, data=True, train=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--teacher", required=True, help="teacher path prefix")
    p.add_argument("--format", choices=_FORMAT_CHOICES, default="full")
    p.add_argument("--tau", type=float, default=4.0)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("eval", help="evaluate accuracy per clip format")
    common(p, data=True)
    p.add_argument("--model", default=None, help="model path prefix; omit for a "
                   "freshly initialized (untrained) model")
    p.add_argument("--model-config", default=None)
    p.add_argument("--format", choices=_FORMAT_CHOICES, default="full")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("flops", help="per-clip and per-video FLOP accounting")
    common(p)
    p.add_argument("--model-config", default=None)
    p.add_argument("--clips-per-video", type=int, default=15)
    p.add_argument("--per-clip-gflops", type=float, default=None,
                   help="override the per-clip cost (paper-scale arithmetic)")
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("ablate", help="four-format comparison at toy scale")
    common(p, data=True, train=True)
    p.add_argument("--out", default=None, help="optional CSV output path")
    p.set_defaults(func=_cmd_ablate)

    return parser


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _echo_config(args)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (ValueError, OSError, RuntimeError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))
