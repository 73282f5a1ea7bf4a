"""Command-line entry point: ``heatgait <subcommand> ...``.

Data goes to stdout and logs to stderr.  Exit codes are 0 on success,
1 for invalid input (bad arguments, config or keypoint files) and 2 for
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from heatgait import __version__
from heatgait.config import GlobalConfig, load_config
from heatgait.data import iter_keypoint_file, keypoint_files, load_dataset, save_keypoint_file
from heatgait.errors import HeatGaitError, UsageError, ValidationError
from heatgait.evaluation import (
    DEFAULT_VARIANTS,
    ablation_run,
    embed_all,
    emit_ablation,
    emit_table,
    is_gallery,
    is_probe,
    make_protocol,
    rank1,
)
from heatgait.graph import bias_report, coco17
from heatgait.train import DataConfig, load_checkpoint, preprocess, train

log = logging.getLogger("heatgait")

SEED_ENV = "HEATGAIT_SEED"

TRAIN_DEFAULTS = """\
config defaults: 100 epochs per cycle; lr 0.01, x0.1 per cycle, floor 1e-5,
4 cycles (the last one at the floor); batch 16 = 4 subjects x 4 sequences;
temperature 0.07; confidence threshold 0.6; 60 frames; max hop scale K = 3;
aggregation hop_extracted; blocks basic 2-64, basic 64-64, bottleneck 64-128
(stride 2), bottleneck 128-256 (stride 2); embedding 128."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage().rstrip()}")


@dataclass
class Command:
    name: str
    args: argparse.Namespace
    config: GlobalConfig


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="heatgait", description="Skeleton gait recognition with hop-extracted graph convolution.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic keypoint corpus",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--subjects", type=int, default=8, help="number of walkers")
    s.add_argument("--seqs-per-subject", type=int, default=10, help="NM#1-6, BG#1-2, CL#1-2, then extra NM")
    s.add_argument("--frames", type=int, default=60, help="frames per sequence")
    s.add_argument("--out", required=True, help="output directory, one .jsonl per subject")
    s.add_argument("--seed", type=int, default=None, help=f"corpus seed (falls back to ${SEED_ENV}, then 0)")

    s = sub.add_parser("validate", help="check keypoint files against the schema")
    s.add_argument("paths", nargs="+", help=".jsonl files or directories")

    s = sub.add_parser("preprocess", help="filter low-confidence frames and normalise coordinates",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--data", required=True, help="keypoint .jsonl file or directory")
    s.add_argument("--out", required=True, help="output directory (file names are kept)")
    s.add_argument("--config", default=None, help="JSON config; its data section applies")
    s.add_argument("--threshold", type=float, default=None, help="confidence threshold (config default 0.6)")

    s = sub.add_parser("train", help="train a model and write checkpoints",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter, epilog=TRAIN_DEFAULTS)
    s.add_argument("--config", default=None, help="JSON config with data/augment/model/train/eval sections")
    s.add_argument("--data", required=True, help="keypoint .jsonl file or directory")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--seed", type=int, default=None, help=f"falls back to ${SEED_ENV}, then the config")
    s.add_argument("--max-epochs", type=int, default=None, help="cap on epochs (config default: full schedule)")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")

    s = sub.add_parser("eval", help="rank-1 gallery/probe evaluation",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--checkpoint", required=True, help="best.ckpt or last.ckpt written by train")
    s.add_argument("--gallery", required=True, help="keypoints; only NM#1-4 are used")
    s.add_argument("--probe", required=True, help="keypoints; NM#5-6, BG and CL are used")
    s.add_argument("--format", choices=("csv", "markdown", "json"), default="markdown", help="table format")
    s.add_argument("--out", default=None, help="also write the table here")
    s.add_argument("--config", default=None, help="JSON config; its eval section applies")
    s.add_argument("--exclude-same-view", action="store_true", help="skip gallery entries at the probe's angle")

    s = sub.add_parser("ablation", help="train and evaluate the three ablation variants",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--config", default=None, help="JSON config shared by all variants")
    s.add_argument("--data", required=True, help="keypoint .jsonl file or directory")
    s.add_argument("--seed", type=int, default=None, help=f"falls back to ${SEED_ENV}, then the config")
    s.add_argument("--max-epochs", type=int, default=None, help="epoch cap per variant")
    s.add_argument("--format", choices=("markdown", "json"), default="markdown", help="table format")

    s = sub.add_parser("diagnose-bias", help="polynomial vs hop-extracted weight on the COCO-17 skeleton",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--max-scale", type=int, default=3, help="largest hop scale K (at least 2)")
    s.add_argument("--center", type=int, action="append", default=None, help="repeatable; default all joints")
    s.add_argument("--format", choices=("table", "json"), default="table", help="output format")
    return p


def _seed(flag):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"${SEED_ENV} must be an integer, got {env!r}") from None


def parse_args(argv) -> Command:
    argv = list(argv)
    parser = build_parser()
    if not argv:
        raise UsageError("no subcommand given\n\n" + parser.format_help().rstrip())
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("no subcommand given\n\n" + parser.format_help().rstrip())
    path = getattr(args, "config", None)
    cfg = load_config(path) if path else GlobalConfig()
    if hasattr(args, "seed"):
        args.seed = _seed(args.seed)
    if args.command in ("train", "ablation"):
        cfg = cfg.override("train", seed=args.seed, max_epochs=args.max_epochs)
        cfg = cfg.override("model", init_seed=args.seed)
    if args.command == "preprocess":
        cfg = cfg.override("data", confidence_threshold=args.threshold)
    if args.command == "eval":
        cfg = cfg.override("eval", format=args.format, exclude_same_view=args.exclude_same_view or None)
    return Command(args.command, args, cfg)


# -- subcommands --------------------------------------------------------------------------

def _synth(cmd: Command, out) -> int:
    from heatgait.synth import generate_corpus

    a = cmd.args
    seqs = generate_corpus(a.subjects, a.seqs_per_subject, a.frames, seed=a.seed or 0)
    root = Path(a.out)
    by_subject = {}
    for s in seqs:
        by_subject.setdefault(s.subject_id, []).append(s)
    for subject, items in by_subject.items():
        save_keypoint_file(items, root / f"{subject}.jsonl")
    log.info("wrote %d sequences for %d subjects to %s", len(seqs), len(by_subject), root)
    print(json.dumps({"sequences": len(seqs), "subjects": len(by_subject), "out": str(root)}), file=out)
    return 0


def _validate(cmd: Command, out) -> int:
    bad = good = 0
    for path in cmd.args.paths:
        files = keypoint_files(path)
        if not files or not all(f.is_file() for f in files):
            raise ValidationError(f"no keypoint files at {path}")
        for f in files:
            for lineno, item in iter_keypoint_file(f):
                if isinstance(item, Exception):
                    bad += 1
                    print(f"{f}:{lineno}: {item}", file=out)
                else:
                    good += 1
    print(f"{good} valid, {bad} invalid", file=out)
    return 1 if bad else 0


def _preprocess(cmd: Command, out) -> int:
    data_cfg = cmd.config.data
    root = Path(cmd.args.out)
    total = 0
    for f in keypoint_files(cmd.args.data):
        seqs = [preprocess(s, data_cfg) for s in load_dataset(f)]
        save_keypoint_file(seqs, root / f.name)
        total += len(seqs)
    print(json.dumps({"sequences": total, "out": str(root)}), file=out)
    return 0


def _train(cmd: Command, out) -> int:
    from heatgait.data import DatasetSplit

    cfg = cmd.config
    out_dir = Path(cmd.args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.to_json() + "\n")
    proto = make_protocol(load_dataset(cmd.args.data), cfg.data)
    split = DatasetSplit(proto.train, proto.validation, [])
    _, report = train(cfg.model, cfg.train, split, cfg.data, cfg.augment, out_dir=out_dir,
                      resume=cmd.args.resume)
    print(report.to_json(), file=out)
    return 0


def _eval(cmd: Command, out) -> int:
    model, _, meta = load_checkpoint(cmd.args.checkpoint)
    data_cfg = DataConfig(**meta["data_config"]) if "data_config" in meta else cmd.config.data
    ecfg = cmd.config.eval
    gallery_seqs = [s for s in load_dataset(cmd.args.gallery) if is_gallery(s)]
    probe_seqs = [s for s in load_dataset(cmd.args.probe) if is_probe(s)]
    log.info("gallery %d sequences, probe %d sequences", len(gallery_seqs), len(probe_seqs))
    gallery = embed_all(gallery_seqs, model, data_cfg)
    probe = embed_all(probe_seqs, model, data_cfg)
    result = rank1(probe, gallery, ecfg.exclude_same_view)
    text = emit_table(result.table, ecfg.format)
    if cmd.args.out:
        Path(cmd.args.out).write_text(text)
    out.write(text)
    log.info("overall rank-1 %.2f%%", result.accuracy)
    return 0


def _ablation(cmd: Command, out) -> int:
    cfg = cmd.config
    rows = ablation_run(load_dataset(cmd.args.data), DEFAULT_VARIANTS, cfg.model, cfg.train, cfg.data,
                        cfg.augment, cfg.eval)
    out.write(emit_ablation(rows, cmd.args.format))
    return 0


def _diagnose_bias(cmd: Command, out) -> int:
    rep = bias_report(coco17(), cmd.args.max_scale, centers=cmd.args.center)
    out.write((rep.to_json() if cmd.args.format == "json" else rep.to_table()) + "\n")
    return 0


HANDLERS = {
    "synth": _synth,
    "validate": _validate,
    "preprocess": _preprocess,
    "train": _train,
    "eval": _eval,
    "ablation": _ablation,
    "diagnose-bias": _diagnose_bias,
}


def run(cmd: Command, out=None) -> int:
    return HANDLERS[cmd.name](cmd, out or sys.stdout)


def main(argv=None, out=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.DEBUG if "-v" in argv or "--verbose" in argv else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(parse_args(argv), out)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (HeatGaitError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
