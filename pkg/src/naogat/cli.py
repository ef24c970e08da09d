"""Command-line entry point: generate, train, eval, predict, curate.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .curation import FixtureRedetector, curate_dataset
from .dataset import DatasetFormatError, DatasetHeader, iter_clips, read_clips, read_header, write_clips
from .losses import NonFiniteLossError
from .model import NAOGAT, Batch, CompatibilityError
from .structures import ValidationError
from .synth import NOUN_NAMES, VERB_NAMES, SceneConfig, split_clips
from .train import evaluate, records_from_output, train

log = logging.getLogger("naogat")

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def scene_config(cfg: RunConfig) -> SceneConfig:
    return SceneConfig(canvas=cfg.image_size, frames=cfg.frames, num_nouns=cfg.num_nouns,
                       num_verbs=cfg.num_verbs, max_detections=cfg.max_detections, seed=cfg.seed)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def load_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag, key in (("no_omd", "omd_enabled"), ("no_nao_decoder", "nao_decoder_enabled"),
                      ("no_injection", "nao_injection_enabled")):
        if getattr(args, flag, False):
            overrides[key] = False
    for key in ("epochs", "n_train", "n_val", "variant", "hidden_fraction"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "config", None):
        return RunConfig.load(args.config, **overrides)
    return RunConfig(**overrides)


def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = Path(args.out or cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = scene_config(cfg)
    header = DatasetHeader(cfg.frames, cfg.channels, cfg.image_size, cfg.image_size, cfg.max_detections,
                           NOUN_NAMES[:cfg.num_nouns], VERB_NAMES[:cfg.num_verbs], scene.to_dict(),
                           {"variant": cfg.variant, "hidden_fraction": cfg.hidden_fraction})
    clips = {"train": [], "val": []}
    for name, clip in split_clips(scene, cfg.n_train, cfg.n_val, cfg.variant, cfg.hidden_fraction):
        clips[name].append(clip)
    for name, items in clips.items():
        write_clips(out / f"{name}.clips.gz", header, items)
    (out / "scene_config.json").write_text(_dumps(scene.to_dict()))
    (out / "run.cfg").write_text(cfg.dumps())
    print(_dumps({"train": len(clips["train"]), "val": len(clips["val"]), "out": str(out)}), end="")
    return 0


def _check_dataset(cfg: RunConfig, header: DatasetHeader) -> None:
    expected = (cfg.frames, cfg.channels, cfg.image_size, cfg.image_size, cfg.max_detections)
    found = (header.frames, header.channels, header.height, header.width, header.max_detections)
    if expected != found:
        raise CompatibilityError(f"config expects (T, C, H0, W0, Q) = {expected}, dataset has {found}")
    if len(header.nouns) != cfg.num_nouns or len(header.verbs) != cfg.num_verbs:
        raise CompatibilityError("dataset vocabularies do not match the config")


def cmd_train(args) -> int:
    cfg = load_config(args)
    data = Path(args.data or cfg.data_dir)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header, train_clips = read_clips(data / "train.clips.gz")
    _check_dataset(cfg, header)
    _, val_clips = read_clips(data / "val.clips.gz")
    with open(out / "train_log.jsonl", "w") as log_fh:
        def on_step(entry):
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")

        model, report, _ = train(cfg, train_clips, val_clips, on_step=on_step)
    save_checkpoint(out / "best.ckpt", model.state_dict(), {"config": cfg.model_dims(), "run": cfg.dumps()})
    (out / "run.cfg").write_text(cfg.dumps())
    (out / "val_metrics.json").write_text(_dumps(report))
    print(_dumps(report), end="")
    return 0


def load_model(path) -> NAOGAT:
    state, meta = load_checkpoint(path)
    cfg = RunConfig.loads(meta["run"]) if "run" in meta else RunConfig.from_dict(meta.get("config", {}))
    model = NAOGAT(cfg)
    model.load_state_dict(state)
    return model


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    header, clips = read_clips(args.data)
    _check_dataset(model.cfg, header)
    report, _, _ = evaluate(model, clips)
    text = _dumps(report)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def predict_clip(model: NAOGAT, clip, prefix: int | None = None) -> dict:
    prefix = clip.num_frames if prefix is None else prefix
    clip = clip.prefix(prefix)
    output = model(Batch.from_clips([clip]))
    record = records_from_output(output, Batch.from_clips([clip]), [clip])[0]
    best = record.predictions[0]
    return {
        "clip_id": clip.clip_id,
        "prefix": prefix,
        "box": list(best.box),
        "noun": best.noun,
        "verb": best.verb,
        "ttc": best.ttc,
        "confidence": best.confidence,
        "candidates": [{"box": list(p.box), "noun": p.noun, "score": p.confidence} for p in record.predictions],
    }


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    for i, clip in enumerate(iter_clips(args.clips)):
        if clip.clip_id == args.clip_id or (args.clip_id is None and i == args.index):
            print(_dumps(predict_clip(model, clip, args.prefix)), end="")
            return 0
    raise ValidationError(f"clip {args.clip_id or args.index} not found in {args.clips}")


def cmd_curate(args) -> int:
    summary = curate_dataset(args.records, FixtureRedetector.load(args.fixtures), args.out)
    text = _dumps(summary)
    if args.summary:
        Path(args.summary).write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="naogat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=argparse.SUPPRESS)
        p.add_argument("--seed", type=int)

    g = sub.add_parser("generate", help="write a synthetic train/val split")
    common(g)
    g.add_argument("--out")
    g.add_argument("--n-train", type=int, dest="n_train")
    g.add_argument("--n-val", type=int, dest="n_val")
    g.add_argument("--variant", choices=("standard", "nao_hidden"))
    g.add_argument("--hidden-fraction", type=float, dest="hidden_fraction")

    t = sub.add_parser("train", help="train on a generated split")
    common(t)
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--no-omd", action="store_true")
    t.add_argument("--no-nao-decoder", action="store_true")
    t.add_argument("--no-injection", action="store_true")

    e = sub.add_parser("eval", help="metrics report for a checkpoint on a dataset file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")

    p = sub.add_parser("predict", help="prediction for one clip from an observed prefix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clips", required=True)
    p.add_argument("--clip-id")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--prefix", type=int)

    c = sub.add_parser("curate", help="annotate NAO boxes from detector outputs")
    c.add_argument("--records", required=True)
    c.add_argument("--fixtures", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--summary")
    return parser


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "curate": cmd_curate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.print_config:
            print(load_config(args).dumps(), end="")
            return 0
        if not args.command:
            parser.print_help()
            return EXIT_VALIDATION
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError, CompatibilityError, DatasetFormatError, CheckpointError,
            OSError, LookupError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
