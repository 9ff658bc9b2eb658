"""Command-line entry point.

Subcommands: train, generate, synth-dataset, eval, inspect-style. Every run
writes a run manifest (command, resolved config, seed, checkpoint hash,
timestamps, outputs) to its output directory, so results are reproducible
from the manifest alone. Exit codes: 0 success, 1 runtime failure, 2
usage or configuration error. The SLOGAN_SEED environment variable
overrides any configured seed.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import signal
import sys
import tempfile
from datetime import datetime, timezone

import numpy as np
import torch

from .core import DatasetError, load_dataset
from .evaluation import cer, collect_stats, frechet_distance, make_trunk_extractor, per_writer_fid, wer
from .render import GlyphAtlas, LayoutError
from .synthesis import generate, save_image, synthesize_dataset
from .training import (
    CheckpointError,
    ConfigError,
    ModelConfig,
    Trainer,
    TrainingConfig,
    load_checkpoint,
    load_training_config,
)

SEED_ENV_VAR = "SLOGAN_SEED"
CHECKPOINT_NAME = "checkpoint.slgn"


def resolve_seed(flag_seed, config_seed=None):
    """Precedence: SLOGAN_SEED env, then --seed, then config, then 0."""
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    if flag_seed is not None:
        return flag_seed
    if config_seed is not None:
        return config_seed
    return 0


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat()


def write_run_manifest(out_dir, command, config, seed, checkpoint_hash, started, outputs):
    """Atomic JSON record of what this run did."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "checkpoint_sha256": checkpoint_hash,
        "started": started,
        "finished": _now(),
        "outputs": [os.path.abspath(p) for p in outputs],
    }
    path = os.path.join(out_dir, "run_manifest.json")
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _load_atlas(args):
    if getattr(args, "atlas_sheet", None):
        if not getattr(args, "atlas_metrics", None):
            raise ConfigError("--atlas-sheet requires --atlas-metrics")
        atlas = GlyphAtlas.load(args.atlas_sheet, args.atlas_metrics)
    else:
        atlas = GlyphAtlas.builtin()
    em = getattr(args, "em", None)
    return atlas.scaled(em) if em else atlas


def _read_lexicon(path):
    with open(path, encoding="utf-8") as f:
        words = [line.strip() for line in f if line.strip()]
    if not words:
        raise DatasetError(f"lexicon file has no words: {path}")
    return words


def _apply_overrides(config, pairs):
    by_name = {f.name: f for f in dataclasses.fields(TrainingConfig)}
    values = config.to_dict()
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = by_name[key].type
        try:
            if ftype == "bool" or ftype is bool:
                values[key] = {"true": True, "1": True, "yes": True,
                               "false": False, "0": False, "no": False}[raw.lower()]
            elif ftype == "int" or ftype is int:
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        except (KeyError, ValueError):
            raise ConfigError(f"bad value {raw!r} for config key {key}") from None
    return TrainingConfig(**values)


### subcommand implementations


def cmd_train(args):
    started = _now()
    config = load_training_config(args.config) if args.config else TrainingConfig()
    config = _apply_overrides(config, args.set)
    config.seed = resolve_seed(args.seed, config.seed)

    dataset = load_dataset(args.data)
    atlas = _load_atlas(args)
    lexicon = _read_lexicon(args.lexicon) if args.lexicon else None
    os.makedirs(args.out_dir, exist_ok=True)
    ckpt_path = os.path.join(args.out_dir, CHECKPOINT_NAME)
    log_path = os.path.join(args.out_dir, "loss_log.txt")

    if args.resume:
        trainer = Trainer.restore(args.resume, dataset, atlas,
                                  lexicon=lexicon, log_path=log_path)
    else:
        model_config = ModelConfig.scaled(args.model_scale) if args.model_scale != 1.0 \
            else ModelConfig()
        trainer = Trainer(dataset, atlas, model_config, config,
                          lexicon=lexicon, log_path=log_path)

    # finish the current iteration, checkpoint, then exit 1
    previous = signal.signal(signal.SIGINT, lambda *_: trainer.request_stop())
    try:
        status = trainer.train(args.max_iters, checkpoint_path=ckpt_path)
    finally:
        signal.signal(signal.SIGINT, previous)

    write_run_manifest(
        args.out_dir, "train",
        {"training": trainer.config.to_dict(), "model": trainer.model_config.to_dict(),
         "data": os.path.abspath(args.data), "max_iters": args.max_iters},
        trainer.config.seed, file_sha256(ckpt_path), started, [ckpt_path, log_path])
    print(f"{status}: iteration {trainer.iteration}, checkpoint {ckpt_path}")
    return 0 if status == "completed" else 1


def _resolve_cli_style(args, ckpt, seed):
    if args.style_id is not None:
        return args.style_id
    if args.style_file:
        with open(args.style_file, encoding="utf-8") as f:
            values = [float(line.strip()) for line in f if line.strip()]
        if len(values) != ckpt.bank.dim:
            raise ValueError(
                f"style file has {len(values)} values, checkpoint expects {ckpt.bank.dim}")
        return np.asarray(values, dtype=np.float32)
    return "random"


def cmd_generate(args):
    started = _now()
    seed = resolve_seed(args.seed)
    torch.manual_seed(seed)
    ckpt = load_checkpoint(args.checkpoint)
    atlas = _load_atlas(args)
    style = _resolve_cli_style(args, ckpt, seed)
    image = generate(ckpt, args.text, style=style, atlas=atlas,
                     interval_px=args.interval_px, curve_radius=args.curve_radius,
                     curve_span=args.curve_span, rng=np.random.default_rng(seed))
    out_path = args.out or os.path.join(args.out_dir, "generated.png")
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    save_image(image, out_path)
    write_run_manifest(
        args.out_dir, "generate",
        {"text": args.text, "style_id": args.style_id, "style_file": args.style_file,
         "interval_px": args.interval_px, "curve_radius": args.curve_radius,
         "curve_span": args.curve_span},
        seed, file_sha256(args.checkpoint), started, [out_path])
    print(out_path)
    return 0


def cmd_synth_dataset(args):
    started = _now()
    seed = resolve_seed(args.seed)
    ckpt = load_checkpoint(args.checkpoint)
    atlas = _load_atlas(args)
    lexicon = _read_lexicon(args.lexicon)
    manifest = synthesize_dataset(ckpt, lexicon, args.count, args.out_dir,
                                  style_policy=args.style_policy, seed=seed,
                                  atlas=atlas, interval_px=args.interval_px)
    write_run_manifest(
        args.out_dir, "synth-dataset",
        {"lexicon": os.path.abspath(args.lexicon), "count": args.count,
         "style_policy": args.style_policy, "interval_px": args.interval_px},
        seed, file_sha256(args.checkpoint), started, [manifest])
    print(manifest)
    return 0


def _report(out_dir, lines):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.txt")
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    sys.stdout.write(text)
    return path


def cmd_eval_fid(args):
    started = _now()
    ckpt = load_checkpoint(args.checkpoint)
    real = load_dataset(args.real_manifest)
    fake = load_dataset(args.fake_manifest)
    extractor = make_trunk_extractor(ckpt.discriminator, ckpt.training_config.train_width)
    lines = []
    if args.per_writer:
        group = lambda ds: {
            w: [s.image for s in ds.samples if s.writer_id == w] for w in ds.writer_index}
        score = per_writer_fid(group(real), group(fake), extractor)
        lines.append(f"per_writer_fid={score:.6f}")
    else:
        stats_r = collect_stats([s.image for s in real.samples], extractor)
        stats_f = collect_stats([s.image for s in fake.samples], extractor)
        lines.append(f"fid={frechet_distance(stats_r, stats_f):.6f}")
    report = _report(args.out_dir, lines)
    write_run_manifest(
        args.out_dir, "eval fid",
        {"real_manifest": os.path.abspath(args.real_manifest),
         "fake_manifest": os.path.abspath(args.fake_manifest),
         "per_writer": bool(args.per_writer)},
        resolve_seed(args.seed), file_sha256(args.checkpoint), started, [report])
    return 0


def cmd_eval_cer(args):
    started = _now()
    with open(args.ref_file, encoding="utf-8") as f:
        ref = f.read().strip()
    with open(args.hyp_file, encoding="utf-8") as f:
        hyp = f.read().strip()
    lines = [f"cer={cer(ref, hyp):.6f}", f"wer={wer(ref, hyp):.6f}"]
    report = _report(args.out_dir, lines)
    write_run_manifest(
        args.out_dir, "eval cer",
        {"ref_file": os.path.abspath(args.ref_file),
         "hyp_file": os.path.abspath(args.hyp_file)},
        resolve_seed(args.seed), None, started, [report])
    return 0


def cmd_inspect_style(args):
    started = _now()
    ckpt = load_checkpoint(args.checkpoint)
    if args.writer_index is not None:
        index = args.writer_index
        if not 0 <= index < len(ckpt.writer_ids):
            raise ValueError(f"writer index {index} out of range 0..{len(ckpt.writer_ids) - 1}")
    else:
        if args.writer_id not in ckpt.writer_index:
            raise ValueError(f"unknown writer id {args.writer_id!r}")
        index = ckpt.writer_index[args.writer_id]
    with torch.no_grad():
        vector = ckpt.bank.lookup(index).tolist()
    lo, hi = ckpt.bank.bounds()
    payload = {
        "writer_id": ckpt.writer_ids[index],
        "writer_index": index,
        "vector": vector,
        "bounds_lo": lo.tolist(),
        "bounds_hi": hi.tolist(),
    }
    os.makedirs(args.out_dir, exist_ok=True)
    out_path = os.path.join(args.out_dir, "style.json")
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1)
    json.dump(payload, sys.stdout, indent=1)
    sys.stdout.write("\n")
    write_run_manifest(
        args.out_dir, "inspect-style",
        {"writer_id": payload["writer_id"], "writer_index": index},
        resolve_seed(args.seed), file_sha256(args.checkpoint), started, [out_path])
    return 0


### parser wiring


def _add_atlas_flags(p):
    p.add_argument("--atlas-sheet", help="path to an atlas raster sheet")
    p.add_argument("--atlas-metrics", help="path to the atlas metrics sidecar")
    p.add_argument("--em", type=int, help="glyph body height in pixels (default: atlas native)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="handsynth",
        description="Handwriting-style text image synthesis with per-writer latent styles")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the alternating GAN training loop")
    p.add_argument("--data", required=True, help="training manifest (path\\ttranscript\\twriter)")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a training config field")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--out-dir", default="runs/train")
    p.add_argument("--resume", help="checkpoint to continue from (keeps its config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--model-scale", type=float, default=1.0,
                   help="multiply all channel widths by this factor")
    p.add_argument("--lexicon", help="optional word list for conditioning text")
    _add_atlas_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="synthesize one styled text image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    style = p.add_mutually_exclusive_group()
    style.add_argument("--style-id", type=int, help="writer index to imitate")
    style.add_argument("--style-file", help="UTF-8 file, one latent value per line")
    style.add_argument("--style-random", action="store_true",
                       help="sample a style from the bank bounds (default)")
    p.add_argument("--interval-px", type=int, default=0)
    p.add_argument("--curve-radius", type=float)
    p.add_argument("--curve-span", type=float, help="arc span in radians")
    p.add_argument("--out", help="output image path (default <out-dir>/generated.png)")
    p.add_argument("--out-dir", default="runs/generate")
    p.add_argument("--seed", type=int)
    _add_atlas_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("synth-dataset", help="export a labeled synthetic dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lexicon", required=True, help="UTF-8 word list, one word per line")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--style-policy", choices=["random", "writers"], default="random")
    p.add_argument("--interval-px", type=int, default=0)
    p.add_argument("--seed", type=int)
    _add_atlas_flags(p)
    p.set_defaults(func=cmd_synth_dataset)

    p = sub.add_parser("eval", help="quantitative evaluation")
    esub = p.add_subparsers(dest="eval_command", required=True)
    pf = esub.add_parser("fid", help="Fréchet feature distance between two manifests")
    pf.add_argument("--checkpoint", required=True, help="supplies the feature extractor")
    pf.add_argument("--real-manifest", required=True)
    pf.add_argument("--fake-manifest", required=True)
    pf.add_argument("--per-writer", action="store_true")
    pf.add_argument("--out-dir", default="runs/eval")
    pf.add_argument("--seed", type=int)
    pf.set_defaults(func=cmd_eval_fid)
    pc = esub.add_parser("cer", help="character and word error rates")
    pc.add_argument("--ref-file", required=True)
    pc.add_argument("--hyp-file", required=True)
    pc.add_argument("--out-dir", default="runs/eval")
    pc.add_argument("--seed", type=int)
    pc.set_defaults(func=cmd_eval_cer)

    p = sub.add_parser("inspect-style", help="dump a writer's latent vector and bounds")
    p.add_argument("--checkpoint", required=True)
    who = p.add_mutually_exclusive_group(required=True)
    who.add_argument("--writer-id", help="writer id as it appears in the manifest")
    who.add_argument("--writer-index", type=int)
    p.add_argument("--out-dir", default="runs/inspect")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_inspect_style)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, CheckpointError, LayoutError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
