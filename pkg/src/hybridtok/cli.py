"""Command-line entry point.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error. Failures print
one line ``E_<CODE>: message`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .data import DatasetManifest, ShapesSpec, generate_shapes, ingest, load_dataset, resolve_data_root
from .distill import missing_teacher_ids, read_teacher_file, write_teacher_file
from .errors import HybridTokError, TeacherDataError
from .evaluation import evaluate, run_ablation
from .export import write_index_grids, write_reconstructions
from .training import Trainer, load_checkpoint, save_checkpoint, training_data

log = logging.getLogger("hybridtok")


def _configs(args):
    if getattr(args, "profile", None):
        model, train = cfgmod.load_profile(args.profile, args.set)
    else:
        model, train = cfgmod.load_config(args.config, args.set)
    cfgmod.ensure_valid(model, train)
    return model, train


def _trainer_for(args) -> Trainer:
    if args.ckpt:
        return load_checkpoint(args.ckpt)
    return Trainer(*_configs(args))


def _dataset(args, trainer: Trainer):
    if args.data:
        return load_dataset(args.data, trainer.model_cfg.image_size)
    return training_data(trainer.train_cfg, trainer.model_cfg.image_size)[1]


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        trainer = load_checkpoint(args.resume)
    else:
        trainer = Trainer(*_configs(args))
    if args.data:
        trainer.train_cfg = cfgmod.replace(trainer.train_cfg, data_root=str(resolve_data_root(args.data)))
    train_set, eval_set = training_data(trainer.train_cfg, trainer.model_cfg.image_size)
    (out / "config.toml").write_text(cfgmod.serialize(trainer.model_cfg, trainer.train_cfg))
    dump_every = args.dump_every or trainer.train_cfg.dump_every
    dump_batch = eval_set.batch(np.arange(min(8, len(eval_set))), trainer.dtype)

    def dump(step, _rec):
        if dump_every and (step + 1) % dump_every == 0:
            with torch.no_grad():
                trainer.model.eval()
                recon = trainer.model(dump_batch.data).recon
            write_reconstructions(out / "dumps" / f"step_{step + 1:07d}", dump_batch.sample_ids, dump_batch.data, recon)

    trainer.fit(train_set, metrics_path=out / "metrics.jsonl", ckpt_dir=out / "checkpoints", callback=dump)
    save_checkpoint(trainer, out / "final.ckpt")
    print(json.dumps({"step": trainer.step, "checkpoint": str(out / "final.ckpt")}))
    return 0


def cmd_eval(args) -> int:
    trainer = _trainer_for(args)
    report = evaluate(trainer.model, _dataset(args, trainer), seed=trainer.model_cfg.seed)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_ablate(args) -> int:
    model, train = _configs(args)
    settings = None
    if args.settings:
        settings = [int(s) if s.lstrip("-").isdigit() else s for s in args.settings.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    result = run_ablation(args.axis, model, train, args.budget, settings=settings, seeds=seeds, out_dir=args.out)
    print(json.dumps({"axis": result.axis, "recon_mse": result.mean("recon_mse"), "probe_acc": result.mean("probe_acc")}))
    return 0


def cmd_tokenize(args) -> int:
    trainer = load_checkpoint(args.ckpt)
    dataset = _dataset(args, trainer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids, grids, vecs = [], [], []
    trainer.model.eval()
    for batch in dataset.iter_batches(100, trainer.dtype):
        indices, semantic = trainer.model.tokenize(batch.data)
        ids += list(batch.sample_ids)
        grids.append(indices.numpy())
        vecs.append(semantic.double().numpy())
    write_index_grids(out / "indices.jsonl", ids, np.concatenate(grids), trainer.model_cfg.entries_per_codebook)
    write_teacher_file(out / "semantic.jsonl", zip(ids, np.concatenate(vecs)))
    print(json.dumps({"samples": len(ids), "indices": str(out / "indices.jsonl"), "semantic": str(out / "semantic.jsonl")}))
    return 0


def cmd_reconstruct(args) -> int:
    trainer = load_checkpoint(args.ckpt)
    dataset = _dataset(args, trainer)
    rows = []
    trainer.model.eval()
    with torch.no_grad():
        for batch in dataset.iter_batches(100, trainer.dtype):
            recon = trainer.model(batch.data).recon
            rows += write_reconstructions(args.out, batch.sample_ids, batch.data, recon)
    Path(args.out, "manifest.json").write_text(json.dumps(rows, indent=1))
    print(json.dumps({"samples": len(rows), "psnr_mean": float(np.mean([r["psnr"] for r in rows]))}))
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = [json.loads(line) for line in Path(args.metrics).read_text().splitlines() if line.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in records]
    written = []
    for key in ("total", "recon", "semantic", "codebook", "commit", "perceptual", "adversarial"):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, [r[key] for r in records])
        ax.set_xlabel("step")
        ax.set_ylabel(key)
        ax.set_yscale("log" if min(r[key] for r in records) > 0 else "linear")
        fig.tight_layout()
        fig.savefig(out / f"loss_{key}.png", dpi=100)
        plt.close(fig)
        written.append(str(out / f"loss_{key}.png"))
    print(json.dumps({"plots": written}))
    return 0


def cmd_generate_shapes(args) -> int:
    spec = ShapesSpec(num_samples=args.num_samples, image_size=args.image_size, num_classes=args.num_classes, seed=args.seed)
    manifest = generate_shapes(spec, args.out, force=args.force)
    print(json.dumps({"root": manifest.root, "samples": len(manifest.entries)}))
    return 0


def cmd_ingest(args) -> int:
    manifest = ingest(resolve_data_root(args.root))
    text = manifest.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(json.dumps({"root": manifest.root, "samples": len(manifest.entries), "classes": manifest.class_names}))
    return 0


def cmd_check_teacher(args) -> int:
    table = read_teacher_file(args.teacher)
    data = resolve_data_root(args.data)
    manifest = DatasetManifest.from_json(data.read_text()) if data.is_file() else ingest(data)
    missing = missing_teacher_ids(table, [e.sample_id for e in manifest.entries])
    if missing:
        raise TeacherDataError(f"{len(missing)} samples lack teacher embeddings, e.g. {missing[:5]}")
    print(json.dumps({"covered": len(manifest.entries), "teacher_records": len(table)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridtok", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p, required=False):
        group = p.add_mutually_exclusive_group(required=required)
        group.add_argument("--config", help="TOML config file")
        group.add_argument("--profile", choices=["smoke", "desk", "full_scale"], help="bundled config profile")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. train.base_lr=5e-4")

    p = sub.add_parser("train", help="train a tokenizer")
    config_args(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--data", help="image folder or manifest.json (default: built-in shapes)")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--dump-every", type=int, default=0, help="write reconstruction dumps every N steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report for a checkpoint (or an untrained config)")
    p.add_argument("--ckpt")
    config_args(p)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one design axis")
    p.add_argument("--axis", required=True, choices=["token_count", "teacher_kind", "decoder_size", "losetok"])
    config_args(p)
    p.add_argument("--budget", type=int, required=True, help="training steps per point")
    p.add_argument("--settings", help="comma-separated values for the axis")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    for name, func, helptext in (
        ("tokenize", cmd_tokenize, "export index grids and pooled semantic vectors"),
        ("reconstruct", cmd_reconstruct, "write reconstructions and a PSNR/SSIM manifest"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("plot", help="loss curves from metrics.jsonl")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("generate-shapes", help="write the synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-samples", type=int, default=2000)
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate_shapes)

    p = sub.add_parser("ingest", help="index an image folder")
    p.add_argument("root")
    p.add_argument("--out", help="write manifest JSON here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("check-teacher", help="verify a teacher file covers every sample of a dataset")
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_check_teacher)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except HybridTokError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
