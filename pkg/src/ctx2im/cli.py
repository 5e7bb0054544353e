"""Command-line entry point: synth, train, train-evalnet, generate, eval, ablate, visualize.

Every command resolves its configuration (defaults < config file <
flags), writes the resolved record and root seed into its output
directory before doing any work, and holds a lockfile there for the
duration. Exit code 0 means the command completed; any failure prints a
single ``error: ...`` line on stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import torch

from .config import DEFAULTS, config_hash, load_config, merge_config, write_resolved
from .evalnet import evalnet_hash, load_evalnet, save_evalnet, train_evalnet
from .generator import save_image_png
from .layout import ClassVocabulary, Layout, save_coco_style
from .metrics import (
    GaussianStats,
    diversity_score,
    features_and_probs,
    fid,
    generate_for_layouts,
    inception_score,
)
from .seeding import fold_seed
from .synth import SynthConfig, synth_scene
from .training import PackedScenes, TrainConfig, load_models, train
from .visualize import load_progressive_spec, progressive_visualize


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# plumbing


def _resolve_config(args) -> dict:
    layers = []
    if getattr(args, "config", None):
        layers.append(load_config(args.config))
    cfg = merge_config(DEFAULTS, *layers)
    if getattr(args, "epochs", None) is not None:
        cfg["train.epochs"] = args.epochs
    if getattr(args, "no_context", False):
        cfg["train.context_on"] = False
    if getattr(args, "no_appearance", False):
        cfg["train.appearance_on"] = False
    return cfg


def _synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig(
        image_size=cfg["synth.image_size"],
        n_min=cfg["synth.n_min"],
        n_max=cfg["synth.n_max"],
        occlusion_prob=cfg["synth.occlusion_prob"],
        ensure_occlusion=cfg["synth.ensure_occlusion"],
    )


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        lambda_im=cfg["train.lambda_im"],
        lambda_o=cfg["train.lambda_o"],
        lr_g=cfg["train.lr_g"],
        lr_d=cfg["train.lr_d"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        loss_form=cfg["train.loss_form"],
        context_on=cfg["train.context_on"],
        appearance_on=cfg["train.appearance_on"],
        seed=seed,
        n_max=cfg["synth.n_max"],
        image_size=cfg["synth.image_size"],
        checkpoint_every=cfg["train.checkpoint_every"],
    )


@contextlib.contextmanager
def _locked(out_dir: Path, force: bool = False):
    """Hold <out>/.lock for the duration of a command."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    if lock.exists() and not force:
        raise CliError(f"{out_dir} is locked by another run (remove {lock} or pass --force)")
    lock.unlink(missing_ok=True)
    fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
    finally:
        os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _write_run_record(cfg: dict, args, out_dir: Path) -> dict:
    record = dict(cfg)
    record["run.command"] = args.command
    record["run.seed"] = args.seed
    write_resolved(record, out_dir)
    return record


def _layout_from_row(boxes: torch.Tensor, labels: torch.Tensor, n: int, lattice: int) -> Layout:
    from .layout import BBox, LayoutItem

    items = [
        LayoutItem(class_id=int(labels[i]), box=BBox(*(float(v) for v in boxes[i])))
        for i in range(n)
    ]
    return Layout(items=items, lattice_h=lattice, lattice_w=lattice)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    if out.exists() and any(p.name != ".lock" for p in out.iterdir()) and not args.force:
        raise CliError(f"output directory {out} is not empty (pass --force to overwrite)")
    scfg = _synth_config(cfg)
    vocab = scfg.vocab()
    count = args.count if args.count is not None else cfg["synth.count"]
    with _locked(out, args.force):
        record = _write_run_record(cfg, args, out)
        (out / "images").mkdir(exist_ok=True)
        layouts, ids = [], []
        for i in range(count):
            sample = synth_scene(fold_seed(args.seed, "scene", i), scfg)
            name = f"scene_{i:05d}"
            save_image_png(torch.from_numpy(sample.image), out / "images" / f"{name}.png")
            layouts.append(sample.layout)
            ids.append(name)
        save_coco_style(out / "layouts.json", layouts, vocab, image_ids=ids)
        manifest = {
            "kind": "dataset",
            "classes": list(vocab.names),
            "count": count,
            "seed": args.seed,
            "image_size": scfg.image_size,
            "config_hash": config_hash(record),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"wrote {count} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    dataset, classes = PackedScenes.from_dir(args.data, n_max=cfg["synth.n_max"])
    tcfg = _train_config(cfg, args.seed)
    with _locked(out, args.force):
        _write_run_record(cfg, args, out)
        result = train(
            dataset, tcfg, out, classes, resume_from=args.resume, progress=True
        )
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_train_evalnet(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    scfg = _synth_config(cfg)
    with _locked(out, args.force):
        _write_run_record(cfg, args, out)
        net, accuracy = train_evalnet(
            scfg,
            seed=args.seed,
            n_train=cfg["evalnet.n_train"],
            n_val=cfg["evalnet.n_val"],
            epochs=cfg["evalnet.epochs"],
            batch_size=cfg["evalnet.batch_size"],
            lr=cfg["evalnet.lr"],
            min_accuracy=cfg["evalnet.min_accuracy"],
        )
        path = out / "evalnet.ckpt"
        save_evalnet(path, net, accuracy)
    print(f"evalnet: {path} (held-out accuracy {accuracy:.3f})")
    return 0


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    g, _, tcfg, meta = load_models(args.checkpoint)
    vocab = ClassVocabulary(tuple(meta["classes"]))
    from .layout import load_coco_style

    named = load_coco_style(args.layouts, vocab, n_min=1, n_max=tcfg.n_max)
    if not named:
        raise CliError(f"no usable layouts in {args.layouts}")
    samples = args.samples if args.samples is not None else cfg["generate.samples"]
    with _locked(out, args.force):
        _write_run_record(cfg, args, out)
        n_max = max(layout.n for _, layout in named)
        M = len(named)
        boxes = torch.zeros(M, n_max, 4)
        labels = torch.zeros(M, n_max, dtype=torch.long)
        n_valid = torch.zeros(M, dtype=torch.long)
        for m, (_, layout) in enumerate(named):
            for i, item in enumerate(layout.items):
                boxes[m, i] = torch.tensor([item.box.cx, item.box.cy, item.box.w, item.box.h])
                labels[m, i] = item.class_id
            n_valid[m] = layout.n
        images = generate_for_layouts(g, boxes, labels, n_valid, samples, args.seed)
        for m in range(M):
            for j in range(samples):
                save_image_png(images[m * samples + j], out / f"layout{m}_sample{j}.png")
    print(f"wrote {M * samples} images to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    evalnet_path = Path(args.evalnet)
    if not evalnet_path.exists():
        raise CliError(
            f"no evalnet checkpoint at {evalnet_path}; train one first with "
            f"`ctx2im train-evalnet --out <dir>`"
        )
    net, _ = load_evalnet(evalnet_path)
    g, _, tcfg, _ = load_models(args.checkpoint)
    dataset, _ = PackedScenes.from_dir(args.data, n_max=tcfg.n_max)
    samples = args.samples if args.samples is not None else cfg["eval.samples_per_layout"]
    with _locked(out, args.force):
        record = _write_run_record(cfg, args, out)
        L = cfg["eval.max_layouts"] or len(dataset)
        L = min(L, len(dataset))
        real_feats, _ = features_and_probs(net, dataset.images)
        gen_images = generate_for_layouts(
            g, dataset.boxes[:L], dataset.labels[:L], dataset.n_valid[:L],
            samples, fold_seed(args.seed, "gen"),
        )
        gen_feats, gen_probs = features_and_probs(net, gen_images)
        is_mean, is_std = inception_score(gen_probs, splits=cfg["eval.is_splits"])
        fid_value = fid(
            GaussianStats.from_features(real_feats), GaussianStats.from_features(gen_feats)
        )
        distances = []
        for li in range(min(cfg["eval.div_layouts"], len(dataset))):
            layout = _layout_from_row(
                dataset.boxes[li], dataset.labels[li], int(dataset.n_valid[li]), tcfg.image_size
            )
            mean, _ = diversity_score(
                layout, g, net, pairs=cfg["eval.div_pairs"], seed=fold_seed(args.seed, "div", li)
            )
            distances.append(mean)
        import numpy as np

        report = {
            "is_mean": is_mean,
            "is_std": is_std,
            "fid": fid_value,
            "div_mean": float(np.mean(distances)),
            "div_std": float(np.std(distances)),
            "n_real": int(dataset.images.shape[0]),
            "n_gen": int(gen_images.shape[0]),
            "evalnet_hash": evalnet_hash(evalnet_path),
            "config_hash": config_hash(record),
        }
        (out / "metrics.json").write_text(json.dumps(report, indent=1))
    print(json.dumps(report))
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    rows = (
        ("baseline", False, False),
        ("context", True, False),
        ("appearance", False, True),
        ("full", True, True),
    )
    summary = []
    with _locked(out, args.force):
        _write_run_record(cfg, args, out)
        for idx, (name, ctx_on, app_on) in enumerate(rows, start=1):
            row_cfg = dict(cfg)
            row_cfg["train.context_on"] = ctx_on
            row_cfg["train.appearance_on"] = app_on
            row_out = out / f"row{idx}_{name}"
            row_args = argparse.Namespace(
                command="train", config=None, out=str(row_out), data=args.data,
                seed=args.seed, epochs=None, no_context=not ctx_on,
                no_appearance=not app_on, resume=None, force=args.force,
            )
            # reuse the train/eval handlers so each row leaves a full run record
            sub = merge_config(DEFAULTS, row_cfg)
            dataset, classes = PackedScenes.from_dir(args.data, n_max=sub["synth.n_max"])
            tcfg = _train_config(sub, args.seed)
            with _locked(row_out, args.force):
                _write_run_record(sub, row_args, row_out)
                result = train(dataset, tcfg, row_out, classes, progress=True)
            eval_args = argparse.Namespace(
                command="eval", config=args.config, out=str(row_out / "eval"),
                checkpoint=str(result.checkpoint_path), data=args.data,
                evalnet=args.evalnet, seed=args.seed, samples=None, force=args.force,
                epochs=None, no_context=False, no_appearance=False,
            )
            cmd_eval(eval_args)
            report = json.loads((row_out / "eval" / "metrics.json").read_text())
            summary.append(
                {"row": idx, "name": name, "context": ctx_on, "appearance": app_on, **report}
            )
        (out / "ablation.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps([{k: r[k] for k in ("name", "fid", "is_mean")} for r in summary]))
    return 0


def cmd_visualize(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    g, _, _, meta = load_models(args.checkpoint)
    vocab = ClassVocabulary(tuple(meta["classes"]))
    base, additions = load_progressive_spec(args.spec, vocab)
    with _locked(out, args.force):
        _write_run_record(cfg, args, out)
        rows = progressive_visualize(base, additions, g, out, seed=args.seed)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctx2im", description="Context-aware layout-to-image synthesis toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="root seed for this command")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs/locks")

    p = sub.add_parser("synth", help="synthesize a scene dataset")
    common(p)
    p.add_argument("--count", type=int, help="number of scenes (default from config)")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train the generator and discriminator")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory from `synth`")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--no-context", action="store_true", help="bypass the context transform")
    p.add_argument("--no-appearance", action="store_true", help="drop the appearance head")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("train-evalnet", help="train the frozen metric classifier")
    common(p)
    p.set_defaults(handler=cmd_train_evalnet)

    p = sub.add_parser("generate", help="generate images for a layouts file")
    common(p)
    p.add_argument("--checkpoint", required=True, help="training checkpoint")
    p.add_argument("--layouts", required=True, help="COCO-style layouts JSON")
    p.add_argument("--samples", type=int, help="images per layout")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("eval", help="compute IS/FID/diversity for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="training checkpoint")
    p.add_argument("--data", required=True, help="dataset directory (real side)")
    p.add_argument("--evalnet", required=True, help="evalnet checkpoint path")
    p.add_argument("--samples", type=int, help="generated images per layout")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", help="run the 4-row context/appearance grid")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--evalnet", required=True, help="evalnet checkpoint path")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("visualize", help="progressive layout visualization")
    common(p)
    p.add_argument("--checkpoint", required=True, help="training checkpoint")
    p.add_argument("--spec", required=True, help="progressive layout spec JSON")
    p.set_defaults(handler=cmd_visualize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except Exception as e:  # noqa: BLE001 — contract: one-line machine-parsable error
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
