"""Adversarial training loop: three weighted losses, alternating updates, resume.

One step = one discriminator update on real and (detached) generated
batches, then one generator update against the refreshed discriminator.
Every random draw comes from a stream derived from (root seed, purpose,
index) — per-epoch data order, per-step noise — so a run is a pure
function of its config and a checkpoint can resume mid-epoch without
replaying history.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .config import config_hash
from .discriminator import Discriminator
from .generator import Generator
from .layout import SceneSample
from .seeding import fold_seed, np_rng, torch_gen

CSV_HEADER = ("step", "side", "l_app", "l_img", "l_obj", "total")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossReport:
    side: str
    step: int
    l_app: float
    l_img: float
    l_obj: float
    total: float


@dataclass(frozen=True)
class TrainConfig:
    lambda_im: float = 0.1
    lambda_o: float = 1.0
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.999
    epochs: int = 60
    batch_size: int = 64
    loss_form: str = "hinge"
    context_on: bool = True
    appearance_on: bool = True
    seed: int = 0
    n_max: int = 8
    image_size: int = 32
    checkpoint_every: int = 0  # steps between mid-run checkpoints; 0 = final only

    def __post_init__(self):
        if self.lambda_im < 0 or self.lambda_o < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be > 0")
        if self.loss_form not in ("hinge", "nonsaturating"):
            raise ValueError(f"unknown loss form: {self.loss_form!r}")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def adv_loss(
    real_logits: torch.Tensor | None,
    fake_logits: torch.Tensor,
    side: str,
    form: str = "hinge",
) -> torch.Tensor:
    """Adversarial loss over logit vectors; the generator side ignores real logits."""
    f = fake_logits if torch.is_tensor(fake_logits) else torch.stack(list(fake_logits))
    if side == "generator":
        if form == "hinge":
            return -f.mean()
        return F.softplus(-f).mean()
    if side != "discriminator":
        raise ValueError(f"unknown side: {side!r}")
    r = real_logits if torch.is_tensor(real_logits) else torch.stack(list(real_logits))
    if form == "hinge":
        return F.relu(1.0 - r).mean() + F.relu(1.0 + f).mean()
    if form == "nonsaturating":
        return F.softplus(-r).mean() + F.softplus(f).mean()
    raise ValueError(f"unknown loss form: {form!r}")


# ---------------------------------------------------------------------------
# data packing


@dataclass
class PackedScenes:
    """Whole dataset as padded tensors; small enough to live in memory at 32x32."""

    images: torch.Tensor  # (M, 3, H, W) in [-1, 1]
    boxes: torch.Tensor  # (M, n_max, 4)
    labels: torch.Tensor  # (M, n_max) long
    n_valid: torch.Tensor  # (M,) long

    def __len__(self) -> int:
        return self.images.shape[0]

    def batch(self, idx: np.ndarray | torch.Tensor):
        i = torch.as_tensor(idx, dtype=torch.long)
        return self.images[i], self.boxes[i], self.labels[i], self.n_valid[i]

    @classmethod
    def from_samples(cls, samples: list[SceneSample], n_max: int) -> "PackedScenes":
        M = len(samples)
        if M == 0:
            raise ValueError("empty dataset")
        H, W = samples[0].image.shape[1:]
        images = torch.empty(M, 3, H, W)
        boxes = torch.zeros(M, n_max, 4)
        labels = torch.zeros(M, n_max, dtype=torch.long)
        n_valid = torch.zeros(M, dtype=torch.long)
        for m, s in enumerate(samples):
            if s.layout.n > n_max:
                raise ValueError(f"sample {m} has {s.layout.n} items > n_max={n_max}")
            images[m] = torch.from_numpy(np.ascontiguousarray(s.image))
            for i, item in enumerate(s.layout.items):
                boxes[m, i] = torch.tensor([item.box.cx, item.box.cy, item.box.w, item.box.h])
                labels[m, i] = item.class_id
            n_valid[m] = s.layout.n
        return cls(images, boxes, labels, n_valid)

    @classmethod
    def from_dir(cls, dataset_dir: str | Path, n_max: int) -> tuple["PackedScenes", tuple[str, ...]]:
        """Load a synthesized dataset directory; returns (scenes, class names)."""
        import json

        from PIL import Image

        from .layout import ClassVocabulary, load_coco_style

        dataset_dir = Path(dataset_dir)
        layouts_path = dataset_dir / "layouts.json"
        manifest_path = dataset_dir / "manifest.json"
        if not layouts_path.exists() or not manifest_path.exists():
            raise FileNotFoundError(
                f"{dataset_dir} is not a dataset directory (need layouts.json and manifest.json)"
            )
        manifest = json.loads(manifest_path.read_text())
        classes = tuple(manifest["classes"])
        vocab = ClassVocabulary(classes)
        named = load_coco_style(layouts_path, vocab, n_min=1, n_max=n_max)
        samples = []
        for name, layout in named:
            png = dataset_dir / "images" / f"{name}.png"
            arr = np.asarray(Image.open(png).convert("RGB"), dtype=np.float32)
            image = (arr / 127.5 - 1.0).transpose(2, 0, 1)
            samples.append(SceneSample(image=image, layout=layout, occlusion_pairs=()))
        return cls.from_samples(samples, n_max), classes


# ---------------------------------------------------------------------------
# models and optimizers


def build_models(cfg: TrainConfig, n_classes: int) -> tuple[Generator, Discriminator]:
    g = Generator(
        n_classes, use_context=cfg.context_on, seed=fold_seed(cfg.seed, "model_g")
    )
    d = Discriminator(
        n_classes, with_appearance=cfg.appearance_on, seed=fold_seed(cfg.seed, "model_d")
    )
    return g, d


def build_optimizers(g: Generator, d: Discriminator, cfg: TrainConfig):
    betas = (cfg.beta1, cfg.beta2)
    opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr_g, betas=betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr_d, betas=betas)
    return opt_g, opt_d


def _require_finite(side: str, step: int, terms: dict[str, torch.Tensor]) -> None:
    bad = [name for name, t in terms.items() if not torch.isfinite(t).all()]
    if bad:
        dump = ", ".join(f"{name}={terms[name].item():.6g}" for name in terms)
        raise TrainingError(
            f"non-finite {side} loss at step {step}: offending term(s) "
            f"{', '.join(bad)}; all terms: {dump}"
        )


def train_step(
    g: Generator,
    d: Discriminator,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor],
    cfg: TrainConfig,
    step: int,
) -> tuple[LossReport, LossReport]:
    """One discriminator update followed by one generator update."""
    images, boxes, labels, n_valid = batch
    B, n_max = labels.shape
    noise_gen = torch_gen(fold_seed(cfg.seed, "noise", step))
    box_noise, base_noise = g.sample_noise(B, n_max, generator=noise_gen)
    want_app = cfg.appearance_on and d.appearance_head is not None

    fake = g(labels, boxes, n_valid, box_noise, base_noise)

    real_out = d(images, boxes, labels, n_valid, want_appearance=want_app)
    fake_out = d(fake.detach(), boxes, labels, n_valid, want_appearance=want_app)
    zero = images.new_zeros(())
    l_img_d = adv_loss(real_out["image"], fake_out["image"], "discriminator", cfg.loss_form)
    l_obj_d = adv_loss(real_out["object"], fake_out["object"], "discriminator", cfg.loss_form)
    l_app_d = (
        adv_loss(real_out["appearance"], fake_out["appearance"], "discriminator", cfg.loss_form)
        if want_app
        else zero
    )
    total_d = l_app_d + cfg.lambda_im * l_img_d + cfg.lambda_o * l_obj_d
    _require_finite(
        "discriminator", step, {"l_app": l_app_d, "l_img": l_img_d, "l_obj": l_obj_d}
    )
    opt_d.zero_grad(set_to_none=True)
    total_d.backward()
    opt_d.step()

    gen_out = d(fake, boxes, labels, n_valid, want_appearance=want_app)
    l_img_g = adv_loss(None, gen_out["image"], "generator", cfg.loss_form)
    l_obj_g = adv_loss(None, gen_out["object"], "generator", cfg.loss_form)
    l_app_g = (
        adv_loss(None, gen_out["appearance"], "generator", cfg.loss_form) if want_app else zero
    )
    total_g = l_app_g + cfg.lambda_im * l_img_g + cfg.lambda_o * l_obj_g
    _require_finite("generator", step, {"l_app": l_app_g, "l_img": l_img_g, "l_obj": l_obj_g})
    opt_g.zero_grad(set_to_none=True)
    total_g.backward()
    opt_g.step()

    report_d = LossReport(
        "discriminator", step, l_app_d.item(), l_img_d.item(), l_obj_d.item(), total_d.item()
    )
    report_g = LossReport(
        "generator", step, l_app_g.item(), l_img_g.item(), l_obj_g.item(), total_g.item()
    )
    return report_d, report_g


# ---------------------------------------------------------------------------
# checkpoint plumbing


def _optim_state_tensors(opt: torch.optim.Optimizer, prefix: str):
    sd = opt.state_dict()
    tensors: dict[str, torch.Tensor] = {}
    scalars: dict[str, dict] = {}
    for idx, state in sd["state"].items():
        scal = {}
        for key, val in state.items():
            if torch.is_tensor(val):
                tensors[f"{prefix}.state.{idx}.{key}"] = val
            else:
                scal[key] = val
        if scal:
            scalars[str(idx)] = scal
    meta = {"param_groups": sd["param_groups"], "scalars": scalars}
    return tensors, meta


def _optim_state_restore(opt, tensors: dict[str, torch.Tensor], prefix: str, meta: dict):
    state: dict[int, dict] = {}
    lead = f"{prefix}.state."
    for name, t in tensors.items():
        if not name.startswith(lead):
            continue
        idx_s, key = name[len(lead) :].split(".", 1)
        state.setdefault(int(idx_s), {})[key] = t
    for idx_s, scal in meta.get("scalars", {}).items():
        state.setdefault(int(idx_s), {}).update(scal)
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def save_train_checkpoint(path, g, d, opt_g, opt_d, cfg: TrainConfig, classes, position):
    tensors = {}
    for name, t in g.state_dict().items():
        tensors[f"g.{name}"] = t
    for name, t in d.state_dict().items():
        tensors[f"d.{name}"] = t
    og_t, og_m = _optim_state_tensors(opt_g, "og")
    od_t, od_m = _optim_state_tensors(opt_d, "od")
    tensors.update(og_t)
    tensors.update(od_t)
    meta = {
        "kind": "train",
        "cfg": cfg.as_dict(),
        "config_hash": config_hash(cfg.as_dict()),
        "classes": list(classes),
        "position": position,  # {"epoch": e, "step_in_epoch": k, "step": s}
        "optim_g": og_m,
        "optim_d": od_m,
    }
    save_checkpoint(path, tensors, meta)


def load_models(path) -> tuple[Generator, Discriminator, TrainConfig, dict]:
    """Rebuild generator/discriminator from a training checkpoint."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "train":
        raise TrainingError(f"{path}: not a training checkpoint")
    cfg = TrainConfig(**meta["cfg"])
    g, d = build_models(cfg, len(meta["classes"]))
    g.load_state_dict({k[2:]: v for k, v in tensors.items() if k.startswith("g.")})
    d.load_state_dict({k[2:]: v for k, v in tensors.items() if k.startswith("d.")})
    return g, d, cfg, meta


@dataclass
class TrainResult:
    checkpoint_path: Path
    csv_path: Path
    g: Generator
    d: Discriminator
    reports: list[LossReport] = field(default_factory=list)


def train(
    dataset: PackedScenes,
    cfg: TrainConfig,
    out_dir: str | Path,
    classes: tuple[str, ...],
    resume_from: str | Path | None = None,
    max_steps: int | None = None,
    progress: bool = False,
) -> TrainResult:
    """Run (or resume) the full loop; writes loss CSV and checkpoints under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "losses.csv"
    ckpt_path = out_dir / "checkpoint.ckpt"

    if resume_from is not None:
        g, d, ckpt_cfg, meta = load_models(resume_from)
        if ckpt_cfg.as_dict() != cfg.as_dict():
            raise TrainingError("resume config does not match checkpoint config")
        opt_g, opt_d = build_optimizers(g, d, cfg)
        tensors, _ = load_checkpoint(resume_from)
        _optim_state_restore(opt_g, tensors, "og", meta["optim_g"])
        _optim_state_restore(opt_d, tensors, "od", meta["optim_d"])
        start_epoch = meta["position"]["epoch"]
        start_in_epoch = meta["position"]["step_in_epoch"]
        step = meta["position"]["step"]
    else:
        g, d = build_models(cfg, len(classes))
        opt_g, opt_d = build_optimizers(g, d, cfg)
        start_epoch, start_in_epoch, step = 0, 0, 0

    M = len(dataset)
    steps_per_epoch = (M + cfg.batch_size - 1) // cfg.batch_size
    reports: list[LossReport] = []
    position = {"epoch": start_epoch, "step_in_epoch": start_in_epoch, "step": step}
    mode = "a" if resume_from is not None and csv_path.exists() else "w"
    with open(csv_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(CSV_HEADER)
        done = False
        for epoch in range(start_epoch, cfg.epochs):
            order = np_rng(fold_seed(cfg.seed, "order", epoch)).permutation(M)
            first = start_in_epoch if epoch == start_epoch else 0
            for k in range(first, steps_per_epoch):
                idx = order[k * cfg.batch_size : (k + 1) * cfg.batch_size]
                batch = dataset.batch(idx)
                rep_d, rep_g = train_step(g, d, opt_g, opt_d, batch, cfg, step)
                for rep in (rep_d, rep_g):
                    writer.writerow(
                        (rep.step, rep.side, repr(rep.l_app), repr(rep.l_img), repr(rep.l_obj), repr(rep.total))
                    )
                reports.append(rep_d)
                reports.append(rep_g)
                step += 1
                position = {"epoch": epoch, "step_in_epoch": k + 1, "step": step}
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    save_train_checkpoint(
                        ckpt_path, g, d, opt_g, opt_d, cfg, classes, position
                    )
                if max_steps is not None and step >= max_steps:
                    done = True
                    break
            if not done:
                # an exhausted epoch resumes at the top of the next one
                position = {"epoch": epoch + 1, "step_in_epoch": 0, "step": step}
            if progress and reports:
                last = reports[-1]
                print(
                    f"epoch {epoch + 1}/{cfg.epochs} step {step} g_total={last.total:.4f}",
                    flush=True,
                )
            if done:
                break
            fh.flush()
    save_train_checkpoint(ckpt_path, g, d, opt_g, opt_d, cfg, classes, position)
    return TrainResult(ckpt_path, csv_path, g, d, reports)
