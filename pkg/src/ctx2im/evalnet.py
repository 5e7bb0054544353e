"""Small frozen classifier used as the feature extractor for all metrics.

Trained on single-thing scenes (one background region plus exactly one
foreground shape), where the class label is unambiguous. Its penultimate
64-d features stand in for the Inception features that the usual
IS/FID protocol assumes; every metrics report records the checkpoint
hash, since scores are only comparable under the same extractor.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .seeding import fold_seed, np_rng
from .synth import SynthConfig, render_scene, sample_single_thing_layout

D_FEATURES = 64


class EvalNet(nn.Module):
    def __init__(self, n_classes: int):
        super().__init__()
        self.n_classes = n_classes
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.conv3 = nn.Conv2d(32, D_FEATURES, 3, padding=1)
        self.fc = nn.Linear(D_FEATURES, n_classes)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, 64) penultimate features."""
        x = F.avg_pool2d(F.leaky_relu(self.conv1(images), 0.2), 2)
        x = F.avg_pool2d(F.leaky_relu(self.conv2(x), 0.2), 2)
        x = F.leaky_relu(self.conv3(x), 0.2)
        return x.mean(dim=(2, 3))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(images))

    def predict_probs(self, images: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self(images), dim=-1)


def _single_thing_batch(cfg: SynthConfig, seeds) -> tuple[torch.Tensor, torch.Tensor]:
    vocab = cfg.vocab()
    images, labels = [], []
    for s in seeds:
        layout, thing_cls = sample_single_thing_layout(np_rng(s), cfg)
        sample = render_scene(layout, vocab)
        images.append(torch.from_numpy(sample.image))
        labels.append(thing_cls)
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)


def train_evalnet(
    cfg: SynthConfig,
    seed: int = 0,
    n_train: int = 3000,
    n_val: int = 500,
    epochs: int = 8,
    batch_size: int = 128,
    lr: float = 1e-3,
    min_accuracy: float = 0.95,
) -> tuple[EvalNet, float]:
    """Train to convergence and verify held-out accuracy >= min_accuracy."""
    train_seeds = [fold_seed(seed, "train", i) for i in range(n_train)]
    val_seeds = [fold_seed(seed, "val", i) for i in range(n_val)]
    images, labels = _single_thing_batch(cfg, train_seeds)
    val_images, val_labels = _single_thing_batch(cfg, val_seeds)

    with torch.random.fork_rng():
        torch.manual_seed(fold_seed(seed, "init"))
        net = EvalNet(cfg.n_things_classes())
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    for epoch in range(epochs):
        order = np_rng(fold_seed(seed, "order", epoch)).permutation(n_train)
        net.train()
        for k in range(0, n_train, batch_size):
            idx = torch.as_tensor(order[k : k + batch_size], dtype=torch.long)
            loss = F.cross_entropy(net(images[idx]), labels[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        preds = net(val_images).argmax(dim=-1)
    accuracy = (preds == val_labels).float().mean().item()
    if accuracy < min_accuracy:
        raise RuntimeError(
            f"evalnet reached only {accuracy:.3f} held-out accuracy "
            f"(need >= {min_accuracy}); increase epochs or training size"
        )
    return net, accuracy


def save_evalnet(path: str | Path, net: EvalNet, accuracy: float) -> None:
    meta = {"kind": "evalnet", "n_classes": net.n_classes, "accuracy": accuracy}
    save_checkpoint(path, dict(net.state_dict()), meta)


def load_evalnet(path: str | Path) -> tuple[EvalNet, dict]:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "evalnet":
        raise CheckpointError(f"{path}: not an evalnet checkpoint")
    net = EvalNet(meta["n_classes"])
    net.load_state_dict(tensors)
    net.eval()
    return net, meta


def evalnet_hash(path: str | Path) -> str:
    """Content hash of the extractor checkpoint, recorded in every metrics report."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
