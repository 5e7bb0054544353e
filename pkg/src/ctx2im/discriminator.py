"""Three-headed discriminator: image realism, per-object class realism, appearance.

All heads share one spectrally normalized convolutional backbone. The
image head sum-pools the whole feature map (and is therefore blind to
*where* things activate); the object head pools an ROI per box and
concatenates a class embedding. The appearance head is the
location-sensitive one: it scores the raw Gram matrix of each box's ROI
features, whose entries are large only when two channels co-activate at
the same spatial positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils import spectral_norm

from . import spatial
from .layout import BBox
from .seeding import fold_seed

ROI_SIZE = 8
K_EMB = 32


class BackboneNet(nn.Module):
    """3xHxW image -> CxH/4xW/4 features, spectral norm on every convolution."""

    def __init__(self, channels: int = 64):
        super().__init__()
        self.channels = channels
        c = channels // 2
        self.conv1 = spectral_norm(nn.Conv2d(3, c, 3, 1, 1))
        self.conv2 = spectral_norm(nn.Conv2d(c, c, 4, 2, 1))
        self.conv3 = spectral_norm(nn.Conv2d(c, channels, 3, 1, 1))
        self.conv4 = spectral_norm(nn.Conv2d(channels, channels, 4, 2, 1))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv1(images), 0.2)
        x = F.leaky_relu(self.conv2(x), 0.2)
        x = F.leaky_relu(self.conv3(x), 0.2)
        x = F.leaky_relu(self.conv4(x), 0.2)
        return x


def gram(roi_feature: torch.Tensor) -> torch.Tensor:
    """Gram matrix S·Sᵀ/C of one (C, h, w) ROI feature tensor.

    The normalizer is the channel count, so the co-location fixture
    (two unit activations at the same site, C=2) lands exactly on 1/2.
    """
    C = roi_feature.shape[0]
    s = roi_feature.reshape(C, -1)
    return s @ s.T / C


def gram_batch(roi_features: torch.Tensor) -> torch.Tensor:
    """(K, C, h, w) -> (K, C, C) Gram matrices."""
    K, C = roi_features.shape[:2]
    s = roi_features.reshape(K, C, -1)
    return s @ s.transpose(1, 2) / C


@dataclass(frozen=True)
class GramAppearance:
    matrix: torch.Tensor  # (C, C)
    class_id: int


def check_gram(matrix: torch.Tensor, tol: float = 1e-6) -> None:
    """Assert symmetry and positive semidefiniteness (debug-mode invariant).

    Tolerances scale with the matrix magnitude so the check stays
    meaningful for both unit fixtures and large trained-feature Grams.
    """
    scale = max(1.0, matrix.abs().max().item())
    asym = (matrix - matrix.T).abs().max().item()
    if asym > tol * scale:
        raise AssertionError(f"gram not symmetric: max |A - Aᵀ| = {asym:.3e}")
    eigs = torch.linalg.eigvalsh(matrix.double())
    if eigs.min().item() < -tol * scale:
        raise AssertionError(f"gram not PSD: min eigenvalue = {eigs.min().item():.3e}")


class ImageHead(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.linear = spectral_norm(nn.Linear(channels, 1))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.linear(features.sum(dim=(2, 3))).squeeze(-1)


class ObjectHead(nn.Module):
    def __init__(self, channels: int, n_classes: int, k_emb: int = K_EMB):
        super().__init__()
        self.embedding = spectral_norm(nn.Embedding(n_classes, k_emb))
        self.linear = spectral_norm(nn.Linear(channels + k_emb, 1))

    def forward(self, roi_features: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        pooled = roi_features.sum(dim=(2, 3))
        joint = torch.cat([pooled, self.embedding(labels)], dim=-1)
        return self.linear(joint).squeeze(-1)


class AppearanceHead(nn.Module):
    """Scores raw Gram matrices row-by-row against a class embedding.

    Each of the C rows is concatenated with the label embedding and
    mapped to a scalar by one bias-free weight vector; the head output
    is the mean over rows.
    """

    def __init__(self, channels: int, n_classes: int, k_emb: int = K_EMB):
        super().__init__()
        self.embedding = spectral_norm(nn.Embedding(n_classes, k_emb))
        self.w_a = spectral_norm(nn.Linear(channels + k_emb, 1, bias=False))

    def forward(self, grams: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        K, C, _ = grams.shape
        emb = self.embedding(labels)
        rows = torch.cat([grams, emb.unsqueeze(1).expand(K, C, emb.shape[-1])], dim=-1)
        return self.w_a(rows).squeeze(-1).mean(dim=-1)


class Discriminator(nn.Module):
    """Backbone plus up to three heads over padded box batches.

    Like the generator, every submodule is initialized under its own
    derived seed; omitting the appearance head cannot shift any other
    submodule's initial weights.
    """

    def __init__(
        self,
        n_classes: int,
        channels: int = 64,
        roi_size: int = ROI_SIZE,
        k_emb: int = K_EMB,
        with_appearance: bool = True,
        seed: int = 0,
    ):
        super().__init__()
        self.n_classes = n_classes
        self.roi_size = roi_size
        self.debug_checks = False
        with torch.random.fork_rng():
            torch.manual_seed(fold_seed(seed, "backbone"))
            self.backbone = BackboneNet(channels)
        with torch.random.fork_rng():
            torch.manual_seed(fold_seed(seed, "image_head"))
            self.image_head = ImageHead(channels)
        with torch.random.fork_rng():
            torch.manual_seed(fold_seed(seed, "object_head"))
            self.object_head = ObjectHead(channels, n_classes, k_emb)
        self.appearance_head = None
        if with_appearance:
            with torch.random.fork_rng():
                torch.manual_seed(fold_seed(seed, "appearance_head"))
                self.appearance_head = AppearanceHead(channels, n_classes, k_emb)

    def roi_features(
        self, features: torch.Tensor, boxes: torch.Tensor, n_valid: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """ROI-align per valid box; returns (roi features, batch index, item index)."""
        Hf, Wf = features.shape[-2:]
        rois, batch_index, item_index = spatial.rois_tensor(
            boxes, n_valid, Hf, Wf, dtype=features.dtype
        )
        roi_feats = spatial.roi_align_rois(features, rois, self.roi_size, self.roi_size)
        return roi_feats, batch_index, item_index

    def forward(
        self,
        images: torch.Tensor,
        boxes: torch.Tensor,
        labels: torch.Tensor,
        n_valid: torch.Tensor,
        want_appearance: bool = True,
    ) -> dict[str, torch.Tensor | None]:
        features = self.backbone(images)
        image_logits = self.image_head(features)
        roi_feats, batch_index, item_index = self.roi_features(features, boxes, n_valid)
        flat_labels = labels[batch_index, item_index]
        object_logits = self.object_head(roi_feats, flat_labels)
        appearance_logits = None
        if want_appearance and self.appearance_head is not None:
            grams = gram_batch(roi_feats)
            if self.debug_checks:
                for g in grams:
                    check_gram(g.detach())
            appearance_logits = self.appearance_head(grams, flat_labels)
        return {
            "image": image_logits,
            "object": object_logits,
            "appearance": appearance_logits,
        }


# ---------------------------------------------------------------------------
# single-input operations


def appearance_score(a: GramAppearance, head: AppearanceHead) -> torch.Tensor:
    """Score one Gram matrix under its class condition."""
    C = a.matrix.shape[0]
    if a.matrix.shape != (C, C):
        raise ValueError("gram matrix must be square")
    label = torch.tensor([a.class_id])
    return head(a.matrix.unsqueeze(0), label).squeeze(0)


def image_score(image: torch.Tensor, d: Discriminator) -> torch.Tensor:
    """Whole-image realism logit for one (3, H, W) image."""
    features = d.backbone(image.unsqueeze(0))
    return d.image_head(features).squeeze(0)


def object_score(image: torch.Tensor, box: BBox, class_id: int, d: Discriminator) -> torch.Tensor:
    """Class-conditional realism logit for one box in one image."""
    if not 0 <= class_id < d.n_classes:
        raise ValueError(f"class id {class_id} outside vocabulary")
    c = box.clipped()
    if c.w <= 0 or c.h <= 0:
        raise ValueError("degenerate box")
    features = d.backbone(image.unsqueeze(0))
    roi = spatial.roi_align(features.squeeze(0), box, d.roi_size, d.roi_size)
    label = torch.tensor([class_id])
    return d.object_head(roi.unsqueeze(0), label).squeeze(0)


def appearance_score_of_box(
    image: torch.Tensor, box: BBox, class_id: int, d: Discriminator
) -> torch.Tensor:
    """Appearance logit for one box: backbone -> ROI -> Gram -> head."""
    if d.appearance_head is None:
        raise ValueError("discriminator was built without the appearance head")
    features = d.backbone(image.unsqueeze(0)).squeeze(0)
    roi = spatial.roi_align(features, box, d.roi_size, d.roi_size)
    a = GramAppearance(matrix=gram(roi), class_id=class_id)
    return appearance_score(a, d.appearance_head)
