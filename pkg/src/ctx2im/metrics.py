"""Sample-quality metrics over EvalNet features: IS, FID, diversity.

All statistics run in float64. The FID matrix square root uses plain
eigendecomposition (the covariances are 64x64 symmetric PSD, so this is
both exact and fast); tiny negative eigenvalues from round-off are
clamped to zero, genuinely non-PSD inputs are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .generator import Generator, sample_image
from .layout import Layout
from .seeding import fold_seed, torch_gen

PSD_TOL = 1e-6


class MetricsError(ValueError):
    pass


def inception_score(probs, splits: int) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || marginal)) per split; returns (mean, std) over splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise MetricsError("probs must be a 2-d array of probability rows")
    M = p.shape[0]
    if splits < 1 or M < splits:
        raise MetricsError(f"need at least one row per split (M={M}, splits={splits})")
    row_sums = p.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise MetricsError("probability rows must sum to 1 within 1e-6")
    p = np.clip(p, 1e-12, None)
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = (part * (np.log(part) - np.log(marginal))).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray  # (d,)
    cov: np.ndarray  # (d, d), symmetric
    n: int

    @classmethod
    def from_features(cls, features) -> "GaussianStats":
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 2:
            raise MetricsError("need a (n >= 2, d) feature matrix")
        mean = f.mean(axis=0)
        cov = np.cov(f, rowvar=False)
        cov = np.atleast_2d((cov + cov.T) / 2.0)
        return cls(mean=mean, cov=cov, n=f.shape[0])


def _psd_eigvals(cov: np.ndarray, what: str) -> np.ndarray:
    eigs = np.linalg.eigvalsh(cov)
    floor = -PSD_TOL * max(1.0, float(eigs.max(initial=0.0)))
    if eigs.min() < floor:
        raise MetricsError(f"{what} covariance is not PSD: min eigenvalue {eigs.min():.3e}")
    return eigs


def fid(real: GaussianStats, gen: GaussianStats) -> float:
    """Fréchet distance between two Gaussian fits."""
    if real.mean.shape != gen.mean.shape:
        raise MetricsError("feature dimensions do not match")
    _psd_eigvals(real.cov, "real")
    _psd_eigvals(gen.cov, "generated")
    w, v = np.linalg.eigh(real.cov)
    sqrt_r = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    inner = sqrt_r @ gen.cov @ sqrt_r
    inner = (inner + inner.T) / 2.0
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    delta = real.mean - gen.mean
    value = float(delta @ delta + np.trace(real.cov) + np.trace(gen.cov) - 2.0 * cross)
    return max(value, 0.0)


def features_and_probs(net, images: torch.Tensor, batch: int = 256):
    """EvalNet features and class posteriors for a stack of images."""
    was_training = net.training
    net.eval()
    feats, probs = [], []
    try:
        with torch.no_grad():
            for k in range(0, images.shape[0], batch):
                chunk = images[k : k + batch]
                f = net.features(chunk)
                feats.append(f.double().numpy())
                probs.append(torch.softmax(net.fc(f), dim=-1).double().numpy())
    finally:
        net.train(was_training)
    return np.concatenate(feats), np.concatenate(probs)


def fid_between_images(real_images: torch.Tensor, gen_images: torch.Tensor, net) -> float:
    rf, _ = features_and_probs(net, real_images)
    gf, _ = features_and_probs(net, gen_images)
    return fid(GaussianStats.from_features(rf), GaussianStats.from_features(gf))


def diversity_score(
    layout: Layout, g: Generator, net, pairs: int, seed: int
) -> tuple[float, float]:
    """Mean/std distance between unit-normalized features of same-layout image pairs."""
    if pairs < 1:
        raise MetricsError("pairs must be >= 1")
    distances = []
    for p in range(pairs):
        img_a = sample_image(g, layout, fold_seed(seed, "pair", p, 0))
        img_b = sample_image(g, layout, fold_seed(seed, "pair", p, 1))
        with torch.no_grad():
            f = net.features(torch.stack([img_a, img_b]))
        f = torch.nn.functional.normalize(f.double(), dim=-1)
        distances.append(float((f[0] - f[1]).norm()))
    return float(np.mean(distances)), float(np.std(distances))


def generate_for_layouts(
    g: Generator,
    boxes: torch.Tensor,
    labels: torch.Tensor,
    n_valid: torch.Tensor,
    samples_per_layout: int,
    seed: int,
    batch: int = 128,
) -> torch.Tensor:
    """Deterministically generate S images per layout row, independent of batching."""
    M, n_max = labels.shape
    total = M * samples_per_layout
    rep_boxes = boxes.repeat_interleave(samples_per_layout, dim=0)
    rep_labels = labels.repeat_interleave(samples_per_layout, dim=0)
    rep_valid = n_valid.repeat_interleave(samples_per_layout, dim=0)
    was_training = g.training
    g.eval()
    out = []
    try:
        with torch.no_grad():
            for k in range(0, total, batch):
                hi = min(k + batch, total)
                box_noise = torch.stack(
                    [
                        torch.randn(
                            n_max, g.d_noise,
                            generator=torch_gen(fold_seed(seed, "noise", i // samples_per_layout, i % samples_per_layout, "box")),
                        )
                        for i in range(k, hi)
                    ]
                )
                base_noise = torch.stack(
                    [
                        torch.randn(
                            *g.base_shape,
                            generator=torch_gen(fold_seed(seed, "noise", i // samples_per_layout, i % samples_per_layout, "base")),
                        )
                        for i in range(k, hi)
                    ]
                )
                out.append(g(rep_labels[k:hi], rep_boxes[k:hi], rep_valid[k:hi], box_noise, base_noise))
    finally:
        g.train(was_training)
    return torch.cat(out)
