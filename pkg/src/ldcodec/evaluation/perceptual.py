"""Feature-space distances: an LPIPS-style pairwise score and a Frechet (FID-style) score.

Both take a feature extractor: a callable mapping an ``(N, 3, H, W)`` tensor
in [0, 1] to a list of ``(N, C_l, H_l, W_l)`` feature maps. Without one, the
scores are skipped with a warning.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg
import torch
import torch.nn as nn

MIN_FID_SAMPLES = 2


class RandomConvFeatures(nn.Module):
    """Fixed, seeded random convolutional pyramid.

    Random-weight networks give a serviceable perceptual distance when no
    pretrained classifier is available offline; weights depend only on the seed.
    """

    def __init__(self, widths=(32, 64, 128), seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.layers = nn.ModuleList()
        cin = 3
        for w in widths:
            conv = nn.Conv2d(cin, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) / (3 * cin) ** 0.5)
                conv.bias.zero_()
            self.layers.append(conv)
            cin = w
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def forward(self, x: torch.Tensor) -> list:
        feats = []
        h = 2.0 * x - 1.0
        for conv in self.layers:
            h = torch.relu(conv(h))
            feats.append(h)
        return feats


def _to_batch(images) -> torch.Tensor:
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy())


def _unit(f: torch.Tensor) -> torch.Tensor:
    return f / (f.pow(2).sum(dim=1, keepdim=True).sqrt() + 1e-10)


def lpips_like(x_set, x_hat_set, extractor) -> np.ndarray:
    """Per-pair distance: channel-normalised squared feature differences, spatially averaged, summed over layers."""
    fa = extractor(_to_batch(x_set))
    fb = extractor(_to_batch(x_hat_set))
    total = torch.zeros(len(x_set), dtype=torch.float64)
    for a, b in zip(fa, fb):
        total += (_unit(a) - _unit(b)).pow(2).sum(dim=1).mean(dim=(1, 2)).double()
    return total.numpy()


def pooled_features(images, extractor) -> np.ndarray:
    """Global-average-pooled features of every layer, concatenated per image."""
    feats = extractor(_to_batch(images))
    return torch.cat([f.mean(dim=(2, 3)) for f in feats], dim=1).double().numpy()


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """``||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2})``."""
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    cov1, cov2 = np.atleast_2d(cov1), np.atleast_2d(cov2)
    diff = mu1 - mu2
    covmean, _ = scipy.linalg.sqrtm(cov1 @ cov2, disp=False)
    if not np.isfinite(covmean).all():
        eps = 1e-6 * np.eye(len(mu1))
        covmean = scipy.linalg.sqrtm((cov1 + eps) @ (cov2 + eps))
    covmean = np.real(covmean)
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(covmean))


def fid_like(x_set, x_hat_set, extractor, min_count: int = MIN_FID_SAMPLES) -> float:
    if len(x_set) < min_count or len(x_hat_set) < min_count:
        raise ValueError(f"FID-like score needs at least {min_count} images per set")
    a = pooled_features(x_set, extractor)
    b = pooled_features(x_hat_set, extractor)
    return frechet_distance(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


def perceptual_scores(x_set, x_hat_set, extractor=None, min_count: int = MIN_FID_SAMPLES) -> dict:
    """``{"lpips_like": per-pair array, "fid_like": float, "samples": n}``; ``{}`` without an extractor."""
    if extractor is None:
        warnings.warn("no feature extractor supplied; perceptual scores skipped")
        return {}
    out = {"lpips_like": lpips_like(x_set, x_hat_set, extractor), "samples": len(x_set)}
    if len(x_set) >= min_count:
        out["fid_like"] = fid_like(x_set, x_hat_set, extractor, min_count)
    return out
