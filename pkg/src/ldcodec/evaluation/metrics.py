"""Pixel-wise distortion metrics on HxWx3 float images in [0, 1]."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_K1, _K2 = 0.01, 0.03


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


def psnr(x, x_hat, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    x, x_hat = _pair(x, x_hat)
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the two spatial axes of a CxHxW array
    half = len(win) // 2
    out = img
    for axis in (1, 2):
        if out.shape[axis] < len(win):
            continue
        out = correlate1d(out, win, axis=axis, mode="constant")
        sl = [slice(None)] * 3
        sl[axis] = slice(half, out.shape[axis] - half)
        out = out[tuple(sl)]
    return out


def _ssim_cs(x, y, win, data_range):
    c1 = (_K1 * data_range) ** 2
    c2 = (_K2 * data_range) ** 2
    mu1, mu2 = _filter_valid(x, win), _filter_valid(y, win)
    s11 = _filter_valid(x * x, win) - mu1**2
    s22 = _filter_valid(y * y, win) - mu2**2
    s12 = _filter_valid(x * y, win) - mu1 * mu2
    cs_map = (2 * s12 + c2) / (s11 + s22 + c2)
    ssim_map = ((2 * mu1 * mu2 + c1) / (mu1**2 + mu2**2 + c1)) * cs_map
    return ssim_map.mean(axis=(1, 2)), cs_map.mean(axis=(1, 2))


def _avg_pool2(img):
    # 2x2 mean pooling; odd sides are zero-padded by one on both ends first
    ph, pw = img.shape[1] % 2, img.shape[2] % 2
    if ph or pw:
        img = np.pad(img, ((0, 0), (ph, ph), (pw, pw)))
    H, W = img.shape[1] // 2 * 2, img.shape[2] // 2 * 2
    img = img[:, :H, :W]
    return 0.25 * (img[:, 0::2, 0::2] + img[:, 1::2, 0::2] + img[:, 0::2, 1::2] + img[:, 1::2, 1::2])


def ssim(x, x_hat, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    x, x_hat = _pair(x, x_hat)
    s, _ = _ssim_cs(x.transpose(2, 0, 1), x_hat.transpose(2, 0, 1), gaussian_window(win_size, sigma), data_range)
    return float(s.mean())


def ms_ssim(x, x_hat, data_range: float = 1.0, weights=MS_SSIM_WEIGHTS, win_size: int = 11,
            sigma: float = 1.5) -> float:
    """Five-scale MS-SSIM with an 11-tap Gaussian window, averaged over channels.

    The shorter side must exceed ``(win_size - 1) * 2**(levels - 1)`` pixels.
    """
    x, x_hat = _pair(x, x_hat)
    levels = len(weights)
    if min(x.shape[:2]) <= (win_size - 1) * 2 ** (levels - 1):
        raise ValueError(
            f"MS-SSIM needs sides > {(win_size - 1) * 2 ** (levels - 1)} px, got {x.shape[:2]}"
        )
    a, b = x.transpose(2, 0, 1), x_hat.transpose(2, 0, 1)
    win = gaussian_window(win_size, sigma)
    w = np.asarray(weights, dtype=np.float64)
    mcs = []
    for i in range(levels):
        s, cs = _ssim_cs(a, b, win, data_range)
        if i < levels - 1:
            mcs.append(np.maximum(cs, 0.0))
            a, b = _avg_pool2(a), _avg_pool2(b)
    stack = np.stack(mcs + [np.maximum(s, 0.0)])
    per_channel = np.prod(stack ** w[:, None], axis=0)
    return float(per_channel.mean())
