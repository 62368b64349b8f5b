"""Proxy quality metrics.

None of these stand in for classifier-based scores; they only track pixel
fidelity and low-frequency color statistics of the predicted half.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from . import core as C
from .config import GeneratorConfig
from .generator import generator_forward
from .layers import ParamStore
from .losses import cosine_mask, masked_rec_loss

PROXY_LABEL = "proxy — not comparable to paper IS/FID"
PSNR_CAP = 99.0
POOL_GRID = 8


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio for images in [-1, 1] (peak-to-peak 2), capped."""
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(target, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(4.0 / mse))


def pooled_features(images: np.ndarray, grid: int = POOL_GRID) -> np.ndarray:
    """Average-pool each Bx3xHxW image to a 3 x grid x grid map and flatten."""
    images = np.asarray(images, dtype=np.float64)
    b, c, h, w = images.shape
    if h % grid or w % grid:
        raise ValueError(f"image {h}x{w} is not divisible into a {grid}x{grid} grid")
    return images.reshape(b, c, grid, h // grid, grid, w // grid).mean(axis=(3, 5)).reshape(b, -1)


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(feat_a: np.ndarray, feat_b: np.ndarray, eps: float = 1e-6) -> float:
    """Fréchet distance between Gaussians fitted to two feature populations.

    Both covariances get ``eps * I`` so small populations stay well posed;
    the cross term is evaluated in the symmetric form sqrt(A^½ B A^½).
    """
    feat_a, feat_b = np.asarray(feat_a, np.float64), np.asarray(feat_b, np.float64)
    if feat_a.ndim != 2 or feat_a.shape[1] != feat_b.shape[1]:
        raise ValueError("feature populations must be NxD with matching D")
    eye = eps * np.eye(feat_a.shape[1])
    mu_a, mu_b = feat_a.mean(0), feat_b.mean(0)
    cov_a = np.atleast_2d(np.cov(feat_a, rowvar=False, bias=True)) + eye
    cov_b = np.atleast_2d(np.cov(feat_b, rowvar=False, bias=True)) + eye
    root_a = _sqrt_psd(cov_a)
    cross = np.linalg.eigvalsh(root_a @ cov_b @ root_a)
    trace = np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(np.clip(cross, 0.0, None)).sum()
    return float(np.sum((mu_a - mu_b) ** 2) + max(trace, 0.0))


def seam_report(panorama: np.ndarray, step: int) -> list[dict]:
    """Mean absolute difference across each boundary between ``step``-wide tiles."""
    panorama = np.asarray(panorama, np.float64)
    width = panorama.shape[-1]
    return [
        {"column": x, "mean_abs_diff": float(np.mean(np.abs(panorama[..., x] - panorama[..., x - 1])))}
        for x in range(step, width, step)
    ]


def evaluate(images: Iterable[np.ndarray], params: ParamStore, cfg: GeneratorConfig, batch: int = 8) -> dict:
    """One-step predictions for each 3 x S x 2S image, scored against the real right half."""
    images = np.stack(list(images)).astype(params.dtype)
    if len(images) == 0:
        raise ValueError("no images to evaluate")
    s = cfg.input_size
    mask = cosine_mask(s, 2 * s)
    preds = []
    with C.no_record():
        for i in range(0, len(images), batch):
            chunk = images[i : i + batch]
            preds.append(generator_forward(C.constant(chunk[:, :, :, :s]), params, cfg).data)
    preds = np.concatenate(preds)
    l2 = [float(masked_rec_loss(C.constant(x[None]), C.constant(p[None]), mask).data) for x, p in zip(images, preds)]
    ps = [psnr(p[:, :, s:], x[:, :, s:]) for x, p in zip(images, preds)]
    fd = frechet_distance(pooled_features(preds[:, :, :, s:]), pooled_features(images[:, :, :, s:]))
    return {
        "label": PROXY_LABEL,
        "images": len(images),
        "masked_l2": float(np.mean(l2)),
        "psnr_db": float(np.mean(ps)),
        "frechet_pixel_proxy": fd,
        "per_image": [{"masked_l2": a, "psnr_db": b} for a, b in zip(l2, ps)],
    }
