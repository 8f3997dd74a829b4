"""Evaluation metrics: PSNR, SSIM, MSE, a feature-space Fréchet distance
and identity similarity, plus whole-checkpoint evaluation over a paired
split."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nets
from .autodiff import Tensor
from .synthdeg import DomainDataset
from .uda import ModelState

Array = np.ndarray

PSNR_CAP = 99.0
SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

METRICS_CSV_HEADER = "split,PSNR,SSIM,MSE,FFD,IDs"


@dataclass(frozen=True)
class MetricsRow:
    split: str
    psnr: float
    ssim: float
    mse: float
    ffd: float
    ids: float


def pixel_metrics(a: Array, b: Array) -> tuple[float, float]:
    """(MSE, PSNR) on unit dynamic range; PSNR pinned to 99 dB for MSE < 1e-12."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"pixel_metrics: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    psnr = PSNR_CAP if mse < 1e-12 else -10.0 * math.log10(mse)
    return mse, psnr


def ssim(a: Array, b: Array) -> float:
    """Windowed SSIM, 7x7 uniform window, stride 1, unit dynamic range."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.shape != (16, 16):
        raise ValueError(f"ssim: expected 16x16 images, got {a.shape}")
    wa = np.lib.stride_tricks.sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = np.lib.stride_tricks.sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) \
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
    return float(score.mean())


def _psd_sqrt(s: Array) -> Array:
    sym = (s + s.T) / 2.0
    evs, vecs = np.linalg.eigh(sym)
    evs = np.clip(evs, 0.0, None)
    return (vecs * np.sqrt(evs)) @ vecs.T


def frechet_feature_distance(feats_a: Array, feats_b: Array) -> float:
    """Fréchet distance between Gaussians fit to two feature sets.

    The cross-covariance square-root trace is computed by the symmetric
    product eigendecomposition; tiny negative eigenvalues from rounding
    are clipped to zero.
    """
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    dim = feats_a.shape[1]
    if feats_a.shape[0] < dim + 1 or feats_b.shape[0] < dim + 1:
        raise ValueError(f"frechet_feature_distance: need at least {dim + 1} samples "
                         f"per set, got {feats_a.shape[0]} and {feats_b.shape[0]}")
    mu_a = feats_a.mean(axis=0)
    mu_b = feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False)
    cov_b = np.cov(feats_b, rowvar=False)
    root_a = _psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    evs = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    evs = np.clip(evs, 0.0, None)
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b)
                  - 2.0 * np.sum(np.sqrt(evs)))
    return max(0.0, value)


def identity_similarity(r: nets.Mlp, a: Array, b: Array) -> float:
    """Cosine similarity of identity embeddings, in [-1, 1]."""
    va = nets.identity_embed(r, a)
    vb = nets.identity_embed(r, b)
    return float(np.clip(va @ vb, -1.0, 1.0))


def evaluate_checkpoint(model: ModelState, eval_ds: DomainDataset) -> list[MetricsRow]:
    """Invert, re-render and score every record against its paired original.

    References are re-rendered from the stored ground-truth latents, so
    they are exact even when the dataset went through 8-bit image files.
    Returns one row per split present, in (src, trg) order.
    """
    rows = []
    for split in ("src", "trg"):
        recs = eval_ds.split(split)
        if not recs:
            continue
        if not all(r.paired and r.latent is not None for r in recs):
            raise ValueError(f"evaluate_checkpoint: split {split!r} lacks paired "
                             "references (ground-truth latents)")
        inputs = eval_ds.images(split).reshape(len(recs), -1)
        refs = nets.render(model.gen, eval_ds.latents(split))
        latents = nets.encode(model.encoder, Tensor(inputs)).values
        recons = nets.render(model.gen, latents)

        mses, psnrs, ssims, sims = [], [], [], []
        for recon, ref in zip(recons, refs):
            mse, psnr = pixel_metrics(recon, ref)
            mses.append(mse)
            psnrs.append(psnr)
            ssims.append(ssim(recon, ref))
            sims.append(identity_similarity(model.r, recon, ref))
        feats_recon = nets.feature_stack(model.h, Tensor(recons.reshape(len(recs), -1)))
        feats_ref = nets.feature_stack(model.h, Tensor(refs.reshape(len(recs), -1)))
        ffd = frechet_feature_distance(feats_recon[-1].values, feats_ref[-1].values)
        rows.append(MetricsRow(split=split, psnr=float(np.mean(psnrs)),
                               ssim=float(np.mean(ssims)), mse=float(np.mean(mses)),
                               ffd=ffd, ids=float(np.mean(sims))))
    return rows


def metrics_csv(rows: list[MetricsRow]) -> str:
    lines = [METRICS_CSV_HEADER]
    for row in rows:
        lines.append(f"{row.split},{row.psnr!r},{row.ssim!r},{row.mse!r},"
                     f"{row.ffd!r},{row.ids!r}")
    return "\n".join(lines) + "\n"
