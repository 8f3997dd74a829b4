"""Latent-space semantic editing: supervised linear-boundary directions,
unsupervised principal-component directions, edit application and a
position probe for verification.

The probe exploits the procedural generator: blob position is a known
function of the latent code, so a recovered "move right" direction can be
checked against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import GeneratorSpec, render

Array = np.ndarray

LOGREG_STEPS = 500
LOGREG_LR = 0.5
LOGREG_L2 = 1e-3


@dataclass(frozen=True)
class EditDirection:
    """A unit direction in latent space with its discovery metadata."""

    vector: Array
    method: str  # 'linear-boundary' | 'pca'
    attribute: str
    metadata: float  # separator margin, or explained-variance ratio

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"direction norm must be 1, got {norm}")


def _softplus(z: Tensor) -> Tensor:
    # Stable log(1 + exp(z)) = max(z, 0) + log(1 + exp(-|z|)).
    return ad.add(ad.clamp(z, 0.0, np.inf),
                  ad.log(ad.add(ad.exp(ad.mul(ad.absv(z), -1.0)), 1.0)))


def interfacegan_direction(latents: Array, labels: Array,
                           attribute: str = "attr") -> EditDirection:
    """Linear attribute boundary via logistic regression; returns its normal."""
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    n, dim = latents.shape
    if n != labels.shape[0] or n < 20:
        raise ValueError(f"need >= 20 labelled latents, got {n}")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("both classes must be present")

    x = Tensor(latents)
    y = Tensor(labels)
    w = Tensor(np.zeros((dim, 1)))
    b = Tensor(np.zeros((1, 1)))
    for _ in range(LOGREG_STEPS):
        with ad.Tape() as tape:
            z = ad.add(ad.matmul(x, w), b)
            bce = ad.mean(ad.sub(_softplus(z), ad.mul(y, z)))
            loss = ad.add(bce, ad.mul(ad.adsum(ad.square(w)), LOGREG_L2))
            tape.backward(loss)
        w.values -= LOGREG_LR * w.grad
        b.values -= LOGREG_LR * b.grad

    normal = w.values[:, 0]
    scale = float(np.linalg.norm(normal))
    if scale == 0.0:
        raise ValueError("separator degenerated to the zero vector")
    unit = normal / scale
    bias = float(b.values[0, 0]) / scale
    signed = (latents @ unit + bias) * (2.0 * labels[:, 0] - 1.0)
    return EditDirection(vector=unit, method="linear-boundary", attribute=attribute,
                         metadata=float(np.min(signed)))


def ganspace_directions(latents: Array, k: int) -> list[EditDirection]:
    """Top-k principal components of the latent collection, unit norm,
    eigenvalue-descending, sign fixed by the largest-magnitude component."""
    latents = np.asarray(latents, dtype=np.float64)
    n, dim = latents.shape
    if n <= dim:
        raise ValueError(f"need more than {dim} latents, got {n}")
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}], got {k}")
    centered = latents - latents.mean(axis=0)
    cov = centered.T @ centered / n
    evs, vecs = np.linalg.eigh(cov)
    order = np.argsort(evs)[::-1]
    total = float(np.sum(evs))
    out = []
    for rank, idx in enumerate(order[:k]):
        v = vecs[:, idx]
        pivot = int(np.argmax(np.abs(v)))
        if v[pivot] < 0:
            v = -v
        out.append(EditDirection(vector=v / np.linalg.norm(v), method="pca",
                                 attribute=f"pc{rank}",
                                 metadata=float(evs[idx] / total)))
    return out


def apply_edit(g: GeneratorSpec, w: Array, direction: EditDirection,
               alpha: float) -> tuple[Array, Array]:
    """Move along the direction and re-render: w' = w + alpha * dir."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != direction.vector.shape:
        raise ValueError(f"latent shape {w.shape} vs direction {direction.vector.shape}")
    edited = w + alpha * direction.vector
    return edited, render(g, edited)


def attribute_probe(x: Array) -> float:
    """Normalized horizontal intensity centroid in [0, 1]; 0.5 if all-zero."""
    x = np.asarray(x, dtype=np.float64)
    total = float(x.sum())
    if total <= 0.0:
        return 0.5
    cols = np.arange(x.shape[1], dtype=np.float64)
    return float((x * cols[None, :]).sum() / total / (x.shape[1] - 1))


def save_directions(path: Path, directions: list[EditDirection]) -> None:
    """Two lines per direction: 'method,attribute,metadata' then the vector."""
    lines = []
    for d in directions:
        lines.append(f"{d.method},{d.attribute},{d.metadata!r}")
        lines.append(",".join(repr(float(v)) for v in d.vector))
    Path(path).write_text("\n".join(lines) + "\n")


def load_directions(path: Path) -> list[EditDirection]:
    lines = [ln for ln in Path(path).read_text().strip().split("\n") if ln]
    if len(lines) % 2 != 0:
        raise ValueError(f"{path}: expected header/vector line pairs")
    out = []
    for i in range(0, len(lines), 2):
        method, attribute, metadata = lines[i].split(",")
        vector = np.array([float(v) for v in lines[i + 1].split(",")])
        out.append(EditDirection(vector=vector / np.linalg.norm(vector), method=method,
                                 attribute=attribute, metadata=float(metadata)))
    return out
