"""Parametric maps: the frozen procedural generator, the trainable encoder,
the fixed perceptual feature net with its trainable twin, and the fixed
identity embedder.

The "pretrained generator" is a procedural differentiable renderer: two
smooth radial blobs over a background level, every parameter reached
through a sigmoid of one latent coordinate. Its latent semantics are known
exactly, which turns inversion claims into oracle-checkable tests. The
feature nets are fixed seeded random projections standing in for large
pretrained perceptual / identity networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Array = np.ndarray

IMAGE_SIZE = 16
N_PIXELS = IMAGE_SIZE * IMAGE_SIZE
SEMANTIC_SLOTS = 8  # latent coords 0..7 drive the renderer

ENCODER_DIMS = (N_PIXELS, 128, 64)  # final layer appended per latent_dim
FEATURE_DIMS = (N_PIXELS, 64, 32, 16)
LEAKY_SLOPE = 0.2

ROLE_PERCEPTUAL = "perceptual"
ROLE_PERCEPTUAL_TRAINABLE = "perceptual_trainable"
ROLE_IDENTITY = "identity"

# Seed stream tags so every component draws from its own substream.
_TAG_ENCODER, _TAG_H, _TAG_R = 101, 102, 103


@dataclass(frozen=True)
class GeneratorSpec:
    """Fixed rendering constants for the frozen generator.

    Amplitude bounds keep the sum background + blob1 + blob2 strictly
    below 1, so the output clamp never activates and the renderer stays
    differentiable in practice as well as in principle.
    """

    latent_dim: int = 8
    grid_size: int = IMAGE_SIZE
    # Blob centers stay this far inside the border: a blob sliding off the
    # grid loses mass asymmetrically, which would make the intensity
    # centroid non-monotone in the position coordinates.
    position_margin: float = 1.5
    width_bounds: tuple[float, float] = (1.0, 3.5)
    blob1_amp_bounds: tuple[float, float] = (0.1, 0.5)
    blob2_amp: float = 0.25
    background_bounds: tuple[float, float] = (0.05, 0.25)

    def __post_init__(self) -> None:
        if self.latent_dim < SEMANTIC_SLOTS:
            raise ValueError(
                f"latent_dim must be >= {SEMANTIC_SLOTS}, got {self.latent_dim}")


@dataclass
class Mlp:
    """A perceptron parameter set; layers are (matmul, bias, activation)."""

    weights: list[Tensor]
    biases: list[Tensor]
    activation: str  # 'leaky' hidden + linear out, or 'tanh' on every layer
    role: str | None = None

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def shapes(self) -> list[tuple[int, ...]]:
        return [p.shape for p in self.params()]

    def copy(self, role: str | None = None) -> "Mlp":
        return Mlp(weights=[Tensor(w.values.copy()) for w in self.weights],
                   biases=[Tensor(b.values.copy()) for b in self.biases],
                   activation=self.activation,
                   role=self.role if role is None else role)

    def state_arrays(self) -> list[Array]:
        return [p.values for p in self.params()]


def _init_mlp(dims: tuple[int, ...], activation: str, seed_seq: list[int],
              role: str | None = None) -> Mlp:
    rng = np.random.default_rng(seed_seq)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(Tensor(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)))
        biases.append(Tensor(np.zeros((1, fan_out))))
    return Mlp(weights=weights, biases=biases, activation=activation, role=role)


def init_encoder(latent_dim: int = 8, seed: int = 0) -> Mlp:
    dims = ENCODER_DIMS + (latent_dim,)
    return _init_mlp(dims, "leaky", [seed, _TAG_ENCODER])


def init_perceptual_net(seed: int = 0) -> Mlp:
    return _init_mlp(FEATURE_DIMS, "tanh", [seed, _TAG_H], role=ROLE_PERCEPTUAL)


def init_identity_net(seed: int = 0) -> Mlp:
    return _init_mlp(FEATURE_DIMS, "tanh", [seed, _TAG_R], role=ROLE_IDENTITY)


def make_trainable_twin(h: Mlp) -> Mlp:
    """Exact copy of the fixed perceptual net; the discrepancy starts at 0."""
    if h.role != ROLE_PERCEPTUAL:
        raise ValueError(f"twin must be cloned from the perceptual net, got role {h.role!r}")
    return h.copy(role=ROLE_PERCEPTUAL_TRAINABLE)


def _as_batch(x, what: str) -> Tensor:
    """Coerce an image (16x16 or flat) or a batch to a (B, 256) tensor."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.shape == (IMAGE_SIZE, IMAGE_SIZE) or t.shape == (N_PIXELS,):
        return ad.reshape(t, (1, N_PIXELS))
    if t.values.ndim == 2 and t.shape[1] == N_PIXELS:
        return t
    raise ad.ShapeMismatch(f"{what}: expected 16x16 image or (B, {N_PIXELS}) batch, "
                           f"got shape {t.shape}")


# -- Generator -----------------------------------------------------------

def _coord(w: Tensor, index: int, latent_dim: int) -> Tensor:
    onehot = np.zeros((latent_dim, 1))
    onehot[index, 0] = 1.0
    return ad.matmul(w, Tensor(onehot))  # (B, 1)


def _bounded(raw: Tensor, bounds: tuple[float, float]) -> Tensor:
    lo, hi = bounds
    return ad.add(ad.mul(ad.sigmoid(raw), hi - lo), lo)


def generate(g: GeneratorSpec, w) -> Tensor:
    """Render latents to flat images; differentiable everywhere in ``w``.

    Accepts a (B, latent_dim) tensor/array or a single latent vector and
    returns a (B, 256) tensor of pixels in [0, 1].
    """
    t = w if isinstance(w, Tensor) else Tensor(np.asarray(w, dtype=np.float64))
    if t.values.ndim == 1:
        if t.shape[0] != g.latent_dim:
            raise ad.ShapeMismatch(
                f"generate: latent has dimension {t.shape[0]}, spec wants {g.latent_dim}")
        t = ad.reshape(t, (1, g.latent_dim))
    if t.values.ndim != 2 or t.shape[1] != g.latent_dim:
        raise ad.ShapeMismatch(
            f"generate: latent batch shape {t.shape} incompatible with latent_dim {g.latent_dim}")

    s = g.grid_size
    m = g.position_margin
    pos_bounds = (m, float(s - 1) - m)
    cols = Tensor(np.tile(np.arange(s, dtype=np.float64), s).reshape(1, s * s))
    rows = Tensor(np.repeat(np.arange(s, dtype=np.float64), s).reshape(1, s * s))

    cx1 = _bounded(_coord(t, 0, g.latent_dim), pos_bounds)
    cy1 = _bounded(_coord(t, 1, g.latent_dim), pos_bounds)
    sig1 = _bounded(_coord(t, 2, g.latent_dim), g.width_bounds)
    amp1 = _bounded(_coord(t, 3, g.latent_dim), g.blob1_amp_bounds)
    cx2 = _bounded(_coord(t, 4, g.latent_dim), pos_bounds)
    cy2 = _bounded(_coord(t, 5, g.latent_dim), pos_bounds)
    sig2 = _bounded(_coord(t, 6, g.latent_dim), g.width_bounds)
    background = _bounded(_coord(t, 7, g.latent_dim), g.background_bounds)

    def blob(cx, cy, sig, amp):
        r2 = ad.add(ad.square(ad.sub(cols, cx)), ad.square(ad.sub(rows, cy)))
        falloff = ad.exp(ad.mul(ad.div(r2, ad.mul(ad.square(sig), 2.0)), -1.0))
        return ad.mul(falloff, amp)

    img = ad.add(background,
                 ad.add(blob(cx1, cy1, sig1, amp1),
                        blob(cx2, cy2, sig2, g.blob2_amp)))
    return ad.clamp(img, 0.0, 1.0)


def render(g: GeneratorSpec, w: Array) -> Array:
    """Convenience wrapper: latents to 16x16 numpy images (no recording)."""
    w = np.asarray(w, dtype=np.float64)
    single = w.ndim == 1
    out = generate(g, w).values
    imgs = out.reshape(-1, g.grid_size, g.grid_size)
    return imgs[0] if single else imgs


# -- Forward passes -------------------------------------------------------

def mlp_forward(m: Mlp, x: Tensor, collect: bool = False):
    """Run the perceptron; with ``collect`` return every layer's activation."""
    layers = []
    h = x
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = ad.add(ad.matmul(h, w), b)
        if m.activation == "tanh":
            h = ad.tanh(z)
        elif i < last:
            h = ad.leaky_relu(z, LEAKY_SLOPE)
        else:
            h = z
        layers.append(h)
    return layers if collect else h


def encode(e: Mlp, x) -> Tensor:
    """Map images to latent codes; differentiable in weights and input."""
    return mlp_forward(e, _as_batch(x, "encode"))


def feature_stack(h: Mlp, x) -> list[Tensor]:
    """Per-layer activations of a feature net (the 3-layer pyramid)."""
    if h.role not in (ROLE_PERCEPTUAL, ROLE_PERCEPTUAL_TRAINABLE, ROLE_IDENTITY):
        raise ValueError(f"feature_stack: net has no feature role, got {h.role!r}")
    return mlp_forward(h, _as_batch(x, "feature_stack"), collect=True)


def _unit_rows(t: Tensor) -> Tensor:
    # Row-wise unit normalization; the tiny constant only guards exact zero.
    sumsq = ad.adsum(ad.square(t), axis=1, keepdims=True)
    norm = ad.exp(ad.mul(ad.log(ad.add(sumsq, 1e-24)), 0.5))
    return ad.div(t, norm)


def stack_distance(stack_a: list[Tensor], stack_b: list[Tensor]) -> Tensor:
    """Per-image perceptual distance between two feature stacks.

    Each layer's activation row is unit-normalized, differenced, squared
    and averaged; layers are summed. Returns a (B,) tensor, zero exactly
    when the stacks agree.
    """
    total: Tensor | None = None
    for a, b in zip(stack_a, stack_b):
        gap = ad.mean(ad.square(ad.sub(_unit_rows(a), _unit_rows(b))), axis=1)
        total = gap if total is None else ad.add(total, gap)
    return total


def lpips_distance(h: Mlp, a, b) -> float:
    """Perceptual distance between two images through a fixed feature net."""
    if h.role == ROLE_IDENTITY:
        raise ValueError("lpips_distance: identity net not allowed; use identity_embed")
    d = stack_distance(feature_stack(h, a), feature_stack(h, b))
    return float(d.values[0])


def perceptual_gap(h: Mlp, h_twin: Mlp, x: Tensor) -> Tensor:
    """Per-image distance between the fixed and twin feature stacks of x."""
    return stack_distance(feature_stack(h_twin, x), feature_stack(h, x))


def identity_embed_batch(r: Mlp, x) -> Tensor:
    """Unit-normalized final-layer identity features, on tape."""
    if r.role != ROLE_IDENTITY:
        raise ValueError(f"identity_embed: net must have the identity role, got {r.role!r}")
    return _unit_rows(feature_stack(r, x)[-1])


def identity_embed(r: Mlp, x) -> Array:
    """Unit identity embedding of one image (fixed basis vector if degenerate)."""
    if r.role != ROLE_IDENTITY:
        raise ValueError(f"identity_embed: net must have the identity role, got {r.role!r}")
    feats = feature_stack(r, x)[-1].values[0]
    norm = float(np.linalg.norm(feats))
    if norm == 0.0:
        basis = np.zeros_like(feats)
        basis[0] = 1.0
        return basis
    return feats / norm
