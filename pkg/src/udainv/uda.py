"""Method core: source reconstruction loss, the trainable domain
discrepancy, the alternating min-max loop, and an empirical audit of the
generalization bound (target risk <= source risk + discrepancy + ideal
joint risk).

The discrepancy is the signed variational form: the expected feature-twin
distance on inverted source images minus the expected Fenchel conjugate of
that distance on inverted target images. Ascending it in the twin net
tightens a lower bound on the f-divergence between the two inverted
distributions; descending the total objective in the encoder shrinks it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Tensor
from .fdiv import DivergenceDomainError, FDivergence, get_divergence
from .nets import GeneratorSpec, Mlp
from .synthdeg import DegradationSpec, DomainDataset

Array = np.ndarray

_TAG_BATCH, _TAG_JOINT, _TAG_JOINT_DATA, _TAG_TWIN_JITTER = 31, 32, 33, 34


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the iteration and last model state."""

    def __init__(self, iteration: int, model: "ModelState") -> None:
        super().__init__(f"training diverged to a non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.model = model


@dataclass
class TrainConfig:
    """Weights, optimizer settings and seeds for one training run."""

    lambda1: float = 1.0
    lambda2: float = 0.8
    lambda3: float = 1.0
    lambda_uda: float = 1.0
    divergence: str = "PearsonChi2"
    batch_size: int = 32
    iterations: int = 3000
    inner_steps: int = 1
    lr_encoder: float = 5e-4
    lr_hhat: float = 3e-4
    # The squared feature gap makes an exact twin copy an exactly-stationary
    # point of the ascent (zero gradient, Adam never moves). A small seeded
    # jitter lets the twin leave it; 0 restores the exact copy.
    twin_init_jitter: float = 0.02
    latent_dim: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "lambda_uda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")


@dataclass
class ModelState:
    """Everything a run produces: nets, optimizer state, config echo."""

    gen: GeneratorSpec
    encoder: Mlp
    h: Mlp
    hhat: Mlp
    r: Mlp
    opt_encoder: ad.AdamState
    opt_hhat: ad.AdamState
    config: TrainConfig


@dataclass(frozen=True)
class LogRow:
    iteration: int
    l_s: float
    d_st: float
    total: float


METRICS_LOG_HEADER = "iteration,L_s,d_st,total"


def metrics_log_csv(rows: list[LogRow]) -> str:
    lines = [METRICS_LOG_HEADER]
    for row in rows:
        lines.append(f"{row.iteration},{row.l_s!r},{row.d_st!r},{row.total!r}")
    return "\n".join(lines) + "\n"


def _jitter_twin(twin: Mlp, scale: float, seed_seq: list[int]) -> None:
    if scale == 0.0:
        return
    rng = np.random.default_rng(seed_seq)
    for p in twin.params():
        spread = float(np.std(p.values))
        if spread == 0.0:
            spread = scale
        p.values += scale * spread * rng.standard_normal(p.values.shape)


def init_model(config: TrainConfig, gen: GeneratorSpec) -> ModelState:
    encoder = nets.init_encoder(config.latent_dim, config.seed)
    h = nets.init_perceptual_net(config.seed)
    r = nets.init_identity_net(config.seed)
    hhat = nets.make_trainable_twin(h)
    _jitter_twin(hhat, config.twin_init_jitter, [_TAG_TWIN_JITTER, config.seed])
    return ModelState(
        gen=gen, encoder=encoder, h=h, hhat=hhat, r=r,
        opt_encoder=ad.adam_init(encoder.params(), lr=config.lr_encoder),
        opt_hhat=ad.adam_init(hhat.params(), lr=config.lr_hhat),
        config=config)


# -- Losses ---------------------------------------------------------------

def reconstruction_loss(xhat: Tensor, x: Tensor, h: Mlp, r: Mlp,
                        lambda1: float, lambda2: float, lambda3: float) -> Tensor:
    """Pixel + perceptual + identity reconstruction loss between batches."""
    loss = ad.mul(ad.mean(ad.square(ad.sub(xhat, x))), lambda1)
    if lambda2 != 0.0:
        perceptual = ad.mean(nets.stack_distance(nets.feature_stack(h, xhat),
                                                 nets.feature_stack(h, x)))
        loss = ad.add(loss, ad.mul(perceptual, lambda2))
    if lambda3 != 0.0:
        ident = ad.mean(ad.square(ad.sub(nets.identity_embed_batch(r, xhat),
                                         nets.identity_embed_batch(r, x))))
        loss = ad.add(loss, ad.mul(ident, lambda3))
    return loss


def source_loss(e: Mlp, g: GeneratorSpec, h: Mlp, r: Mlp, batch: Array,
                lambda1: float = 1.0, lambda2: float = 0.8,
                lambda3: float = 1.0) -> Tensor:
    """Reconstruction loss of the encoder on clean source images."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.size == 0:
        raise ValueError("source_loss: empty batch")
    x = Tensor(batch.reshape(batch.shape[0], -1))
    xhat = nets.generate(g, nets.encode(e, x))
    return reconstruction_loss(xhat, x, h, r, lambda1, lambda2, lambda3)


def _require_discrepancy_compatible(div: FDivergence) -> None:
    if div.conjugate_at_zero != 0.0:
        raise ValueError(
            f"{div.name} is not usable in the domain discrepancy: its conjugate at 0 "
            f"is {div.conjugate_at_zero:.6g}, so the zero-point identity (twin equal to "
            f"the fixed net gives discrepancy exactly 0) would not hold")


def _check_conjugate_domain(div: FDivergence, gap: Tensor, what: str) -> None:
    ok = div.conjugate_domain.contains(gap.values)
    if not np.all(ok):
        i = int(np.argmin(ok))
        raise DivergenceDomainError(
            f"{div.name}: {what} distance {gap.values[i]} at batch index {i} "
            f"outside the conjugate domain")


def d_st(e: Mlp, g: GeneratorSpec, h: Mlp, hhat: Mlp, src_batch: Array,
         trg_batch: Array, div: FDivergence) -> Tensor:
    """Signed domain discrepancy over inverted images.

    Mean feature-twin distance on the source batch minus mean conjugate of
    that distance on the target batch. Exactly zero when the twin equals
    the fixed net. Differentiable in both the encoder and the twin.
    """
    _require_discrepancy_compatible(div)
    src_batch = np.asarray(src_batch, dtype=np.float64)
    trg_batch = np.asarray(trg_batch, dtype=np.float64)
    if src_batch.size == 0 or trg_batch.size == 0:
        raise ValueError("d_st: empty batch")

    def inverted_gap(batch: Array) -> Tensor:
        x = Tensor(batch.reshape(batch.shape[0], -1))
        y = nets.generate(g, nets.encode(e, x))
        return nets.perceptual_gap(h, hhat, y)

    gap_src = inverted_gap(src_batch)
    gap_trg = inverted_gap(trg_batch)
    _check_conjugate_domain(div, gap_trg, "target-batch")
    return ad.sub(ad.mean(gap_src), ad.mean(div.conjugate_tensor(gap_trg)))


def d_st_abs(e: Mlp, g: GeneratorSpec, h: Mlp, hhat: Mlp, src_batch: Array,
             trg_batch: Array, div: FDivergence) -> float:
    """Absolute-value diagnostic of the signed discrepancy (not trained on)."""
    return abs(float(d_st(e, g, h, hhat, src_batch, trg_batch, div).values))


def inner_max_step(hhat: Mlp, e: Mlp, g: GeneratorSpec, h: Mlp, src_batch: Array,
                   trg_batch: Array, div: FDivergence, state: ad.AdamState) -> float:
    """One gradient ascent step on the discrepancy, twin parameters only."""
    with ad.Tape() as tape:
        d = d_st(e, g, h, hhat, src_batch, trg_batch, div)
        tape.backward(d)
    ascent = [-p.grad for p in hhat.params()]
    ad.adam_step(hhat.params(), ascent, state)
    return float(d.values)


# -- Training loop --------------------------------------------------------

def train(config: TrainConfig, gen: GeneratorSpec, src: DomainDataset,
          trg: DomainDataset | None) -> tuple[ModelState, list[LogRow]]:
    """Alternating min-max run; deterministic given config seeds.

    Per iteration: ascend the twin on the discrepancy (inner steps), then
    recompute source loss plus weighted discrepancy with the updated twin
    and descend the encoder. The twin update always sees the encoder's
    pre-update parameters.
    """
    if gen.latent_dim != config.latent_dim:
        raise ValueError(f"generator latent_dim {gen.latent_dim} != config {config.latent_dim}")
    src_images = src.images("src").reshape(-1, nets.N_PIXELS)
    if src_images.shape[0] == 0:
        raise ValueError("train: source dataset is empty")
    use_uda = config.lambda_uda > 0
    if use_uda:
        if trg is None or len(trg.split("trg")) == 0:
            raise ValueError("train: target dataset required when lambda_uda > 0")
        trg_images = trg.images("trg").reshape(-1, nets.N_PIXELS)
    else:
        trg_images = None

    model = init_model(config, gen)
    div = get_divergence(config.divergence)
    if use_uda:
        _require_discrepancy_compatible(div)
    rng = np.random.default_rng([_TAG_BATCH, config.seed])
    log: list[LogRow] = []

    for t in range(1, config.iterations + 1):
        sb = _draw_batch(rng, src_images, config.batch_size)
        if use_uda:
            tb = _draw_batch(rng, trg_images, config.batch_size)
            # The twin's ascent sees the encoder's pre-update parameters; the
            # reconstructions are constant during the inner step, so they are
            # rendered once outside the tape.
            ys = nets.generate(gen, nets.encode(model.encoder, Tensor(sb))).values
            yt = nets.generate(gen, nets.encode(model.encoder, Tensor(tb))).values
            for _ in range(config.inner_steps):
                _inner_step_on_recons(model.hhat, model.h, ys, yt, div, model.opt_hhat)

        with ad.Tape() as tape:
            x = Tensor(sb)
            xhat = nets.generate(gen, nets.encode(model.encoder, x))
            stack_xhat = nets.feature_stack(model.h, xhat)
            ls = ad.mul(ad.mean(ad.square(ad.sub(xhat, x))), config.lambda1)
            if config.lambda2 != 0.0:
                perceptual = ad.mean(nets.stack_distance(
                    stack_xhat, nets.feature_stack(model.h, x)))
                ls = ad.add(ls, ad.mul(perceptual, config.lambda2))
            if config.lambda3 != 0.0:
                ident = ad.mean(ad.square(ad.sub(
                    nets.identity_embed_batch(model.r, xhat),
                    nets.identity_embed_batch(model.r, x))))
                ls = ad.add(ls, ad.mul(ident, config.lambda3))
            if use_uda:
                gap_src = nets.stack_distance(nets.feature_stack(model.hhat, xhat),
                                              stack_xhat)
                yt_t = nets.generate(gen, nets.encode(model.encoder, Tensor(tb)))
                gap_trg = nets.perceptual_gap(model.h, model.hhat, yt_t)
                _check_conjugate_domain(div, gap_trg, "target-batch")
                d = ad.sub(ad.mean(gap_src), ad.mean(div.conjugate_tensor(gap_trg)))
                total = ad.add(ls, ad.mul(d, config.lambda_uda))
            else:
                d = None
                total = ls
            if not np.isfinite(total.values):
                raise TrainingDiverged(t, model)
            tape.backward(total)
        ad.adam_step(model.encoder.params(),
                     [p.grad for p in model.encoder.params()], model.opt_encoder)

        if t == 1 or t % 50 == 0:
            log.append(LogRow(iteration=t, l_s=float(ls.values),
                              d_st=0.0 if d is None else float(d.values),
                              total=float(total.values)))
    return model, log


def _inner_step_on_recons(hhat: Mlp, h: Mlp, ys: Array, yt: Array,
                          div: FDivergence, state: ad.AdamState) -> float:
    """Ascent step on the discrepancy over fixed reconstruction batches."""
    with ad.Tape() as tape:
        gap_src = nets.perceptual_gap(h, hhat, Tensor(ys))
        gap_trg = nets.perceptual_gap(h, hhat, Tensor(yt))
        _check_conjugate_domain(div, gap_trg, "target-batch")
        d = ad.sub(ad.mean(gap_src), ad.mean(div.conjugate_tensor(gap_trg)))
        tape.backward(d)
    ad.adam_step(hhat.params(), [-p.grad for p in hhat.params()], state)
    return float(d.values)


def _draw_batch(rng: np.random.Generator, images: Array, batch_size: int) -> Array:
    n = images.shape[0]
    idx = rng.choice(n, size=batch_size, replace=n < batch_size)
    return images[idx]


def invert(model: ModelState, images: Array) -> Array:
    """Encode images (n, 16, 16) or (n, 256) to latent codes, no recording."""
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    return nets.encode(model.encoder, flat).values


# -- Bound audit ----------------------------------------------------------

@dataclass
class AuditConfig:
    """Settings for the empirical generalization-bound audit."""

    ascent_steps: int = 500
    clamp_percentile: float = 99.0
    clamp_scale: float | None = None  # override the percentile-derived scale
    joint_iterations: int | None = None  # defaults to the model's budget
    joint_pairs: int | None = None  # paired training-set size; defaults to eval size
    joint_deg: DegradationSpec | None = None  # defaults to the eval split's operator
    seed: int = 0


@dataclass
class BoundAuditReport:
    """Empirical terms of the bound, all risks clamped into [0, 1]."""

    r_t: float
    r_s: float
    d_hat: float
    lambda_star_hat: float
    slack: float
    se_r_t: float
    se_r_s: float
    se_d_hat: float
    se_lambda_star_hat: float
    se_combined: float
    clamp_c: float
    holds: bool

    def to_text(self) -> str:
        lines = []
        for name in ("r_t", "r_s", "d_hat", "lambda_star_hat", "slack", "se_r_t",
                     "se_r_s", "se_d_hat", "se_lambda_star_hat", "se_combined",
                     "clamp_c"):
            lines.append(f"{name}={getattr(self, name)!r}")
        lines.append(f"holds={1 if self.holds else 0}")
        return "\n".join(lines) + "\n"


def _feature_vectors(h: Mlp, images: Array) -> Array:
    """Stacked unit-normalized feature-pyramid rows, one vector per image."""
    stack = nets.feature_stack(h, Tensor(images.reshape(len(images), -1)))
    parts = []
    for layer in stack:
        vals = layer.values
        norms = np.sqrt(np.sum(vals * vals, axis=1, keepdims=True) + 1e-24)
        parts.append(vals / norms)
    return np.hstack(parts)


def _clamped_risk(feats_a: Array, feats_b: Array, c: float) -> tuple[float, float]:
    dist = np.linalg.norm(feats_a - feats_b, axis=1)
    clamped = np.minimum(1.0, dist / c)
    n = clamped.size
    return float(np.mean(clamped)), float(np.std(clamped, ddof=1) / math.sqrt(n))


def _clamped_gap(h: Mlp, hhat: Mlp, x: Tensor, c: float) -> Tensor:
    """Per-image clamped L2 distance between twin and fixed feature stacks."""
    stack_fixed = nets.feature_stack(h, x)
    stack_twin = nets.feature_stack(hhat, x)
    total = None
    for a, b in zip(stack_twin, stack_fixed):
        diff = ad.sub(nets._unit_rows(a), nets._unit_rows(b))
        sumsq = ad.adsum(ad.square(diff), axis=1)
        total = sumsq if total is None else ad.add(total, sumsq)
    l2 = ad.exp(ad.mul(ad.log(ad.add(total, 1e-24)), 0.5))
    return ad.clamp(ad.mul(l2, 1.0 / c), 0.0, 1.0)


def audit_bound(model: ModelState, eval_ds: DomainDataset, div: FDivergence,
                audit: AuditConfig) -> BoundAuditReport:
    """Empirically check target risk <= source risk + discrepancy + joint risk.

    Risks are mean clamped feature L2 distances (a metric, honoring the
    triangle-inequality step of the bound's proof); the discrepancy
    estimate runs a fixed ascent to convergence with the same clamped
    distance; the ideal joint risk is estimated by training a fresh
    encoder WITH pairs at the same budget.
    """
    _require_discrepancy_compatible(div)
    src_recs = eval_ds.split("src")
    trg_recs = eval_ds.split("trg")
    if not src_recs or not trg_recs:
        raise ValueError("audit_bound: eval dataset needs both src and trg records")
    if not all(r.paired for r in src_recs + trg_recs):
        raise ValueError("audit_bound: eval dataset must be paired")

    g = model.gen
    src_refs = nets.render(g, eval_ds.latents("src")).reshape(-1, nets.N_PIXELS)
    trg_refs = nets.render(g, eval_ds.latents("trg")).reshape(-1, nets.N_PIXELS)
    src_inputs = eval_ds.images("src").reshape(-1, nets.N_PIXELS)
    trg_inputs = eval_ds.images("trg").reshape(-1, nets.N_PIXELS)

    def recon(e: Mlp, inputs: Array) -> Array:
        return nets.generate(g, nets.encode(e, Tensor(inputs))).values

    recon_src = recon(model.encoder, src_inputs)
    recon_trg = recon(model.encoder, trg_inputs)

    feats_ref_src = _feature_vectors(model.h, src_refs)
    feats_ref_trg = _feature_vectors(model.h, trg_refs)
    feats_rec_src = _feature_vectors(model.h, recon_src)
    feats_rec_trg = _feature_vectors(model.h, recon_trg)

    if audit.clamp_scale is not None:
        c = float(audit.clamp_scale)
    else:
        src_dist = np.linalg.norm(feats_ref_src - feats_rec_src, axis=1)
        c = float(np.percentile(src_dist, audit.clamp_percentile))
    c = max(c, 1e-12)

    r_s, se_r_s = _clamped_risk(feats_ref_src, feats_rec_src, c)
    r_t, se_r_t = _clamped_risk(feats_ref_trg, feats_rec_trg, c)

    d_hat, se_d_hat = _ascend_discrepancy(model, recon_src, recon_trg, div, c, audit)
    lam_hat, se_lam = _estimate_joint_risk(model, eval_ds, div, c, audit,
                                           src_inputs, trg_inputs,
                                           feats_ref_src, feats_ref_trg)

    slack = r_s + d_hat + lam_hat - r_t
    se_combined = math.sqrt(se_r_s ** 2 + se_r_t ** 2 + se_d_hat ** 2 + se_lam ** 2)
    return BoundAuditReport(
        r_t=r_t, r_s=r_s, d_hat=d_hat, lambda_star_hat=lam_hat, slack=slack,
        se_r_t=se_r_t, se_r_s=se_r_s, se_d_hat=se_d_hat, se_lambda_star_hat=se_lam,
        se_combined=se_combined, clamp_c=c, holds=slack >= -3.0 * se_combined)


def _ascend_discrepancy(model: ModelState, recon_src: Array, recon_trg: Array,
                        div: FDivergence, c: float,
                        audit: AuditConfig) -> tuple[float, float]:
    """Fixed-budget ascent of the clamped discrepancy; returns the best value."""
    twin = nets.make_trainable_twin(model.h)
    _jitter_twin(twin, model.config.twin_init_jitter, [_TAG_TWIN_JITTER, audit.seed, 1])
    opt = ad.adam_init(twin.params(), lr=model.config.lr_hhat)
    xs = Tensor(recon_src)
    xt = Tensor(recon_trg)
    best = 0.0
    best_se = 0.0
    for _ in range(audit.ascent_steps):
        with ad.Tape() as tape:
            gap_s = _clamped_gap(model.h, twin, xs, c)
            gap_t = _clamped_gap(model.h, twin, xt, c)
            conj_t = div.conjugate_tensor(gap_t)
            d = ad.sub(ad.mean(gap_s), ad.mean(conj_t))
            tape.backward(d)
        value = float(d.values)
        if value > best:
            best = value
            best_se = math.sqrt(
                np.var(gap_s.values, ddof=1) / gap_s.size
                + np.var(conj_t.values, ddof=1) / conj_t.size)
        ad.adam_step(twin.params(), [-p.grad for p in twin.params()], opt)
    return best, best_se


def _estimate_joint_risk(model: ModelState, eval_ds: DomainDataset, div: FDivergence,
                         c: float, audit: AuditConfig, src_inputs: Array,
                         trg_inputs: Array, feats_ref_src: Array,
                         feats_ref_trg: Array) -> tuple[float, float]:
    """Train a fresh encoder WITH pairs (both domains), score its risks."""
    from .synthdeg import sample_paired_eval

    cfg = model.config
    g = model.gen
    n_pairs = audit.joint_pairs if audit.joint_pairs is not None else len(eval_ds.split("src"))
    deg = audit.joint_deg
    if deg is None:
        deg = eval_ds.split("trg")[0].deg
    pair_ds = sample_paired_eval(g, n_pairs, deg, seed=audit.seed + _TAG_JOINT_DATA)
    refs = nets.render(g, pair_ds.latents("src")).reshape(-1, nets.N_PIXELS)
    inputs = np.vstack([pair_ds.images("src").reshape(-1, nets.N_PIXELS),
                        pair_ds.images("trg").reshape(-1, nets.N_PIXELS)])
    targets = np.vstack([refs, refs])

    joint = nets.init_encoder(cfg.latent_dim, seed=audit.seed + _TAG_JOINT)
    opt = ad.adam_init(joint.params(), lr=cfg.lr_encoder)
    rng = np.random.default_rng([_TAG_JOINT, audit.seed])
    iterations = audit.joint_iterations if audit.joint_iterations is not None \
        else cfg.iterations
    n = inputs.shape[0]
    for _ in range(iterations):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=n < cfg.batch_size)
        with ad.Tape() as tape:
            x = Tensor(inputs[idx])
            xhat = nets.generate(g, nets.encode(joint, x))
            loss = reconstruction_loss(xhat, Tensor(targets[idx]), model.h, model.r,
                                       cfg.lambda1, cfg.lambda2, cfg.lambda3)
            tape.backward(loss)
        ad.adam_step(joint.params(), [p.grad for p in joint.params()], opt)

    recon_s = nets.generate(g, nets.encode(joint, Tensor(src_inputs))).values
    recon_t = nets.generate(g, nets.encode(joint, Tensor(trg_inputs))).values
    r_s_star, se_s = _clamped_risk(feats_ref_src, _feature_vectors(model.h, recon_s), c)
    r_t_star, se_t = _clamped_risk(feats_ref_trg, _feature_vectors(model.h, recon_t), c)
    return r_s_star + r_t_star, math.sqrt(se_s ** 2 + se_t ** 2)
