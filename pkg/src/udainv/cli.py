"""Command-line surface tying the library into reproducible runs.

Commands: synth, train, invert, edit, eval, audit-bound, divcheck,
gradcheck. Report-producing commands render matplotlib figures next to
their delimited outputs. Exit codes: 0 success, 1 validation failure,
2 runtime error.
"""

from __future__ import annotations

import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import editctl, fdiv, metrics, nets, plots, synthdeg, uda
from .autodiff import Tensor
from .checkpoint import (CheckpointError, load_checkpoint, save_checkpoint,
                         validate_compatible)
from .config import ConfigError, RunConfig, load_config

COMMANDS = ("synth", "train", "invert", "edit", "eval", "audit-bound",
            "divcheck", "gradcheck")

EDIT_ALPHAS = (-2.0, -1.0, 0.0, 1.0, 2.0)

GRADCHECK_TOLERANCE = 1e-5
CONJUGATE_TOLERANCE = 1e-4

# t-grid and x-grid bounds for the brute-force conjugate check, per divergence.
CONJUGATE_GRIDS = {
    "KL": (-5.0, 3.0, 0.0, 20.0),
    "JS": (-5.0, 0.65, 0.0, 60.0),
    "PearsonChi2": (-4.0, 4.0, 0.0, 5.0),
    "TotalVariation": (-0.5, 0.5, 0.0, 4.0),
}


class CliError(ValueError):
    """Invalid command line or unusable inputs (exit code 1)."""


def main(argv: list[str] | None = None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


def run_command(argv: list[str]) -> int:
    try:
        command, cfg, out_dir = _parse(argv)
    except (CliError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    try:
        _dispatch(command, cfg, out_dir)
    except (CliError, ConfigError, CheckpointError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failure
        print(f"runtime error: {err}", file=sys.stderr)
        return 2
    return 0


def _parse(argv: list[str]) -> tuple[str, RunConfig, Path]:
    if not argv:
        raise CliError(f"missing command; expected one of: {', '.join(COMMANDS)}")
    command = argv[0]
    if command not in COMMANDS:
        raise CliError(f"unknown command {command!r}; expected one of: "
                       f"{', '.join(COMMANDS)}")
    cfg_path = None
    seed = None
    out = None
    rest = argv[1:]
    i = 0
    while i < len(rest):
        flag = rest[i]
        if flag not in ("--config", "--seed", "--out"):
            raise CliError(f"unknown flag {flag!r}; valid flags: --config, --seed, --out")
        if i + 1 >= len(rest):
            raise CliError(f"flag {flag!r} needs a value")
        value = rest[i + 1]
        if flag == "--config":
            cfg_path = Path(value)
        elif flag == "--seed":
            try:
                seed = int(value)
            except ValueError:
                raise CliError(f"--seed needs an integer, got {value!r}") from None
        else:
            out = Path(value)
        i += 2

    cfg = load_config(cfg_path) if cfg_path is not None else RunConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out_dir = out if out is not None else Path(cfg.out_dir)
    return command, cfg, out_dir


def _dispatch(command: str, cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    handler = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "invert": _cmd_invert,
        "edit": _cmd_edit,
        "eval": _cmd_eval,
        "audit-bound": _cmd_audit,
        "divcheck": _cmd_divcheck,
        "gradcheck": _cmd_gradcheck,
    }[command]
    handler(cfg, out)


def _training_sets(cfg: RunConfig):
    gen = cfg.generator_spec()
    deg = cfg.degradation_spec()
    src = synthdeg.sample_domain(gen, cfg.n_src, "src", deg, cfg.seed)
    trg = synthdeg.sample_domain(gen, cfg.n_trg, "trg", deg, cfg.seed)
    return gen, deg, src, trg


def _eval_set(cfg: RunConfig):
    return synthdeg.sample_paired_eval(cfg.generator_spec(), cfg.n_eval,
                                       cfg.degradation_spec(), cfg.seed)


def _load_model(cfg: RunConfig, out: Path):
    path = out / "checkpoint.bin"
    if not path.exists():
        raise CliError(f"no checkpoint at {path}; run train first")
    model, ckpt_cfg = load_checkpoint(path)
    validate_compatible(ckpt_cfg, cfg)
    return model


def _cmd_synth(cfg: RunConfig, out: Path) -> None:
    gen, deg, src, trg = _training_sets(cfg)
    train_ds = synthdeg.DomainDataset(records=src.records + trg.records,
                                      latent_dim=gen.latent_dim)
    synthdeg.save_dataset(train_ds, out / "train")
    synthdeg.save_dataset(_eval_set(cfg), out / "eval")
    print(f"wrote {len(train_ds.records)} training and {2 * cfg.n_eval} eval "
          f"records under {out}")


def _cmd_train(cfg: RunConfig, out: Path) -> None:
    gen, _deg, src, trg = _training_sets(cfg)
    model, log = uda.train(cfg.train_config(), gen, src, trg)
    save_checkpoint(model, cfg, out / "checkpoint.bin")
    (out / "train_log.csv").write_text(uda.metrics_log_csv(log))
    plots.save_training_curves(log, out / "train_log.png")
    print(f"trained {cfg.iterations} iterations; checkpoint and log under {out}")


def _cmd_invert(cfg: RunConfig, out: Path) -> None:
    model = _load_model(cfg, out)
    eval_ds = _eval_set(cfg)
    invert_dir = out / "invert"
    invert_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for split in ("src", "trg"):
        inputs = eval_ds.images(split)
        latents = uda.invert(model, inputs)
        recons = nets.render(model.gen, latents)
        for i, (image, recon) in enumerate(zip(inputs, recons)):
            synthdeg.write_pgm(invert_dir / f"{split}_{i:04d}_input.pgm", image)
            synthdeg.write_pgm(invert_dir / f"{split}_{i:04d}_recon.pgm", recon)
            count += 1
    print(f"wrote {count} inversion pairs under {invert_dir}")


def _cmd_edit(cfg: RunConfig, out: Path) -> None:
    model = _load_model(cfg, out)
    eval_ds = _eval_set(cfg)
    inputs = eval_ds.images("src")
    truth = eval_ds.latents("src")
    inverted = uda.invert(model, inputs)
    labels = (truth[:, 0] > 0).astype(float)

    directions = [editctl.interfacegan_direction(inverted, labels, "w0-sign")]
    directions += editctl.ganspace_directions(inverted, k=3)
    editctl.save_directions(out / "directions.csv", directions)

    edit_dir = out / "edit"
    edit_dir.mkdir(parents=True, exist_ok=True)
    strips = []
    for i, w in enumerate(inverted[:8]):
        row = [editctl.apply_edit(model.gen, w, directions[0], a)[1]
               for a in EDIT_ALPHAS]
        strips.append(row)
        separator = np.ones((16, 1))
        panels = []
        for j, img in enumerate(row):
            if j:
                panels.append(separator)
            panels.append(img)
        synthdeg.write_pgm(edit_dir / f"strip_{i:04d}.pgm", np.hstack(panels))
    plots.save_edit_sheet(strips, EDIT_ALPHAS, edit_dir / "edit_sheet.png")
    print(f"wrote {len(directions)} directions and {len(strips)} edit strips "
          f"under {out}")


def _cmd_eval(cfg: RunConfig, out: Path) -> None:
    model = _load_model(cfg, out)
    rows = metrics.evaluate_checkpoint(model, _eval_set(cfg))
    (out / "metrics.csv").write_text(metrics.metrics_csv(rows))
    plots.save_metric_bars(rows, out / "metrics.png")
    for row in rows:
        print(f"{row.split}: PSNR {row.psnr:.2f} SSIM {row.ssim:.3f} "
              f"MSE {row.mse:.4f} FFD {row.ffd:.4f} IDs {row.ids:.3f}")


def _cmd_audit(cfg: RunConfig, out: Path) -> None:
    model = _load_model(cfg, out)
    report = uda.audit_bound(model, _eval_set(cfg),
                             fdiv.get_divergence(cfg.divergence),
                             uda.AuditConfig(seed=cfg.seed))
    (out / "audit.txt").write_text(report.to_text())
    plots.save_bound_terms(report, out / "audit.png")
    verdict = "holds" if report.holds else "VIOLATED"
    print(f"bound {verdict}: slack {report.slack:+.4f} vs -3 s.e. "
          f"{-3 * report.se_combined:.4f}")


def _cmd_divcheck(cfg: RunConfig, out: Path) -> None:
    lines = []
    ok = True
    for name, (t_lo, t_hi, x_lo, x_hi) in CONJUGATE_GRIDS.items():
        div = fdiv.get_divergence(name)
        worst = 0.0
        for t in np.linspace(t_lo, t_hi, 41):
            numeric = fdiv.conjugate_numeric_oracle(div, float(t), x_lo, x_hi, 200_000)
            worst = max(worst, abs(fdiv.conjugate_eval(div, float(t)) - numeric.value))
        lines.append(f"{name}_conjugate_grid_max_err={float(worst)!r}")
        ok &= worst < CONJUGATE_TOLERANCE

    rng = np.random.default_rng([cfg.seed, 71])
    kl = fdiv.get_divergence("KL")
    p, q = fdiv.GaussianSpec(0.0, 1.0), fdiv.GaussianSpec(1.0, 1.0)
    kl_est = fdiv.nwj_estimate(kl, p.sample(100_000, rng), q.sample(100_000, rng),
                               fdiv.make_optimal_witness(kl, p, q))
    lines.append(f"kl_nwj_estimate={kl_est!r}")
    lines.append("kl_closed_form=0.5")
    ok &= abs(kl_est - 0.5) < 0.02

    pearson = fdiv.get_divergence("PearsonChi2")
    p2, q2 = fdiv.GaussianSpec(1.0, 1.0), fdiv.GaussianSpec(0.0, 1.0)
    pe_est = fdiv.nwj_estimate(pearson, p2.sample(100_000, rng),
                               q2.sample(100_000, rng),
                               fdiv.make_optimal_witness(pearson, p2, q2))
    closed = math.e - 1.0
    lines.append(f"pearson_nwj_estimate={pe_est!r}")
    lines.append(f"pearson_closed_form={closed!r}")
    ok &= abs(pe_est - closed) / closed < 0.05

    lines.append(f"pass={1 if ok else 0}")
    (out / "divcheck.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not ok:
        raise RuntimeError("divergence oracle report exceeded tolerances")


def _gradcheck_cases(seed: int):
    gen = nets.GeneratorSpec()
    pearson = fdiv.get_divergence("PearsonChi2")
    cases = []

    def primitive_case(name, fn):
        def check(seed_i: int) -> float:
            rng = np.random.default_rng([seed_i, 81])
            a = ad.Tensor(rng.standard_normal((4, 3)) * 0.6)
            b = ad.Tensor(rng.standard_normal((3, 2)) * 0.6 if name == "matmul"
                          else rng.standard_normal((4, 3)) * 0.6)
            shape = fn(a, b).shape
            weights = ad.Tensor(rng.choice([-1.0, 1.0], size=shape)
                                * rng.uniform(0.5, 1.5, size=shape))
            return ad.grad_check_params(lambda: ad.adsum(ad.mul(fn(a, b), weights)),
                                        [a, b], step=1e-5)
        return check

    primitives = {
        "matmul": lambda a, b: ad.matmul(a, b),
        "add": lambda a, b: ad.add(a, b),
        "sub": lambda a, b: ad.sub(a, b),
        "mul": lambda a, b: ad.mul(a, b),
        "div": lambda a, b: ad.div(a, ad.add(ad.square(b), 0.5)),
        "exp": lambda a, b: ad.exp(a),
        "log": lambda a, b: ad.log(ad.add(ad.square(a), 0.7)),
        "tanh": lambda a, b: ad.tanh(a),
        "sigmoid": lambda a, b: ad.sigmoid(a),
        "leaky_relu": lambda a, b: ad.leaky_relu(a, 0.2),
        "square": lambda a, b: ad.square(a),
        "abs": lambda a, b: ad.absv(a),
        "sum": lambda a, b: ad.adsum(a, axis=1),
        "mean": lambda a, b: ad.mean(a, axis=0),
        "concat": lambda a, b: ad.concat([a, b], axis=0),
        "clamp": lambda a, b: ad.clamp(a, -0.8, 0.8),
        "reshape": lambda a, b: ad.reshape(a, (3, 4)),
    }
    for name, fn in primitives.items():
        cases.append((f"primitive.{name}", primitive_case(name, fn)))

    def generator_case(seed_i: int) -> float:
        rng = np.random.default_rng([seed_i, 82])
        w = ad.Tensor(rng.standard_normal(8))
        weights = ad.Tensor(rng.uniform(0.5, 1.5, size=(1, 256)))
        return ad.grad_check(lambda t: ad.mean(ad.mul(nets.generate(gen, t), weights)),
                             w, step=1e-5)

    cases.append(("generator", generator_case))

    def source_loss_case(seed_i: int) -> float:
        model = uda.init_model(uda.TrainConfig(seed=seed_i), gen)
        rng = np.random.default_rng([seed_i, 83])
        batch = rng.uniform(size=(3, 256))
        return ad.grad_check_params(
            lambda: uda.source_loss(model.encoder, gen, model.h, model.r, batch),
            model.encoder.params(), step=3e-5, max_coords=30, seed=seed_i)

    cases.append(("source_loss", source_loss_case))

    def d_st_case(seed_i: int) -> float:
        model = uda.init_model(uda.TrainConfig(seed=seed_i), gen)
        uda._jitter_twin(model.hhat, 0.02, [seed_i, 84])
        rng = np.random.default_rng([seed_i, 85])
        sb = rng.uniform(size=(3, 256))
        tb = rng.uniform(size=(3, 256))

        def loss():
            return uda.d_st(model.encoder, gen, model.h, model.hhat, sb, tb, pearson)

        err = ad.grad_check_params(loss, model.hhat.params(), step=3e-5,
                                   max_coords=25, seed=seed_i)
        return max(err, ad.grad_check_params(loss, model.encoder.params(), step=3e-5,
                                             max_coords=25, seed=seed_i))

    cases.append(("d_st", d_st_case))
    return cases


def _cmd_gradcheck(cfg: RunConfig, out: Path) -> None:
    lines = []
    worst_overall = 0.0
    for name, check in _gradcheck_cases(cfg.seed):
        worst = float(max(check(cfg.seed + i) for i in range(10)))
        worst_overall = max(worst_overall, worst)
        lines.append(f"{name}={worst!r}")
    lines.append(f"max_relative_error={worst_overall!r}")
    lines.append(f"pass={1 if worst_overall < GRADCHECK_TOLERANCE else 0}")
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if worst_overall >= GRADCHECK_TOLERANCE:
        raise RuntimeError(f"gradient check failed: {worst_overall} >= "
                           f"{GRADCHECK_TOLERANCE}")


if __name__ == "__main__":
    sys.exit(main())
