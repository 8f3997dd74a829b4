"""Binary checkpoint format.

Layout: magic line, a config echo, a named-tensor directory (name, shape,
byte offset into the payload), then the raw little-endian float64 payload
in directory order. Save/load round-trips are bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Tensor
from .config import RunConfig, parse_config
from .nets import Mlp
from .uda import ModelState, TrainConfig

MAGIC = b"UDAINV1"

Array = np.ndarray


class CheckpointError(ValueError):
    """Structurally invalid checkpoint file."""


def _named_tensors(model: ModelState) -> list[tuple[str, Array]]:
    out: list[tuple[str, Array]] = []
    for prefix, mlp in (("encoder", model.encoder), ("hhat", model.hhat),
                        ("h", model.h), ("r", model.r)):
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            out.append((f"{prefix}.w{i}", w.values))
            out.append((f"{prefix}.b{i}", b.values))
    for prefix, state in (("opt_e", model.opt_encoder), ("opt_h", model.opt_hhat)):
        out.append((f"{prefix}.step", np.array([float(state.step)])))
        for i, m in enumerate(state.m):
            out.append((f"{prefix}.m{i}", m))
        for i, v in enumerate(state.v):
            out.append((f"{prefix}.v{i}", v))
    return out


def save_checkpoint(model: ModelState, run_config: RunConfig, path: Path) -> None:
    tensors = _named_tensors(model)
    config_lines = run_config.to_lines()
    directory = []
    offset = 0
    payload = bytearray()
    for name, arr in tensors:
        dims = ",".join(str(d) for d in arr.shape)
        directory.append(f"{name} {dims} {offset}")
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        payload.extend(raw)
        offset += len(raw)

    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(f"config {len(config_lines)}\n".encode())
        for line in config_lines:
            fh.write(line.encode() + b"\n")
        fh.write(f"tensors {len(directory)}\n".encode())
        for line in directory:
            fh.write(line.encode() + b"\n")
        fh.write(f"payload {len(payload)}\n".encode())
        fh.write(bytes(payload))


def _read_count(line: str, keyword: str) -> int:
    parts = line.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise CheckpointError(f"expected '{keyword} <count>' line, got {line!r}")
    return int(parts[1])


def load_checkpoint(path: Path) -> tuple[ModelState, RunConfig]:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(MAGIC + b"\n"):
        raise CheckpointError(f"{path}: bad magic, expected {MAGIC.decode()!r}")
    head, _, rest = data.partition(b"\n")
    lines = rest.split(b"\n")

    pos = 0
    n_config = _read_count(lines[pos].decode(), "config")
    pos += 1
    config_lines = [lines[pos + i].decode() for i in range(n_config)]
    pos += n_config
    n_tensors = _read_count(lines[pos].decode(), "tensors")
    pos += 1
    directory: list[tuple[str, tuple[int, ...], int]] = []
    for i in range(n_tensors):
        parts = lines[pos + i].decode().split()
        if len(parts) != 3:
            raise CheckpointError(f"{path}: malformed directory entry {lines[pos + i]!r}")
        name, dims_str, offset_str = parts
        dims = tuple(int(d) for d in dims_str.split(","))
        directory.append((name, dims, int(offset_str)))
    pos += n_tensors
    payload_bytes = _read_count(lines[pos].decode(), "payload")
    pos += 1
    payload = b"\n".join(lines[pos:])
    if len(payload) != payload_bytes:
        raise CheckpointError(f"{path}: truncated payload, expected {payload_bytes} "
                              f"bytes, got {len(payload)}")

    expected_offset = 0
    for name, dims, offset in directory:
        if offset != expected_offset:
            raise CheckpointError(f"{path}: tensor {name!r} at offset {offset}, "
                                  f"expected {expected_offset} (offsets must be "
                                  "increasing and non-overlapping)")
        expected_offset += int(np.prod(dims)) * 8
    if expected_offset != payload_bytes:
        raise CheckpointError(f"{path}: payload length {payload_bytes} does not match "
                              f"directory total {expected_offset}")

    arrays: dict[str, Array] = {}
    for name, dims, offset in directory:
        size = int(np.prod(dims))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=size,
                                     offset=offset).reshape(dims).copy()

    run_config = parse_config("\n".join(config_lines))
    return _rebuild_model(arrays, run_config), run_config


def _rebuild_mlp(arrays: dict[str, Array], prefix: str, activation: str,
                 role: str | None) -> Mlp:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        weights.append(Tensor(arrays[f"{prefix}.w{i}"]))
        biases.append(Tensor(arrays[f"{prefix}.b{i}"]))
        i += 1
    if not weights:
        raise CheckpointError(f"checkpoint lacks tensors for {prefix!r}")
    return Mlp(weights=weights, biases=biases, activation=activation, role=role)


def _rebuild_adam(arrays: dict[str, Array], prefix: str, params: list[Tensor],
                  lr: float) -> ad.AdamState:
    state = ad.adam_init(params, lr=lr)
    state.step = int(round(float(arrays[f"{prefix}.step"][0])))
    state.m = [arrays[f"{prefix}.m{i}"] for i in range(len(params))]
    state.v = [arrays[f"{prefix}.v{i}"] for i in range(len(params))]
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.values.shape or v.shape != p.values.shape:
            raise CheckpointError(f"{prefix}: moment shapes do not match parameters")
    return state


def _rebuild_model(arrays: dict[str, Array], run_config: RunConfig) -> ModelState:
    encoder = _rebuild_mlp(arrays, "encoder", "leaky", None)
    hhat = _rebuild_mlp(arrays, "hhat", "tanh", nets.ROLE_PERCEPTUAL_TRAINABLE)
    h = _rebuild_mlp(arrays, "h", "tanh", nets.ROLE_PERCEPTUAL)
    r = _rebuild_mlp(arrays, "r", "tanh", nets.ROLE_IDENTITY)
    train_cfg = run_config.train_config()
    return ModelState(
        gen=run_config.generator_spec(), encoder=encoder, h=h, hhat=hhat, r=r,
        opt_encoder=_rebuild_adam(arrays, "opt_e", encoder.params(), train_cfg.lr_encoder),
        opt_hhat=_rebuild_adam(arrays, "opt_h", hhat.params(), train_cfg.lr_hhat),
        config=train_cfg)


def validate_compatible(ckpt_config: RunConfig, run_config: RunConfig) -> None:
    """Reject checkpoints whose model shape cannot serve the active config."""
    if ckpt_config.latent_dim != run_config.latent_dim:
        raise CheckpointError(
            f"checkpoint latent_dim {ckpt_config.latent_dim} does not match "
            f"configured latent_dim {run_config.latent_dim}")
