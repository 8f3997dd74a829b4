"""Source (clean) / target (degraded) domain synthesis with strict
unpairedness for training, plus dataset persistence (binary PGM images and
a CSV manifest).

All randomness is derived from explicit seeds; the same (kind, seed,
params) always produces bit-identical output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .nets import GeneratorSpec, render

Array = np.ndarray

KINDS = ("rain", "mask", "downsample", "none")

# Seed stream tags (latents, per-record degradation seeds, effects).
_TAG_LATENTS, _TAG_DEGSEEDS = 11, 12
_TAG_RAIN, _TAG_MASK = 13, 14
_DOMAIN_CODE = {"src": 0, "trg": 1, "eval": 2}


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation operator with pinned, reproducible parameters."""

    kind: str = "mask"
    seed: int = 0
    rain_streaks: int = 12
    rain_length: int = 5
    rain_angle_min: float = -60.0
    rain_angle_max: float = -45.0
    rain_intensity: float = 0.25
    mask_steps: int = 40
    mask_radius_min: int = 1
    mask_radius_max: int = 2
    mask_fill: float = 0.0
    down_factor: int = 2

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}; valid: {KINDS}")


@dataclass
class DomainRecord:
    image: Array  # 16x16 in [0, 1]
    domain: str  # 'src' | 'trg'
    deg: DegradationSpec
    latent: Array | None
    paired: bool
    filename: str = ""


@dataclass
class DomainDataset:
    records: list[DomainRecord]
    latent_dim: int

    def split(self, domain: str) -> list[DomainRecord]:
        return [r for r in self.records if r.domain == domain]

    def images(self, domain: str) -> Array:
        return np.stack([r.image for r in self.split(domain)])

    def latents(self, domain: str) -> Array:
        return np.stack([r.latent for r in self.split(domain)])


def degrade(x: Array, deg: DegradationSpec) -> Array:
    """Apply one degradation operator; output stays in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (16, 16):
        raise ValueError(f"degrade: expected 16x16 image, got {x.shape}")
    if deg.kind == "none":
        return x.copy()
    if deg.kind == "rain":
        return _rain(x, deg)
    if deg.kind == "mask":
        return _mask(x, deg)
    if deg.kind == "downsample":
        return _downsample(x, deg)
    raise ValueError(f"unknown degradation kind {deg.kind!r}")


def _rain(x: Array, deg: DegradationSpec) -> Array:
    rng = np.random.default_rng([_TAG_RAIN, deg.seed])
    out = x.copy()
    size = x.shape[0]
    for _ in range(deg.rain_streaks):
        r0 = rng.uniform(0, size - 1)
        c0 = rng.uniform(0, size - 1)
        theta = np.deg2rad(rng.uniform(deg.rain_angle_min, deg.rain_angle_max))
        dc, dr = np.cos(theta), -np.sin(theta)  # negative angle slants downward
        for t in range(deg.rain_length):
            rr = int(round(r0 + t * dr))
            cc = int(round(c0 + t * dc))
            if 0 <= rr < size and 0 <= cc < size:
                out[rr, cc] += deg.rain_intensity
    return np.clip(out, 0.0, 1.0)


def _mask(x: Array, deg: DegradationSpec) -> Array:
    rng = np.random.default_rng([_TAG_MASK, deg.seed])
    out = x.copy()
    size = x.shape[0]
    r = int(rng.integers(0, size))
    c = int(rng.integers(0, size))
    moves = ((-1, 0), (1, 0), (0, -1), (0, 1))
    for _ in range(deg.mask_steps):
        radius = int(rng.integers(deg.mask_radius_min, deg.mask_radius_max + 1))
        lo_r, hi_r = max(0, r - radius), min(size, r + radius + 1)
        lo_c, hi_c = max(0, c - radius), min(size, c + radius + 1)
        for rr in range(lo_r, hi_r):
            for cc in range(lo_c, hi_c):
                if (rr - r) ** 2 + (cc - c) ** 2 <= radius * radius:
                    out[rr, cc] = deg.mask_fill
        dr, dc = moves[int(rng.integers(0, 4))]
        r = min(size - 1, max(0, r + dr))
        c = min(size - 1, max(0, c + dc))
    return np.clip(out, 0.0, 1.0)


def _downsample(x: Array, deg: DegradationSpec) -> Array:
    f = deg.down_factor
    size = x.shape[0]
    small = x.reshape(size // f, f, size // f, f).mean(axis=(1, 3))
    return np.clip(_bilinear_upsample(small, size), 0.0, 1.0)


def _bilinear_upsample(small: Array, size: int) -> Array:
    n = small.shape[0]
    scale = n / size
    # Pixel-center mapping; edge samples clamp to the border cell.
    coords = (np.arange(size) + 0.5) * scale - 0.5
    coords = np.clip(coords, 0.0, n - 1)
    i0 = np.floor(coords).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = coords - i0
    rows = small[i0][:, i0] * ((1 - frac)[:, None] * (1 - frac)[None, :]) \
        + small[i1][:, i0] * (frac[:, None] * (1 - frac)[None, :]) \
        + small[i0][:, i1] * ((1 - frac)[:, None] * frac[None, :]) \
        + small[i1][:, i1] * (frac[:, None] * frac[None, :])
    return rows


def sample_domain(g: GeneratorSpec, n: int, domain: str, deg: DegradationSpec,
                  seed: int) -> DomainDataset:
    """Draw a single-domain dataset from an independent seeded latent stream.

    Source records are clean renders; target records are degraded renders of
    latents drawn from a stream disjoint from the source stream, keeping the
    two training domains unpaired. Ground-truth latents are stored in every
    record (the training loop never reads them).
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if domain not in ("src", "trg"):
        raise ValueError(f"domain must be 'src' or 'trg', got {domain!r}")
    code = _DOMAIN_CODE[domain]
    latents = np.random.default_rng([_TAG_LATENTS, seed, code]).standard_normal(
        (n, g.latent_dim))
    deg_seeds = np.random.default_rng([_TAG_DEGSEEDS, seed, code]).integers(
        0, 2 ** 62, size=n)
    images = render(g, latents)
    records = []
    for i in range(n):
        if domain == "trg":
            rec_deg = replace(deg, seed=int(deg_seeds[i]))
            image = degrade(images[i], rec_deg)
        else:
            rec_deg = DegradationSpec(kind="none", seed=int(deg_seeds[i]))
            image = images[i]
        records.append(DomainRecord(image=image, domain=domain, deg=rec_deg,
                                    latent=latents[i].copy(), paired=False))
    return DomainDataset(records=records, latent_dim=g.latent_dim)


def sample_paired_eval(g: GeneratorSpec, n: int, deg: DegradationSpec,
                       seed: int) -> DomainDataset:
    """Evaluation split: src and trg records generated from the SAME latents,
    flagged paired for reference-based metrics and bound audits."""
    if n <= 0:
        raise ValueError("n must be positive")
    latents = np.random.default_rng([_TAG_LATENTS, seed, _DOMAIN_CODE["eval"]]) \
        .standard_normal((n, g.latent_dim))
    deg_seeds = np.random.default_rng([_TAG_DEGSEEDS, seed, _DOMAIN_CODE["eval"]]) \
        .integers(0, 2 ** 62, size=n)
    images = render(g, latents)
    records = []
    for i in range(n):
        records.append(DomainRecord(image=images[i].copy(), domain="src",
                                    deg=DegradationSpec(kind="none", seed=int(deg_seeds[i])),
                                    latent=latents[i].copy(), paired=True))
    for i in range(n):
        rec_deg = replace(deg, seed=int(deg_seeds[i]))
        records.append(DomainRecord(image=degrade(images[i], rec_deg), domain="trg",
                                    deg=rec_deg, latent=latents[i].copy(), paired=True))
    return DomainDataset(records=records, latent_dim=g.latent_dim)


# -- Persistence ----------------------------------------------------------

def write_pgm(path: Path, image: Array) -> None:
    """Binary PGM (P5), maxval 255, pixel = round(255 * value)."""
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        fh.write(quantized.tobytes())


def read_pgm(path: Path) -> Array:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    width, height = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: expected maxval 255, got {parts[2].decode()}")
    pixels = np.frombuffer(parts[3][: width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated pixel payload")
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def save_dataset(ds: DomainDataset, directory: Path) -> None:
    """Write images plus the manifest; filenames are assigned in record order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = ["filename", "domain", "deg_kind", "deg_seed", "paired"] \
        + [f"w{i}" for i in range(ds.latent_dim)]
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, rec in enumerate(ds.records):
            rec.filename = f"{rec.domain}_{i:05d}.pgm"
            write_pgm(directory / rec.filename, rec.image)
            latent_cols = [repr(float(v)) for v in rec.latent] if rec.latent is not None \
                else [""] * ds.latent_dim
            writer.writerow([rec.filename, rec.domain, rec.deg.kind,
                             str(rec.deg.seed), "1" if rec.paired else "0"] + latent_cols)


def load_dataset(directory: Path) -> DomainDataset:
    """Read a dataset back; images carry 8-bit quantization, latents are exact.

    Non-default degradation parameters are not part of the manifest format;
    records are reconstructed with (kind, seed) and pinned defaults.
    """
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{manifest}: empty manifest") from None
        latent_dim = len([c for c in header if c.startswith("w")])
        records = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 5 + latent_dim:
                raise ValueError(f"{manifest}: malformed row {row_no}: "
                                 f"expected {5 + latent_dim} fields, got {len(row)}")
            filename, domain, deg_kind, deg_seed, paired = row[:5]
            try:
                deg = DegradationSpec(kind=deg_kind, seed=int(deg_seed))
                latent_fields = row[5:]
                latent = None if latent_fields[0] == "" else \
                    np.array([float(v) for v in latent_fields])
            except ValueError as err:
                raise ValueError(f"{manifest}: malformed row {row_no}: {err}") from None
            records.append(DomainRecord(image=read_pgm(directory / filename),
                                        domain=domain, deg=deg, latent=latent,
                                        paired=paired == "1", filename=filename))
    return DomainDataset(records=records, latent_dim=latent_dim)


def manifest_roundtrip(ds: DomainDataset, directory: Path) -> DomainDataset:
    """Write then re-read; equal to the original up to 8-bit pixel rounding."""
    save_dataset(ds, directory)
    return load_dataset(directory)
