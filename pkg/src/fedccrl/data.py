"""Synthetic multi-domain image data, folder ingestion, and partitioning.

A synthetic sample of class ``y`` in domain ``d`` is, per channel ``c``::

    clip(mean[d, c] + std[d, c] * (signal * template[y, c] + noise), 0, 1)

Class templates are shared by every domain (the invariant signal); the
per-domain channel affine map is the style the domains disagree on.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Four colour/contrast styles used by the default benchmark.
DEFAULT_DOMAIN_MEANS = (
    (0.25, 0.45, 0.70),
    (0.70, 0.35, 0.25),
    (0.40, 0.70, 0.40),
    (0.55, 0.50, 0.55),
)
DEFAULT_DOMAIN_STDS = (
    (0.05, 0.08, 0.12),
    (0.12, 0.06, 0.08),
    (0.08, 0.12, 0.05),
    (0.25, 0.25, 0.25),
)


@dataclass
class DomainDataset:
    domain_id: int
    images: np.ndarray  # (n, C, H, W), values in [0, 1]
    labels: np.ndarray  # (n,) int64
    num_classes: int
    name: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_dims(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


@dataclass
class ClientShard:
    domain_id: int
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray  # positions in the source domain, for disjointness checks

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SyntheticConfig:
    num_domains: int = 4
    num_classes: int = 5
    samples_per_domain: int = 200
    image_dims: tuple[int, int, int] = (3, 8, 8)
    class_signal_strength: float = 0.4
    domain_channel_means: tuple = DEFAULT_DOMAIN_MEANS
    domain_channel_stds: tuple = DEFAULT_DOMAIN_STDS
    noise_std: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        c, h, w = self.image_dims
        if min(c, h, w) < 1:
            raise ValueError(f"image_dims must be positive, got {self.image_dims}")
        if self.num_domains < 1 or self.num_classes < 1 or self.samples_per_domain < 1:
            raise ValueError("num_domains, num_classes and samples_per_domain must be >= 1")
        means = np.asarray(self.domain_channel_means, dtype=float)
        stds = np.asarray(self.domain_channel_stds, dtype=float)
        if means.shape != (self.num_domains, c) or stds.shape != (self.num_domains, c):
            raise ValueError(
                f"domain statistics must be {self.num_domains}x{c}, got {means.shape} and {stds.shape}"
            )
        if np.any(stds <= 0):
            raise ValueError("domain channel stds must be > 0")
        rows = np.concatenate([means, stds], axis=1)
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                if np.array_equal(rows[i], rows[j]):
                    raise ValueError(f"domains {i} and {j} have identical statistics")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def class_templates(cfg: SyntheticConfig) -> np.ndarray:
    """Smooth, zero-mean, unit-std (num_classes, C, H, W) patterns."""
    c, h, w = cfg.image_dims
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E3]))
    yy = (np.arange(h) + 0.5) / h
    xx = (np.arange(w) + 0.5) / w
    basis = []
    for fy in range(3):
        for fx in range(3):
            if fx == fy == 0:
                continue
            basis.append(np.outer(np.cos(np.pi * fy * yy), np.cos(np.pi * fx * xx)))
    basis = np.stack(basis)  # (8, H, W), empty-safe for 1x1 images
    coef = rng.normal(size=(cfg.num_classes, c, len(basis)))
    t = np.einsum("kcb,bhw->kchw", coef, basis)
    t -= t.mean(axis=(-2, -1), keepdims=True)
    sd = t.std(axis=(-2, -1), keepdims=True)
    return np.divide(t, sd, out=np.zeros_like(t), where=sd > 0)


def generate_synthetic(cfg: SyntheticConfig) -> list[DomainDataset]:
    cfg.validate()
    templates = class_templates(cfg)
    means = np.asarray(cfg.domain_channel_means, dtype=float)
    stds = np.asarray(cfg.domain_channel_stds, dtype=float)
    streams = np.random.SeedSequence([cfg.seed, 0xDA7A]).spawn(cfg.num_domains)
    out = []
    n = cfg.samples_per_domain
    for d in range(cfg.num_domains):
        rng = np.random.default_rng(streams[d])
        labels = rng.permutation(np.arange(n) % cfg.num_classes)
        noise = rng.normal(scale=cfg.noise_std, size=(n, *cfg.image_dims)) if cfg.noise_std > 0 else 0.0
        z = cfg.class_signal_strength * templates[labels] + noise
        images = np.clip(means[d][None, :, None, None] + stds[d][None, :, None, None] * z, 0.0, 1.0)
        out.append(
            DomainDataset(d, images, labels, cfg.num_classes, f"domain{d}", {"synthetic": cfg})
        )
    return out


def leave_one_domain_out(
    datasets: list[DomainDataset], target_domain_id: int
) -> tuple[list[DomainDataset], DomainDataset]:
    ids = [d.domain_id for d in datasets]
    if target_domain_id not in ids:
        raise KeyError(f"unknown domain id {target_domain_id}; have {ids}")
    train = [d for d in datasets if d.domain_id != target_domain_id]
    test = datasets[ids.index(target_domain_id)]
    return train, test


def partition_clients(domain: DomainDataset, K: int, rng: np.random.Generator) -> list[ClientShard]:
    """K disjoint shuffled shards whose sizes differ by at most one."""
    if K < 1 or K > len(domain):
        raise ValueError(f"cannot split {len(domain)} samples of domain {domain.domain_id} into {K} clients")
    perm = rng.permutation(len(domain))
    return [
        ClientShard(domain.domain_id, domain.images[idx], domain.labels[idx], idx)
        for idx in np.array_split(perm, K)
    ]


# ---------------------------------------------------------------- image folders

_HEADER = re.compile(rb"^(P[2356])\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")
IMAGE_SUFFIXES = {".ppm", ".pgm", ".pnm"}


def read_pnm(path) -> np.ndarray:
    """Read a PGM/PPM (plain or raw, maxval <= 65535) as (C, H, W) in [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
        m = _HEADER.match(raw)
        if m is None:
            raise ValueError("not a PGM/PPM file")
        magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
        channels = 3 if magic in (b"P3", b"P6") else 1
        count = w * h * channels
        body = raw[m.end():]
        if magic in (b"P2", b"P3"):
            vals = np.array(body.split()[:count], dtype=np.float64)
        else:
            dtype = ">u2" if maxval > 255 else "u1"
            vals = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
        if vals.size != count:
            raise ValueError("truncated pixel data")
    except (OSError, ValueError) as exc:
        raise ValueError(f"unreadable image file {path}: {exc}") from exc
    return (vals / maxval).reshape(h, w, channels).transpose(2, 0, 1)


def write_pnm(path, img: np.ndarray) -> None:
    """Write a (C, H, W) image in [0, 1] as raw PGM (C=1) or PPM (C=3)."""
    img = np.asarray(img)
    c, h, w = img.shape
    if c not in (1, 3):
        raise ValueError("only 1- or 3-channel images can be written")
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode())
        fh.write(q.transpose(1, 2, 0).tobytes())


def resize_nearest(img: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    c, h, w = dims
    src_c, src_h, src_w = img.shape
    rows = (np.arange(h) * src_h) // h
    cols = (np.arange(w) * src_w) // w
    out = img[:, rows][:, :, cols]
    if src_c == c:
        return out
    if src_c == 1:
        return np.repeat(out, c, axis=0)
    if c == 1:
        return out.mean(axis=0, keepdims=True)
    raise ValueError(f"cannot map {src_c} channels onto {c}")


def load_image_folder(path, dims, domain_id: int = 0, class_names: list[str] | None = None) -> DomainDataset:
    """Load ``<path>/<class>/<file>`` into one domain, resized to ``dims``."""
    path = Path(path)
    if not path.is_dir():
        raise ValueError(f"not a directory: {path}")
    classes = class_names or sorted(p.name for p in path.iterdir() if p.is_dir())
    images, labels = [], []
    for k, cname in enumerate(classes):
        cdir = path / cname
        if not cdir.is_dir():
            continue
        for f in sorted(cdir.iterdir()):
            if f.suffix.lower() in IMAGE_SUFFIXES:
                images.append(resize_nearest(read_pnm(f), tuple(dims)))
                labels.append(k)
    if not images:
        raise ValueError(f"no images found under {path}")
    return DomainDataset(
        domain_id, np.stack(images), np.array(labels), len(classes), path.name, {"folder": str(path)}
    )


def load_image_root(root, dims) -> list[DomainDataset]:
    """Load every ``<root>/<domain>/<class>/<file>`` domain with a shared class list."""
    root = Path(root)
    domains = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not domains:
        raise ValueError(f"no domain folders under {root}")
    classes = sorted({c.name for d in domains for c in d.iterdir() if c.is_dir()})
    return [load_image_folder(d, dims, k, classes) for k, d in enumerate(domains)]


def write_image_root(root, datasets: list[DomainDataset]) -> None:
    root = Path(root)
    for ds in datasets:
        for k in range(ds.num_classes):
            os.makedirs(root / (ds.name or f"domain{ds.domain_id}") / f"class{k:03d}", exist_ok=True)
        for i, (img, y) in enumerate(zip(ds.images, ds.labels)):
            ext = ".pgm" if img.shape[0] == 1 else ".ppm"
            write_pnm(root / (ds.name or f"domain{ds.domain_id}") / f"class{y:03d}" / f"{i:05d}{ext}", img)
