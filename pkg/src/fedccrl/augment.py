"""Pixel-space feature extension: cross-client style transfer then AugMix.

Statistics are per-sample, per-channel (mean, std) pairs.  Clients upload a
random subset of them each round; the server pools them and hands every
client the pool minus its own entries.  Style transfer re-colours a sample
with a Beta-weighted mix of its own and a donor's statistics.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels

STD_FLOOR = 1e-6
RANGE_SLACK = 1e-6

# severity 3 upper bounds
MAX_ROTATE_DEG = 30.0
MAX_SHEAR = 0.3
MAX_TRANSLATE_FRAC = 1.0 / 3.0
MAX_POSTERIZE_DROP = 4  # bits removed, so >= 4 bits kept
MAX_SOLARIZE_DROP = 0.5  # threshold >= 0.5


class EmptyPoolError(ValueError):
    """Raised by :func:`ccdt` when a client has no donor statistics.

    Callers that can tolerate it should skip the transfer (identity).
    """


@dataclass(frozen=True)
class SampleStatistics:
    mean: np.ndarray
    std: np.ndarray
    origin_client: int = -1

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be equal-length vectors")
        if np.any(self.std < 0):
            raise ValueError("std entries must be non-negative")

    @property
    def channels(self) -> int:
        return self.mean.shape[0]

    @staticmethod
    def wire_size(channels: int) -> int:
        return 4 + 2 + 16 * channels

    def to_bytes(self) -> bytes:
        c = self.channels
        return struct.pack(f"<IH{2 * c}d", self.origin_client, c, *self.mean, *self.std)

    @classmethod
    def from_bytes(cls, payload: bytes, offset: int = 0) -> tuple[SampleStatistics, int]:
        client, c = struct.unpack_from("<IH", payload, offset)
        vals = np.array(struct.unpack_from(f"<{2 * c}d", payload, offset + 6))
        return cls(vals[:c], vals[c:], client), offset + cls.wire_size(c)


@dataclass(frozen=True)
class StatisticsPool:
    entries: tuple[SampleStatistics, ...] = ()
    _means: np.ndarray = field(init=False, repr=False, compare=False)
    _stds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if entries:
            means = np.stack([e.mean for e in entries])
            stds = np.stack([e.std for e in entries])
        else:
            means = stds = np.zeros((0, 0))
        object.__setattr__(self, "_means", means)
        object.__setattr__(self, "_stds", stds)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def means(self) -> np.ndarray:
        return self._means

    @property
    def stds(self) -> np.ndarray:
        return self._stds

    def clients(self) -> set[int]:
        return {e.origin_client for e in self.entries}

    def view_for(self, client_id: int) -> StatisticsPool:
        return StatisticsPool(tuple(e for e in self.entries if e.origin_client != client_id))

    def to_bytes(self) -> bytes:
        return b"".join(e.to_bytes() for e in self.entries)

    @classmethod
    def from_bytes(cls, payload: bytes) -> StatisticsPool:
        entries, pos = [], 0
        while pos < len(payload):
            entry, pos = SampleStatistics.from_bytes(payload, pos)
            entries.append(entry)
        return cls(tuple(entries))


@dataclass(frozen=True)
class AugmentConfig:
    alpha: float = 0.1
    beta: float = 1.0
    severity: int = 3
    rng_seed: int = 0
    # Mixed mean as the scale and mixed std as the shift, read literally
    # from the published pseudo-code.  Off: MixStyle convention.
    literal_ccdt: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.severity not in (1, 2, 3):
            raise ValueError(f"severity must be 1, 2 or 3, got {self.severity}")


def batch_channel_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Channel-wise mean and population std for a (B, C, H, W) batch."""
    if X.shape[-1] * X.shape[-2] < 1:
        raise ValueError("channel statistics need at least one pixel")
    mu = X.mean(axis=(-2, -1))
    sd = np.sqrt(((X - mu[..., None, None]) ** 2).mean(axis=(-2, -1)))
    return mu, sd


def channel_stats(x: np.ndarray, origin_client: int = -1) -> SampleStatistics:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {x.shape}")
    mu, sd = batch_channel_stats(x[None])
    return SampleStatistics(mu[0], sd[0], origin_client)


def upload_count(n: int, r: float) -> int:
    return math.ceil(r * n)


def select_statistics(
    images: np.ndarray, r: float, rng: np.random.Generator, client_id: int = -1
) -> list[SampleStatistics]:
    """Statistics of ``ceil(r * n)`` distinct samples drawn without replacement."""
    if not 0 < r < 1:
        raise ValueError(f"upload ratio r must lie in (0, 1), got {r}")
    n = len(images)
    if n == 0:
        raise ValueError("cannot select statistics from an empty shard")
    idx = rng.choice(n, size=upload_count(n, r), replace=False)
    mu, sd = batch_channel_stats(np.asarray(images)[idx])
    return [SampleStatistics(mu[k], sd[k], client_id) for k in range(len(idx))]


def transfer_styles(
    X: np.ndarray,
    donor_mean: np.ndarray,
    donor_std: np.ndarray,
    lam: np.ndarray,
    literal: bool = False,
) -> np.ndarray:
    """Deterministic core of :func:`ccdt` for given donors and mixing weights.

    ``donor_mean``/``donor_std`` are (B, C); ``lam`` is (B,).  Samples with
    ``lam == 0`` are returned unchanged.
    """
    mu, sd = batch_channel_stats(X)
    lam_c = lam[:, None]
    mix_mean = lam_c * donor_mean + (1.0 - lam_c) * mu
    mix_std = lam_c * donor_std + (1.0 - lam_c) * sd
    normed = (X - mu[..., None, None]) / np.maximum(sd, STD_FLOOR)[..., None, None]
    if literal:
        out = mix_mean[..., None, None] * normed + mix_std[..., None, None]
    else:
        out = mix_std[..., None, None] * normed + mix_mean[..., None, None]
    keep = (lam == 0)[:, None, None, None]
    return np.where(keep, X, out)


def ccdt(
    X: np.ndarray,
    pool_view: StatisticsPool,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    lam: np.ndarray | float | None = None,
) -> np.ndarray:
    """Cross-client domain transfer for a (B, C, H, W) batch.

    Each sample draws a donor uniformly from ``pool_view`` and a mixing
    weight from Beta(alpha, alpha) unless ``lam`` pins it.  The result is
    not clamped, so the statistics of every output sample equal the mixed
    statistics exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    if pool_view is None or len(pool_view) == 0:
        raise EmptyPoolError("statistics pool view is empty; skip the transfer for this client")
    if X.ndim != 4 or pool_view.means.shape[1] != X.shape[1]:
        raise ValueError(f"batch shape {X.shape} does not match pool channels {pool_view.means.shape[1]}")
    b = X.shape[0]
    donors = rng.integers(len(pool_view), size=b)
    draws = rng.beta(cfg.alpha, cfg.alpha, size=b)
    if lam is not None:
        draws = np.broadcast_to(np.asarray(lam, dtype=np.float64), (b,))
    return transfer_styles(
        X, pool_view.means[donors], pool_view.stds[donors], draws, literal=cfg.literal_ccdt
    )


@dataclass
class AugMixPlan:
    """All random choices AugMix makes for one batch.

    Shapes: ``nchains`` (B,), ``weights`` (B, 3), ``depth`` (B, 3),
    ``ops`` (B, 3, 3), ``params`` (B, 3, 3, 6), ``m`` (B,).
    """

    nchains: np.ndarray
    weights: np.ndarray
    depth: np.ndarray
    ops: np.ndarray
    params: np.ndarray
    m: np.ndarray

    def __len__(self) -> int:
        return len(self.m)


def op_params(code: int, level: float, sign: float, height: int, width: int) -> np.ndarray:
    """Kernel parameters for one op at intensity ``level`` in [0, 1].

    Geometric ops get an inverse affine map (a, b, c, d, e, f) taking output
    pixel offsets to source offsets about the image centre.
    """
    p = np.zeros(6)
    if code == kernels.POSTERIZE:
        p[0] = 8 - int(level * MAX_POSTERIZE_DROP)
    elif code == kernels.SOLARIZE:
        p[0] = 1.0 - level * MAX_SOLARIZE_DROP
    elif code == kernels.ROTATE:
        theta = sign * level * math.radians(MAX_ROTATE_DEG)
        p[:] = (math.cos(theta), math.sin(theta), 0.0, -math.sin(theta), math.cos(theta), 0.0)
    elif code == kernels.SHEAR_X:
        p[:] = (1.0, sign * level * MAX_SHEAR, 0.0, 0.0, 1.0, 0.0)
    elif code == kernels.SHEAR_Y:
        p[:] = (1.0, 0.0, 0.0, sign * level * MAX_SHEAR, 1.0, 0.0)
    elif code == kernels.TRANSLATE_X:
        p[:] = (1.0, 0.0, -sign * level * MAX_TRANSLATE_FRAC * width, 0.0, 1.0, 0.0)
    elif code == kernels.TRANSLATE_Y:
        p[:] = (1.0, 0.0, 0.0, 0.0, 1.0, -sign * level * MAX_TRANSLATE_FRAC * height)
    return p


def sample_augmix_plan(
    batch: int, cfg: AugmentConfig, rng: np.random.Generator, height: int, width: int
) -> AugMixPlan:
    """Draw chain counts, Dirichlet weights, ops, intensities and the final mix."""
    nchains = rng.integers(1, 4, size=batch)
    gammas = rng.gamma(cfg.beta, size=(batch, 3))
    gammas[np.arange(3)[None, :] >= nchains[:, None]] = 0.0
    gammas[gammas.sum(axis=1) == 0.0, 0] = 1.0  # all-underflow rows at tiny beta
    weights = gammas / gammas.sum(axis=1, keepdims=True)
    ops = rng.integers(0, kernels.NUM_BASE_OPS, size=(batch, 3, 3))
    depth = rng.integers(1, 4, size=(batch, 3))
    depth[np.arange(3)[None, :] >= nchains[:, None]] = 0
    levels = rng.uniform(0.1, cfg.severity, size=(batch, 3, 3)) / 3.0
    signs = np.where(rng.random(size=(batch, 3, 3)) < 0.5, -1.0, 1.0)
    m = rng.beta(cfg.beta, cfg.beta, size=batch)
    params = np.zeros((batch, 3, 3, 6))
    for idx in np.ndindex(batch, 3, 3):
        params[idx] = op_params(int(ops[idx]), levels[idx], signs[idx], height, width)
    return AugMixPlan(nchains, weights, depth, ops, params, m)


def difp_augmix(
    X: np.ndarray,
    cfg: AugmentConfig,
    rng: np.random.Generator | None = None,
    plan: AugMixPlan | None = None,
) -> np.ndarray:
    """AugMix perturbation of a (B, C, H, W) batch with pixels in [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got {X.shape}")
    if X.size and (X.min() < -RANGE_SLACK or X.max() > 1 + RANGE_SLACK):
        raise ValueError("AugMix input must lie in [0, 1]; normalise pixels first")
    X = np.clip(X, 0.0, 1.0)
    if plan is None:
        if rng is None:
            raise ValueError("need an rng or an explicit plan")
        plan = sample_augmix_plan(X.shape[0], cfg, rng, X.shape[2], X.shape[3])
    return kernels.augmix_batch(
        X, plan.nchains, plan.weights, plan.depth, plan.ops, plan.params, plan.m
    )


def feature_extension(
    X: np.ndarray,
    pool_view: StatisticsPool | None,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    ccdt_on: bool = True,
    difp_on: bool = True,
) -> np.ndarray:
    """One augmented view: style transfer, clamp to [0, 1], then AugMix.

    Disabled stages are the identity.  Output is a fresh, gradient-free array.
    """
    out = np.array(X, dtype=np.float64)
    if ccdt_on:
        out = np.clip(ccdt(out, pool_view, cfg, rng), 0.0, 1.0)
    if difp_on:
        out = difp_augmix(out, cfg, rng)
    return out
