"""MLP encoder/classifier pair, Adam, and the cosine learning-rate schedule."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"FCCRLPRM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dims: tuple[int, int, int] = (3, 8, 8)
    hidden_sizes: tuple[int, ...] = (64,)
    representation_dim: int = 32
    num_classes: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.representation_dim < 1:
            raise ValueError("representation_dim must be >= 1")
        if not self.hidden_sizes:
            raise ValueError("hidden_sizes must be non-empty")
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ValueError(f"input_dims must be (C, H, W) with positive extents, got {self.input_dims}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def flat_input(self) -> int:
        c, h, w = self.input_dims
        return c * h * w


class ModelParameters:
    """Ordered, uniquely named parameter tensors tagged with a round index."""

    def __init__(self, entries, version: int = 0):
        self.entries: dict[str, Tensor] = {}
        for name, t in entries:
            if name in self.entries:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.entries[name] = t if isinstance(t, Tensor) else Tensor(t, requires_grad=True)
        self.version = version

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __iter__(self):
        return iter(self.entries.items())

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return list(self.entries)

    def shapes(self) -> list[tuple[int, ...]]:
        return [t.shape for t in self.entries.values()]

    def zero_grad(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def copy(self) -> ModelParameters:
        return ModelParameters(
            [(n, Tensor(t.data.copy(), requires_grad=True)) for n, t in self], self.version
        )

    def num_values(self) -> int:
        return sum(t.data.size for t in self.entries.values())

    def equals(self, other: ModelParameters) -> bool:
        """Bitwise equality of names, shapes and values."""
        if self.names != other.names:
            return False
        return all(
            a.shape == b.shape and np.array_equal(a.data, b.data)
            for a, b in zip(self.entries.values(), other.entries.values())
        )

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<HII", CHECKPOINT_VERSION, self.version, len(self.entries)))
        for name, t in self:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", t.ndim))
            buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
            buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, payload: bytes) -> ModelParameters:
        view = memoryview(payload)
        if bytes(view[:8]) != CHECKPOINT_MAGIC:
            raise ValueError("not a parameter checkpoint (bad magic)")
        fmt, version, count = struct.unpack_from("<HII", view, 8)
        if fmt != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {fmt}")
        pos = 8 + struct.calcsize("<HII")
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos : pos + nlen]).decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", view, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(view, dtype="<f8", count=n, offset=pos).astype(np.float64)
            pos += 8 * n
            entries.append((name, Tensor(data.reshape(shape), requires_grad=True)))
        if pos != len(payload):
            raise ValueError("trailing bytes in checkpoint")
        return cls(entries, version)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> ModelParameters:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _layer_sizes(cfg: ModelConfig) -> list[tuple[str, int, int]]:
    sizes = [cfg.flat_input, *cfg.hidden_sizes, cfg.representation_dim]
    layers = [(f"enc{k}", sizes[k], sizes[k + 1]) for k in range(len(sizes) - 1)]
    layers.append(("cls", cfg.representation_dim, cfg.num_classes))
    return layers


def init_params(cfg: ModelConfig, seed: int | None = None) -> ModelParameters:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, seeded."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    entries = []
    for name, fan_in, fan_out in _layer_sizes(cfg):
        bound = 1.0 / math.sqrt(fan_in)
        entries.append((f"{name}.weight", rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        entries.append((f"{name}.bias", rng.uniform(-bound, bound, size=(fan_out,))))
    return ModelParameters(entries)


def zero_params(cfg: ModelConfig) -> ModelParameters:
    entries = []
    for name, fan_in, fan_out in _layer_sizes(cfg):
        entries.append((f"{name}.weight", np.zeros((fan_in, fan_out))))
        entries.append((f"{name}.bias", np.zeros(fan_out)))
    return ModelParameters(entries)


def _n_encoder_layers(params: ModelParameters) -> int:
    return sum(1 for n in params.names if n.startswith("enc") and n.endswith(".weight"))


def encode(params: ModelParameters, X) -> Tensor:
    """Representations ``Z = h(X)`` of shape (B, V)."""
    X = T.as_tensor(X)
    w0 = params["enc0.weight"]
    if X.ndim != 4 or int(np.prod(X.shape[1:])) != w0.shape[0]:
        raise T.ShapeMismatchError("encode", X.shape, ("B", w0.shape[0]))
    h = T.reshape(X, (X.shape[0], -1))
    n = _n_encoder_layers(params)
    for k in range(n):
        h = h @ params[f"enc{k}.weight"] + params[f"enc{k}.bias"]
        if k < n - 1:
            h = T.relu(h)
    return h


def classify(params: ModelParameters, Z) -> Tensor:
    """Class probabilities ``g(Z)`` of shape (B, num_classes)."""
    Z = T.as_tensor(Z)
    w = params["cls.weight"]
    if Z.ndim != 2 or Z.shape[1] != w.shape[0]:
        raise T.ShapeMismatchError("classify", Z.shape, ("B", w.shape[0]))
    return T.softmax(Z @ w + params["cls.bias"], axis=1)


def predict(params: ModelParameters, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax labels without building a graph."""
    out = []
    frozen = ModelParameters([(n, Tensor(t.data)) for n, t in params])
    for s in range(0, len(X), batch_size):
        probs = classify(frozen, encode(frozen, X[s : s + batch_size]))
        out.append(probs.data.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParameters, **kw) -> AdamState:
        state = cls(**kw)
        for name, t in params:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(params: ModelParameters, state: AdamState, lr: float) -> None:
    for name, t in params:
        if t.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params:
        g = t.grad
        m = state.m.setdefault(name, np.zeros_like(t.data))
        v = state.v.setdefault(name, np.zeros_like(t.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class ScheduleConfig:
    lr_init: float = 0.001
    rounds: int = 10
    local_epochs: int = 3

    @property
    def total_steps(self) -> int:
        return self.rounds * self.local_epochs


def cosine_lr(round_idx: int, epoch: int, cfg: ScheduleConfig) -> float:
    step = round_idx * cfg.local_epochs + epoch
    if not 0 <= step < cfg.total_steps or not 0 <= epoch < cfg.local_epochs:
        raise ValueError(
            f"schedule step {step} (round={round_idx}, epoch={epoch}) outside [0, {cfg.total_steps})"
        )
    return cfg.lr_init * 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_steps))
