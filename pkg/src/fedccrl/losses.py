"""Training losses: supervised contrastive alignment, JS consistency, and cross-entropy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

ROW_SUM_TOL = 1e-6
REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1
    lambda2: float = 1.0
    tau: float = 0.1
    # "mean" divides the contrastive sum by its 2B anchors; with "sum" the
    # term outweighs cross-entropy by ~2B at lambda1 = 0.1 and training stalls.
    contrastive_reduction: str = "mean"

    def __post_init__(self):
        if self.contrastive_reduction not in REDUCTIONS:
            raise ValueError(f"contrastive_reduction must be one of {REDUCTIONS}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class BatchTriple:
    Z: Tensor
    Z1: Tensor
    Z2: Tensor
    Yhat: Tensor
    Yhat1: Tensor
    Yhat2: Tensor
    Y: np.ndarray

    def __post_init__(self):
        b = len(self.Y)
        for name in ("Z", "Z1", "Z2", "Yhat", "Yhat1", "Yhat2"):
            t = getattr(self, name)
            if t.ndim != 2 or t.shape[0] != b:
                raise T.ShapeMismatchError(f"BatchTriple.{name}", t.shape, (b, "*"))


def sup_contrastive(Zp, Zpp, Yp, Ypp, tau: float, reduction: str = "sum") -> Tensor:
    """Supervised contrastive loss of two representation batches.

    Summed over all ``2B`` anchors by default; ``reduction="mean"`` divides
    by ``2B``.  Anchors with no positive partner contribute zero.
    """
    Zp, Zpp = T.as_tensor(Zp), T.as_tensor(Zpp)
    if Zp.shape[0] == 0:
        raise ValueError("sup_contrastive: empty batch")
    if Zp.shape != Zpp.shape:
        raise T.ShapeMismatchError("sup_contrastive", Zp.shape, Zpp.shape)
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}")
    Z = T.concat([Zp, Zpp], axis=0)
    Y = np.concatenate([np.asarray(Yp), np.asarray(Ypp)])
    n = len(Y)
    zn = T.l2_normalize(Z, axis=1)
    logits = T.mul(zn @ T.transpose(zn), 1.0 / tau)

    off_diag = ~np.eye(n, dtype=bool)
    # Shift by the (constant) largest off-diagonal logit per row so the
    # log argument stays >= 1; the softmax is unchanged by the shift.
    shift = np.where(off_diag, logits.data, -np.inf).max(axis=1, keepdims=True)
    shifted = T.sub(logits, shift)
    denom = T.tsum(T.mul(T.exp(shifted), off_diag.astype(np.float64)), axis=1, keepdims=True)
    log_prob = T.sub(shifted, T.log(denom))

    positives = (Y[:, None] == Y[None, :]) & off_diag
    counts = positives.sum(axis=1, keepdims=True)
    coeff = np.where(positives, -1.0 / np.maximum(counts, 1), 0.0)
    if reduction == "mean":
        coeff = coeff / n
    return T.tsum(T.mul(log_prob, coeff))


def representation_alignment(Z, Z1, Z2, Y, tau: float, reduction: str = "sum") -> Tensor:
    first = sup_contrastive(Z1, Z, Y, Y, tau, reduction)
    second = sup_contrastive(Z2, Z, Y, Y, tau, reduction)
    return T.mul(T.add(first, second), 0.5)


def _check_distributions(name: str, P: Tensor) -> None:
    if P.ndim != 2:
        raise T.ShapeMismatchError(name, P.shape, ("B", "K"))
    if np.any(np.abs(P.data.sum(axis=1) - 1.0) > ROW_SUM_TOL) or np.any(P.data < -ROW_SUM_TOL):
        raise ValueError(f"{name}: rows are not probability distributions")


def kl_rows(P: Tensor, Q: Tensor) -> Tensor:
    """Mean over rows of KL(P_row || Q_row)."""
    per_row = T.tsum(T.mul(P, T.sub(T.log(P), T.log(Q))), axis=1)
    return T.mean(per_row)


def js_alignment(Yhat, Yhat1, Yhat2) -> Tensor:
    Ps = [T.as_tensor(p) for p in (Yhat, Yhat1, Yhat2)]
    for k, p in enumerate(Ps):
        _check_distributions(f"js_alignment[{k}]", p)
        if p.shape != Ps[0].shape:
            raise T.ShapeMismatchError("js_alignment", Ps[0].shape, p.shape)
    mixture = T.mul(T.add(T.add(Ps[0], Ps[1]), Ps[2]), 1.0 / 3.0)
    total = T.add(T.add(kl_rows(Ps[0], mixture), kl_rows(Ps[1], mixture)), kl_rows(Ps[2], mixture))
    return T.mul(total, 1.0 / 3.0)


def cross_entropy(P, Y) -> Tensor:
    """Mean over rows of ``-log P[row, y_row]`` for probability rows ``P``."""
    P = T.as_tensor(P)
    Y = np.asarray(Y)
    k = P.shape[1]
    if Y.shape != (P.shape[0],):
        raise T.ShapeMismatchError("cross_entropy", P.shape, Y.shape)
    if len(Y) and (Y.min() < 0 or Y.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    onehot = np.zeros(P.shape)
    onehot[np.arange(len(Y)), Y] = 1.0
    return T.neg(T.mean(T.tsum(T.mul(T.log(P), onehot), axis=1)))


def classification_loss(Yhat, Yhat1, Yhat2, Y) -> Tensor:
    terms = [cross_entropy(p, Y) for p in (Yhat, Yhat1, Yhat2)]
    return T.mul(T.add(T.add(terms[0], terms[1]), terms[2]), 1.0 / 3.0)


@dataclass
class LossBreakdown:
    total: Tensor
    cls: float
    ra: float
    js: float


def loss_breakdown(
    triple: BatchTriple, w: LossWeights, ra_on: bool = True, js_on: bool = True
) -> LossBreakdown:
    """Overall loss plus the value of each term.  A disabled term adds zero."""
    cls = classification_loss(triple.Yhat, triple.Yhat1, triple.Yhat2, triple.Y)
    total = cls
    ra_val = js_val = 0.0
    if ra_on and w.lambda1 != 0:
        ra = representation_alignment(
            triple.Z, triple.Z1, triple.Z2, triple.Y, w.tau, w.contrastive_reduction
        )
        ra_val = ra.item()
        total = T.add(total, T.mul(ra, w.lambda1))
    if js_on and w.lambda2 != 0:
        js = js_alignment(triple.Yhat, triple.Yhat1, triple.Yhat2)
        js_val = js.item()
        total = T.add(total, T.mul(js, w.lambda2))
    return LossBreakdown(total, cls.item(), ra_val, js_val)


def overall_loss(
    triple: BatchTriple, w: LossWeights, ra_on: bool = True, js_on: bool = True
) -> Tensor:
    return loss_breakdown(triple, w, ra_on, js_on).total


LOG3 = math.log(3.0)
