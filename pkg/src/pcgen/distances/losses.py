"""Batch reconstruction losses recorded on the differentiation tape."""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..parallel import ordered_map
from .chamfer import chamfer, chamfer_grad
from .emd import CostKind, emd_exact, emd_grad


def emd_loss(pred: T.Tensor, target: np.ndarray, kind=CostKind.SQUARED_HALVED,
             threads: int | None = None) -> T.Tensor:
    """Mean over the batch of the exact EMD; matchings recomputed every call."""
    p = pred.data
    matchings = ordered_map(lambda i: emd_exact(p[i], target[i], kind), range(len(p)), threads)
    value = np.mean([m.cost for m in matchings])
    g = np.stack([emd_grad(p[i], target[i], m, kind) for i, m in enumerate(matchings)]) / len(p)
    return T.function("emd_loss", [pred], value, [g])


def chamfer_loss(pred: T.Tensor, target: np.ndarray, threads: int | None = None) -> T.Tensor:
    p = pred.data
    vals = ordered_map(lambda i: (chamfer(p[i], target[i]), chamfer_grad(p[i], target[i])),
                       range(len(p)), threads)
    value = np.mean([v for v, _ in vals])
    g = np.stack([gr for _, gr in vals]) / len(p)
    return T.function("chamfer_loss", [pred], value, [g])


def reconstruction_loss(pred: T.Tensor, target: np.ndarray, recon: str = "emd",
                        kind=CostKind.SQUARED_HALVED, threads: int | None = None) -> T.Tensor:
    if recon == "emd":
        return emd_loss(pred, target, kind, threads)
    if recon == "chamfer":
        return chamfer_loss(pred, target, threads)
    raise ValueError(f"unknown reconstruction loss {recon!r}")
