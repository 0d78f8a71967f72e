"""Earth Mover's and Chamfer distances between point sets."""
from .chamfer import KDTree, chamfer, chamfer_brute_force, chamfer_grad, nearest
from .emd import (ApproxMatching, ConvergenceError, CostKind, DistanceError, Matching,
                  cost_matrix, emd_approx, emd_brute_force, emd_exact, emd_grad, matched_cost)
from .losses import chamfer_loss, emd_loss, reconstruction_loss

__all__ = [
    "ApproxMatching", "ConvergenceError", "CostKind", "DistanceError", "KDTree", "Matching",
    "chamfer", "chamfer_brute_force", "chamfer_grad", "chamfer_loss", "cost_matrix",
    "emd_approx", "emd_brute_force", "emd_exact", "emd_grad", "emd_loss", "matched_cost",
    "nearest", "reconstruction_loss",
]
