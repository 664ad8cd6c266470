"""Small shared numerics: max-entry norms, hermiticity defects, composite
Gauss-Legendre quadrature, and principal angles between subspaces."""

from __future__ import annotations

import math
from typing import Union

import numpy as np
from scipy import sparse

__all__ = [
    "max_abs",
    "hermiticity_defect",
    "gauss_legendre_panels",
    "orthonormal_range",
    "principal_angles",
]

Operator = Union[np.ndarray, sparse.spmatrix]


def max_abs(a: Operator) -> float:
    """Largest absolute entry (0.0 for an empty or all-zero operator)."""
    if sparse.issparse(a):
        return float(np.abs(a.data).max()) if a.nnz else 0.0
    arr = np.asarray(a)
    return float(np.abs(arr).max()) if arr.size else 0.0


def hermiticity_defect(a: Operator) -> float:
    """max-entry norm of A - A^dagger."""
    if sparse.issparse(a):
        return max_abs((a - a.conj().T).tocsr())
    arr = np.asarray(a)
    return max_abs(arr - arr.conj().T)


def gauss_legendre_panels(
    a: float, b: float, panel_width: float, nodes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [a, b] with panels of at most
    ``panel_width``; returns (points, weights) sorted ascending."""
    if b <= a:
        return np.array([]), np.array([])
    if panel_width <= 0.0:
        raise ValueError(f"panel_width must be positive, got {panel_width}")
    if nodes < 1:
        raise ValueError(f"nodes must be >= 1, got {nodes}")
    n_panels = max(1, int(math.ceil((b - a) / panel_width)))
    edges = np.linspace(a, b, n_panels + 1)
    x_ref, w_ref = np.polynomial.legendre.leggauss(nodes)
    points = []
    weights = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        points.append(mid + half * x_ref)
        weights.append(half * w_ref)
    return np.concatenate(points), np.concatenate(weights)


def orthonormal_range(a: np.ndarray, rank_tol: float = 1e-8) -> tuple[np.ndarray, int]:
    """Orthonormal basis of the numerical column span of ``a``.

    Returns (Q, rank) where rank counts singular values above
    rank_tol * sigma_max.
    """
    u, s, _vh = np.linalg.svd(np.asarray(a, dtype=complex), full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return u[:, :0], 0
    rank = int(np.sum(s > rank_tol * s[0]))
    return u[:, :rank], rank


def principal_angles(a: np.ndarray, b: np.ndarray, rank_tol: float = 1e-8) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans."""
    qa, ra = orthonormal_range(a, rank_tol)
    qb, rb = orthonormal_range(b, rank_tol)
    if ra == 0 or rb == 0:
        return np.array([])
    sv = np.linalg.svd(qa.conj().T @ qb, compute_uv=False)
    return np.arccos(np.clip(np.sort(sv)[::-1], -1.0, 1.0))
