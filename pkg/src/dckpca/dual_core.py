"""Dual objective machinery: pi(H) = Tr sqrt(H'GH), its gradient, dual costs,
and the benchmark residual eta.

The whole point of working with H'GH (s x s) instead of G (n x n) is that one
n^2 s matrix product plus an s x s eigendecomposition replaces the O(n^3) SVD
of the Gram matrix.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import KpcaError, SingularMatrixError
from .objectives import ObjectiveSpec, psi_star_value


@dataclass(frozen=True)
class DualVariable:
    """The n x s dual iterate H, the sole optimization variable."""

    H: np.ndarray

    def __post_init__(self):
        if self.H.ndim != 2 or self.H.shape[1] < 1:
            raise KpcaError("H must be an n x s matrix with s >= 1")
        if not np.all(np.isfinite(self.H)):
            raise KpcaError("H contains non-finite entries")
        n, s = self.H.shape
        if n < s:
            warnings.warn(f"H has more components ({s}) than samples ({n})", stacklevel=2)

    @property
    def shape(self):
        return self.H.shape


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigendecomposition M = U' diag(lam) U of a small symmetric matrix.

    Rows of U are eigenvectors; lam is sorted decreasingly. The sign of each
    row is fixed (largest-magnitude component positive) and ties in lam keep
    the original index order, so decompositions are reproducible.
    """

    U: np.ndarray
    lam: np.ndarray

    def apply(self, fn) -> np.ndarray:
        """The spectral function U' diag(fn(lam)) U."""
        return self.U.T @ (fn(self.lam)[:, None] * self.U)


def sym_eig_small(M: np.ndarray) -> SpectralDecomp:
    """Deterministic symmetric eigendecomposition of a small s x s matrix."""
    M = np.asarray(M, dtype=float)
    scale = max(float(np.max(np.abs(M))), 1.0)
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise KpcaError("matrix is not symmetric within 1e-10")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(-w, kind="stable")
    w = w[order]
    U = V[:, order].T
    lead = np.argmax(np.abs(U), axis=1)
    signs = np.sign(U[np.arange(U.shape[0]), lead])
    signs[signs == 0] = 1.0
    U = signs[:, None] * U
    return SpectralDecomp(U, w)


def _gram_entries(G) -> np.ndarray:
    return np.asarray(getattr(G, "entries", G), dtype=float)


def _small_eig(G, H, gh=None):
    G = _gram_entries(G)
    GH = G @ H if gh is None else gh
    M = H.T @ GH
    return GH, sym_eig_small(0.5 * (M + M.T))


def pi(G, H, gh=None) -> float:
    """Tr sqrt(H'GH) = sum_i sqrt(max(lam_i(H'GH), 0)).

    Negative round-off eigenvalues are clamped to zero; this equals the
    nuclear norm of G^(1/2) H whenever G is PSD.
    """
    _, dec = _small_eig(G, H, gh)
    return float(np.sum(np.sqrt(np.maximum(dec.lam, 0.0))))


SINGULARITY_FLOOR_SCALE = 1e-12


def grad_pi(G, H, gh=None):
    """Gradient of pi at H together with the decomposition of H'GH.

    grad = GH U' diag(1/sqrt(lam)) U, which requires every eigenvalue of
    H'GH to sit above the floor 1e-12 * max(lam_max, 1). Below the floor the
    call fails loudly: the gradient is not Lipschitz near singularity and
    silent clamping would corrupt line searches.
    """
    GH, dec = _small_eig(G, H, gh)
    floor = SINGULARITY_FLOOR_SCALE * max(float(dec.lam[0]), 1.0)
    lam_min = float(dec.lam[-1])
    if lam_min <= floor:
        raise SingularMatrixError(
            f"H'GH is near-singular: eigenvalue {lam_min:.6e} <= floor {floor:.6e}"
        )
    grad = GH @ dec.apply(lambda lam: 1.0 / np.sqrt(lam))
    return grad, dec


def dual_cost(G, H, objective: ObjectiveSpec) -> float:
    """Dual objective 0.5 ||H||_F^2 + Psi*(H) - pi(H).

    For the square loss Psi* vanishes; Huber kinds contribute an indicator
    (+inf on infeasible H), the eps kinds an eps-scaled dual norm.
    """
    value = 0.5 * float(np.sum(H * H)) - pi(G, H)
    return value + psi_star_value(objective, H)


def square_dual_cost_from_eig(lam: np.ndarray, h_sqnorm: float) -> float:
    """Square-loss dual cost given the eigenvalues of H'GH (internal helper)."""
    return 0.5 * h_sqnorm - float(np.sum(np.sqrt(np.maximum(lam, 0.0))))


def optimal_dual_cost(top_eigs: np.ndarray) -> float:
    """d_opt = -0.5 * sum of the top-s eigenvalues of G."""
    return -0.5 * float(np.sum(top_eigs))


def dual_residual(G, H, top_eigs) -> float:
    """Relative gap eta = |d(H) - d_opt| / |d_opt| of the square-loss dual cost.

    ``top_eigs`` are the s largest eigenvalues of G; the absolute value in the
    denominator keeps eta nonnegative (d_opt itself is negative).
    """
    d_opt = optimal_dual_cost(np.asarray(top_eigs, dtype=float))
    if d_opt == 0.0:
        raise KpcaError("degenerate Gram: optimal dual cost is zero")
    d = 0.5 * float(np.sum(H * H)) - pi(G, H)
    return abs(d - d_opt) / abs(d_opt)


def check_critical_point(G, H) -> float:
    """Normal-equation residual ||H H'H - GH||_F / ||GH||_F.

    Vanishes at critical points of the dual problem, which are also critical
    points of the Gram reconstruction cost 0.25 ||G - HH'||_F^2.
    """
    G = _gram_entries(G)
    GH = G @ H
    denom = float(np.linalg.norm(GH))
    if denom == 0.0:
        raise KpcaError("GH = 0: criticality residual undefined")
    return float(np.linalg.norm(H @ (H.T @ H) - GH)) / denom
