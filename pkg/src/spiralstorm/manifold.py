"""Kernel, weight and Laplacian matrices over the frames of a series.

A series ``x`` of shape ``(N, ...)`` is viewed as the Casorati matrix whose
columns are the vectorised frames. All matrices here are ``N x N``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelMatrix",
    "LaplacianMatrix",
    "ManifoldError",
    "pairwise_sq_distances",
    "gaussian_kernel",
    "navigator_weights",
    "irls_weights",
    "laplacian",
    "temporal_laplacian",
    "manifold_energy",
    "kernel_penalty",
    "is_psd",
]


class ManifoldError(ValueError):
    pass


@dataclass(frozen=True)
class KernelMatrix:
    K: np.ndarray
    sigma: float
    scale: float = 1.0  # frames were divided by this before taking distances


@dataclass(frozen=True)
class LaplacianMatrix:
    L: np.ndarray
    W: np.ndarray
    gamma: float | None = None

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def normalized(self) -> "LaplacianMatrix":
        """Copy rescaled to unit spectral norm (zero stays zero)."""
        norm = np.linalg.norm(self.L, 2)
        if norm == 0:
            return self
        return LaplacianMatrix(self.L / norm, self.W / norm, self.gamma)


def _casorati(x):
    x = np.asarray(x)
    return x.reshape(x.shape[0], -1)


def pairwise_sq_distances(x) -> np.ndarray:
    """``D[i, j] = ||x_i - x_j||^2`` via the Gram matrix, clipped at zero."""
    X = _casorati(x)
    G = X.conj() @ X.T
    sq = np.real(np.diag(G))
    D = sq[:, None] + sq[None, :] - 2 * np.real(G)
    D = np.maximum(D, 0.0)
    np.fill_diagonal(D, 0.0)
    return 0.5 * (D + D.T)


def gaussian_kernel(x, sigma: float, normalize: bool = True,
                    scale: float | None = None) -> KernelMatrix:
    """``K_ij = exp(-||x_i - x_j||^2 / (2 sigma^2))``.

    With ``normalize`` the frames are first divided by the largest pixel
    modulus in the series, which makes ``sigma`` independent of the
    intensity scale of the data. An explicit ``scale`` overrides the
    normalisation, which keeps the kernel of an iterative method a fixed
    function of the frames.
    """
    if sigma <= 0:
        raise ManifoldError("sigma must be positive")
    x = np.asarray(x)
    if x.shape[0] < 2:
        raise ManifoldError("need at least two frames")
    if scale is not None:
        if not scale > 0:
            raise ManifoldError("scale must be positive")
    elif not normalize:
        scale = 1.0
    else:
        peak = float(np.max(np.abs(x)))
        scale = peak if peak > 0 else 1.0
    D = pairwise_sq_distances(x / scale)
    K = np.exp(-D / (2.0 * sigma ** 2))
    return KernelMatrix(K, float(sigma), scale)


def navigator_weights(z, sigma: float) -> np.ndarray:
    """``w_ij = exp(-||z_i - z_j||^2 / sigma^2)`` from per-frame navigators.

    ``z`` is an ``(N, P)`` array or a sequence of equal-length vectors.
    Note the exponent uses ``sigma^2``, not ``2 sigma^2``.
    """
    if sigma <= 0:
        raise ManifoldError("sigma must be positive")
    lengths = {np.size(zi) for zi in z}
    if len(lengths) != 1:
        raise ManifoldError(f"navigator vectors differ in length: {sorted(lengths)}")
    Z = np.array([np.ravel(zi) for zi in z])
    return np.exp(-pairwise_sq_distances(Z) / sigma ** 2)


def _inv_sqrt_psd(A):
    vals, vecs = np.linalg.eigh(A)
    if not np.all(np.isfinite(vals)):
        raise ManifoldError("eigendecomposition produced non-finite values")
    vals = np.maximum(vals, np.finfo(float).tiny)
    return (vecs * vals ** -0.5) @ vecs.T


def irls_weights(kernel: KernelMatrix, gamma: float) -> np.ndarray:
    """IRLS weight matrix ``(1/sigma^2) K o (K + gamma I)^(-1/2)``, signed.

    The overall sign is fixed so that the Laplacian ``D - W`` built from the
    result has a non-negative trace; for kernels with genuine neighbour
    structure this is the negative orientation, i.e. the off-diagonal
    weights of similar frames come out positive.
    """
    if gamma <= 0:
        raise ManifoldError("gamma must be positive")
    K = np.asarray(kernel.K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise ManifoldError("kernel matrix contains non-finite entries")
    n = K.shape[0]
    P = _inv_sqrt_psd(0.5 * (K + K.T) + gamma * np.eye(n))
    W = K * P / kernel.sigma ** 2
    W = 0.5 * (W + W.T)
    off_diagonal = W.sum() - np.trace(W)
    if off_diagonal < 0:
        W = -W
    return W


def laplacian(W, gamma: float | None = None) -> LaplacianMatrix:
    """Graph Laplacian ``L = D - W`` with ``D_ii = sum_j W_ij``."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ManifoldError(f"weight matrix must be square, got shape {W.shape}")
    L = np.diag(W.sum(axis=1)) - W
    return LaplacianMatrix(L, W, gamma)


def temporal_laplacian(n: int) -> LaplacianMatrix:
    """Second-difference matrix with ``tr(X L X^H) = sum ||x_{i+1} - x_i||^2``."""
    if n < 2:
        raise ManifoldError("temporal Laplacian needs at least two frames")
    W = np.eye(n, k=1) + np.eye(n, k=-1)
    return laplacian(W)


def manifold_energy(x, L) -> float:
    """``trace(X L X^H)`` for the Casorati matrix ``X`` of ``x``."""
    L = L.L if isinstance(L, LaplacianMatrix) else np.asarray(L)
    X = _casorati(x)
    if L.shape != (X.shape[0], X.shape[0]):
        raise ManifoldError(
            f"Laplacian of shape {L.shape} does not match {X.shape[0]} frames")
    G = X.conj() @ X.T  # G[i, j] = <x_i, x_j>
    return float(np.real(np.sum(L * G.T)))


def kernel_penalty(kernel: KernelMatrix, gamma: float) -> float:
    """Smoothed nuclear norm of the feature matrix, ``tr((K + gamma I)^(1/2))``."""
    vals = np.linalg.eigvalsh(kernel.K + gamma * np.eye(kernel.K.shape[0]))
    return float(np.sum(np.sqrt(np.maximum(vals, 0.0))))


def is_psd(M, rtol: float = 1e-8) -> bool:
    M = np.asarray(M)
    vals = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    scale = max(np.max(np.abs(vals)), np.finfo(float).tiny)
    return bool(vals.min() >= -rtol * scale)
