"""Reconstruction algorithms.

All solvers share one quadratic subproblem, the regularised least-squares
image update::

    min_X ||A(X) - B||^2 + trace(X L_eq X^H)

solved matrix-free with a Krylov method on the normal equations
``A^H A X + X L_eq = A^H B``. The manifold methods differ only in how the
frame-by-frame matrix ``L_eq`` is obtained; the low-rank baseline reuses the
same update with an IRLS weight matrix in place of a Laplacian.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .manifold import (LaplacianMatrix, gaussian_kernel, irls_weights, is_psd,
                       kernel_penalty, laplacian, manifold_energy,
                       navigator_weights, temporal_laplacian)
from .operators import NUFFT_EPS, MultiCoilKSpace, SamplingOperator, restrict_central

__all__ = [
    "ReconConfig",
    "ReconResult",
    "SolverError",
    "CGInfo",
    "solve_image_update",
    "kernel_lowrank_irls",
    "storm_iterative",
    "storm_sense",
    "storm_selfnav",
    "storm_highres",
    "lowrank_recon",
    "navigator_vectors",
]

log = logging.getLogger(__name__)


# relative residual below which A^H A (Toeplitz) and A^H (gridding) are inconsistent
RESIDUAL_FLOOR = 10 * NUFFT_EPS


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReconConfig:
    """Solver and regularisation parameters.

    Regularisation weights are relative: each is multiplied by
    ``reg_scale`` times the mean diagonal of ``A^H A`` of the operator it is
    used with, so the same values apply to the low- and high-resolution
    problems and to any intensity scale of the data.
    """

    lambda1: float = 0.01
    lambda2: float = 1e-5
    lam: float = 0.003
    sigma: float = 4.5
    gamma0: float = 0.01
    gamma_decay: float = 0.8
    gamma_floor: float = 1e-4
    outer_iters: int = 5
    cg_iters_low: int = 50
    cg_iters: int = 80
    cg_tol: float = 1e-6
    central_fraction: float = 0.2
    low_grid: int = 0  # 0 selects the smallest even grid holding the centre
    normalize_distances: bool = True
    nav_sigma: float = 1.0
    lowrank_lambda: float = 0.01
    lowrank_p: float = 1.0
    lowrank_iters: int = 5
    lowrank_cg_iters: int = 40
    lowrank_eps0: float = 1.0
    lowrank_eps_decay: float = 0.5
    lowrank_eps_floor: float = 1e-6
    reg_scale: float = 100.0

    def validate(self) -> None:
        positive = ["lambda1", "lam", "sigma", "gamma0", "gamma_decay",
                    "gamma_floor", "cg_tol", "nav_sigma", "lowrank_lambda",
                    "lowrank_eps0", "lowrank_eps_decay", "lowrank_eps_floor",
                    "reg_scale"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be non-negative")
        for name in ["outer_iters", "cg_iters_low", "cg_iters", "lowrank_iters",
                     "lowrank_cg_iters"]:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0 < self.central_fraction <= 1:
            raise ValueError("central_fraction must lie in (0, 1]")
        if not 0 < self.lowrank_p <= 1:
            raise ValueError("lowrank_p must lie in (0, 1]")
        if self.low_grid < 0:
            raise ValueError("low_grid must be non-negative")

    def replace(self, **changes) -> "ReconConfig":
        known = {f.name for f in fields(self)}
        unknown = set(changes) - known
        if unknown:
            raise ValueError(f"unknown ReconConfig fields: {sorted(unknown)}")
        return ReconConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)},
                              **changes})


@dataclass
class ReconResult:
    images: np.ndarray
    laplacian: LaplacianMatrix | None
    objective_trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    laplacian_history: list = field(default_factory=list)
    low_res_images: np.ndarray | None = None
    info: dict = field(default_factory=dict)


@dataclass
class CGInfo:
    iterations: int
    residuals: list
    converged: bool


def _apply_frame_matrix(x, M):
    # (X M) on the Casorati matrix, i.e. frame i <- sum_j M[j, i] x_j
    return np.tensordot(M.T, x, axes=(1, 0))


def _inner(a, b):
    return np.vdot(a, b)


def solve_image_update(op: SamplingOperator, b: MultiCoilKSpace, L_eq,
                       cg_iters: int = 80, cg_tol: float = 1e-6, x0=None,
                       check_psd: bool = True, return_info: bool = False):
    """Solve ``A^H A X + X L_eq = A^H B`` by the conjugate residual method.

    Conjugate residuals is the member of the conjugate-gradient family for
    Hermitian systems that minimises the residual norm over the Krylov space,
    so the recorded normal-equation residual never increases. Iteration
    stops after ``cg_iters`` steps or once ``||r|| <= tol * ||A^H B||`` with
    ``tol = max(cg_tol, RESIDUAL_FLOOR)``. The floor is where the Toeplitz
    normal operator and the gridded adjoint stop agreeing; on a singular
    system, steps taken below it only move ``X`` within the null space.
    """
    L_eq = L_eq.L if isinstance(L_eq, LaplacianMatrix) else np.asarray(L_eq)
    if not np.iscomplexobj(L_eq):
        L_eq = L_eq.astype(float)
    if L_eq.shape != (op.n_frames, op.n_frames):
        raise SolverError(
            f"L_eq has shape {L_eq.shape}, expected {(op.n_frames, op.n_frames)}")
    if check_psd and not is_psd(L_eq):
        raise SolverError("regularisation matrix L_eq is not positive semi-definite")
    L_eq = 0.5 * (L_eq + L_eq.conj().T)

    def matvec(v):
        return op.normal(v) + _apply_frame_matrix(v, L_eq)

    rhs = op.adjoint(b)
    rhs_norm = np.linalg.norm(rhs)
    x = np.zeros(op.image_shape, complex) if x0 is None else np.array(x0, complex)
    if rhs_norm == 0 and x0 is None:
        info = CGInfo(0, [0.0], True)
        return (x, info) if return_info else x

    r = rhs - matvec(x) if x0 is not None else rhs.copy()
    res = [float(np.linalg.norm(r))]
    tol = max(cg_tol, RESIDUAL_FLOOR) * max(rhs_norm, np.finfo(float).tiny)
    converged = res[-1] <= tol
    Ar = matvec(r)
    p, Ap = r.copy(), Ar.copy()
    rAr = _inner(r, Ar)
    it = 0
    while it < cg_iters and not converged:
        ApAp = np.real(_inner(Ap, Ap))
        if ApAp <= 0 or abs(rAr) == 0:
            break
        alpha = rAr / ApAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res.append(float(np.linalg.norm(r)))
        if not np.isfinite(res[-1]):
            raise SolverError("Krylov solver diverged (non-finite residual)")
        if res[-1] <= tol:
            converged = True
            break
        Ar = matvec(r)
        rAr_new = _inner(r, Ar)
        beta = rAr_new / rAr
        rAr = rAr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
    info = CGInfo(it, res, converged)
    return (x, info) if return_info else x


def _data_misfit(op, b, x):
    return float(np.linalg.norm(op.forward(x).data - b.data) ** 2)


def _weight_scale(op, cfg):
    return cfg.reg_scale * op.diagonal_scale()


def _kernel_scale(x, cfg):
    if not cfg.normalize_distances:
        return 1.0
    peak = float(np.max(np.abs(x)))
    return peak if peak > 0 else 1.0


def _laplacian_from_images(op, x, cfg, gamma=None, scale=None):
    # distances only over the k-space band the samples actually cover
    xb = op.band_limit(x)
    scale = _kernel_scale(xb, cfg) if scale is None else scale
    K = gaussian_kernel(xb, cfg.sigma, scale=scale)
    g = gamma if gamma is not None else cfg.gamma0 * np.linalg.norm(K.K, 2)
    return laplacian(irls_weights(K, g), g), K, g


def _central_problem(op, b, cfg, exclude_navigators=True):
    low = cfg.low_grid or None
    return restrict_central(op, b, cfg.central_fraction, low,
                            exclude_navigators=exclude_navigators)


def kernel_lowrank_irls(op_central: SamplingOperator, b_central: MultiCoilKSpace,
                        cfg: ReconConfig, callback=None,
                        fixed_gamma: bool = False) -> ReconResult:
    """Alternate image updates and kernel-derived Laplacian updates.

    The initial Laplacian comes from an unregularised CG-SENSE recovery
    (early-stopped at ``cg_iters_low``). Each outer iteration solves the
    image update with ``lambda1 * L + lambda2 * L_NN`` and then recomputes
    the Gaussian kernel, the IRLS weights and the Laplacian from the new
    images. ``gamma`` is annealed geometrically unless ``fixed_gamma`` is set.

    Kernel distances use the frames band-limited to the sampled disk and
    divided by the peak modulus of the band-limited SENSE images; that
    divisor is held fixed so every iteration works on the same objective.

    ``objective_trace[i]`` is the smoothed kernel objective after the i-th
    image update: data misfit plus ``lambda1 * tr((K + gamma I)^(1/2))``
    (the nuclear norm of the feature matrix, evaluated through the kernel)
    plus the temporal term. This is the quantity the majorise-minimise
    iteration decreases; with ``fixed_gamma`` it is non-increasing.
    ``info["surrogate"]`` holds the quadratic surrogate values
    ``misfit + tr(X L_eq X^H)``, whose Laplacian changes between entries.
    """
    cfg.validate()
    t0 = time.perf_counter()
    n = op_central.n_frames
    L_nn = temporal_laplacian(n).L
    scale = _weight_scale(op_central, cfg)
    x = solve_image_update(op_central, b_central, np.zeros((n, n)),
                           cfg.cg_iters_low, cfg.cg_tol)
    sense_images = x.copy()
    L, K, gamma = _laplacian_from_images(op_central, x, cfg)
    c = K.scale
    history = [L]
    trace, kernel_trace = [], []
    for it in range(cfg.outer_iters):
        L_eq = scale * (cfg.lambda1 * L.L + cfg.lambda2 * L_nn)
        x = solve_image_update(op_central, b_central, L_eq, cfg.cg_iters_low,
                               cfg.cg_tol, x0=x)
        misfit = _data_misfit(op_central, b_central, x)
        trace.append(misfit + manifold_energy(x, L_eq))
        if not fixed_gamma:
            gamma = max(gamma * cfg.gamma_decay, cfg.gamma_floor)
        L, K, gamma = _laplacian_from_images(op_central, x, cfg, gamma, c)
        history.append(L)
        # penalty in the units of the frames the kernel was computed from
        kernel_trace.append(misfit + scale * (
            cfg.lambda1 * 2 * K.scale ** 2 * kernel_penalty(K, gamma)
            + cfg.lambda2 * manifold_energy(x, L_nn)))
        log.info("IRLS iteration %d: objective %.6g", it + 1, kernel_trace[-1])
        if callback is not None:
            callback(it + 1, kernel_trace[-1])
    return ReconResult(images=x, laplacian=L, objective_trace=kernel_trace,
                       timings={"irls": time.perf_counter() - t0},
                       laplacian_history=history,
                       info={"surrogate": trace, "sense_images": sense_images,
                             "gamma": gamma})


def storm_highres(op: SamplingOperator, b: MultiCoilKSpace, L: LaplacianMatrix,
                  cfg: ReconConfig, x0=None):
    """High-resolution update with ``lam * L / ||L|| + lambda2 * L_NN``."""
    n = op.n_frames
    L_eq = _weight_scale(op, cfg) * (cfg.lam * L.normalized().L
                                  + cfg.lambda2 * temporal_laplacian(n).L)
    return solve_image_update(op, b, L_eq, cfg.cg_iters, cfg.cg_tol, x0=x0)


def storm_iterative(op: SamplingOperator, b: MultiCoilKSpace,
                    cfg: ReconConfig = ReconConfig(), callback=None,
                    fixed_gamma: bool = False) -> ReconResult:
    """Two-step reconstruction with an iteratively estimated Laplacian.

    Step one runs :func:`kernel_lowrank_irls` on the central k-space samples
    (navigators excluded) at low resolution. Step two solves one
    high-resolution image update on all samples, navigators included.
    """
    cfg.validate()
    t0 = time.perf_counter()
    op_c, b_c = _central_problem(op, b, cfg)
    step1 = kernel_lowrank_irls(op_c, b_c, cfg, callback, fixed_gamma)
    t1 = time.perf_counter()
    x = storm_highres(op, b, step1.laplacian, cfg)
    t2 = time.perf_counter()
    return ReconResult(images=x, laplacian=step1.laplacian,
                       objective_trace=step1.objective_trace,
                       timings={"step1": t1 - t0, "step2": t2 - t1},
                       laplacian_history=step1.laplacian_history,
                       low_res_images=step1.images, info=step1.info)


def storm_sense(op: SamplingOperator, b: MultiCoilKSpace,
                cfg: ReconConfig = ReconConfig()) -> ReconResult:
    """Laplacian from the CG-SENSE low-resolution images, no alternation."""
    cfg.validate()
    t0 = time.perf_counter()
    op_c, b_c = _central_problem(op, b, cfg)
    n = op_c.n_frames
    x_low = solve_image_update(op_c, b_c, np.zeros((n, n)), cfg.cg_iters_low,
                               cfg.cg_tol)
    L, _, _ = _laplacian_from_images(op_c, x_low, cfg)
    t1 = time.perf_counter()
    x = storm_highres(op, b, L, cfg)
    t2 = time.perf_counter()
    return ReconResult(images=x, laplacian=L, objective_trace=[],
                       timings={"step1": t1 - t0, "step2": t2 - t1},
                       laplacian_history=[L], low_res_images=x_low)


def navigator_vectors(op: SamplingOperator, b: MultiCoilKSpace) -> np.ndarray:
    """Per-frame navigator samples of all coils, shape ``(n_frames, P)``."""
    if op.navigator is None or not op.navigator.any():
        raise SolverError(
            "acquisition has no navigator interleaves; simulate with navigator_every set")
    z = []
    for f in range(op.n_frames):
        lo, hi = op.offsets[f], op.offsets[f + 1]
        z.append(b.data[:, lo:hi][:, op.navigator[lo:hi]].ravel())
    lengths = {len(v) for v in z}
    if len(lengths) != 1 or 0 in lengths:
        raise SolverError("every frame needs the same number of navigator samples")
    return np.array(z)


def storm_selfnav(op: SamplingOperator, b: MultiCoilKSpace,
                  cfg: ReconConfig = ReconConfig(), navigator_data=None) -> ReconResult:
    """Laplacian from k-space navigators, then the high-resolution update.

    Navigator distances are divided by the median nearest-neighbour
    navigator distance, so ``cfg.nav_sigma`` is expressed in those units.
    """
    cfg.validate()
    t0 = time.perf_counter()
    z = navigator_vectors(op, b) if navigator_data is None else np.asarray(navigator_data)
    d = np.sqrt(_nearest_sq_distances(z))
    unit = float(np.median(d)) or 1.0
    W = navigator_weights(z / unit, cfg.nav_sigma)
    L = laplacian(W)
    t1 = time.perf_counter()
    x = storm_highres(op, b, L, cfg)
    t2 = time.perf_counter()
    return ReconResult(images=x, laplacian=L, objective_trace=[],
                       timings={"step1": t1 - t0, "step2": t2 - t1},
                       laplacian_history=[L])


def _nearest_sq_distances(z):
    from .manifold import pairwise_sq_distances
    D = pairwise_sq_distances(z)
    np.fill_diagonal(D, np.inf)
    return D.min(axis=1)


def _schatten_weights(x, p, eps):
    X = x.reshape(x.shape[0], -1)
    G = X.conj() @ X.T  # X^H X on the Casorati matrix, frames x frames
    G = 0.5 * (G + G.conj().T)
    vals, vecs = np.linalg.eigh(G)
    vals = np.maximum(vals, 0.0)
    M = (vecs * (vals + eps) ** (p / 2 - 1)) @ vecs.conj().T
    return M, vals


def lowrank_recon(op: SamplingOperator, b: MultiCoilKSpace,
                  lambda_lr: float | None = None, p: float | None = None,
                  cfg: ReconConfig = ReconConfig(), x0=None) -> ReconResult:
    """Schatten-p low-rank recovery by iteratively reweighted least squares.

    Minimises ``||A(X) - B||^2 + lambda_lr * s * ||X||_p^p`` (``s`` the mean
    diagonal of ``A^H A``). Each iteration majorises the smoothed penalty
    ``tr((X^H X + eps I)^(p/2))`` by the quadratic ``(p/2) tr(X M X^H)`` with
    ``M = (X^H X + eps I)^(p/2 - 1)`` and solves the resulting image update.
    ``eps`` starts at ``lowrank_eps0`` times the largest eigenvalue of
    ``X^H X`` and is annealed geometrically.
    """
    cfg.validate()
    lambda_lr = cfg.lowrank_lambda if lambda_lr is None else lambda_lr
    p = cfg.lowrank_p if p is None else p
    if lambda_lr <= 0 or not 0 < p <= 1:
        raise SolverError("need lambda_lr > 0 and 0 < p <= 1")
    t0 = time.perf_counter()
    n = op.n_frames
    scale = _weight_scale(op, cfg) * lambda_lr
    if x0 is None:
        x = solve_image_update(op, b, np.zeros((n, n)), cfg.cg_iters_low, cfg.cg_tol)
    else:
        x = np.array(x0, complex)
    eps = None
    trace = []
    for it in range(cfg.lowrank_iters):
        M, vals = _schatten_weights(x, p, eps if eps is not None else 1.0)
        if eps is None:
            eps = cfg.lowrank_eps0 * max(vals.max(), np.finfo(float).tiny)
            M, vals = _schatten_weights(x, p, eps)
        x = solve_image_update(op, b, scale * (p / 2) * M, cfg.lowrank_cg_iters,
                               cfg.cg_tol, x0=x, check_psd=False)
        sv = np.sqrt(np.maximum(_schatten_weights(x, p, eps)[1], 0.0))
        trace.append(_data_misfit(op, b, x) + scale * float(np.sum(sv ** p)))
        eps = max(eps * cfg.lowrank_eps_decay, cfg.lowrank_eps_floor)
    return ReconResult(images=x, laplacian=None, objective_trace=trace,
                       timings={"lowrank": time.perf_counter() - t0},
                       info={"lambda_lr": lambda_lr, "p": p})
