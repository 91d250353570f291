"""Free-breathing, ungated cardiac phantom built from anti-aliased ellipses.

Two quasi-periodic motions drive the scene: a cardiac contraction with
beat-to-beat jitter in heart rate, and a respiratory translation of the heart
and liver. The per-frame phases are stored alongside the frames so that
neighbour structure on the motion manifold is known exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PhantomSpec",
    "GroundTruthSeries",
    "generate_phantom",
    "render_frame",
    "phase_distance",
    "phase_distance_matrix",
    "neighbor_fidelity",
    "cardiac_roi",
]

SUPERSAMPLE = 4
EDGE_WIDTH = 1.5  # pixels over which an ellipse boundary ramps from 1 to 0


class PhantomError(ValueError):
    """Raised when a :class:`PhantomSpec` violates one of its invariants."""


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of the simulated free-breathing series.

    Periods are in frames; ``respiratory_amplitude`` is the peak vertical
    excursion of the heart in pixels.
    """

    grid_size: int = 64
    n_frames: int = 200
    cardiac_period_frames: float = 20.3
    respiratory_period_frames: float = 75.0
    respiratory_amplitude: float = 1.5
    contraction_fraction: float = 0.3
    heart_rate_jitter: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if self.grid_size < 8:
            raise PhantomError("grid_size must be at least 8")
        if self.n_frames < 1:
            raise PhantomError("n_frames must be positive")
        if self.cardiac_period_frames <= 0 or self.respiratory_period_frames <= 0:
            raise PhantomError("motion periods must be positive")
        if self.cardiac_period_frames == self.respiratory_period_frames:
            raise PhantomError(
                "cardiac_period_frames must differ from respiratory_period_frames")
        if not 0 <= self.respiratory_amplitude < self.grid_size / 8:
            raise PhantomError(
                "respiratory_amplitude must lie in [0, grid_size/8)")
        if not 0 <= self.contraction_fraction < 1:
            raise PhantomError("contraction_fraction must lie in [0, 1)")
        if self.heart_rate_jitter < 0:
            raise PhantomError("heart_rate_jitter must be non-negative")


@dataclass(frozen=True)
class GroundTruthSeries:
    """Frames of shape ``(n_frames, grid, grid)`` with their motion phases."""

    frames: np.ndarray
    cardiac_phase: np.ndarray
    respiratory_phase: np.ndarray
    spec: PhantomSpec = field(default_factory=PhantomSpec)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def _warp(phase, skew):
    # monotone phase warp; skew != 0 makes the motion speed non-uniform
    t = np.mod(phase, 1.0)
    return 2 * np.pi * (t + skew * np.sin(2 * np.pi * t) / (2 * np.pi))


def contraction_profile(cardiac_phase, lag=0.0):
    """Ventricular contraction in [0, 1]; faster in systole than diastole.

    ``lag`` (radians) delays the profile, used for the right ventricle so
    that the pair of ventricular sizes traces a loop over one beat.
    """
    return 0.5 * (1.0 - np.cos(_warp(cardiac_phase, 0.1) - lag))


def breathing_offset(respiratory_phase):
    """Heart displacement ``(dx, dy)`` in units of the amplitude.

    Inspiration and expiration follow different paths (hysteresis), so the
    displacement is a one-to-one function of the phase.
    """
    s = _warp(respiratory_phase, 0.3)
    return 0.5 * np.sin(s), 0.5 * (1.0 - np.cos(s))


def _subpixel_grid(n):
    # normalised coordinates in [-1, 1], rows increase downwards
    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    pos = (np.arange(n)[:, None] + offsets[None, :]).ravel()
    u = (pos - n / 2) / (n / 2)
    return np.meshgrid(u, u, indexing="xy")


def _ellipse(X, Y, cx, cy, ax, ay, px_per_unit):
    # coverage with a linear ramp across the boundary
    rho = np.sqrt(((X - cx) / ax) ** 2 + ((Y - cy) / ay) ** 2)
    signed = (rho - 1.0) * min(ax, ay) * px_per_unit
    return np.clip(0.5 - signed / EDGE_WIDTH, 0.0, 1.0)


def render_frame(spec: PhantomSpec, cardiac_phase: float,
                 respiratory_phase: float) -> np.ndarray:
    """Render one real-valued frame for the given motion phases."""
    n = spec.grid_size
    X, Y = _subpixel_grid(n)
    scale = n / 2
    bx, by = breathing_offset(respiratory_phase)
    dx = spec.respiratory_amplitude / scale * float(bx)
    dy = spec.respiratory_amplitude / scale * float(by)
    h = spec.contraction_fraction * float(contraction_profile(cardiac_phase))
    h_rv = spec.contraction_fraction * float(contraction_profile(cardiac_phase, np.pi / 2))

    img = np.zeros_like(X)

    def paint(cx, cy, ax, ay, value):
        # painter's algorithm: later structures cover earlier ones
        nonlocal img
        cover = _ellipse(X, Y, cx, cy, ax, ay, scale)
        img = img * (1.0 - cover) + value * cover

    paint(0.0, 0.0, 0.9, 0.72, 0.3)
    paint(-0.5, -0.15, 0.3, 0.42, 0.05)
    paint(0.52, -0.2, 0.28, 0.36, 0.05)
    paint(0.15 + dx, 0.5 + 1.4 * dy, 0.55, 0.22, 0.55)

    lv_r0, myo_r0 = 0.26, 0.38
    lv_r = lv_r0 * (1.0 - h)
    # myocardial area is conserved during contraction
    myo_r = np.sqrt(lv_r ** 2 + myo_r0 ** 2 - lv_r0 ** 2)
    hx, hy = 0.08 + dx, -0.02 + dy
    rv_scale = 1.0 - 0.8 * h_rv
    paint(hx - 0.36, hy, 0.2 * rv_scale, 0.3 * rv_scale, 0.9)
    paint(hx, hy, myo_r, myo_r, 0.4)
    paint(hx, hy, lv_r, lv_r, 1.0)

    return img.reshape(n, SUPERSAMPLE, n, SUPERSAMPLE).mean(axis=(1, 3))


def _phases(spec: PhantomSpec):
    rng = np.random.default_rng(spec.seed)
    n = spec.n_frames
    increments = np.full(n, 1.0 / spec.cardiac_period_frames)
    if spec.heart_rate_jitter > 0:
        # one rate perturbation per frame, kept positive
        jitter = rng.standard_normal(n) * spec.heart_rate_jitter
        increments = increments * np.clip(1.0 + jitter, 0.2, None)
    cardiac = np.mod(np.concatenate([[0.0], np.cumsum(increments[:-1])]), 1.0)
    respiratory = np.mod(np.arange(n) / spec.respiratory_period_frames, 1.0)
    return cardiac, respiratory


def generate_phantom(spec: PhantomSpec | None = None) -> GroundTruthSeries:
    """Generate the ground-truth dynamic series described by ``spec``.

    Frames are stored as complex128 with zero imaginary part and intensities
    in [0, 1]. The result is a deterministic function of ``spec``.
    """
    spec = PhantomSpec() if spec is None else spec
    spec.validate()
    cardiac, respiratory = _phases(spec)
    frames = np.empty((spec.n_frames, spec.grid_size, spec.grid_size), complex)
    for i in range(spec.n_frames):
        frames[i] = render_frame(spec, cardiac[i], respiratory[i])
    return GroundTruthSeries(frames, cardiac, respiratory, spec)


def _circular(d):
    d = np.abs(d) % 1.0
    return np.minimum(d, 1.0 - d)


def phase_distance(gt: GroundTruthSeries, i: int, j: int) -> float:
    """Euclidean combination of the wrap-around cardiac and respiratory
    phase differences between frames ``i`` and ``j``."""
    n = gt.n_frames
    for idx in (i, j):
        if not -n <= idx < n:
            raise IndexError(f"frame index {idx} out of range for {n} frames")
    dc = _circular(gt.cardiac_phase[i] - gt.cardiac_phase[j])
    dr = _circular(gt.respiratory_phase[i] - gt.respiratory_phase[j])
    return float(np.hypot(dc, dr))


def phase_distance_matrix(gt: GroundTruthSeries) -> np.ndarray:
    """All pairwise :func:`phase_distance` values as an N x N matrix."""
    dc = _circular(gt.cardiac_phase[:, None] - gt.cardiac_phase[None, :])
    dr = _circular(gt.respiratory_phase[:, None] - gt.respiratory_phase[None, :])
    return np.hypot(dc, dr)


def neighbor_fidelity(weights, gt: GroundTruthSeries, k: int = 3) -> float:
    """Fraction of frames whose strongest neighbour is a true phase neighbour.

    For each frame ``i`` the off-diagonal maximiser of row ``i`` of
    ``weights`` is compared with the ``k`` frames closest to ``i`` in
    :func:`phase_distance`. A Laplacian can be passed as ``-L``.
    """
    W = np.array(weights, dtype=float, copy=True)
    n = W.shape[0]
    np.fill_diagonal(W, -np.inf)
    best = np.argmax(W, axis=1)
    D = phase_distance_matrix(gt)
    np.fill_diagonal(D, np.inf)
    nearest = np.argsort(D, axis=1, kind="stable")[:, :k]
    hits = np.any(nearest == best[:, None], axis=1)
    return float(hits.sum()) / n


def cardiac_roi(grid_size: int):
    """Centred square ROI of half the grid side, as ``(row0, col0, h, w)``."""
    side = grid_size // 2
    start = (grid_size - side) // 2
    return (start, start, side, side)
