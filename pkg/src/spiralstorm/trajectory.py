"""Dual-density golden-angle spiral trajectories.

Coordinates are in cycles/pixel of the target grid, so the Nyquist box is
``[-0.5, 0.5)^2`` and one Nyquist spacing is ``1 / grid_size``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "GOLDEN_ANGLE",
    "SpiralInterleaf",
    "SpiralAcquisition",
    "TrajectoryError",
    "spiral_density",
    "make_spiral",
    "golden_angle_schedule",
    "bin_frames",
    "make_acquisition",
    "write_trajectory_csv",
]

K_MAX = 0.5
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class SpiralInterleaf:
    """One spiral readout: ``samples`` is an ``(M, 2)`` array of (kx, ky)."""

    samples: np.ndarray
    rotation_angle: float = 0.0
    is_navigator: bool = False

    def rotated(self, angle: float, is_navigator: bool = False) -> "SpiralInterleaf":
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return SpiralInterleaf(self.samples @ rot.T,
                               float(np.mod(self.rotation_angle + angle, 2 * np.pi)),
                               is_navigator)


@dataclass(frozen=True)
class SpiralAcquisition:
    """Ordered interleaves and their grouping into frames.

    ``frames`` is empty until :func:`bin_frames` has been applied.
    """

    interleaves: tuple
    grid_size: int
    samples_per_readout: int
    density_inner: float
    density_outer: float
    inner_extent: float
    frames: tuple = field(default=())

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def frame_coordinates(self, f: int) -> np.ndarray:
        return np.concatenate([self.interleaves[m].samples for m in self.frames[f]])

    def frame_navigator_mask(self, f: int) -> np.ndarray:
        return np.concatenate([
            np.full(self.samples_per_readout, self.interleaves[m].is_navigator)
            for m in self.frames[f]])

    @property
    def has_navigators(self) -> bool:
        return any(il.is_navigator for il in self.interleaves)


def spiral_density(r, density_inner, density_outer, inner_extent,
                   transition_width=0.01):
    """Sampling density (fraction of Nyquist for one interleaf) at radius ``r``.

    A Fermi function steps from ``density_inner`` to ``density_outer``. The
    transition is centred two widths beyond ``inner_extent * K_MAX`` so that
    the inner disk keeps close to its full density.
    """
    w = transition_width * K_MAX
    r_t = inner_extent * K_MAX + 2 * w
    fermi = 1.0 / (1.0 + np.exp(np.clip((r - r_t) / w, -700, 700)))
    return density_outer + (density_inner - density_outer) * fermi


def _angle_of_radius(r, grid_size, density_inner, density_outer, inner_extent,
                     transition_width):
    # closed-form integral of 2*pi*grid*density(r) dr
    w = transition_width * K_MAX
    r_t = inner_extent * K_MAX + 2 * w
    fermi_integral = r - w * (np.logaddexp(0.0, (r - r_t) / w)
                              - np.logaddexp(0.0, -r_t / w))
    return 2 * np.pi * grid_size * (
        density_outer * r + (density_inner - density_outer) * fermi_integral)


def make_spiral(samples_per_readout: int = 512, density_inner: float = 0.2,
                density_outer: float = 0.02, inner_extent: float = 0.2,
                grid_size: int = 64, transition_width: float = 0.01) -> SpiralInterleaf:
    """Constant angular-velocity spiral with Fermi-modulated radial pitch.

    After one full turn at radius ``r`` the spiral has advanced by
    ``1 / (density(r) * grid_size)``, i.e. ``1/density`` Nyquist spacings.
    The readout starts at the k-space origin and ends on ``|k| = 0.5``.
    """
    if samples_per_readout < 2:
        raise TrajectoryError("samples_per_readout must be at least 2")
    if not 0 < density_outer <= density_inner:
        raise TrajectoryError(
            "densities must satisfy 0 < density_outer <= density_inner")
    if not 0 < inner_extent < 1:
        raise TrajectoryError("inner_extent must lie in (0, 1)")
    args = (grid_size, density_inner, density_outer, inner_extent, transition_width)
    r_fine = np.linspace(0.0, K_MAX, 20001)
    theta_fine = _angle_of_radius(r_fine, *args)
    theta = np.linspace(0.0, theta_fine[-1], samples_per_readout)
    r = np.interp(theta, theta_fine, r_fine)
    samples = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return SpiralInterleaf(samples, 0.0, False)


def golden_angle_schedule(base: SpiralInterleaf, n_interleaves: int,
                          navigator_every: int | None = None, *,
                          grid_size: int = 64, density_inner: float = 0.2,
                          density_outer: float = 0.02,
                          inner_extent: float = 0.2) -> SpiralAcquisition:
    """Rotate ``base`` by successive golden angles.

    With ``navigator_every = p`` every slot ``m`` with ``m % p == 0`` holds
    an unrotated copy of ``base`` flagged as a navigator. Imaging interleaves
    advance by one golden angle each, skipping navigator slots.
    """
    if n_interleaves < 1:
        raise TrajectoryError("n_interleaves must be at least 1")
    if navigator_every is not None and navigator_every < 1:
        raise TrajectoryError("navigator_every must be positive")
    interleaves = []
    j = 0
    for m in range(n_interleaves):
        if navigator_every and m % navigator_every == 0:
            interleaves.append(base.rotated(0.0, is_navigator=True))
        else:
            interleaves.append(base.rotated(np.mod(j * GOLDEN_ANGLE, 2 * np.pi)))
            j += 1
    return SpiralAcquisition(tuple(interleaves), grid_size, len(base.samples),
                             density_inner, density_outer, inner_extent)


def bin_frames(acq: SpiralAcquisition, spirals_per_frame: int) -> SpiralAcquisition:
    """Group consecutive interleaves into frames; a partial tail is dropped."""
    if spirals_per_frame < 1:
        raise TrajectoryError("spirals_per_frame must be at least 1")
    n = len(acq.interleaves)
    if spirals_per_frame > n:
        raise TrajectoryError(
            f"spirals_per_frame={spirals_per_frame} exceeds the {n} interleaves")
    n_frames = n // spirals_per_frame
    frames = tuple(range(f * spirals_per_frame, (f + 1) * spirals_per_frame)
                   for f in range(n_frames))
    return replace(acq, frames=frames)


def make_acquisition(grid_size=64, n_interleaves=1000, spirals_per_frame=5,
                     samples_per_readout=512, density_inner=0.2,
                     density_outer=0.02, inner_extent=0.2,
                     navigator_every=None) -> SpiralAcquisition:
    """Spiral design, golden-angle ordering and binning in one call."""
    base = make_spiral(samples_per_readout, density_inner, density_outer,
                       inner_extent, grid_size)
    acq = golden_angle_schedule(base, n_interleaves, navigator_every,
                                grid_size=grid_size, density_inner=density_inner,
                                density_outer=density_outer,
                                inner_extent=inner_extent)
    return bin_frames(acq, spirals_per_frame)


def write_trajectory_csv(acq: SpiralAcquisition, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["interleaf_index", "sample_index", "kx", "ky", "is_navigator"])
        for m, il in enumerate(acq.interleaves):
            for s, (kx, ky) in enumerate(il.samples):
                writer.writerow([m, s, repr(float(kx)), repr(float(ky)), int(il.is_navigator)])
