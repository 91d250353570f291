"""Multichannel non-uniform Fourier sampling operator.

Image frames are arrays of shape ``(n_frames, n, n)``; pixel ``[row, col]``
sits at position ``(col - n/2, row - n/2)`` and a sample at ``(kx, ky)``
(cycles/pixel) measures ``sum_r S_c(r) x(r) exp(-2j*pi*k.r)``.

k-space data for all frames are stored as one ``(n_coils, n_samples)``
array with CSR-style frame offsets, which keeps frames with different sample
counts cheap to handle and serialise.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import finufft
import numpy as np
import scipy.fft as sfft

__all__ = [
    "CoilMaps",
    "MultiCoilKSpace",
    "SamplingOperator",
    "OperatorError",
    "simulate_coilmaps",
    "add_noise",
    "noise_sigma_for_snr",
    "compress_coils",
    "restrict_central",
    "default_low_grid",
]

NUFFT_EPS = 1e-11
# single-threaded spreading keeps summation order, hence results, bit-reproducible
_CHUNK_ELEMENTS = 1 << 22


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class CoilMaps:
    """Static coil sensitivities, shape ``(n_coils, n, n)``."""

    maps: np.ndarray

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    def sum_of_squares(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))


@dataclass(frozen=True)
class MultiCoilKSpace:
    """Measured samples; frame ``f`` owns columns ``offsets[f]:offsets[f+1]``."""

    data: np.ndarray
    offsets: np.ndarray
    noise_sigma: float = 0.0

    @property
    def n_frames(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]

    def frame(self, f: int) -> np.ndarray:
        return self.data[:, self.offsets[f]:self.offsets[f + 1]]

    def scaled(self, alpha) -> "MultiCoilKSpace":
        return replace(self, data=self.data * alpha)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def simulate_coilmaps(grid_size: int, n_coils: int, uniform: bool = False) -> CoilMaps:
    """Smooth Gaussian-lobe receive coils arranged around the field of view.

    Each coil gets its own linear phase ramp. Maps are normalised to unit
    sum-of-squares at every pixel. ``uniform=True`` returns identical
    constant coils (a single one reduces the operator to a plain NUFFT).
    """
    if n_coils < 1:
        raise OperatorError("n_coils must be at least 1")
    n = grid_size
    if uniform:
        return CoilMaps(np.ones((n_coils, n, n), complex) / np.sqrt(n_coils))
    u = (np.arange(n) - n / 2) / (n / 2)
    X, Y = np.meshgrid(u, u, indexing="xy")
    maps = np.empty((n_coils, n, n), complex)
    for c in range(n_coils):
        a = 2 * np.pi * c / n_coils + 0.3
        cx, cy = 1.1 * np.cos(a), 0.9 * np.sin(a)
        lobe = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * 0.55 ** 2))
        ramp = np.pi * (0.3 * np.cos(a + 1.0) * X + 0.3 * np.sin(a + 1.0) * Y) + a
        maps[c] = lobe * np.exp(1j * ramp)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps(maps / sos)


def _nufft_points(coords, grid_size):
    # finufft's first axis is image rows, i.e. ky
    return (np.ascontiguousarray(2 * np.pi * coords[:, 1]),
            np.ascontiguousarray(2 * np.pi * coords[:, 0]))


@dataclass(frozen=True, eq=False)
class SamplingOperator:
    """Forward model ``A`` for all frames of a dynamic acquisition.

    Parameters
    ----------
    coords : ndarray, shape (n_samples, 2)
        Sample positions (kx, ky) in cycles/pixel of ``grid_size``.
    offsets : ndarray, shape (n_frames + 1,)
        Frame boundaries into ``coords``.
    coil_maps : CoilMaps
    grid_size : int
    navigator : ndarray of bool, optional
        Marks samples that belong to navigator interleaves.
    mode : {"full", "central"}
    central_fraction : float
        |k| cutoff (fraction of 0.5) used to build a central-mode operator.
    band_radius : float, optional
        Radius (cycles/pixel of this grid) of the disk the samples cover;
        set for central-mode operators, ``None`` means the full box.
    """

    coords: np.ndarray
    offsets: np.ndarray
    coil_maps: CoilMaps
    grid_size: int
    navigator: np.ndarray | None = None
    mode: str = "full"
    central_fraction: float = 1.0
    band_radius: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_acquisition(cls, acq, coil_maps: CoilMaps) -> "SamplingOperator":
        coords = [acq.frame_coordinates(f) for f in range(acq.n_frames)]
        nav = [acq.frame_navigator_mask(f) for f in range(acq.n_frames)]
        offsets = np.concatenate([[0], np.cumsum([len(c) for c in coords])])
        if coil_maps.maps.shape[1:] != (acq.grid_size, acq.grid_size):
            raise OperatorError("coil maps do not match the acquisition grid")
        return cls(np.concatenate(coords), offsets, coil_maps, acq.grid_size,
                   np.concatenate(nav))

    @property
    def n_frames(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_coils(self) -> int:
        return self.coil_maps.n_coils

    @property
    def image_shape(self):
        return (self.n_frames, self.grid_size, self.grid_size)

    def frame_coords(self, f: int) -> np.ndarray:
        return self.coords[self.offsets[f]:self.offsets[f + 1]]

    def _check_images(self, x):
        if x.shape != self.image_shape:
            raise OperatorError(
                f"image series shape {x.shape} does not match operator {self.image_shape}")

    def _check_kspace(self, b):
        if b.data.shape != (self.n_coils, len(self.coords)) or not np.array_equal(
                b.offsets, self.offsets):
            raise OperatorError("k-space data is not aligned with the operator")

    def forward(self, x) -> MultiCoilKSpace:
        x = np.asarray(x, dtype=complex)
        self._check_images(x)
        maps = self.coil_maps.maps
        out = np.empty((self.n_coils, len(self.coords)), complex)
        for f in range(self.n_frames):
            lo, hi = self.offsets[f], self.offsets[f + 1]
            if hi == lo:
                continue
            py, px = _nufft_points(self.coords[lo:hi], self.grid_size)
            out[:, lo:hi] = finufft.nufft2d2(py, px, maps * x[f], isign=-1,
                                             eps=NUFFT_EPS, nthreads=1)
        return MultiCoilKSpace(out, self.offsets.copy())

    def adjoint(self, b: MultiCoilKSpace) -> np.ndarray:
        self._check_kspace(b)
        n = self.grid_size
        maps = self.coil_maps.maps
        x = np.zeros(self.image_shape, complex)
        for f in range(self.n_frames):
            lo, hi = self.offsets[f], self.offsets[f + 1]
            if hi == lo:
                continue
            py, px = _nufft_points(self.coords[lo:hi], n)
            coil_imgs = finufft.nufft2d1(py, px, np.ascontiguousarray(b.data[:, lo:hi]),
                                         (n, n), isign=1, eps=NUFFT_EPS, nthreads=1)
            x[f] = np.sum(np.conj(maps) * coil_imgs, axis=0)
        return x

    def toeplitz_kernels(self) -> np.ndarray:
        """FFTs of the per-frame point-spread functions on the 2n grid."""
        if "toeplitz" not in self._cache:
            n = self.grid_size
            kern = np.empty((self.n_frames, 2 * n, 2 * n), complex)
            for f in range(self.n_frames):
                lo, hi = self.offsets[f], self.offsets[f + 1]
                if hi == lo:
                    kern[f] = 0
                    continue
                py, px = _nufft_points(self.coords[lo:hi], n)
                psf = finufft.nufft2d1(py, px, np.ones(hi - lo, complex),
                                       (2 * n, 2 * n), isign=1, eps=NUFFT_EPS, nthreads=1)
                kern[f] = sfft.fft2(sfft.ifftshift(psf))
            self._cache["toeplitz"] = kern
        return self._cache["toeplitz"]

    def normal(self, x) -> np.ndarray:
        """Apply ``A^H A`` through Toeplitz embedding (no regridding error)."""
        x = np.asarray(x, dtype=complex)
        self._check_images(x)
        n = self.grid_size
        kern = self.toeplitz_kernels()
        maps = self.coil_maps.maps
        out = np.empty_like(x)
        step = max(1, _CHUNK_ELEMENTS // (self.n_coils * 4 * n * n))
        for lo in range(0, self.n_frames, step):
            hi = min(lo + step, self.n_frames)
            coil = maps[None] * x[lo:hi, None]
            spec = sfft.fft2(coil, s=(2 * n, 2 * n), workers=-1)
            spec *= kern[lo:hi, None]
            conv = sfft.ifft2(spec, workers=-1)[..., :n, :n]
            out[lo:hi] = np.sum(np.conj(maps)[None] * conv, axis=1)
        return out

    def diagonal_scale(self) -> float:
        """Mean diagonal entry of ``A^H A`` over pixels and frames."""
        sos = np.mean(np.sum(np.abs(self.coil_maps.maps) ** 2, axis=0))
        return float(len(self.coords) / self.n_frames * sos)

    def band_limit(self, x) -> np.ndarray:
        """Project frames onto the k-space disk covered by the samples.

        The low-resolution grid of a central-mode operator is the smallest
        one whose Nyquist box holds the sampled disk; the box corners carry
        no data, so anything there is noise amplified by the solver.
        Full-mode operators return ``x`` unchanged.
        """
        if self.band_radius is None:
            return np.asarray(x)
        n = self.grid_size
        f = sfft.fftfreq(n)
        mask = np.hypot(f[:, None], f[None, :]) <= self.band_radius + 1e-12
        return sfft.ifft2(sfft.fft2(x, axes=(-2, -1)) * mask, axes=(-2, -1))

    def without_navigators(self, b: MultiCoilKSpace | None = None):
        """Drop navigator samples from the operator (and ``b`` if given)."""
        if self.navigator is None or not self.navigator.any():
            return (self, b) if b is not None else self
        keep = ~self.navigator
        return _subset(self, b, keep)


def _subset(op: SamplingOperator, b, keep, **changes):
    counts = np.add.reduceat(keep.astype(int), op.offsets[:-1]) \
        if len(keep) else np.zeros(op.n_frames, int)
    # reduceat misbehaves on empty frames
    empty = op.offsets[:-1] == op.offsets[1:]
    counts[empty] = 0
    offsets = np.concatenate([[0], np.cumsum(counts)])
    nav = None if op.navigator is None else op.navigator[keep]
    new_op = replace(op, coords=op.coords[keep], offsets=offsets, navigator=nav,
                     _cache={}, **changes)
    if b is None:
        return new_op
    new_b = MultiCoilKSpace(b.data[:, keep], offsets.copy(), b.noise_sigma)
    return new_op, new_b


def add_noise(b: MultiCoilKSpace, sigma: float, seed: int = 0) -> MultiCoilKSpace:
    """Add circular complex Gaussian noise with ``sigma`` per real component."""
    if sigma < 0:
        raise OperatorError("sigma must be non-negative")
    if sigma == 0:
        return MultiCoilKSpace(b.data.copy(), b.offsets.copy(), b.noise_sigma)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(b.data.shape) + 1j * rng.standard_normal(b.data.shape)
    return MultiCoilKSpace(b.data + sigma * noise, b.offsets.copy(), float(sigma))


def noise_sigma_for_snr(b: MultiCoilKSpace, snr_db: float) -> float:
    """Per-component sigma giving ``20 log10(||b|| / ||noise||) = snr_db``."""
    rms = np.linalg.norm(b.data) / np.sqrt(b.data.size)
    return float(rms / (np.sqrt(2.0) * 10 ** (snr_db / 20)))


def compress_coils(b: MultiCoilKSpace, maps: CoilMaps, max_error: float = 0.05):
    """PCA coil compression.

    Keeps the fewest virtual coils whose rank-V approximation of the stacked
    coil data has relative Frobenius error below ``max_error``, and applies
    the same projection to the sensitivity maps so the model stays exact.
    """
    if not 0 < max_error < 1:
        raise OperatorError("max_error must lie in (0, 1)")
    total = np.linalg.norm(b.data)
    if total == 0:
        raise OperatorError("cannot compress all-zero coil data")
    U, s, _ = np.linalg.svd(b.data, full_matrices=False)
    energy = s ** 2
    # residual[v] = relative error when keeping v coils
    residual = np.sqrt(np.maximum(energy.sum() - np.cumsum(energy), 0) / energy.sum())
    n_keep = int(np.argmax(residual < max_error)) + 1
    P = U[:, :n_keep]
    data = P.conj().T @ b.data
    vmaps = np.einsum("cv,cxy->vxy", P.conj(), maps.maps)
    return MultiCoilKSpace(data, b.offsets.copy(), b.noise_sigma), CoilMaps(vmaps)


def default_low_grid(grid_size: int, central_fraction: float) -> int:
    """Smallest even grid whose Nyquist box holds the central samples."""
    low = int(np.ceil(grid_size * central_fraction - 1e-9))
    return max(2, low + (low % 2))


def _downsample_maps(maps, low):
    n = maps.shape[-1]
    if low == n:
        return maps.copy()
    spec = sfft.fftshift(sfft.fft2(maps), axes=(-2, -1))
    a = n // 2 - low // 2
    crop = spec[..., a:a + low, a:a + low]
    return sfft.ifft2(sfft.ifftshift(crop, axes=(-2, -1))) * (low / n) ** 2


def restrict_central(op: SamplingOperator, b: MultiCoilKSpace,
                     central_fraction: float = 0.2, low_grid: int | None = None,
                     exclude_navigators: bool = False):
    """Keep samples with ``|k| <= central_fraction * 0.5`` on a coarse grid.

    Returns a central-mode operator on a ``low_grid`` image grid (same field
    of view, larger pixels) together with the matching subset of ``b``.
    """
    if not 0 < central_fraction <= 1:
        raise OperatorError("central_fraction must lie in (0, 1]")
    op._check_kspace(b)
    if low_grid is None:
        low_grid = default_low_grid(op.grid_size, central_fraction)
    cutoff = central_fraction * 0.5
    keep = np.hypot(op.coords[:, 0], op.coords[:, 1]) <= cutoff + 1e-12
    if exclude_navigators and op.navigator is not None:
        keep &= ~op.navigator
    if not keep.any():
        raise OperatorError("no samples inside the central k-space region")
    ratio = op.grid_size / low_grid
    if cutoff * ratio > 0.5 + 1e-12:
        raise OperatorError(
            f"low_grid={low_grid} is too small for central_fraction={central_fraction}")
    new_op, new_b = _subset(op, b, keep)
    maps = CoilMaps(_downsample_maps(op.coil_maps.maps, low_grid))
    new_op = replace(new_op, coords=new_op.coords * ratio, coil_maps=maps,
                     grid_size=low_grid, mode="central", band_radius=cutoff * ratio,
                     central_fraction=central_fraction, _cache={})
    return new_op, new_b
