"""Image-quality metrics over a rectangular region of interest.

All metrics act on the magnitudes of ``(n_frames, n, n)`` series (a single
2-D frame is treated as a one-frame series). Per-frame values are kept so
that reports can give mean and standard deviation across frames.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "RegionOfInterest",
    "MetricError",
    "MetricReport",
    "ser",
    "ser_per_frame",
    "log_kernel",
    "hfen",
    "hfen_per_frame",
    "gaussian_window",
    "ssim",
    "ssim_per_frame",
    "report",
]

LOG_SIZE, LOG_SIGMA = 15, 1.5
SSIM_SIZE, SSIM_SIGMA = 11, 1.5
K1, K2 = 0.01, 0.03


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RegionOfInterest:
    """Rectangle ``[row0, row0 + height) x [col0, col0 + width)``."""

    row0: int
    col0: int
    height: int
    width: int

    @classmethod
    def centered(cls, grid_size: int) -> "RegionOfInterest":
        """Centred square of half the grid side."""
        side = grid_size // 2
        start = (grid_size - side) // 2
        return cls(start, start, side, side)

    @classmethod
    def full(cls, shape) -> "RegionOfInterest":
        return cls(0, 0, shape[-2], shape[-1])

    def validate(self, shape) -> None:
        rows, cols = shape[-2], shape[-1]
        if self.height < 1 or self.width < 1:
            raise MetricError("ROI must have positive size")
        if (self.row0 < 0 or self.col0 < 0 or self.row0 + self.height > rows
                or self.col0 + self.width > cols):
            raise MetricError(f"ROI {self} is not inside a {rows}x{cols} grid")

    def crop(self, x) -> np.ndarray:
        self.validate(np.shape(x))
        return np.asarray(x)[..., self.row0:self.row0 + self.height,
                             self.col0:self.col0 + self.width]


def _prepare(orig, rec, roi):
    orig, rec = np.asarray(orig), np.asarray(rec)
    if orig.shape != rec.shape:
        raise MetricError(f"shape mismatch: {orig.shape} vs {rec.shape}")
    if orig.ndim == 2:
        orig, rec = orig[None], rec[None]
    if orig.ndim != 3:
        raise MetricError("expected a frame or a series of frames")
    roi = RegionOfInterest.centered(orig.shape[-1]) if roi is None else roi
    return np.abs(roi.crop(orig)), np.abs(roi.crop(rec))


def _db(num, den):
    if den == 0:
        return math.inf
    return 20.0 * math.log10(num / den)


def ser(orig, rec, roi: RegionOfInterest | None = None) -> float:
    """Signal-to-error ratio in dB over the ROI of all frames jointly.

    Identical inputs give ``+inf``. ``roi`` defaults to the centred square
    of half the grid side.
    """
    a, b = _prepare(orig, rec, roi)
    signal = float(np.linalg.norm(a))
    if signal == 0:
        raise MetricError("reference is zero inside the ROI")
    return _db(signal, float(np.linalg.norm(a - b)))


def ser_per_frame(orig, rec, roi: RegionOfInterest | None = None) -> np.ndarray:
    a, b = _prepare(orig, rec, roi)
    out = []
    for ai, bi in zip(a, b):
        signal = float(np.linalg.norm(ai))
        if signal == 0:
            raise MetricError("a reference frame is zero inside the ROI")
        out.append(_db(signal, float(np.linalg.norm(ai - bi))))
    return np.array(out)


def log_kernel(size: int = LOG_SIZE, sigma: float = LOG_SIGMA) -> np.ndarray:
    """Laplacian-of-Gaussian kernel, shifted to sum exactly to zero."""
    r = np.arange(size) - (size - 1) / 2
    X, Y = np.meshgrid(r, r)
    rr = X ** 2 + Y ** 2
    g = np.exp(-rr / (2 * sigma ** 2))
    g /= g.sum()
    h = g * (rr - 2 * sigma ** 2) / sigma ** 4
    return h - h.mean()


def _filter_frames(a, kernel):
    # symmetric boundary extension keeps constants constant, so a zero-sum
    # kernel maps any constant offset to exactly zero
    return np.stack([ndimage.convolve(f, kernel, mode="reflect") for f in a])


def hfen_per_frame(orig, rec, roi: RegionOfInterest | None = None):
    """Per-frame ``(hfen_norm, hfen_db)`` arrays.

    ``hfen_norm = ||LoG(orig) - LoG(rec)|| / ||LoG(orig)||`` (lower is
    better); ``hfen_db`` is ``-20 log10(hfen_norm)``.
    """
    a, b = _prepare(orig, rec, roi)
    if min(a.shape[-2:]) < LOG_SIZE:
        raise MetricError(f"ROI must be at least {LOG_SIZE}x{LOG_SIZE} for HFEN")
    k = log_kernel()
    la, lb = _filter_frames(a, k), _filter_frames(b, k)
    norms = np.linalg.norm(la.reshape(len(a), -1), axis=1)
    # a flat frame filters to rounding noise rather than exact zeros
    floor = 1e-12 * np.abs(k).sum() * np.sqrt(a[0].size) * np.abs(a).max(axis=(1, 2))
    if np.any(norms <= floor):
        raise MetricError("reference frame has no high-frequency content (flat)")
    err = np.linalg.norm((la - lb).reshape(len(a), -1), axis=1)
    hn = err / norms
    hdb = np.array([_db(n, e) for n, e in zip(norms, err)])
    return hn, hdb


def hfen(orig, rec, roi: RegionOfInterest | None = None, form: str = "norm") -> float:
    """High-frequency error, averaged over frames.

    ``form="norm"`` gives the normalised error, ``form="db"`` the dB ratio.
    """
    hn, hdb = hfen_per_frame(orig, rec, roi)
    if form == "norm":
        return float(hn.mean())
    if form == "db":
        return float(np.mean(hdb))
    raise MetricError(f"unknown HFEN form {form!r}")


def gaussian_window(size: int = SSIM_SIZE, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-r ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_per_frame(orig, rec, roi: RegionOfInterest | None = None,
                   data_range: float | None = None) -> np.ndarray:
    """Gaussian-weighted SSIM per frame.

    Local statistics use an 11x11 Gaussian window (sigma 1.5); the map is
    averaged over pixels whose window lies inside the ROI. ``data_range``
    defaults to the range of the reference magnitudes over the whole series
    (1 when the reference is constant).
    """
    a, b = _prepare(orig, rec, roi)
    if min(a.shape[-2:]) < SSIM_SIZE:
        raise MetricError(f"ROI must be at least {SSIM_SIZE}x{SSIM_SIZE} for SSIM")
    if data_range is None:
        data_range = float(a.max() - a.min()) or 1.0
    C1, C2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    w = gaussian_window()
    pad = (SSIM_SIZE - 1) // 2
    out = []
    for x, y in zip(a, b):
        mx = ndimage.correlate(x, w, mode="reflect")
        my = ndimage.correlate(y, w, mode="reflect")
        sxx = ndimage.correlate(x * x, w, mode="reflect") - mx * mx
        syy = ndimage.correlate(y * y, w, mode="reflect") - my * my
        sxy = ndimage.correlate(x * y, w, mode="reflect") - mx * my
        s = ((2 * mx * my + C1) * (2 * sxy + C2)) / \
            ((mx ** 2 + my ** 2 + C1) * (sxx + syy + C2))
        out.append(float(s[pad:s.shape[0] - pad, pad:s.shape[1] - pad].mean()))
    return np.array(out)


def ssim(orig, rec, roi: RegionOfInterest | None = None) -> float:
    return float(ssim_per_frame(orig, rec, roi).mean())


def _mean_std(v):
    v = np.asarray(v, float)
    if np.all(np.isinf(v)) or np.isinf(v).any():
        return float(np.mean(v)), (0.0 if np.all(v == v[0]) else math.nan)
    return float(v.mean()), float(v.std())


@dataclass(frozen=True)
class MetricReport:
    """Per-frame metrics with their mean and standard deviation."""

    ser: np.ndarray
    ssim: np.ndarray
    hfen_norm: np.ndarray
    hfen_db: np.ndarray
    ser_global: float
    roi: RegionOfInterest
    label: str = ""

    FIELDS = ("ser", "ssim", "hfen_norm", "hfen_db")

    def summary(self) -> dict:
        out = {"label": self.label, "n_frames": len(self.ser),
               "ser_global": self.ser_global}
        for name in self.FIELDS:
            mean, std = _mean_std(getattr(self, name))
            out[f"{name}_mean"] = mean
            out[f"{name}_std"] = std
        return out

    def to_csv(self, per_frame: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if per_frame:
            writer.writerow(["label", "frame", *self.FIELDS])
            for i in range(len(self.ser)):
                writer.writerow([self.label, i, *(repr(float(getattr(self, f)[i]))
                                                 for f in self.FIELDS)])
        else:
            row = self.summary()
            writer.writerow(list(row))
            writer.writerow([row[k] if isinstance(row[k], str) else repr(row[k])
                             for k in row])
        return buf.getvalue()


def report(orig, rec, roi: RegionOfInterest | None = None, label: str = "") -> MetricReport:
    """All metrics for one reconstruction against its reference."""
    orig = np.asarray(orig)
    roi = RegionOfInterest.centered(orig.shape[-1]) if roi is None else roi
    hn, hdb = hfen_per_frame(orig, rec, roi)
    return MetricReport(ser=ser_per_frame(orig, rec, roi),
                        ssim=ssim_per_frame(orig, rec, roi),
                        hfen_norm=hn, hfen_db=hdb,
                        ser_global=ser(orig, rec, roi), roi=roi, label=label)


def write_reports_csv(reports, path) -> None:
    """One summary row per report, e.g. a four-method comparison table."""
    rows = [r.summary() for r in reports]
    if not rows:
        raise MetricError("no reports to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (v if isinstance(v, str) else repr(v))
                             for k, v in row.items()})
