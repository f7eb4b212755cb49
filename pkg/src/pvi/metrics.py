"""Objective quality and rate metrics: D1/D2 geometry PSNR, bits per point,
and Bjontegaard delta rate / delta PSNR between rate-distortion curves.

PSNR uses the 3 * peak^2 numerator convention with peak = 2^bit_depth - 1 and
takes the max of the two directed errors, matching the usual point-cloud
geometry evaluation tools. BD metrics use the classic cubic-polynomial fit
(evaluated about the mean abscissa for conditioning).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .geometry import NormalField, PointSet, estimate_normals


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr: float

    def __post_init__(self):
        if not self.bpp > 0:
            raise DataError("bpp must be positive")


@dataclass(frozen=True)
class RDCurve:
    points: tuple  # RDPoint, strictly increasing bpp

    def __post_init__(self):
        b = [p.bpp for p in self.points]
        if len(b) < 4:
            raise DataError("an RD curve needs at least 4 points")
        if not all(b[i] < b[i + 1] for i in range(len(b) - 1)):
            raise DataError("bpp must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs) -> "RDCurve":
        pts = tuple(RDPoint(b, p) for b, p in sorted(pairs))
        return cls(pts)

    def bpps(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr for p in self.points])


def _nn_sq_dists(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared distance and index of each src point's nearest dst point."""
    tree = cKDTree(dst.astype(np.float64))
    d, idx = tree.query(src.astype(np.float64), k=1)
    return d ** 2, idx


def _psnr_from_mse(mse: float, peak: int) -> float:
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(3.0 * peak * peak / mse)


def d1_psnr(reference: PointSet, reconstructed: PointSet, peak: int | None = None) -> float:
    """Symmetric point-to-point PSNR (max of the two directed mean errors)."""
    peak = (1 << reference.bit_depth) - 1 if peak is None else peak
    a, b = reference.coords, reconstructed.coords
    e_ab = float(_nn_sq_dists(a, b)[0].mean())
    e_ba = float(_nn_sq_dists(b, a)[0].mean())
    return _psnr_from_mse(max(e_ab, e_ba), peak)


def d2_psnr(reference: PointSet, reconstructed: PointSet,
            ref_normals: NormalField | None = None, peak: int | None = None) -> float:
    """Symmetric point-to-plane PSNR.

    Each directed error projects the nearest-neighbour difference onto the
    normal of the reference-side point of the pair; normals are estimated with
    k=16 when not supplied.
    """
    peak = (1 << reference.bit_depth) - 1 if peak is None else peak
    if ref_normals is None:
        ref_normals = estimate_normals(reference, k=min(16, len(reference)))
    n = ref_normals.normals
    a, b = reference.coords.astype(np.float64), reconstructed.coords.astype(np.float64)

    # reference -> reconstructed: pair (a_i, nearest b), normal of a_i
    _, idx_ab = _nn_sq_dists(a, b)
    diff = a - b[idx_ab]
    e_ab = float(((diff * n).sum(axis=1) ** 2).mean())
    # reconstructed -> reference: pair (b_j, nearest a), normal of that a
    _, idx_ba = _nn_sq_dists(b, a)
    diff = b - a[idx_ba]
    e_ba = float(((diff * n[idx_ba]).sum(axis=1) ** 2).mean())
    return _psnr_from_mse(max(e_ab, e_ba), peak)


def bpp(stream_bytes: int, input_points: int) -> float:
    if input_points <= 0:
        raise DataError("point count must be positive")
    return 8.0 * stream_bytes / input_points


def _fit_and_average(x_a, y_a, x_b, y_b) -> float:
    """Average difference of cubic fits (b minus a) over the overlapping x."""
    lo = max(x_a.min(), x_b.min())
    hi = min(x_a.max(), x_b.max())
    if not hi > lo:
        raise DataError("curves do not overlap")
    center = 0.5 * (lo + hi)

    def integral(x, y):
        coef = np.polyfit(x - center, y, 3)
        anti = np.polyint(coef)
        return np.polyval(anti, hi - center) - np.polyval(anti, lo - center)

    return float((integral(x_b, y_b) - integral(x_a, y_a)) / (hi - lo))


def bd_rate(curve_a: RDCurve, curve_b: RDCurve) -> float:
    """Average rate change (%) of curve_b relative to curve_a at equal quality.

    Negative percentages mean curve_b spends fewer bits for the same PSNR.
    """
    for c in (curve_a, curve_b):
        if not np.all(np.isfinite(c.psnrs())):
            raise DataError("BD-Rate requires finite PSNR values")
    delta = _fit_and_average(curve_a.psnrs(), np.log10(curve_a.bpps()),
                             curve_b.psnrs(), np.log10(curve_b.bpps()))
    return (10.0 ** delta - 1.0) * 100.0


def bd_psnr(curve_a: RDCurve, curve_b: RDCurve) -> float:
    """Average quality change (dB) of curve_b relative to curve_a at equal rate."""
    for c in (curve_a, curve_b):
        if not np.all(np.isfinite(c.psnrs())):
            raise DataError("BD-PSNR requires finite PSNR values")
    return _fit_and_average(np.log10(curve_a.bpps()), curve_a.psnrs(),
                            np.log10(curve_b.bpps()), curve_b.psnrs())
