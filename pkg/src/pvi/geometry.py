"""Point-cloud geometry primitives.

Quantization to an integer lattice, deterministic k-nearest-neighbour search,
local graph construction, covariance normal estimation and trilinear feature
interpolation out of sparse voxel grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import lattice
from .errors import DataError


@dataclass(frozen=True)
class RawPointSet:
    """Real-valued points in arbitrary units, prior to quantization."""

    coords: np.ndarray  # (N, 3) float64

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 1:
            raise DataError("raw point set must be a non-empty (N, 3) array")
        if not np.all(np.isfinite(c)):
            raise DataError("raw point set contains non-finite coordinates")
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True)
class PointSet:
    """Unique integer voxel coordinates in [0, 2^bit_depth - 1]^3."""

    coords: np.ndarray  # (N, 3) int64, lexicographically sorted
    bit_depth: int

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int64)
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 1:
            raise DataError("point set must be a non-empty (N, 3) array")
        limit = (1 << self.bit_depth) - 1
        if c.min() < 0 or c.max() > limit:
            raise DataError(f"coordinates exceed [0, {limit}] for bit depth {self.bit_depth}")
        if not lattice.is_sorted_unique(c):
            raise DataError("point set coordinates must be unique and lexicographically sorted")
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_coords(cls, coords, bit_depth: int) -> "PointSet":
        """Canonicalize arbitrary integer coordinates (dedup + lex sort)."""
        return cls(lattice.unique_rows(np.asarray(coords, dtype=np.int64)), bit_depth)

    def __len__(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class NeighborGraph:
    """K nearest neighbours per anchor, with exact integer offsets."""

    anchor_count: int
    k: int
    neighbor_indices: np.ndarray  # (anchor_count, K) int64
    offsets: np.ndarray  # (anchor_count, K, 3) float64, neighbor - anchor

    def __post_init__(self):
        if self.neighbor_indices.shape != (self.anchor_count, self.k):
            raise DataError("neighbor index shape mismatch")
        if self.offsets.shape != (self.anchor_count, self.k, 3):
            raise DataError("offset shape mismatch")


@dataclass(frozen=True)
class NormalField:
    normals: np.ndarray  # (N, 3) float64, unit rows

    def __post_init__(self):
        norms = np.linalg.norm(self.normals, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise DataError("normals must be unit length")


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (0.5 -> 1, -0.5 -> -1)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(raw: RawPointSet, bit_depth: int) -> PointSet:
    """Min-max normalize to the lattice [0, 2^bit_depth - 1] and deduplicate.

    A single isotropic scale (the largest axis extent) is used so the shape's
    aspect ratio survives quantization; flat axes simply map to a constant.
    """
    if not 1 <= bit_depth <= 16:
        raise DataError("bit depth must be in [1, 16]")
    coords = raw.coords
    lo = coords.min(axis=0)
    extent = float((coords.max(axis=0) - lo).max())
    if extent == 0.0:
        raise DataError("degenerate bounding box: all points identical")
    scale = ((1 << bit_depth) - 1) / extent
    q = round_half_away((coords - lo) * scale).astype(np.int64)
    return PointSet(lattice.unique_rows(q), bit_depth)


def _tie_sorted(dists: np.ndarray, inds: np.ndarray, ref_keys: np.ndarray, k: int) -> np.ndarray:
    """Take the first k candidates per row under (distance, lex key, index)."""
    n_q, width = inds.shape
    rows = np.repeat(np.arange(n_q), width)
    order = np.lexsort((inds.ravel(), ref_keys[inds].ravel(), dists.ravel(), rows))
    return inds.ravel()[order].reshape(n_q, width)[:, :k]


def knn(query: PointSet | np.ndarray, reference: PointSet | np.ndarray, k: int) -> NeighborGraph:
    """K nearest reference points per query point.

    Ties are broken by (distance, lexicographic coordinate, index) so graphs
    are reproducible across platforms. Backed by a k-d tree with a widening
    re-query whenever ties straddle the candidate cutoff.
    """
    qc = query.coords if isinstance(query, PointSet) else np.asarray(query, dtype=np.int64)
    rc = reference.coords if isinstance(reference, PointSet) else np.asarray(reference, dtype=np.int64)
    n_ref = len(rc)
    if k > n_ref:
        raise DataError(f"k={k} exceeds reference size {n_ref}")
    tree = cKDTree(rc.astype(np.float64))
    ref_keys = lattice.pack(rc)

    k_fetch = min(n_ref, k + 8)
    qf = qc.astype(np.float64)
    dists, inds = tree.query(qf, k=k_fetch)
    if k_fetch == 1:
        dists = dists[:, None]
        inds = inds[:, None]
    inds = inds.astype(np.int64)

    out_idx = _tie_sorted(dists, inds, ref_keys, k)
    # Ties straddling the fetched window need a wider re-query.
    if k_fetch > k:
        unsafe = np.flatnonzero(dists[:, k - 1] >= dists[:, k_fetch - 1])
    else:
        unsafe = np.array([], dtype=np.int64)
    for i in unsafe:
        kk = k_fetch
        while True:
            kk = min(n_ref, kk * 2)
            d_i, c_i = tree.query(qf[i], k=kk)
            d_i, c_i = np.atleast_1d(d_i), np.atleast_1d(c_i).astype(np.int64)
            if kk == n_ref or d_i[k - 1] < d_i[-1]:
                break
        out_idx[i] = _tie_sorted(d_i[None, :], c_i[None, :], ref_keys, k)[0]

    offsets = rc[out_idx].astype(np.float64) - qf[:, None, :]
    return NeighborGraph(len(qc), k, out_idx, offsets)


def knn_brute_force(query_coords: np.ndarray, reference_coords: np.ndarray, k: int) -> np.ndarray:
    """Exhaustive O(N^2) reference implementation of the knn ordering."""
    qc = np.asarray(query_coords, dtype=np.float64)
    rc = np.asarray(reference_coords, dtype=np.float64)
    keys = lattice.pack(reference_coords)
    out = np.empty((len(qc), k), dtype=np.int64)
    for i, q in enumerate(qc):
        d_sq = ((rc - q) ** 2).sum(axis=1)
        order = np.lexsort((np.arange(len(rc)), keys, d_sq))
        out[i] = order[:k]
    return out


def build_local_graph(points: PointSet, k: int) -> NeighborGraph:
    """Neighbour graph anchored at the points themselves (self included)."""
    return knn(points, points, k)


def estimate_normals(points: PointSet, k: int = 16) -> NormalField:
    """Per-point normals from the smallest-eigenvalue direction of the k-NN
    covariance; sign fixed so the largest-magnitude component is positive."""
    if k < 3:
        raise DataError("normal estimation requires k >= 3")
    graph = knn(points, points, k)
    nb = points.coords[graph.neighbor_indices].astype(np.float64)  # (N, k, 3)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # eigenvector of the smallest eigenvalue
    dominant = np.argmax(np.abs(normals), axis=1)
    signs = np.sign(normals[np.arange(len(normals)), dominant])
    signs[signs == 0] = 1.0
    normals = normals * signs[:, None]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return NormalField(normals)


def trilinear_plan(tensor_coords: np.ndarray, stride: int, queries: np.ndarray):
    """Corner rows and weights for trilinear interpolation at the queries.

    Returns (rows, weights): (Q, 8) row indices into tensor_coords (-1 where
    the lattice cell is unoccupied; such corners contribute zero feature mass
    and their weight is *not* redistributed) and the matching (Q, 8) weights.
    """
    q = np.asarray(queries, dtype=np.float64) / stride
    base = np.floor(q)
    frac = q - base
    keys = np.sort(lattice.pack(tensor_coords))
    rows = np.empty((len(q), 8), dtype=np.int64)
    weights = np.empty((len(q), 8), dtype=np.float64)
    corner = 0
    for dx in (0, 1):
        wx = 1.0 - frac[:, 0] if dx == 0 else frac[:, 0]
        for dy in (0, 1):
            wy = 1.0 - frac[:, 1] if dy == 0 else frac[:, 1]
            for dz in (0, 1):
                wz = 1.0 - frac[:, 2] if dz == 0 else frac[:, 2]
                cell = (base + np.array([dx, dy, dz])).astype(np.int64) * stride
                rows[:, corner] = lattice.lookup_rows(cell, keys)
                weights[:, corner] = wx * wy * wz
                corner += 1
    # Map sorted-key positions back to tensor row order.
    order = np.argsort(lattice.pack(tensor_coords), kind="stable")
    hit = rows >= 0
    rows[hit] = order[rows[hit]]
    return rows, weights


def trilinear_interpolate(tensor_coords: np.ndarray, features: np.ndarray, stride: int,
                          queries: np.ndarray) -> np.ndarray:
    """Interpolate sparse voxel features at real-valued query positions.

    Queries live in the tensor's native coordinate units. Missing corners
    contribute zeros with their trilinear weight retained, so the result decays
    toward zero at the edge of support rather than being renormalized.
    """
    rows, weights = trilinear_plan(tensor_coords, stride, queries)
    out = np.zeros((len(queries), features.shape[1]), dtype=np.float64)
    for corner in range(8):
        r = rows[:, corner]
        hit = r >= 0
        if hit.any():
            out[hit] += weights[hit, corner, None] * features[r[hit]]
    return out
