"""Integer-lattice coordinate utilities.

Coordinates are (N, 3) int64 arrays. Packing maps a coordinate triple to a
single int64 key whose natural order equals lexicographic (x, y, z) order,
which makes sorting, dedup and membership tests cheap and deterministic.
"""

from __future__ import annotations

import numpy as np

# 21 bits per axis, biased so moderately negative coordinates (kernel taps
# poking outside the volume) still pack monotonically.
_BIAS = 1 << 20
_AXIS_MAX = (1 << 21) - 1


def pack(coords: np.ndarray) -> np.ndarray:
    """Pack (N, 3) integer coordinates into order-preserving int64 keys."""
    c = np.asarray(coords, dtype=np.int64) + _BIAS
    if c.size and (c.min() < 0 or c.max() > _AXIS_MAX):
        raise ValueError("coordinate out of packable range")
    return (c[:, 0] << 42) | (c[:, 1] << 21) | c[:, 2]


def unpack(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    x = (keys >> 42) & _AXIS_MAX
    y = (keys >> 21) & _AXIS_MAX
    z = keys & _AXIS_MAX
    return np.stack([x, y, z], axis=1) - _BIAS


def lexsort_rows(coords: np.ndarray) -> np.ndarray:
    """Return coords sorted lexicographically by (x, y, z)."""
    return unpack(np.sort(pack(coords)))


def unique_rows(coords: np.ndarray) -> np.ndarray:
    """Deduplicate and lexicographically sort coordinate rows."""
    return unpack(np.unique(pack(coords)))


def is_sorted_unique(coords: np.ndarray) -> bool:
    keys = pack(coords)
    return bool(np.all(keys[1:] > keys[:-1])) if len(keys) > 1 else True


def rows_in(coords: np.ndarray, reference_keys_sorted: np.ndarray) -> np.ndarray:
    """Boolean mask of rows whose coordinates appear in the reference set."""
    keys = pack(coords)
    pos = np.searchsorted(reference_keys_sorted, keys)
    pos = np.minimum(pos, len(reference_keys_sorted) - 1) if len(reference_keys_sorted) else pos
    if len(reference_keys_sorted) == 0:
        return np.zeros(len(keys), dtype=bool)
    return reference_keys_sorted[pos] == keys


def lookup_rows(coords: np.ndarray, reference_keys_sorted: np.ndarray) -> np.ndarray:
    """Row index of each coordinate in the sorted reference, -1 if absent."""
    keys = pack(coords)
    n = len(reference_keys_sorted)
    if n == 0:
        return np.full(len(keys), -1, dtype=np.int64)
    pos = np.searchsorted(reference_keys_sorted, keys)
    pos_c = np.minimum(pos, n - 1)
    hit = reference_keys_sorted[pos_c] == keys
    return np.where(hit, pos_c, -1)


def downsample(coords: np.ndarray, stride: int) -> np.ndarray:
    """Unique coordinates snapped down to multiples of ``stride``."""
    snapped = (np.asarray(coords, dtype=np.int64) // stride) * stride
    return unique_rows(snapped)


def first_row_per_cell(coords_sorted: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Group lex-sorted coords by their stride-cell.

    Returns (cell_coords, representative_rows): the unique downsampled cells in
    lexicographic order and, for each, the index of the lexicographically first
    source row falling in it.
    """
    snapped = (np.asarray(coords_sorted, dtype=np.int64) // stride) * stride
    keys = pack(snapped)
    uniq, first = np.unique(keys, return_index=True)
    return unpack(uniq), first
