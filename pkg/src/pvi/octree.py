"""Lossless breadth-first octree coder for voxel coordinates.

Each internal node contributes one occupancy byte: bit b is set iff child b is
occupied, where b = (x_bit << 2) | (y_bit << 1) | z_bit and coordinate bits
are consumed most significant first. Every internal node has at least one
occupied child, so zero bytes never appear in a valid payload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lattice
from .errors import DataError, DecodeError


@dataclass(frozen=True)
class OctreePayload:
    depth: int
    occupancy: bytes

    def serialize(self) -> bytes:
        return bytes([self.depth]) + self.occupancy

    @classmethod
    def parse(cls, blob: bytes) -> "OctreePayload":
        if len(blob) < 1:
            raise DecodeError("empty octree payload")
        return cls(blob[0], blob[1:])


def _morton_keys(c: np.ndarray, depth: int) -> np.ndarray:
    """Interleaved child-index path (x highest bit), MSB level first."""
    key = np.zeros(len(c), dtype=np.int64)
    for shift in range(depth):
        bits = (((c[:, 0] >> shift) & 1) << 2 | ((c[:, 1] >> shift) & 1) << 1
                | ((c[:, 2] >> shift) & 1))
        key |= bits << (3 * shift)
    return key


def octree_encode(coords: np.ndarray, depth: int) -> OctreePayload:
    """Encode unique integer coordinates in [0, 2^depth - 1]^3."""
    if not 1 <= depth <= 16:
        raise DataError("octree depth must be in [1, 16]")
    c = lattice.unique_rows(np.asarray(coords, dtype=np.int64))
    if len(c) == 0:
        return OctreePayload(depth, b"")
    if c.min() < 0 or c.max() >= (1 << depth):
        raise DataError(f"coordinate out of range for depth {depth}")

    # Breadth-first node order equals ascending Morton order of the node
    # paths, so sorting once by the interleaved key makes every level's node
    # groups appear exactly in emission order.
    keys = np.sort(_morton_keys(c, depth))
    out = bytearray()
    for level in range(depth):
        node = keys >> (3 * (depth - level))
        child = (keys >> (3 * (depth - 1 - level))) & 7
        uniq, inverse = np.unique(node, return_inverse=True)
        masks = np.zeros(len(uniq), dtype=np.int64)
        np.bitwise_or.at(masks, inverse, np.int64(1) << child)
        out.extend(masks.astype(np.uint8).tobytes())
    return OctreePayload(depth, bytes(out))


def octree_decode(payload: OctreePayload) -> np.ndarray:
    """Exact inverse of octree_encode; returns lex-sorted coordinates."""
    depth = payload.depth
    if not 1 <= depth <= 16:
        raise DecodeError("octree depth out of range")
    occ = np.frombuffer(payload.occupancy, dtype=np.uint8)
    if len(occ) == 0:
        return np.zeros((0, 3), dtype=np.int64)

    child_bits = np.arange(8, dtype=np.uint8)
    child_xyz = np.stack([(child_bits >> 2) & 1, (child_bits >> 1) & 1, child_bits & 1],
                         axis=1).astype(np.int64)

    nodes = np.zeros((1, 3), dtype=np.int64)  # prefixes at the current level
    pos = 0
    for _level in range(depth):
        count = len(nodes)
        if pos + count > len(occ):
            raise DecodeError("truncated octree payload")
        masks = occ[pos:pos + count]
        pos += count
        if np.any(masks == 0):
            raise DecodeError("octree payload contains an empty internal node")
        present = (masks[:, None] & (1 << child_bits)[None, :]) > 0
        node_idx, child_idx = np.nonzero(present)
        nodes = (nodes[node_idx] << 1) + child_xyz[child_idx]
    if pos != len(occ):
        raise DecodeError("trailing bytes in octree payload")
    return lattice.lexsort_rows(nodes)
