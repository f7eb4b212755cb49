"""Bitstream container: header, routing weights, octree coordinates and
entropy-coded latent features, plus the compress/decompress orchestration.

Layout (all integers little-endian):

    magic "PVI1" | version u16 | bit_depth u8 | octree_depth u8 |
    latent_stride u8 | n_experts u8 | stages u8 | occupied_counts u32 x 3 |
    latent_channels u16 | routing length u16 | octree length u32 |
    feature length u32 | per-channel CDF bounds (i16 v_min, i16 v_max) x C

followed by the routing payload (per stage, n u16 fixed-point weights), the
octree payload (depth u8 + breadth-first occupancy bytes) and the range-coded
feature body. The CDF tables themselves are rebuilt from the shared prior on
both sides, so only the per-channel symbol bounds travel in the header.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import entropy, octree
from .errors import DecodeError
from .geometry import PointSet
from .model import STAGES, LatentCode, PviModel
from .octree import OctreePayload

MAGIC = b"PVI1"
VERSION = 1
_FIXED = "<4sHBBBBB3IHHII"
_FIXED_SIZE = struct.calcsize(_FIXED)


@dataclass(frozen=True)
class ContainerHeader:
    bit_depth: int
    octree_depth: int
    latent_stride: int
    n_experts: int
    stages: int
    occupied_counts: tuple
    latent_channels: int
    routing_len: int
    octree_len: int
    feature_len: int
    bounds: tuple  # ((v_min, v_max), ...) per channel

    def serialize(self) -> bytes:
        head = struct.pack(_FIXED, MAGIC, VERSION, self.bit_depth, self.octree_depth,
                           self.latent_stride, self.n_experts, self.stages,
                           *self.occupied_counts, self.latent_channels,
                           self.routing_len, self.octree_len, self.feature_len)
        tail = b"".join(struct.pack("<hh", lo, hi) for lo, hi in self.bounds)
        return head + tail

    @classmethod
    def parse(cls, blob: bytes) -> tuple["ContainerHeader", int]:
        if len(blob) < _FIXED_SIZE:
            raise DecodeError("stream shorter than fixed header")
        (magic, version, bit_depth, octree_depth, latent_stride, n_experts, stages,
         c1, c2, c3, latent_channels, routing_len, octree_len,
         feature_len) = struct.unpack_from(_FIXED, blob, 0)
        if magic != MAGIC:
            raise DecodeError("bad container magic")
        if version != VERSION:
            raise DecodeError(f"unsupported container version {version}")
        if stages != STAGES:
            raise DecodeError("unexpected stage count")
        end = _FIXED_SIZE + 4 * latent_channels
        if len(blob) < end:
            raise DecodeError("stream shorter than channel bounds")
        raw = struct.unpack_from(f"<{2 * latent_channels}h", blob, _FIXED_SIZE)
        bounds = tuple((raw[2 * i], raw[2 * i + 1]) for i in range(latent_channels))
        header = cls(bit_depth, octree_depth, latent_stride, n_experts, stages,
                     (c1, c2, c3), latent_channels, routing_len, octree_len,
                     feature_len, bounds)
        return header, end


def _routing_payload(routing_q: np.ndarray) -> bytes:
    return routing_q.astype("<u2").tobytes(order="C")


def _parse_routing(blob: bytes, stages: int, n: int) -> np.ndarray:
    if len(blob) != stages * n * 2:
        raise DecodeError("routing payload length mismatch")
    return np.frombuffer(blob, dtype="<u2").reshape(stages, n).astype(np.uint16)


def compress(cloud: PointSet, model: PviModel, ctx=None) -> bytes:
    """Encode a cloud to a self-contained byte stream."""
    code = model.encode(cloud, ctx)
    return serialize_latent(code, model)


def serialize_latent(code: LatentCode, model: PviModel) -> bytes:
    cfg = model.cfg
    routing = _routing_payload(code.routing_q)

    depth = code.bit_depth - int(np.log2(code.stride))
    tree = octree.octree_encode(code.coords // code.stride, depth).serialize()

    symbols = code.features.reshape(-1)
    channel_ids = np.tile(np.arange(cfg.latent_channels), len(code.features))
    v_min, v_max = entropy.latent_bounds(code.features)
    tables = entropy.build_cdf_tables(model.prior, v_min, v_max)
    body = entropy.range_encode(symbols, tables, channel_ids)

    header = ContainerHeader(code.bit_depth, depth, code.stride, code.routing_q.shape[1],
                             STAGES, tuple(int(c) for c in code.counts),
                             cfg.latent_channels, len(routing), len(tree), len(body),
                             tuple(zip(v_min.tolist(), v_max.tolist())))
    return header.serialize() + routing + tree + body


def parse_latent(blob: bytes, model: PviModel) -> tuple[LatentCode, ContainerHeader]:
    cfg = model.cfg
    header, pos = ContainerHeader.parse(blob)
    if header.latent_channels != cfg.latent_channels:
        raise DecodeError("latent channel mismatch between stream and model")
    if header.n_experts != cfg.experts:
        raise DecodeError("expert count mismatch between stream and model")
    expected = pos + header.routing_len + header.octree_len + header.feature_len
    if expected != len(blob):
        raise DecodeError(f"stream length {len(blob)} does not match header {expected}")
    if any(c == 0 for c in header.occupied_counts) or header.latent_stride < 1:
        raise DecodeError("invalid counts in header")

    routing_q = _parse_routing(blob[pos:pos + header.routing_len], STAGES, header.n_experts)
    pos += header.routing_len
    tree = OctreePayload.parse(blob[pos:pos + header.octree_len])
    if tree.depth != header.octree_depth:
        raise DecodeError("octree depth disagrees with header")
    coords = octree.octree_decode(tree) * header.latent_stride
    if len(coords) == 0:
        raise DecodeError("empty latent support")
    pos += header.octree_len

    count = len(coords) * header.latent_channels
    channel_ids = np.tile(np.arange(header.latent_channels), len(coords))
    v_min = np.array([b[0] for b in header.bounds], dtype=np.int64)
    v_max = np.array([b[1] for b in header.bounds], dtype=np.int64)
    if np.any(v_max < v_min):
        raise DecodeError("invalid channel bounds")
    tables = entropy.build_cdf_tables(model.prior, v_min, v_max)
    symbols = entropy.range_decode(blob[pos:pos + header.feature_len], tables,
                                   channel_ids, count)
    feats = symbols.reshape(len(coords), header.latent_channels)

    code = LatentCode(coords, feats, routing_q, header.occupied_counts,
                      header.bit_depth, header.latent_stride)
    return code, header


def decompress(blob: bytes, model: PviModel) -> PointSet:
    """Decode a byte stream; enforces the transmitted point-count contract."""
    code, header = parse_latent(blob, model)
    result = model.decode(code)
    if result.warnings:
        raise DecodeError("count contract violated: " + "; ".join(result.warnings))
    if len(result.points) != header.occupied_counts[0]:
        raise DecodeError(f"decoded {len(result.points)} points, "
                          f"header promised {header.occupied_counts[0]}")
    return result.points
