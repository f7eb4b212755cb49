"""Sparse 3-D tensors and convolution over explicit kernel maps.

Coordinates are kept in original-lattice units with an explicit stride, so
tensors at different scales align without rescaling. Stride-1 convolutions
follow the submanifold convention (output support equals input support);
stride-2 convolutions downsample support; transposed convolutions emit every
child voxel in the kernel footprint (generative upsampling).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import lattice
from .errors import DataError


@dataclass(frozen=True)
class SparseTensor:
    """Unique lex-sorted integer coords with aligned feature rows."""

    coords: np.ndarray  # (M, 3) int64, every component divisible by stride
    features: np.ndarray  # (M, C) float64
    stride: int

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int64)
        f = np.asarray(self.features, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise DataError("coords must be (M, 3)")
        if f.ndim != 2 or f.shape[0] != c.shape[0]:
            raise DataError("feature rows must align with coords")
        if c.size and np.any(c % self.stride):
            raise DataError(f"coords not divisible by stride {self.stride}")
        if not lattice.is_sorted_unique(c):
            raise DataError("coords must be unique and lexicographically sorted")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class DenseKernel:
    """k^3 x Cin x Cout weights plus bias; offset axis in lexicographic order."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise DataError("kernel entries must be finite")
        if self.weights.shape[2] != self.bias.shape[0]:
            raise DataError("bias width must match output channels")


@dataclass(frozen=True)
class KernelMap:
    """Per-offset (input_row, output_row) index pairs.

    Within each offset the input rows and output rows are individually unique
    (coordinates are unique), so fancy-indexed accumulation per offset is exact.
    Pairs are ordered offset-major, then by output row.
    """

    kernel_size: int
    offsets: np.ndarray  # (k^3, 3) int64
    pairs: tuple  # per offset: (in_rows int64, out_rows int64)
    m_out: int


def kernel_offsets(kernel_size: int, step: int = 1) -> np.ndarray:
    """Kernel tap offsets in lexicographic order, scaled by ``step``.

    Odd sizes are centred ({-r..r}); even sizes are causal ({0..k-1}), which is
    the natural footprint for stride-2 down/up sampling.
    """
    if kernel_size % 2:
        r = (kernel_size - 1) // 2
        rng = range(-r, r + 1)
    else:
        rng = range(kernel_size)
    return np.array(list(product(rng, rng, rng)), dtype=np.int64) * step


def _pairs_for_offsets(in_coords, out_coords, offsets):
    in_keys = lattice.pack(in_coords)
    order = np.argsort(in_keys, kind="stable")
    keys_sorted = in_keys[order]
    pairs = []
    for delta in offsets:
        tap = out_coords + delta
        rows = lattice.lookup_rows(tap, keys_sorted)
        hit = np.flatnonzero(rows >= 0)
        pairs.append((order[rows[hit]], hit.astype(np.int64)))
    return tuple(pairs)


def submanifold_map(coords: np.ndarray, kernel_size: int, step: int) -> KernelMap:
    """Odd-kernel map with output support equal to input support."""
    offsets = kernel_offsets(kernel_size, step)
    pairs = _pairs_for_offsets(coords, coords, offsets)
    return KernelMap(kernel_size, offsets, pairs, len(coords))


def down_map(coords: np.ndarray, stride_in: int, kernel_size: int = 2):
    """Stride-2 convolution map (output = coords snapped to twice the stride)."""
    out = lattice.downsample(coords, 2 * stride_in)
    offsets = kernel_offsets(kernel_size, stride_in)
    pairs = _pairs_for_offsets(coords, out, offsets)
    return out, KernelMap(kernel_size, offsets, pairs, len(out))


def up_map(coords: np.ndarray, stride_in: int, kernel_size: int = 2):
    """Transposed map emitting all children in the footprint at half stride."""
    if stride_in % 2:
        raise DataError("input stride must be divisible by the upsampling factor")
    s_out = stride_in // 2
    offsets = kernel_offsets(kernel_size, s_out)
    children = (np.asarray(coords)[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    out = lattice.unique_rows(children)
    out_keys = lattice.pack(out)
    pairs = []
    for delta in offsets:
        child = coords + delta
        rows = lattice.lookup_rows(child, out_keys)
        order = np.argsort(rows, kind="stable")
        pairs.append((order.astype(np.int64), rows[order]))
    return out, KernelMap(kernel_size, offsets, tuple(pairs), len(out))


def build_kernel_map(input_tensor: SparseTensor, output_coords: np.ndarray,
                     kernel_size: int, dilation_stride: int = 1) -> KernelMap:
    """Gather/scatter plan for an odd-sized kernel at the given tap spacing."""
    if kernel_size % 2 == 0:
        raise DataError("build_kernel_map expects an odd kernel size")
    out = np.asarray(output_coords, dtype=np.int64)
    if not lattice.is_sorted_unique(out):
        raise DataError("output coords must be unique and sorted")
    offsets = kernel_offsets(kernel_size, dilation_stride)
    pairs = _pairs_for_offsets(input_tensor.coords, out, offsets)
    return KernelMap(kernel_size, offsets, pairs, len(out))


def downsample_map(input_tensor: SparseTensor, kernel_size: int = 2):
    """Kernel map for a stride-2 convolution on a sparse tensor."""
    return down_map(input_tensor.coords, input_tensor.stride, kernel_size)


def upsample_map(input_tensor: SparseTensor, kernel_size: int = 2):
    """Transposed kernel map for up-stride-2 on a sparse tensor."""
    return up_map(input_tensor.coords, input_tensor.stride, kernel_size)


def apply_kernel_map(features: np.ndarray, kernel: DenseKernel, kmap: KernelMap) -> np.ndarray:
    if kernel.weights.shape[0] != len(kmap.offsets):
        raise DataError("kernel footprint does not match map")
    if kernel.weights.shape[1] != features.shape[1]:
        raise DataError(f"kernel expects {kernel.weights.shape[1]} input channels, "
                        f"got {features.shape[1]}")
    out = np.zeros((kmap.m_out, kernel.weights.shape[2]), dtype=np.float64)
    for o, (ii, oi) in enumerate(kmap.pairs):
        if len(ii):
            out[oi] += features[ii] @ kernel.weights[o]
    out += kernel.bias
    return out


def sparse_conv(tensor: SparseTensor, kernel: DenseKernel, stride: int = 1) -> SparseTensor:
    """Sparse convolution; stride 1 is submanifold, stride 2 downsamples."""
    if stride == 1:
        k = round(len(kernel.weights) ** (1 / 3))
        kmap = build_kernel_map(tensor, tensor.coords, k, tensor.stride)
        feats = apply_kernel_map(tensor.features, kernel, kmap)
        return SparseTensor(tensor.coords, feats, tensor.stride)
    if stride == 2:
        out_coords, kmap = downsample_map(tensor, round(len(kernel.weights) ** (1 / 3)))
        feats = apply_kernel_map(tensor.features, kernel, kmap)
        return SparseTensor(out_coords, feats, tensor.stride * 2)
    raise DataError("only strides 1 and 2 are supported")


def transposed_sparse_conv(tensor: SparseTensor, kernel: DenseKernel,
                           up_stride: int = 2) -> SparseTensor:
    """Generative transposed convolution doubling resolution."""
    if up_stride != 2:
        raise DataError("only up_stride 2 is supported")
    out_coords, kmap = upsample_map(tensor, round(len(kernel.weights) ** (1 / 3)))
    feats = apply_kernel_map(tensor.features, kernel, kmap)
    return SparseTensor(out_coords, feats, tensor.stride // 2)


def prune(tensor: SparseTensor, keep: np.ndarray) -> SparseTensor:
    """Retain rows where the mask is true; ordering preserved."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (len(tensor),):
        raise DataError("mask length must equal tensor rows")
    return SparseTensor(tensor.coords[keep], tensor.features[keep], tensor.stride)
