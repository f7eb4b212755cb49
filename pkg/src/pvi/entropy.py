"""Learned factorized entropy model and feature payload coding.

Each latent channel carries an independent monotone CDF c(v) built from a
three-layer univariate network (widths 1-3-3-1) with softplus-positive
weights and tanh-gated skips, squashed by a final sigmoid. Interval masses
c(v + 0.5) - c(v - 0.5) provide both the differentiable rate estimate used in
training and the integer CDF tables driving the range coder.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import DataError, DecodeError
from .nn import ParameterStore
from .rangecoder import RangeDecoder, RangeEncoder, TOTAL

_WIDTHS = (1, 3, 3, 1)
MASS_FLOOR = 1e-9
LOG2 = float(np.log(2.0))

# Uniform byte table used for escape-coded raw values.
_BYTE_CUM = [(i * (TOTAL // 256), (i + 1) * (TOTAL // 256)) for i in range(256)]


class FactorizedPrior:
    """Per-channel cumulative model; parameters live in a ParameterStore."""

    def __init__(self, store: ParameterStore, name: str, channels: int,
                 rng: np.random.Generator, init_scale: float = 10.0):
        self.channels = channels
        self.layers = []  # per channel: list of (H, b, a) parameter triples
        n_layers = len(_WIDTHS) - 1
        scale = init_scale ** (1.0 / n_layers)
        for ch in range(channels):
            triples = []
            for i in range(n_layers):
                w_in, w_out = _WIDTHS[i], _WIDTHS[i + 1]
                h0 = np.log(np.expm1(1.0 / scale / w_out))
                h = store.add(f"{name}.ch{ch}.h{i}", np.full((w_in, w_out), h0))
                b = store.add(f"{name}.ch{ch}.b{i}", rng.uniform(-0.5, 0.5, size=w_out))
                a = (store.add(f"{name}.ch{ch}.a{i}", np.zeros(w_out))
                     if i + 1 < n_layers else None)
                triples.append((h, b, a))
            self.layers.append(triples)

    def cdf(self, values: Value | np.ndarray, channel: int) -> Value:
        """Evaluate c(v) for a column of values on one channel."""
        x = ad.wrap(values)
        if x.data.ndim == 1:
            x = ad.reshape(x, (-1, 1))
        for h, b, a in self.layers[channel]:
            x = ad.add(ad.matmul(x, ad.softplus(h.value)), b.value)
            if a is not None:
                x = ad.add(x, ad.mul(ad.tanh(a.value), ad.tanh(x)))
        return ad.sigmoid(x)

    def interval_mass(self, values: Value | np.ndarray, channel: int) -> Value:
        """Differentiable pmf mass of the unit interval around each value."""
        v = ad.wrap(values)
        if v.data.ndim == 1:
            v = ad.reshape(v, (-1, 1))
        upper = self.cdf(ad.add(v, 0.5), channel)
        lower = self.cdf(ad.add(v, -0.5), channel)
        return ad.clamp_min(ad.sub(upper, lower), MASS_FLOOR)

    def pmf_array(self, values: np.ndarray, channel: int) -> np.ndarray:
        return self.interval_mass(np.asarray(values, dtype=np.float64), channel).data.ravel()


def rate_bits(y: Value, prior: FactorizedPrior) -> Value:
    """Total estimated bits for an (M, C) latent under the factorized prior."""
    channels = y.data.shape[1]
    if channels != prior.channels:
        raise DataError("latent channel count does not match prior")
    total = None
    for ch in range(channels):
        mass = prior.interval_mass(ad.slice_cols(y, ch, ch + 1), ch)
        bits = ad.scale(ad.vsum(ad.log(mass)), -1.0 / LOG2)
        total = bits if total is None else ad.add(total, bits)
    return total


def quantize_latent(y: np.ndarray) -> np.ndarray:
    """Element-wise round half away from zero to integer symbols."""
    return (np.sign(y) * np.floor(np.abs(y) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class CdfTable:
    """Integer CDF per channel: in-range symbols plus a final escape slot."""

    v_min: np.ndarray  # (C,) int
    v_max: np.ndarray  # (C,) int
    cum: list  # per channel: list[int] of length (symbols + 2), 0 .. 2^16

    def symbol_count(self, ch: int) -> int:
        return int(self.v_max[ch] - self.v_min[ch] + 2)  # incl. escape

    def counts(self, ch: int) -> np.ndarray:
        return np.diff(np.asarray(self.cum[ch], dtype=np.int64))


def quantize_pmf(masses: np.ndarray) -> np.ndarray:
    """Deterministically quantize masses to integer counts summing to 2^16.

    Every slot keeps a count of at least 1 so any symbol stays codable; the
    residual after rounding is absorbed by the largest bin (ties: first).
    """
    masses = np.asarray(masses, dtype=np.float64)
    if masses.ndim != 1 or len(masses) < 1 or len(masses) > TOTAL:
        raise DataError("bad pmf size")
    masses = np.maximum(masses, 0.0)
    s = masses.sum()
    masses = masses / s if s > 0 else np.full(len(masses), 1.0 / len(masses))
    counts = np.maximum(1, np.floor(masses * TOTAL + 0.5).astype(np.int64))
    diff = TOTAL - counts.sum()
    while diff != 0:
        j = int(np.argmax(counts))
        take = max(diff, 1 - counts[j]) if diff < 0 else diff
        counts[j] += take
        diff -= take
    return counts


def build_cdf_tables(prior: FactorizedPrior, v_min, v_max) -> CdfTable:
    """Tables for the range coder from the continuous prior.

    The escape slot receives the tail mass outside [v_min, v_max]; symbols at
    least 1/2^16 each by construction.
    """
    v_min = np.asarray(v_min, dtype=np.int64)
    v_max = np.asarray(v_max, dtype=np.int64)
    if v_min.shape != (prior.channels,) or v_max.shape != (prior.channels,):
        raise DataError("bounds must have one entry per channel")
    if np.any(v_max < v_min):
        raise DataError("empty support range")
    cum = []
    for ch in range(prior.channels):
        sym = np.arange(v_min[ch], v_max[ch] + 1, dtype=np.float64)
        pmf = prior.pmf_array(sym, ch)
        lo_tail = float(self_cdf_scalar(prior, v_min[ch] - 0.5, ch))
        hi_tail = 1.0 - float(self_cdf_scalar(prior, v_max[ch] + 0.5, ch))
        masses = np.concatenate([pmf, [max(lo_tail + hi_tail, MASS_FLOOR)]])
        counts = quantize_pmf(masses)
        cum.append([0] + np.cumsum(counts).tolist())
    return CdfTable(v_min, v_max, cum)


def self_cdf_scalar(prior: FactorizedPrior, v: float, channel: int) -> float:
    return float(prior.cdf(np.array([v]), channel).data.ravel()[0])


def table_from_pmf(masses: np.ndarray, v_min: int) -> CdfTable:
    """Single-channel table from an explicit pmf (used for empirical coding)."""
    masses = np.asarray(masses, dtype=np.float64)
    counts = quantize_pmf(np.concatenate([masses, [MASS_FLOOR]]))
    cum = [[0] + np.cumsum(counts).tolist()]
    return CdfTable(np.array([v_min]), np.array([v_min + len(masses) - 1]), cum)


def range_encode(symbols, table: CdfTable, channel_ids) -> bytes:
    """Entropy-code integer symbols; out-of-range values take the escape path
    (escape slot followed by the raw value as four bytes, two's complement)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    channel_ids = np.asarray(channel_ids, dtype=np.int64)
    if symbols.shape != channel_ids.shape:
        raise DataError("symbols and channel ids must align")
    lo = table.v_min.tolist()
    hi = table.v_max.tolist()
    enc = RangeEncoder()
    for s, ch in zip(symbols.tolist(), channel_ids.tolist()):
        cum = table.cum[ch]
        if lo[ch] <= s <= hi[ch]:
            j = s - lo[ch]
            enc.encode(cum[j], cum[j + 1])
        else:
            j = hi[ch] - lo[ch] + 1  # escape slot
            enc.encode(cum[j], cum[j + 1])
            raw = s & 0xFFFFFFFF
            for shift in (24, 16, 8, 0):
                enc.encode(*_BYTE_CUM[(raw >> shift) & 0xFF])
    return enc.finish()


def range_decode(data: bytes, table: CdfTable, channel_ids, count: int) -> np.ndarray:
    """Exact inverse of range_encode for ``count`` symbols."""
    channel_ids = np.asarray(channel_ids, dtype=np.int64)
    if len(channel_ids) != count:
        raise DataError("channel ids must cover every symbol")
    lo = table.v_min.tolist()
    hi = table.v_max.tolist()
    dec = RangeDecoder(data)
    out = [0] * count
    ch_list = channel_ids.tolist()
    for i in range(count):
        ch = ch_list[i]
        cum = table.cum[ch]
        target = dec.decode_target()
        j = bisect_right(cum, target) - 1
        if j >= len(cum) - 1:
            raise DecodeError("range decoder desynchronized")
        dec.advance(cum[j], cum[j + 1])
        if j == hi[ch] - lo[ch] + 1:  # escape slot
            raw = 0
            for _ in range(4):
                t = dec.decode_target()
                b = min(t // (TOTAL // 256), 255)
                dec.advance(*_BYTE_CUM[b])
                raw = (raw << 8) | b
            out[i] = raw - (1 << 32) if raw >= (1 << 31) else raw
        else:
            out[i] = lo[ch] + j
    return np.asarray(out, dtype=np.int64)


def pack_payload(symbols: np.ndarray, table: CdfTable, channel_ids) -> bytes:
    """Self-contained payload: per-channel i16 bounds, then the coded body."""
    head = b"".join(struct.pack("<hh", int(table.v_min[c]), int(table.v_max[c]))
                    for c in range(len(table.v_min)))
    return head + range_encode(symbols, table, channel_ids)


def unpack_payload(blob: bytes, prior: FactorizedPrior, channel_ids, count: int) -> np.ndarray:
    n = prior.channels
    if len(blob) < 4 * n:
        raise DecodeError("feature payload too short for channel bounds")
    bounds = struct.unpack_from(f"<{2 * n}h", blob, 0)
    v_min = np.array(bounds[0::2], dtype=np.int64)
    v_max = np.array(bounds[1::2], dtype=np.int64)
    table = build_cdf_tables(prior, v_min, v_max)
    return range_decode(blob[4 * n:], table, channel_ids, count)


def latent_bounds(symbols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel [min, max] clipped to i16 for the wire format."""
    if symbols.size == 0:
        c = symbols.shape[1]
        return np.zeros(c, dtype=np.int64), np.zeros(c, dtype=np.int64)
    v_min = np.clip(symbols.min(axis=0), -32768, 32767).astype(np.int64)
    v_max = np.clip(symbols.max(axis=0), -32768, 32767).astype(np.int64)
    return v_min, np.maximum(v_max, v_min)
