"""Carry-free integer range coder: 64-bit state, 32-bit renormalization.

Symbols are driven by cumulative frequency tables with total 2^16. The
encoder maintains [low, low + range) inside 64 bits; whenever the top 32 bits
of the interval endpoints agree they are emitted, and near-underflow intervals
are clamped to the next 16-bit boundary, which keeps the coder carry-free.
Identical tables on both sides give bit-exact round trips.
"""

from __future__ import annotations

from .errors import DecodeError

MASK = (1 << 64) - 1
TOP = 1 << 32  # emit unit boundary
BOT = 1 << 16  # minimum usable range; equals the CDF total
TOTAL_BITS = 16
TOTAL = 1 << TOTAL_BITS


class RangeEncoder:
    """Single-use streaming encoder."""

    def __init__(self):
        self.low = 0
        self.range = MASK
        self.out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int) -> None:
        """Encode a symbol occupying [cum_lo, cum_hi) of the 2^16 total."""
        r = self.range // TOTAL
        self.low = (self.low + cum_lo * r) & MASK
        self.range = (cum_hi - cum_lo) * r
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass  # top 32 bits settled: emit them
            elif self.range < BOT:
                # Interval straddles an emit boundary but is tiny: clamp it to
                # the next 16-bit boundary (carry-free underflow handling).
                self.range = (-self.low) & (BOT - 1)
            else:
                break
            self.out += int((self.low >> 32) & 0xFFFFFFFF).to_bytes(4, "big")
            self.low = (self.low << 32) & MASK
            self.range = (self.range << 32) & MASK

    def finish(self) -> bytes:
        self.out += int((self.low >> 32) & 0xFFFFFFFF).to_bytes(4, "big")
        self.out += int(self.low & 0xFFFFFFFF).to_bytes(4, "big")
        return bytes(self.out)


class RangeDecoder:
    """Single-use streaming decoder over an encoded byte string."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = MASK
        self.code = 0
        for _ in range(2):
            self.code = ((self.code << 32) | self._pull()) & MASK

    def _pull(self) -> int:
        if self.pos + 4 > len(self.data):
            raise DecodeError("range coder input exhausted")
        word = int.from_bytes(self.data[self.pos:self.pos + 4], "big")
        self.pos += 4
        return word

    def decode_target(self) -> int:
        """Cumulative-frequency position of the next symbol."""
        r = self.range // TOTAL
        target = (self.code - self.low) // r
        return min(int(target), TOTAL - 1)

    def advance(self, cum_lo: int, cum_hi: int) -> None:
        """Consume the symbol whose cumulative interval was identified."""
        r = self.range // TOTAL
        self.low = (self.low + cum_lo * r) & MASK
        self.range = (cum_hi - cum_lo) * r
        while True:
            if (self.low ^ (self.low + self.range)) < TOP:
                pass
            elif self.range < BOT:
                self.range = (-self.low) & (BOT - 1)
            else:
                break
            self.code = ((self.code << 32) | self._pull()) & MASK
            self.low = (self.low << 32) & MASK
            self.range = (self.range << 32) & MASK
