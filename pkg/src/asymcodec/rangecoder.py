"""Byte-oriented range coder over static 16-bit frequency tables.

The coder keeps a 56-bit ``low`` register (plus one carry bit) and a range
renormalized to at least 2**48, so the truncation loss per symbol is below
2**-32 bits. Carries are propagated through a cached byte and a run of
pending 0xFF bytes. Everything here is integer arithmetic; payload bytes are
therefore identical on every platform.

The final interval is closed with the shortest value it contains, so an
empty message costs a single byte. The decoder derives the exact expected
payload length from its own state and rejects any payload that differs.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import CodingError, DecodingError

PRECISION = 16
TOTAL = 1 << PRECISION

_WINDOW_BITS = 56
_TOP = 1 << _WINDOW_BITS
_BOTTOM = 1 << (_WINDOW_BITS - 8)
_LOW_MASK = _BOTTOM - 1
_FF_THRESHOLD = 0xFF << (_WINDOW_BITS - 8)
_CODE_BYTES = _WINDOW_BITS // 8


@dataclass(frozen=True, eq=True)
class FrequencyTable:
    """Cumulative counts ``c[0] = 0 < c[1] < ... < c[n] = 2**16``."""

    cumulative: tuple[int, ...]

    def __post_init__(self) -> None:
        c = self.cumulative
        if len(c) < 2 or c[0] != 0 or c[-1] != TOTAL:
            raise CodingError("cumulative table must start at 0 and end at 2**16")
        for a, b in zip(c, c[1:]):
            if b <= a:
                raise CodingError("every symbol needs a count of at least 1")

    @classmethod
    def from_counts(cls, counts: Iterable[int]) -> "FrequencyTable":
        cum = [0]
        for f in counts:
            cum.append(cum[-1] + int(f))
        return cls(tuple(cum))

    @property
    def size(self) -> int:
        return len(self.cumulative) - 1

    def count(self, symbol: int) -> int:
        return self.cumulative[symbol + 1] - self.cumulative[symbol]


@dataclass(frozen=True)
class CodedPayload:
    data: bytes
    symbol_count: int

    def __len__(self) -> int:
        return len(self.data)


def _tail_bytes(rng: int) -> tuple[int, int]:
    """Alignment bits and byte count needed to close an interval of width ``rng``."""
    m = rng.bit_length() - 1
    return m, (_WINDOW_BITS - m + 7) // 8


def encode(symbols: Sequence[int], tables: Sequence[FrequencyTable]) -> CodedPayload:
    if len(symbols) != len(tables):
        raise CodingError(
            f"got {len(symbols)} symbols but {len(tables)} frequency tables"
        )
    out = bytearray()
    low = 0
    rng = _TOP - 1
    cache = 0
    pending = 1  # cached byte plus the 0xFF run behind it

    for i, s in enumerate(symbols):
        cum = tables[i].cumulative
        if not 0 <= s < len(cum) - 1:
            raise CodingError(f"symbol {s} at position {i} is outside the alphabet")
        start = cum[s]
        r = rng >> PRECISION
        low += r * start
        rng = r * (cum[s + 1] - start)
        while rng < _BOTTOM:
            rng <<= 8
            if (low & (_TOP - 1)) < _FF_THRESHOLD or low >= _TOP:
                carry = low >> _WINDOW_BITS
                out.append((cache + carry) & 0xFF)
                if pending > 1:
                    out += bytes([(0xFF + carry) & 0xFF]) * (pending - 1)
                cache = (low >> (_WINDOW_BITS - 8)) & 0xFF
                pending = 0
            pending += 1
            low = (low & _LOW_MASK) << 8

    m, n = _tail_bytes(rng)
    low = ((low + (1 << m) - 1) >> m) << m
    for _ in range(n + 1):
        if (low & (_TOP - 1)) < _FF_THRESHOLD or low >= _TOP:
            carry = low >> _WINDOW_BITS
            out.append((cache + carry) & 0xFF)
            if pending > 1:
                out += bytes([(0xFF + carry) & 0xFF]) * (pending - 1)
            cache = (low >> (_WINDOW_BITS - 8)) & 0xFF
            pending = 0
        pending += 1
        low = (low & _LOW_MASK) << 8

    # The interval starts inside [0, 1), so the leading byte is always zero.
    assert out[0] == 0
    return CodedPayload(bytes(out[1:]), len(symbols))


class StreamDecoder:
    """Incremental decoder, for callers that learn each table only after earlier symbols."""

    def __init__(self, data: bytes) -> None:
        self._size = len(data)
        self._padded = data + bytes(_CODE_BYTES)
        self._code = int.from_bytes(self._padded[:_CODE_BYTES], "big")
        self._pos = _CODE_BYTES
        self._rng = _TOP - 1
        self._shifts = 0
        self.decoded = 0

    def decode(self, tables: Sequence[FrequencyTable]) -> list[int]:
        padded, size = self._padded, self._size
        code, pos, rng, shifts = self._code, self._pos, self._rng, self._shifts
        out: list[int] = []
        append = out.append
        for table in tables:
            cum = table.cumulative
            r = rng >> PRECISION
            q = code // r
            if q >= TOTAL:
                raise DecodingError("code value escaped the coding interval")
            s = bisect_right(cum, q) - 1
            start = cum[s]
            code -= r * start
            rng = r * (cum[s + 1] - start)
            while rng < _BOTTOM:
                rng <<= 8
                if pos < size:
                    code = (code << 8) | padded[pos]
                else:
                    code <<= 8
                pos += 1
                shifts += 1
            append(s)
        self._code, self._pos, self._rng, self._shifts = code, pos, rng, shifts
        self.decoded += len(out)
        return out

    def finish(self) -> None:
        """Check that the payload length is exactly what the decoded symbols imply."""
        expected = self._shifts + _tail_bytes(self._rng)[1]
        if expected != self._size:
            raise DecodingError(
                f"payload is {self._size} bytes but the decoded stream implies {expected}"
            )


def decode(payload: CodedPayload, tables: Sequence[FrequencyTable]) -> list[int]:
    if payload.symbol_count != len(tables):
        raise DecodingError(
            f"payload holds {payload.symbol_count} symbols but "
            f"{len(tables)} tables were supplied"
        )
    dec = StreamDecoder(payload.data)
    out = dec.decode(tables)
    dec.finish()
    return out
