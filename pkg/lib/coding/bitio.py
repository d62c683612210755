from __future__ import annotations

from typing import NamedTuple

from lib.errors import TruncatedStream


class Bits(NamedTuple):
    """A bit payload: MSB-first bytes plus the number of meaningful bits."""

    data: bytes
    length: int

    @classmethod
    def empty(cls) -> "Bits":
        return cls(b"", 0)

    @property
    def byte_length(self) -> int:
        return len(self.data)


class BitWriter:
    """MSB-first bit packer."""

    def __init__(self) -> None:
        self._buffer = bytearray()
        self._acc = 0
        self._pending = 0
        self.length = 0

    def write(self, value: int, nbits: int) -> None:
        if nbits <= 0:
            return
        self._acc = (self._acc << nbits) | (value & ((1 << nbits) - 1))
        self._pending += nbits
        self.length += nbits
        while self._pending >= 8:
            self._pending -= 8
            self._buffer.append((self._acc >> self._pending) & 0xFF)
        self._acc &= (1 << self._pending) - 1

    def write_signed(self, value: int, nbits: int) -> None:
        """Two's complement."""
        self.write(value & ((1 << nbits) - 1), nbits)

    def getbits(self) -> Bits:
        data = bytes(self._buffer)
        if self._pending:
            data += bytes([(self._acc << (8 - self._pending)) & 0xFF])
        return Bits(data, self.length)


class BitReader:
    def __init__(self, bits: Bits | bytes, length: int | None = None):
        if isinstance(bits, Bits):
            data, length = bits.data, bits.length
        else:
            data = bits
        self._data = data
        self.limit = len(data) * 8 if length is None else length
        if self.limit > len(data) * 8:
            raise TruncatedStream(f"bit length {self.limit} exceeds {len(data)} payload bytes")
        self.position = 0

    @property
    def remaining(self) -> int:
        return self.limit - self.position

    def read_bit(self) -> int:
        if self.position >= self.limit:
            raise TruncatedStream()
        byte = self._data[self.position >> 3]
        bit = (byte >> (7 - (self.position & 7))) & 1
        self.position += 1
        return bit

    def read(self, nbits: int) -> int:
        if self.position + nbits > self.limit:
            raise TruncatedStream()
        value = 0
        for _ in range(nbits):
            value = (value << 1) | self.read_bit()
        return value

    def read_signed(self, nbits: int) -> int:
        value = self.read(nbits)
        if value & (1 << (nbits - 1)):
            value -= 1 << nbits
        return value
