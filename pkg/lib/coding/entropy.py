"""Uniform scalar quantization and Cauchy-model Huffman coding.

Only the model parameters are transmitted; both sides rebuild the same
canonical Huffman table from them. Symbols outside the model's alphabet are
sent as an escape code followed by the raw 32-bit two's-complement symbol.
"""

from __future__ import annotations

import heapq
import logging
from functools import cached_property, lru_cache
from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.stats import cauchy

from lib.coding.bitio import BitReader, BitWriter, Bits
from lib.errors import BadEscape, EmptyStream

logger = logging.getLogger(__name__)

FIXED_POINT_BITS = 20
FIXED_ONE = 1 << FIXED_POINT_BITS
SYMBOL_MIN = -(1 << 15)
SYMBOL_MAX = (1 << 15) - 1
MAX_ALPHABET = 1 << 16
ESCAPE_FLOOR = 2.0**-14
# probabilities become integer frequencies before tree construction
FREQUENCY_SCALE = 1 << 30
RAW_BITS = 32
I32_MIN, I32_MAX = -(1 << 31), (1 << 31) - 1


def to_fixed(value: float) -> int:
    return int(np.clip(np.rint(value * FIXED_ONE), I32_MIN, I32_MAX))


def from_fixed(value: int) -> float:
    return value / FIXED_ONE


def snap_step(qstep: float) -> float:
    """Nearest positive value on the fixed-point grid."""
    if qstep <= 0:
        raise ValueError("quantization step must be > 0")
    return max(1, to_fixed(qstep)) / FIXED_ONE


def quantize(values: Any, qstep: float) -> np.ndarray:
    return np.rint(np.asarray(values, dtype=np.float64) / qstep).astype(np.int64)


def dequantize(symbols: Any, qstep: float) -> np.ndarray:
    return np.asarray(symbols, dtype=np.int64) * qstep


class CauchyModel(BaseModel):
    """Cauchy(x0, gamma) over quantized symbols in [smin, smax]."""

    model_config = ConfigDict(frozen=True)

    x0: float
    gamma: float
    qstep: float
    smin: int
    smax: int

    @field_validator("gamma", "qstep")
    def positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("gamma and qstep must be > 0")
        return v

    @model_validator(mode="after")
    def check_bounds(self) -> "CauchyModel":
        if not self.smin <= 0 <= self.smax:
            raise ValueError(f"alphabet [{self.smin}, {self.smax}] must contain 0")
        if self.alphabet_size > MAX_ALPHABET:
            raise ValueError(f"alphabet size {self.alphabet_size} exceeds {MAX_ALPHABET}")
        return self

    @property
    def alphabet_size(self) -> int:
        return self.smax - self.smin + 1

    @property
    def escape_index(self) -> int:
        return self.alphabet_size

    def header(self) -> Tuple[int, int, int, int]:
        """(x0, gamma) in fixed point followed by the bounds."""
        return to_fixed(self.x0), to_fixed(self.gamma), self.smin, self.smax

    @classmethod
    def from_header(cls, values: Tuple[int, int, int, int], qstep: float) -> "CauchyModel":
        x0, gamma, smin, smax = values
        return cls(x0=from_fixed(x0), gamma=from_fixed(gamma), qstep=qstep, smin=smin, smax=smax)

    @property
    def table(self) -> "HuffmanTable":
        return build_table(self)

    def contains(self, symbol: int) -> bool:
        return self.smin <= symbol <= self.smax


def fit_model(values: Any, qstep: float) -> CauchyModel:
    """Median / half-IQR fit; parameters are snapped to the transmitted grid."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if not v.size:
        raise EmptyStream("cannot fit a model to an empty stream")
    if qstep <= 0:
        raise ValueError("quantization step must be > 0")
    x0 = float(np.median(v))
    q1, q3 = np.percentile(v, [25.0, 75.0])
    gamma = max(0.5 * float(q3 - q1), qstep / 4.0)
    symbols = quantize(v, qstep)
    smin = int(np.clip(min(int(symbols.min()), 0), SYMBOL_MIN, 0))
    smax = int(np.clip(max(int(symbols.max()), 0), 0, SYMBOL_MAX))
    model = CauchyModel(
        x0=from_fixed(to_fixed(x0)),
        gamma=max(1, to_fixed(gamma)) / FIXED_ONE,
        qstep=qstep,
        smin=smin,
        smax=smax,
    )
    logger.debug("Fitted %s to %d values", model, v.size)
    return model


class HuffmanTable:
    """Canonical Huffman code over alphabet indices; index ``size`` is the escape."""

    def __init__(self, lengths: np.ndarray):
        self.lengths = np.asarray(lengths, dtype=np.int64)
        order = np.lexsort((np.arange(len(self.lengths)), self.lengths))
        self.codes = [0] * len(self.lengths)
        self.max_length = int(self.lengths.max())
        # per length: first canonical code, offset into `order`, count
        self._first_code = [0] * (self.max_length + 2)
        self._first_index = [0] * (self.max_length + 2)
        self._count = [0] * (self.max_length + 2)
        self._sorted = [int(i) for i in order]

        code = 0
        previous = int(self.lengths[order[0]])
        for position, index in enumerate(order):
            length = int(self.lengths[index])
            code <<= length - previous
            previous = length
            if self._count[length] == 0:
                self._first_code[length] = code
                self._first_index[length] = position
            self._count[length] += 1
            self.codes[int(index)] = code
            code += 1

    def __len__(self) -> int:
        return len(self.lengths)

    def codebook(self) -> Dict[int, str]:
        return {i: format(c, f"0{int(l)}b") for i, (c, l) in enumerate(zip(self.codes, self.lengths))}

    def write(self, writer: BitWriter, index: int) -> None:
        writer.write(self.codes[index], int(self.lengths[index]))

    def read(self, reader: BitReader) -> int:
        code = 0
        for length in range(1, self.max_length + 1):
            code = (code << 1) | reader.read_bit()
            offset = code - self._first_code[length]
            if self._count[length] and 0 <= offset < self._count[length]:
                return self._sorted[self._first_index[length] + offset]
        raise BadEscape("bit pattern matches no code")


def symbol_frequencies(model: CauchyModel) -> np.ndarray:
    s = np.arange(model.smin, model.smax + 1, dtype=np.float64)
    dist = cauchy(loc=model.x0, scale=model.gamma)
    probs = dist.cdf((s + 0.5) * model.qstep) - dist.cdf((s - 0.5) * model.qstep)
    probs = np.maximum(probs, 0.0)
    escape = max(1.0 - float(probs.sum()), ESCAPE_FLOOR)
    probs = np.append(probs, escape)
    probs /= probs.sum()
    return np.maximum(1, np.floor(probs * FREQUENCY_SCALE)).astype(np.int64)


def huffman_lengths(frequencies: np.ndarray) -> np.ndarray:
    """Code lengths; ties merge the subtree holding the smallest symbol index first."""
    n = len(frequencies)
    if n == 1:
        return np.ones(1, dtype=np.int64)
    heap: List[Tuple[int, int, int]] = [(int(f), i, i) for i, f in enumerate(frequencies)]
    heapq.heapify(heap)
    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    next_id = n
    while len(heap) > 1:
        w1, m1, a = heapq.heappop(heap)
        w2, m2, b = heapq.heappop(heap)
        parent[a] = parent[b] = next_id
        heapq.heappush(heap, (w1 + w2, min(m1, m2), next_id))
        next_id += 1
    depth = np.zeros(2 * n - 1, dtype=np.int64)
    for node in range(next_id - 2, -1, -1):
        depth[node] = depth[parent[node]] + 1
    return depth[:n]


@lru_cache(maxsize=256)
def build_table(model: CauchyModel) -> HuffmanTable:
    return HuffmanTable(huffman_lengths(symbol_frequencies(model)))


class SymbolStream(BaseModel):
    """Quantized symbols of one parameter stream and the model coding them."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    symbols: np.ndarray
    model: CauchyModel

    @field_validator("symbols", mode="before")
    def to_symbols(cls, v: Any) -> np.ndarray:
        return np.array(v, dtype=np.int64).reshape(-1)

    @classmethod
    def from_values(cls, values: Any, model: CauchyModel) -> "SymbolStream":
        return cls(symbols=quantize(values, model.qstep), model=model)

    def __len__(self) -> int:
        return len(self.symbols)

    @cached_property
    def escapes(self) -> np.ndarray:
        return (self.symbols < self.model.smin) | (self.symbols > self.model.smax)

    def dequantized(self) -> np.ndarray:
        return dequantize(self.symbols, self.model.qstep)


def write_symbols(writer: BitWriter, symbols: Any, model: CauchyModel) -> None:
    table = model.table
    escapes = 0
    for s in np.asarray(symbols, dtype=np.int64).ravel():
        s = int(s)
        if model.contains(s):
            table.write(writer, s - model.smin)
            continue
        if not I32_MIN <= s <= I32_MAX:
            raise BadEscape(f"symbol {s} does not fit {RAW_BITS} bits")
        table.write(writer, model.escape_index)
        writer.write_signed(s, RAW_BITS)
        escapes += 1
    if escapes:
        logger.warning("%d symbols outside [%d, %d] sent as escapes", escapes, model.smin, model.smax)


def read_symbols(reader: BitReader, model: CauchyModel, count: int) -> np.ndarray:
    table = model.table
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        index = table.read(reader)
        if index == model.escape_index:
            s = reader.read_signed(RAW_BITS)
            if model.contains(s):
                raise BadEscape(f"escaped symbol {s} lies inside the alphabet")
            out[i] = s
        else:
            out[i] = index + model.smin
    return out


def encode_symbols(symbols: Any, model: CauchyModel) -> Bits:
    writer = BitWriter()
    write_symbols(writer, symbols, model)
    return writer.getbits()


def decode_symbols(bits: Bits, model: CauchyModel, count: int) -> np.ndarray:
    return read_symbols(BitReader(bits), model, count)


def encode_stream(values: Any, model: CauchyModel) -> Bits:
    """Quantize with the model's step and Huffman-code the symbols."""
    return encode_symbols(quantize(values, model.qstep), model)


def decode_stream(bits: Bits, model: CauchyModel, count: int) -> np.ndarray:
    return dequantize(decode_symbols(bits, model, count), model.qstep)
