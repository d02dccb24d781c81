"""Bit-exact range coder over precomputed integer CDFs, plus the .cir container.

The coder is a 32-bit carry-less renormalizing range coder. All probabilities
come from quantized CDF tables built ahead of time (16-bit precision, every
symbol gets frequency >= 1), so the coding loop itself is pure integer
arithmetic and produces identical bytes on any platform. Symbols outside a
table's regular range are sent as an escape symbol followed by a sign bit and
an Exp-Golomb magnitude, all through the same coder.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import DataError, DecodeError

SCALES_MIN = 0.11
SCALES_MAX = 256.0
SCALES_LEVELS = 64

CDF_TOTAL = 1 << 16  # 16-bit probability precision
MIN_TAIL = 120  # minimum regular symbol reach each side of zero

_TOP = 1 << 24
_BOT = 1 << 16
_MASK32 = 0xFFFFFFFF

CONTAINER_MAGIC = b"CIR1"
CONTAINER_VERSION = 1
NUM_STREAMS = 12  # z_ir, z_rgb, 5 IR slices, 5 RGB slices
HEADER_SIZE = 60
_HEADER_FMT = ">4sBBHHBB12I"


def build_scale_table() -> np.ndarray:
    """64 logarithmically spaced scales over [0.11, 256]."""
    return np.exp(np.linspace(np.log(SCALES_MIN), np.log(SCALES_MAX), SCALES_LEVELS))


def index_scale(sigma, table: np.ndarray):
    """Smallest table index whose scale >= sigma; sigma beyond the table maps to the last index."""
    idx = np.searchsorted(table, np.asarray(sigma, dtype=np.float64), side="left")
    return np.minimum(idx, SCALES_LEVELS - 1).astype(np.int32)


def _std_normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def pmf_to_quantized_cdf(pmf: np.ndarray) -> np.ndarray:
    """Quantize a pmf (last slot = escape) to an integer CDF with total 2^16.

    Every symbol keeps frequency >= 1; rounding surplus/deficit is settled
    against the largest entries, deterministically.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or len(pmf) < 2:
        raise DataError("pmf must be a 1-D array with at least two entries")
    if len(pmf) > CDF_TOTAL // 2:
        raise DataError(f"pmf too long for 16-bit precision: {len(pmf)}")
    freqs = np.maximum(1, np.rint(pmf * CDF_TOTAL)).astype(np.int64)
    diff = CDF_TOTAL - int(freqs.sum())
    if diff > 0:
        freqs[int(np.argmax(freqs))] += diff
    while diff < 0:
        k = int(np.argmax(freqs))
        take = min(-diff, int(freqs[k]) - 1)
        freqs[k] -= take
        diff += take
        if take == 0:
            raise DataError("cannot quantize pmf: too many symbols for total frequency")
    cdf = np.zeros(len(pmf) + 1, dtype=np.uint32)
    cdf[1:] = np.cumsum(freqs)
    return cdf


@dataclass
class CdfTable:
    """One quantized CDF. Regular symbols span [offset, offset+n-2]; the last slot escapes."""

    offset: int
    cdf: np.ndarray  # uint32, strictly increasing, first 0, last CDF_TOTAL

    def __post_init__(self):
        self.cdf = np.asarray(self.cdf, dtype=np.uint32)
        self._cdf_list = self.cdf.tolist()

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 1

    @property
    def escape_index(self) -> int:
        return self.num_symbols - 1

    @property
    def max_regular(self) -> int:
        return self.offset + self.num_symbols - 2

    def cdf_list(self) -> list:
        return self._cdf_list


class CdfTableSet:
    """An indexed collection of CDF tables, serializable to a byte blob.

    The blob layout (little-endian) is the wire format shared with the
    accelerated kernel: u32 table count, then per table i32 symbol offset,
    u32 entry count, and the u32 CDF entries.
    """

    def __init__(self, tables):
        self.tables = list(tables)

    def __len__(self) -> int:
        return len(self.tables)

    def __getitem__(self, i: int) -> CdfTable:
        return self.tables[i]

    def serialize(self) -> bytes:
        out = bytearray(struct.pack("<I", len(self.tables)))
        for t in self.tables:
            out += struct.pack("<iI", t.offset, len(t.cdf))
            out += t.cdf.astype("<u4").tobytes()
        return bytes(out)

    @classmethod
    def deserialize(cls, blob: bytes) -> "CdfTableSet":
        if len(blob) < 4:
            raise DataError("CDF blob too short")
        (n,) = struct.unpack_from("<I", blob, 0)
        pos = 4
        tables = []
        for _ in range(n):
            if pos + 8 > len(blob):
                raise DataError("CDF blob truncated")
            offset, count = struct.unpack_from("<iI", blob, pos)
            pos += 8
            end = pos + 4 * count
            if end > len(blob):
                raise DataError("CDF blob truncated")
            cdf = np.frombuffer(blob[pos:end], dtype="<u4").astype(np.uint32)
            pos += 4 * count
            tables.append(CdfTable(offset=offset, cdf=cdf))
        if pos != len(blob):
            raise DataError("CDF blob has trailing bytes")
        return cls(tables)


def gaussian_cdf_table(sigma: float) -> CdfTable:
    """Quantized zero-mean Gaussian CDF for one scale.

    The regular reach extends with sigma (at least MIN_TAIL each side) so the
    escape path stays below ~1e-6 probability across the whole scale table.
    """
    tail = max(MIN_TAIL, int(np.ceil(6.0 * sigma)))
    support = np.arange(-tail, tail + 1, dtype=np.float64)
    upper = _std_normal_cdf((support + 0.5) / sigma)
    lower = _std_normal_cdf((support - 0.5) / sigma)
    pmf = upper - lower
    escape = max(0.0, 1.0 - float(pmf.sum()))
    cdf = pmf_to_quantized_cdf(np.append(pmf, escape))
    return CdfTable(offset=-tail, cdf=cdf)


def gaussian_cdf_tables(scale_table: np.ndarray) -> CdfTableSet:
    return CdfTableSet([gaussian_cdf_table(float(s)) for s in scale_table])


class RangeEncoder:
    """Carry-less 32-bit range encoder (Subbotin style)."""

    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._out = bytearray()

    def encode(self, cum: int, freq: int):
        r = self._range >> 16  # total is always 2^16
        self._low += cum * r
        self._range = freq * r
        self._normalize()

    def encode_bit(self, bit: int):
        self.encode(0x8000 if bit else 0, 0x8000)

    def _normalize(self):
        low = self._low
        rng = self._range
        out = self._out
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = (-low) & (_BOT - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK32
            rng = (rng << 8) & _MASK32
        self._low = low
        self._range = rng

    def finish(self) -> bytes:
        low = self._low
        for _ in range(4):
            self._out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK32
        return bytes(self._out)


class RangeDecoder:
    """Exact inverse of RangeEncoder; raises DecodeError on truncated input."""

    def __init__(self, data: bytes):
        self._buf = data
        self._pos = 0
        self._low = 0
        self._range = _MASK32
        code = 0
        for _ in range(4):
            code = (code << 8) | self._next_byte()
        self._code = code

    def _next_byte(self) -> int:
        if self._pos >= len(self._buf):
            raise DecodeError("bitstream truncated")
        b = self._buf[self._pos]
        self._pos += 1
        return b

    def decode(self, table: CdfTable) -> int:
        r = self._range >> 16
        dv = (self._code - self._low) // r
        if dv >= CDF_TOTAL:
            raise DecodeError("bitstream corrupt: cumulative frequency out of range")
        cdf = table.cdf_list()
        sym = bisect_right(cdf, dv) - 1
        self._update(cdf[sym], cdf[sym + 1] - cdf[sym], r)
        return sym

    def decode_bit(self) -> int:
        r = self._range >> 16
        dv = (self._code - self._low) // r
        bit = 1 if dv >= 0x8000 else 0
        self._update(0x8000 if bit else 0, 0x8000, r)
        return bit

    def _update(self, cum: int, freq: int, r: int):
        self._low += cum * r
        self._range = freq * r
        low = self._low
        rng = self._range
        code = self._code
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = (-low) & (_BOT - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & _MASK32
            low = (low << 8) & _MASK32
            rng = (rng << 8) & _MASK32
        self._low = low
        self._range = rng
        self._code = code

    def finish(self):
        """Validate that the stream was consumed exactly."""
        if self._pos != len(self._buf):
            raise DecodeError(
                f"bitstream has {len(self._buf) - self._pos} unconsumed trailing bytes"
            )


def _encode_escape_magnitude(enc: RangeEncoder, m: int):
    # Exp-Golomb: bit_length(m)-1 zeros, then m MSB-first.
    k = m.bit_length() - 1
    for _ in range(k):
        enc.encode_bit(0)
    for i in range(k, -1, -1):
        enc.encode_bit((m >> i) & 1)


def _decode_escape_magnitude(dec: RangeDecoder) -> int:
    k = 0
    while dec.decode_bit() == 0:
        k += 1
        if k > 48:
            raise DecodeError("bitstream corrupt: escape magnitude prefix too long")
    m = 1
    for _ in range(k):
        m = (m << 1) | dec.decode_bit()
    return m


def encode_symbols(symbols, indexes, means, tables: CdfTableSet) -> bytes:
    """Range-encode integer symbols, each under the CDF selected by its index.

    `symbols` are the already mean-centred integers round(y - mu); the means
    are accepted for interface symmetry with the decoder and validated only.
    """
    symbols = np.asarray(symbols)
    indexes = np.asarray(indexes)
    means = np.asarray(means)
    if not (len(symbols) == len(indexes) == len(means)):
        raise DataError(
            f"length mismatch: {len(symbols)} symbols, {len(indexes)} indexes, {len(means)} means"
        )
    if len(indexes) and (indexes.min() < 0 or indexes.max() >= len(tables)):
        raise DataError("scale index out of table range")
    enc = RangeEncoder()
    sym_list = symbols.astype(np.int64).tolist()
    idx_list = indexes.astype(np.int64).tolist()
    for s, ti in zip(sym_list, idx_list):
        t = tables[ti]
        cdf = t.cdf_list()
        rel = s - t.offset
        if 0 <= rel < t.num_symbols - 1:
            enc.encode(cdf[rel], cdf[rel + 1] - cdf[rel])
        else:
            esc = t.escape_index
            enc.encode(cdf[esc], cdf[esc + 1] - cdf[esc])
            if s > t.max_regular:
                enc.encode_bit(0)
                _encode_escape_magnitude(enc, s - t.max_regular)
            else:
                enc.encode_bit(1)
                _encode_escape_magnitude(enc, t.offset - s)
    return enc.finish()


def decode_symbols(data: bytes, indexes, means, count: int, tables: CdfTableSet) -> np.ndarray:
    """Exact inverse of encode_symbols; validates full stream consumption."""
    indexes = np.asarray(indexes)
    means = np.asarray(means)
    if len(indexes) != count or len(means) != count:
        raise DataError(
            f"length mismatch: expected {count} indexes/means, got {len(indexes)}/{len(means)}"
        )
    dec = RangeDecoder(data)
    out = np.empty(count, dtype=np.int32)
    idx_list = indexes.astype(np.int64).tolist()
    for i, ti in enumerate(idx_list):
        t = tables[ti]
        sym = dec.decode(t)
        if sym == t.escape_index:
            sign = dec.decode_bit()
            m = _decode_escape_magnitude(dec)
            out[i] = t.offset - m if sign else t.max_regular + m
        else:
            out[i] = t.offset + sym
    dec.finish()
    return out


def stream_cost_bits(symbols, indexes, tables: CdfTableSet) -> float:
    """Ideal bit cost of the symbols under the quantized tables (no coder overhead)."""
    total = 0.0
    for s, ti in zip(np.asarray(symbols).tolist(), np.asarray(indexes).tolist()):
        t = tables[ti]
        cdf = t.cdf_list()
        rel = s - t.offset
        if 0 <= rel < t.num_symbols - 1:
            total += -np.log2((cdf[rel + 1] - cdf[rel]) / CDF_TOTAL)
        else:
            esc = t.escape_index
            total += -np.log2((cdf[esc + 1] - cdf[esc]) / CDF_TOTAL)
            m = (s - t.max_regular) if s > t.max_regular else (t.offset - s)
            total += 2 * (m.bit_length() - 1) + 2
    return total


@dataclass
class ContainerHeader:
    """Fixed 60-byte big-endian header of a .cir file."""

    width: int
    height: int
    lambda_index: int
    slice_count: int
    flags: int = 0
    version: int = CONTAINER_VERSION

    def __post_init__(self):
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise DataError(f"dimensions out of u16 range: {self.width}x{self.height}")
        for name, v in (
            ("lambda_index", self.lambda_index),
            ("slice_count", self.slice_count),
            ("flags", self.flags),
            ("version", self.version),
        ):
            if not 0 <= v <= 0xFF:
                raise DataError(f"{name} out of u8 range: {v}")


def pack_container(header: ContainerHeader, streams) -> bytes:
    """Serialize header + the 12 payload streams in canonical decode order."""
    if len(streams) != NUM_STREAMS:
        raise DataError(f"expected {NUM_STREAMS} streams, got {len(streams)}")
    lengths = [len(s) for s in streams]
    if max(lengths, default=0) > 0xFFFFFFFF:
        raise DataError("stream too long for u32 length field")
    head = struct.pack(
        _HEADER_FMT,
        CONTAINER_MAGIC,
        header.version,
        header.flags,
        header.width,
        header.height,
        header.lambda_index,
        header.slice_count,
        *lengths,
    )
    return head + b"".join(streams)


def unpack_container(data: bytes):
    """Parse a .cir byte string; validates magic, version and length arithmetic."""
    if len(data) < HEADER_SIZE:
        raise DecodeError(f"container truncated: {len(data)} bytes < {HEADER_SIZE}-byte header")
    fields = struct.unpack_from(_HEADER_FMT, data, 0)
    magic, version, flags, width, height, lambda_index, slice_count = fields[:7]
    lengths = fields[7:]
    if magic != CONTAINER_MAGIC:
        raise DecodeError(f"bad magic {magic!r}, expected {CONTAINER_MAGIC!r}")
    if version != CONTAINER_VERSION:
        raise DecodeError(f"unsupported container version {version}")
    total = sum(lengths)
    if HEADER_SIZE + total != len(data):
        raise DecodeError(
            f"container length mismatch: header promises {HEADER_SIZE + total} bytes, file has {len(data)}"
        )
    streams = []
    pos = HEADER_SIZE
    for n in lengths:
        streams.append(data[pos : pos + n])
        pos += n
    header = ContainerHeader(
        width=width,
        height=height,
        lambda_index=lambda_index,
        slice_count=slice_count,
        flags=flags,
        version=version,
    )
    return header, streams
