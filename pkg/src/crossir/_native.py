"""ctypes binding to the accelerated range-coder kernel.

Loads the compiled shared library and exposes encode_symbols/decode_symbols
with the same signatures and error behavior as the pure Python functions in
crossir.coder. Importing this module raises OSError when no library can be
found or its ABI version does not match; kernel.py treats any import failure
as "fast backend unavailable" and stays on the reference coder.

The library search order is:

1. the path in the CROSSIR_KERNEL_LIB environment variable,
2. a copy sitting next to this module,
3. the cargo build output in the repository checkout
   (kernel/target/release relative to the package source).
"""

from __future__ import annotations

import ctypes
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DataError, DecodeError

_ABI_VERSION = 1

_OK = 0
_BAD_ARGUMENT = 1
_BAD_BLOB = 2
_INDEX_RANGE = 3
_TRUNCATED = 4
_CORRUPT_STREAM = 5
_PREFIX_TOO_LONG = 6
_TRAILING_BYTES = 7
_OUTPUT_TOO_SMALL = 8
_SYMBOL_RANGE = 9


def _library_name() -> str:
    if sys.platform.startswith("win"):
        return "crossir_kernel.dll"
    if sys.platform == "darwin":
        return "libcrossir_kernel.dylib"
    return "libcrossir_kernel.so"


def _find_library() -> Path:
    env = os.environ.get("CROSSIR_KERNEL_LIB")
    if env:
        path = Path(env)
        if not path.is_file():
            raise OSError(f"CROSSIR_KERNEL_LIB points at a missing file: {env}")
        return path
    here = Path(__file__).resolve().parent
    name = _library_name()
    candidates = [
        here / name,
        here.parent.parent / "kernel" / "target" / "release" / name,
    ]
    for cand in candidates:
        if cand.is_file():
            return cand
    raise OSError(f"accelerated kernel library {name} not found")


def _load() -> ctypes.CDLL:
    lib = ctypes.CDLL(str(_find_library()))
    lib.crossir_kernel_abi_version.argtypes = []
    lib.crossir_kernel_abi_version.restype = ctypes.c_uint32
    version = lib.crossir_kernel_abi_version()
    if version != _ABI_VERSION:
        raise OSError(f"kernel ABI version {version} != expected {_ABI_VERSION}")
    lib.crossir_encode_symbols.argtypes = [
        ctypes.POINTER(ctypes.c_int64),  # symbols
        ctypes.POINTER(ctypes.c_int64),  # indexes
        ctypes.c_uint64,  # count
        ctypes.c_char_p,  # cdf_blob
        ctypes.c_uint64,  # blob_len
        ctypes.POINTER(ctypes.c_uint8),  # out
        ctypes.c_uint64,  # out_cap
        ctypes.POINTER(ctypes.c_uint64),  # out_len
    ]
    lib.crossir_encode_symbols.restype = ctypes.c_int32
    lib.crossir_decode_symbols.argtypes = [
        ctypes.c_char_p,  # data
        ctypes.c_uint64,  # data_len
        ctypes.POINTER(ctypes.c_int64),  # indexes
        ctypes.c_uint64,  # count
        ctypes.c_char_p,  # cdf_blob
        ctypes.c_uint64,  # blob_len
        ctypes.POINTER(ctypes.c_int32),  # out_symbols
        ctypes.POINTER(ctypes.c_uint64),  # consumed
    ]
    lib.crossir_decode_symbols.restype = ctypes.c_int32
    return lib


_lib = _load()


def _blob(tables) -> bytes:
    """Serialized table blob, cached on the table set after the first use."""
    blob = getattr(tables, "_kernel_blob", None)
    if blob is None:
        blob = tables.serialize()
        try:
            tables._kernel_blob = blob
        except AttributeError:
            pass
    return blob


def _i64_ptr(arr: np.ndarray):
    return arr.ctypes.data_as(ctypes.POINTER(ctypes.c_int64))


def _raise(status: int, data_len: int = 0, consumed: int = 0):
    if status == _BAD_BLOB:
        raise DataError("CDF blob malformed")
    if status == _INDEX_RANGE:
        raise DataError("scale index out of table range")
    if status == _TRUNCATED:
        raise DecodeError("bitstream truncated")
    if status == _CORRUPT_STREAM:
        raise DecodeError("bitstream corrupt: cumulative frequency out of range")
    if status == _PREFIX_TOO_LONG:
        raise DecodeError("bitstream corrupt: escape magnitude prefix too long")
    if status == _TRAILING_BYTES:
        raise DecodeError(f"bitstream has {data_len - consumed} unconsumed trailing bytes")
    if status == _SYMBOL_RANGE:
        raise DecodeError("bitstream corrupt: decoded symbol out of int32 range")
    if status == _OUTPUT_TOO_SMALL:
        raise DataError("encoder output exceeded its buffer bound")
    raise RuntimeError(f"kernel invariant violation (status {status})")


def encode_symbols(symbols, indexes, means, tables) -> bytes:
    """Range-encode integer symbols through the native kernel.

    Same contract as crossir.coder.encode_symbols; means are validated for
    length symmetry and never affect the bytes.
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
    sym64 = np.ascontiguousarray(symbols, dtype=np.int64)
    idx64 = np.ascontiguousarray(indexes, dtype=np.int64)
    blob = _blob(tables)
    count = len(sym64)
    cap = 18 * count + 64
    out = (ctypes.c_uint8 * cap)()
    out_len = ctypes.c_uint64(0)
    status = _lib.crossir_encode_symbols(
        _i64_ptr(sym64),
        _i64_ptr(idx64),
        count,
        blob,
        len(blob),
        out,
        cap,
        ctypes.byref(out_len),
    )
    if status != _OK:
        _raise(status)
    return bytes(out[: out_len.value])


def decode_symbols(data: bytes, indexes, means, count: int, tables) -> np.ndarray:
    """Exact inverse of encode_symbols through the native kernel."""
    indexes = np.asarray(indexes)
    means = np.asarray(means)
    if len(indexes) != count or len(means) != count:
        raise DataError(
            f"length mismatch: expected {count} indexes/means, got {len(indexes)}/{len(means)}"
        )
    idx64 = np.ascontiguousarray(indexes, dtype=np.int64)
    blob = _blob(tables)
    data = bytes(data)
    out = np.empty(count, dtype=np.int32)
    consumed = ctypes.c_uint64(0)
    status = _lib.crossir_decode_symbols(
        data,
        len(data),
        _i64_ptr(idx64),
        count,
        blob,
        len(blob),
        out.ctypes.data_as(ctypes.POINTER(ctypes.c_int32)),
        ctypes.byref(consumed),
    )
    if status != _OK:
        _raise(status, data_len=len(data), consumed=consumed.value)
    return out
