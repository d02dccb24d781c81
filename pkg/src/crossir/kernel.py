"""Entropy-coder backend selection.

The reference coder is pure Python and always available. An accelerated
native kernel with the same byte-exact behavior can be selected with
CROSSIR_KERNEL=fast; when the shared library is missing the reference
implementation is used automatically. CROSSIR_KERNEL=reference forces the
Python path regardless of what is installed.
"""

from __future__ import annotations

import logging
import os

from . import coder as _reference

log = logging.getLogger(__name__)

_ENV_VAR = "CROSSIR_KERNEL"


def _load_fast():
    try:
        from . import _native

        return _native
    except Exception:
        return None


def backend_name() -> str:
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice in ("", "reference"):
        if choice == "" and _load_fast() is not None:
            return "fast"
        return "reference"
    if choice == "fast":
        if _load_fast() is None:
            log.warning("CROSSIR_KERNEL=fast requested but no kernel built; using reference coder")
            return "reference"
        return "fast"
    raise ValueError(f"{_ENV_VAR} must be 'reference' or 'fast', got {choice!r}")


def encode_symbols(symbols, indexes, means, tables) -> bytes:
    if backend_name() == "fast":
        return _load_fast().encode_symbols(symbols, indexes, means, tables)
    return _reference.encode_symbols(symbols, indexes, means, tables)


def decode_symbols(data, indexes, means, count, tables):
    if backend_name() == "fast":
        return _load_fast().decode_symbols(data, indexes, means, count, tables)
    return _reference.decode_symbols(data, indexes, means, count, tables)
