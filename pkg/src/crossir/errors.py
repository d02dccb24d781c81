"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: usage errors exit 2 (argparse),
DataError 3, ModelError 4, InvariantError 5.
"""


class CrossIRError(Exception):
    """Base class for all toolkit errors."""


class DataError(CrossIRError):
    """Bad input data: unreadable files, dimension problems, corrupt streams."""


class AlignmentError(DataError):
    """RGB and IR modalities disagree on dimensions."""


class DecodeError(DataError):
    """Bitstream cannot be decoded (truncation, corruption, bad header)."""


class ModelError(CrossIRError):
    """Checkpoint/config mismatch or invalid model state."""


class InvariantError(CrossIRError):
    """A runtime invariant check failed."""
