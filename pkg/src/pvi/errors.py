"""Exception hierarchy shared across the codec.

CLI exit codes map onto these: DataError -> 2, DecodeError -> 3.
"""


class PviError(Exception):
    """Base class for all codec errors."""


class DataError(PviError):
    """Invalid input data (bad point cloud, degenerate geometry, bad file)."""


class DecodeError(PviError):
    """Malformed or truncated bitstream detected during decoding."""
