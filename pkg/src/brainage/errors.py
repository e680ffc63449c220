"""Error taxonomy shared by the library and the command line front door.

Exit-code mapping used by the CLI: validation problems (bad manifests,
malformed files, shape mismatches) exit 2, numeric failures (non-finite
loss, factorization breakdown, failed gradient checks) exit 3, and
operating-system level I/O problems exit 4.
"""


class BrainAgeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(BrainAgeError):
    """Invalid input: manifest rows, volume shapes, config values."""

    exit_code = 2


class FormatError(ValidationError):
    """A file exists and is readable but its content is not what it claims.

    Bad magic bytes, unsupported datatype codes, truncated payloads.
    """


class NumericError(BrainAgeError):
    """A computation produced or met non-finite / degenerate numbers."""

    exit_code = 3


class InputOutputError(BrainAgeError):
    """Filesystem-level failure: missing file, unwritable path."""

    exit_code = 4
