"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data/format problems exit 2, numeric
failures exit 3. Precondition misuse (bad argument values, mismatched frames
or shapes) raises the specific subclasses below so callers can tell a broken
input file from a broken computation.
"""


class EvsegError(Exception):
    """Base class for all package-specific errors."""


class DataFormatError(EvsegError):
    """A file is not a valid EVT/EVM container (bad magic, header, payload)."""


class VersionMismatchError(DataFormatError):
    """Model file written with an unsupported format version."""


class FrameMismatchError(EvsegError, ValueError):
    """Two mass functions defined over different frames were combined."""


class ShapeMismatchError(EvsegError, ValueError):
    """Array arguments disagree in shape or dimensionality."""


class TotalConflictError(EvsegError, ArithmeticError):
    """Dempster combination is undefined: the sources fully contradict."""


class DivergenceError(EvsegError, ArithmeticError):
    """Training produced a non-finite loss."""


class NoLabeledDataError(EvsegError, ValueError):
    """The training split contains no labeled volumes."""
