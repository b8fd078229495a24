"""Exception hierarchy shared by every lbcnn module.

Each class carries the process exit code the command line front end uses
when the error escapes a subcommand.
"""


class LBCNNError(Exception):
    exit_code = 1


class UsageError(LBCNNError):
    exit_code = 2


class DataError(LBCNNError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class FormatError(DataError):
    """A dataset file does not follow its on-disk format."""


class SplitError(DataError):
    pass


class EncodingError(DataError):
    pass


class ShapeError(DataError):
    """Tensor or matrix dimensions do not line up."""


class InvalidArchitectureError(ShapeError):
    pass


class InputError(DataError):
    pass


class ModelFormatError(DataError):
    """Base class for model file load failures."""


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class NumericalError(LBCNNError):
    exit_code = 4


class SearchError(NumericalError):
    """Every trial of a kernel search failed."""


class RefineError(NumericalError):
    """Gradient refinement diverged.

    ``last_weights`` holds the last output-weight matrix whose loss was finite.
    """

    def __init__(self, message, last_weights=None):
        super().__init__(message)
        self.last_weights = last_weights
