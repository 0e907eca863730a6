"""Exception types shared across the package."""


class SpikeGlmError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(SpikeGlmError):
    """A file or configuration document failed to parse or validate."""


class InsufficientDataError(SpikeGlmError):
    """The data cannot support the requested computation (empty design, zero spikes)."""


class DimensionMismatchError(SpikeGlmError):
    """Parameter and regressor dimensions disagree."""


class StalledStepError(SpikeGlmError):
    """Backtracking found no ascent direction; carries step diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class DegenerateFilterError(SpikeGlmError):
    """A filter that must be nonzero (e.g. the spatial component) is zero."""


class IntensityOverflowError(SpikeGlmError):
    """Simulation produced an intensity beyond the representable range."""

    def __init__(self, message, bin_index=None, predictor=None):
        super().__init__(message)
        self.bin_index = bin_index
        self.predictor = predictor
