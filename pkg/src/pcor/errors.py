"""Exception hierarchy shared by every pcor module."""


class PcorError(Exception):
    """Base class for all errors raised by pcor."""


class SchemaError(PcorError):
    """Unknown attribute/value, malformed schema file, or mismatched schemas."""


class IngestionError(PcorError):
    """A data file row could not be turned into a Record."""


class ConfigurationError(PcorError):
    """Invalid run parameters (epsilon, n, detector settings, ...)."""


class FingerprintMismatchError(ConfigurationError):
    """A reference file was built for a different dataset/detector/utility."""


class PreconditionError(PcorError):
    """An operation was called with inputs violating its contract."""


class NoValidContextError(PcorError):
    """The target has no matching context where one is required."""


class EmptyCandidatesError(PcorError):
    """The exponential mechanism was handed an empty candidate list."""


class NoValidCandidateError(NoValidContextError):
    """Every candidate handed to the exponential mechanism has -inf utility."""


class NoStartingContextError(NoValidContextError):
    """No matching starting context was found within the attempt cap."""


class SamplingExhaustedError(PcorError):
    """Uniform sampling hit its attempt cap before collecting n matches."""

    def __init__(self, matches_found: int, attempts: int, wanted: int):
        self.matches_found = matches_found
        self.attempts = attempts
        self.wanted = wanted
        super().__init__(
            f"uniform sampling exhausted after {attempts} attempts: "
            f"{matches_found} of {wanted} matching contexts found"
        )


class EnumerationCapError(PcorError):
    """Exhaustive enumeration was refused because t exceeds the cap."""
