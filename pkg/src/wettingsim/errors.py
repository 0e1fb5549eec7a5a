"""Exception hierarchy for wettingsim."""


class WettingSimError(Exception):
    """Base class for all wettingsim errors."""


class InvalidSizeError(WettingSimError, ValueError):
    """System size does not satisfy an operation's requirements."""


class InvalidParamsError(WettingSimError, ValueError):
    """Model or grid parameters are out of their admissible range."""


class MalformedFileError(WettingSimError):
    """A persisted file does not conform to its declared format."""


class ChecksumMismatchError(WettingSimError):
    """File contents do not match the checksum recorded in its header."""


class InsufficientDataError(WettingSimError, ValueError):
    """Too few usable data points for a fit or estimate."""


class NoCrossingError(WettingSimError):
    """No curve pair produced a sign change; common point undefined."""


class ConfigError(WettingSimError):
    """Experiment configuration is invalid (CLI exit code 2)."""


class SizeCapError(ConfigError):
    """Requested exact computation exceeds the enforced size cap."""
