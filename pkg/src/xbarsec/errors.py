"""Exception hierarchy for the crossbar toolkit."""


class XbarError(Exception):
    """Base class for all toolkit errors."""


class CalibrationError(XbarError):
    """Calibration profile is malformed or describes an unusable device population."""


class ModeMisuseError(XbarError):
    """Operation invoked while the device or crossbar is routed to a different mode."""


class ProgramOrderError(XbarError):
    """Gradual RESET requested above the current level; SET-first reinitialization required."""


class DimensionError(XbarError):
    """Input dimensions do not match the crossbar or weight matrix."""


class IllPosedNetworkError(XbarError):
    """The resistive network has no well-defined DC solution (no driven terminal reachable)."""


class RangeError(XbarError):
    """A digital code or parameter lies outside its admissible range."""


class UninitializedEntropyError(XbarError):
    """PUF evaluation requested before the entropy pattern was initialized."""


class InsufficientEntropyError(XbarError):
    """Collected PUF responses carry fewer bits than the requested key length."""


class IntegrityError(XbarError):
    """Bundle integrity tag mismatch: wrong device or corrupted ciphertext."""


class FormatError(XbarError):
    """A serialized file (crossbar, bundle, weights, profile) failed to parse."""


class ConvergenceError(XbarError):
    """An iterative calibration loop exhausted its step budget."""
