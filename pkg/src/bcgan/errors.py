"""
Error hierarchy
Every failure the package raises on purpose derives from BcganError
"""

from typing import Dict, Optional


class BcganError(Exception):
    """Base class for all package errors"""


class ConfigError(BcganError):
    """Invalid configuration or violated cross-field invariant (CLI exit code 2)"""


class ShapeError(BcganError):
    """Operand shapes are not valid for an op kind"""


class GraphError(BcganError):
    """Malformed computation graph (cycle, non-scalar loss)"""


class NonFiniteError(BcganError):
    """An op produced NaN or Inf"""

    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        message = f"non-finite output from op '{kind}'"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class CheckpointError(BcganError):
    """Unreadable or inconsistent parameter checkpoint"""


class RvolError(BcganError):
    """Base class for RVOL volume file errors"""


class RvolBadMagicError(RvolError):
    """File does not start with the RVOL magic"""


class RvolDtypeError(RvolError):
    """Unsupported payload dtype tag"""


class RvolDimensionError(RvolError):
    """Extents overflow the supported range"""


class RvolTruncatedError(RvolError):
    """Payload length disagrees with the header extents"""


class DropoutError(BcganError):
    """Dropout parameters or inputs outside their domain"""


class PosteriorError(BcganError):
    """Invalid dropout-testing request or posterior state"""


class CalibrationError(BcganError):
    """Recalibration input or map is unusable"""


class MetricError(BcganError):
    """Metric undefined for the given inputs"""


class DatasetError(BcganError):
    """Dataset, manifest or split problem"""


class TrainingDivergedError(BcganError):
    """A loss term became non-finite during training"""

    def __init__(self, epoch: int, batch: int, terms: Dict[str, float], cause: Optional[str] = None):
        self.epoch = epoch
        self.batch = batch
        self.terms = dict(terms)
        formatted = ", ".join(f"{name}={value:.6g}" for name, value in self.terms.items())
        message = f"non-finite loss at epoch {epoch}, batch {batch}: {formatted}"
        if cause:
            message += f" [{cause}]"
        super().__init__(message)


class OutputExistsError(BcganError):
    """Output directory already holds results and --force was not given"""
