"""
Error Types
Exception hierarchy shared by every layer of SiamAdapt
"""

from typing import Dict, Optional


class SiamAdaptError(Exception):
    """Base class for all SiamAdapt errors"""

    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)


class ValidationError(SiamAdaptError):
    """User input or configuration value failed validation"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(message)


class ConfigurationError(SiamAdaptError):
    """Components were wired with incompatible dimensions or modes"""


class InputShapeError(SiamAdaptError):
    """Tensor shape or channel count does not match what an operation expects"""


class EncoderInputError(SiamAdaptError):
    """A sample set required by the latent encoder is empty"""


class InitializationError(SiamAdaptError):
    """Tracker could not be initialised on the first frame"""


class IngestionError(SiamAdaptError):
    """Dataset files are malformed or inconsistent"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(SiamAdaptError):
    """Non-finite values reached a loss computation"""


class TrainingDivergedError(SiamAdaptError):
    """Training loss became NaN or infinite"""

    def __init__(self, step: int, last_losses: Optional[Dict[str, float]] = None):
        self.step = step
        self.last_losses = last_losses or {}
        detail = ", ".join(f"{k}={v:.4f}" for k, v in self.last_losses.items()) or "none"
        super().__init__(f"Loss diverged at step {step} (last finite losses: {detail})")


class ReportError(SiamAdaptError):
    """Analysis inputs are missing data required for a report"""


__all__ = [
    'SiamAdaptError',
    'ValidationError',
    'ConfigurationError',
    'InputShapeError',
    'EncoderInputError',
    'InitializationError',
    'IngestionError',
    'NumericError',
    'TrainingDivergedError',
    'ReportError',
]
