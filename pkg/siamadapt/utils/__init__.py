"""
Utilities Package
Errors, logging, validation and image helpers for SiamAdapt
"""

from siamadapt.utils.errors import SiamAdaptError
from siamadapt.utils.logger import setup_logging

__all__ = ['SiamAdaptError', 'setup_logging']
