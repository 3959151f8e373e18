"""
Input Validation Utilities
Validation for configuration values, thresholds and file-level inputs
"""

import math
import re
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

from siamadapt.utils.errors import ValidationError

CheckResult = Tuple[bool, Optional[str]]


class Validator:
    """Value validation utilities returning (is_valid, error_message)"""

    KEY_PATTERN = re.compile(r'^[a-z][a-z0-9_]*(\.[a-z][a-z0-9_]*)?$')
    SEQUENCE_ID_PATTERN = re.compile(r'^[A-Za-z0-9_\-\.]{1,100}$')

    TRUE_WORDS = {'1', 'true', 'yes', 'on'}
    FALSE_WORDS = {'0', 'false', 'no', 'off'}

    @staticmethod
    def validate_positive(value: Any, field: str) -> CheckResult:
        """Value must be a finite number greater than zero"""
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False, f"{field} must be a number"
        if not math.isfinite(value) or value <= 0:
            return False, f"{field} must be positive, got {value}"
        return True, None

    @staticmethod
    def validate_non_negative(value: Any, field: str) -> CheckResult:
        """Value must be a finite number greater than or equal to zero"""
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False, f"{field} must be a number"
        if not math.isfinite(value) or value < 0:
            return False, f"{field} must be non-negative, got {value}"
        return True, None

    @staticmethod
    def validate_ratio(value: Any, field: str) -> CheckResult:
        """Value must lie in [0, 1]"""
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False, f"{field} must be a number"
        if not 0.0 <= value <= 1.0:
            return False, f"{field} must be in [0, 1], got {value}"
        return True, None

    @staticmethod
    def validate_threshold_pair(low: float, high: float) -> CheckResult:
        """Label thresholds must satisfy 0 <= low < high <= 1"""
        if not 0.0 <= low < high <= 1.0:
            return False, f"thresholds must satisfy 0 <= neg_thr < pos_thr <= 1, got {low}, {high}"
        return True, None

    @staticmethod
    def validate_choice(value: Any, choices: Iterable[str], field: str) -> CheckResult:
        """Value must be one of the allowed names"""
        choices = list(choices)
        if value not in choices:
            return False, f"{field} must be one of {', '.join(choices)}, got {value!r}"
        return True, None

    @staticmethod
    def validate_sequence_id(value: str) -> CheckResult:
        """Sequence identifiers double as directory names"""
        if not value or not isinstance(value, str):
            return False, "Sequence id is required"
        if not Validator.SEQUENCE_ID_PATTERN.match(value):
            return False, f"Sequence id contains invalid characters: {value!r}"
        return True, None

    @staticmethod
    def validate_known_keys(data: Dict[str, Any], allowed: Iterable[str],
                            section: str) -> CheckResult:
        """Reject keys a section does not declare"""
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            names = ', '.join(f"{section}.{key}" for key in unknown)
            return False, f"Unknown configuration key(s): {names}"
        return True, None

    @staticmethod
    def parse_value(raw: str, template: Any, field: str) -> Any:
        """
        Parse a text value to the type of the template default

        Args:
            raw: Text value from a config file or --set override
            template: Default value whose type drives parsing
            field: Dotted key used in error messages

        Returns:
            Parsed value

        Raises:
            ValidationError: If the text cannot be parsed
        """
        text = raw.strip()
        try:
            if isinstance(template, bool):
                lowered = text.lower()
                if lowered in Validator.TRUE_WORDS:
                    return True
                if lowered in Validator.FALSE_WORDS:
                    return False
                raise ValueError(text)
            if isinstance(template, int):
                return int(text)
            if isinstance(template, float):
                return float(text)
            if isinstance(template, (tuple, list)):
                items = [item for item in re.split(r'[,\s]+', text) if item]
                element = template[0] if template else 0.0
                return tuple(Validator.parse_value(item, element, field) for item in items)
            if template is None:
                return None if text.lower() in ('', 'none', 'null') else text
            return text
        except ValueError:
            raise ValidationError(f"Cannot parse {field}={raw!r}", field=field)


def require(check: CheckResult, field: Optional[str] = None) -> None:
    """
    Raise ValidationError when a check failed

    Usage:
        require(Validator.validate_positive(cfg.epochs, 'training.epochs'), 'training.epochs')
    """
    is_valid, error_msg = check
    if not is_valid:
        raise ValidationError(error_msg, field=field)


def require_all(checks: Sequence[Tuple[CheckResult, str]]) -> None:
    """Run several checks and raise on the first failure"""
    for check, field in checks:
        require(check, field)


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    """
    Parse repeated `section.key=value` overrides

    Raises:
        ValidationError: On a malformed pair
    """
    overrides: Dict[str, str] = {}
    for pair in pairs:
        if '=' not in pair:
            raise ValidationError(f"Override must look like section.key=value, got {pair!r}")
        key, value = pair.split('=', 1)
        key = key.strip()
        if not Validator.KEY_PATTERN.match(key) or '.' not in key:
            raise ValidationError(f"Invalid override key {key!r}", field=key)
        overrides[key] = value
    return overrides
