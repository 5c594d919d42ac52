import math
from datetime import datetime, timezone
from typing import Optional


def get_current_time() -> datetime:
    """
    Get current time
    """
    return datetime.now(timezone.utc)


def format_machine(value: Optional[float]) -> str:
    """
    Format a float for machine-readable output (17 significant digits).
    None and NaN become an empty field.
    """
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    return f"{value:.17g}"


def format_human(value: Optional[float]) -> str:
    """
    Format a float for human-readable tables (6 significant digits).
    """
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    return f"{value:.6g}"


__all__ = [
    "get_current_time",
    "format_machine",
    "format_human",
]
