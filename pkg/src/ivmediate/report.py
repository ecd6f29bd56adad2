"""Fixed-precision rendering shared by the text reports."""
from __future__ import annotations

from decimal import ROUND_HALF_EVEN, Decimal


def fmt2(value: float) -> str:
    """Round half-even to two decimals on the shortest decimal repr."""
    if value != value:
        return "nan"
    out = str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))
    return "0.00" if out == "-0.00" else out


def format_estimate(est: float, ci) -> str:
    return f"{fmt2(est)} ({fmt2(ci[0])}, {fmt2(ci[1])})"
