"""Number formatting shared by the CSV writers."""

import math


def fmt(x) -> str:
    """Floats at 17 significant digits (exact round trip); ints unchanged."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")
