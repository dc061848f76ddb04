# formatting.py
import math

import numpy as np

# Units appended to labelled quantities in reports and console summaries
UNITS_MAP = {
    "E_i": "Pa",
    "magnitude": "Pa",
    "delta_p": "Pa",
    "period": "s",
    "time": "s",
    "L": "m",
    "d": "m",
    "length": "m",
    "mu_c": "Pa s",
    "velocity": "m/s",
    "deviation": "m/s",
    "hysteresis": "Pa",
}


def format_number(value, digits=6):
    """Compact general-format number; non-finite values are spelled out."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "yes" if value else "no"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}g}"


def format_quantity(name, value, digits=6):
    text = format_number(value, digits)
    unit = UNITS_MAP.get(name)
    return f"{text} {unit}" if text and unit else text


def format_percent(fraction, digits=3):
    return f"{100.0 * float(fraction):.{digits}g} %"


def format_summary(summary):
    """Flat dict of label -> display string; nested dicts become 'outer.inner'."""
    formatted = {}
    for key, value in summary.items():
        if isinstance(value, dict):
            for inner, sub in format_summary(value).items():
                formatted[f"{key}.{inner}"] = sub
        elif isinstance(value, (list, tuple, np.ndarray)):
            formatted[key] = ", ".join(format_number(v) for v in value)
        else:
            formatted[key] = format_quantity(key, value) if not isinstance(value, str) else value
    return formatted
