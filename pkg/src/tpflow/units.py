"""Unit handling: configs may carry units, simulation runs in SI.

Conversions: 1 d = 9.869233e-13 m^2, 1 cp = 1e-3 Pa s, 1 day = 86400 s,
1 year = 365 days, 1 bar = 1e5 Pa.
"""

DARCY = 9.869233e-13  # m^2
MILLIDARCY = 1e-3 * DARCY
CENTIPOISE = 1e-3  # Pa s
DAY = 86400.0  # s
YEAR = 365.0 * DAY  # s
BAR = 1e5  # Pa

_TABLES = {
    "time": {"s": 1.0, "sec": 1.0, "day": DAY, "year": YEAR},
    "length": {"m": 1.0},
    "permeability": {"m2": 1.0, "m^2": 1.0, "d": DARCY, "darcy": DARCY, "md": MILLIDARCY},
    "viscosity": {"pa.s": 1.0, "pa*s": 1.0, "pas": 1.0, "cp": CENTIPOISE},
    "pressure": {"pa": 1.0, "bar": BAR},
    "velocity": {"m/s": 1.0, "m/day": 1.0 / DAY, "m/year": 1.0 / YEAR},
    "rate": {"1/s": 1.0, "1/day": 1.0 / DAY},
    "energy_density": {"pa": 1.0, "pa.m": 1.0, "pa*m": 1.0},
}


def parse_quantity(text, kind):
    """Parse '0.5 day' / '100 d' / '1.5e-10' into an SI float.

    A bare number is taken as already-SI.
    """
    parts = str(text).split()
    if len(parts) == 1:
        return float(parts[0])
    if len(parts) != 2:
        raise ValueError(f"cannot parse quantity {text!r}")
    value, unit = float(parts[0]), parts[1].lower()
    table = _TABLES[kind]
    if unit not in table:
        raise ValueError(f"unknown {kind} unit {unit!r} in {text!r}")
    return value * table[unit]
