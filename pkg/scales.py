# scales.py
"""Non-dimensionalisation contract.

Every physical input is divided by the scale of its kind before it reaches
the solvers; outputs are multiplied back.  Four scales are independent
(macroscopic length L, cell length d, viscosity mu_c, force f_c), the rest
are derived from them.
"""
import logging
from dataclasses import dataclass

logger = logging.getLogger(__name__)

SCALE_SEPARATION_LIMIT = 0.1

KINDS = ("length", "displacement", "stress", "modulus", "pressure", "time",
         "velocity", "conductivity", "viscosity", "force")


class ScaleError(ValueError):
    pass


@dataclass(frozen=True)
class CharacteristicScales:
    L: float
    d: float
    mu_c: float
    f_c: float

    def __post_init__(self):
        for name in ("L", "d", "mu_c", "f_c"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ScaleError(f"Characteristic scale '{name}' must be strictly positive, got {value!r}")
        if self.epsilon >= SCALE_SEPARATION_LIMIT:
            logger.warning("Warning: weak scale separation, epsilon = d/L = %.3g (>= %.1f)",
                           self.epsilon, SCALE_SEPARATION_LIMIT)

    @property
    def epsilon(self):
        return self.d / self.L


@dataclass(frozen=True)
class DerivedScales:
    velocity_scale: float
    time_scale: float
    stress_scale: float
    conductivity_scale: float


def derive_scales(cs):
    """Returns velocity, time, stress and conductivity scales for ``cs``."""
    if not isinstance(cs, CharacteristicScales):
        raise ScaleError(f"Expected CharacteristicScales, got {type(cs).__name__}")
    L, d, mu_c, f_c = cs.L, cs.d, cs.mu_c, cs.f_c
    return DerivedScales(
        velocity_scale=f_c * d**2 / (L**3 * mu_c),
        time_scale=L**4 * mu_c / (f_c * d**2),
        stress_scale=f_c / L**2,
        conductivity_scale=d**2 / mu_c,
    )


def scale_of(kind, cs):
    derived = derive_scales(cs)
    table = {
        "length": cs.L,
        "displacement": cs.L,
        "stress": derived.stress_scale,
        "modulus": derived.stress_scale,
        "pressure": derived.stress_scale,
        "time": derived.time_scale,
        "velocity": derived.velocity_scale,
        "conductivity": derived.conductivity_scale,
        "viscosity": cs.mu_c,
        "force": cs.f_c,
    }
    try:
        return table[kind]
    except KeyError:
        raise ScaleError(f"Unknown quantity kind '{kind}'; expected one of {', '.join(KINDS)}") from None


def to_dimensionless(value, kind, cs):
    return value / scale_of(kind, cs)


def from_dimensionless(value, kind, cs):
    return value * scale_of(kind, cs)
