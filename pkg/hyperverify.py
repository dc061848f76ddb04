# hyperverify.py
"""
Uniaxial-stress check of the incremental scheme: N linear increments with
a re-evaluated tangent against the closed-form neo-Hookean response.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from remodel import TangentError, neo_hookean_tangent, neo_hookean_tangent_full, second_piola
from upscale import isotropic_moduli

logger = logging.getLogger(__name__)

TANGENT_MODES = ("full", "isotropic")


@dataclass
class UniaxialRun:
    N: int
    target_stretch: float
    tangent: str = "full"
    stretch: list = field(default_factory=list)
    nominal_stress: list = field(default_factory=list)
    modulus: list = field(default_factory=list)
    lateral_stretch: list = field(default_factory=list)

    @property
    def final_stress(self):
        return self.nominal_stress[-1]


def _green(stretch, lateral):
    return np.diag([0.5 * (stretch**2 - 1.0), 0.5 * (lateral**2 - 1.0), 0.5 * (lateral**2 - 1.0)])


def _condensed(params, stretch, lateral, tangent):
    """Uniaxial modulus dS11/dE11 and lateral ratio dE22/dE11 with free lateral faces."""
    E = _green(stretch, lateral)
    if tangent == "isotropic":
        E_mod, nu = isotropic_moduli(*neo_hookean_tangent(params, E[:2, :2])[:2])
        return E_mod, -nu
    t = neo_hookean_tangent_full(params, E)
    lateral_stiffness = t[1, 1, 1, 1] + t[1, 1, 2, 2]
    if not lateral_stiffness > 0.0:
        raise TangentError(f"Lateral tangent lost positive definiteness at stretch {stretch:.6g}")
    ratio = -t[1, 1, 0, 0] / lateral_stiffness
    return t[0, 0, 0, 0] + 2.0 * t[0, 0, 1, 1] * ratio, ratio


def incremental_uniaxial(params, target_stretch, N, tangent="full"):
    """Forward-Euler stress-stretch polyline with N equal stretch increments."""
    if not 0.5 <= target_stretch <= 2.0:
        raise ValueError(f"Target stretch must lie in [0.5, 2], got {target_stretch}")
    if N < 1:
        raise ValueError(f"Increment count must be at least 1, got {N}")
    if tangent not in TANGENT_MODES:
        raise ValueError(f"Tangent mode must be one of {TANGENT_MODES}, got '{tangent}'")

    run = UniaxialRun(N=N, target_stretch=target_stretch, tangent=tangent)
    lam, lat, S11 = 1.0, 1.0, 0.0
    run.stretch.append(lam)
    run.nominal_stress.append(0.0)
    run.lateral_stretch.append(lat)
    dlam = (target_stretch - 1.0) / N
    for _ in range(N):
        modulus, ratio = _condensed(params, lam, lat, tangent)
        if not modulus > 0.0:
            raise TangentError(f"Uniaxial tangent modulus {modulus:.6g} <= 0 at stretch {lam:.6g}")
        dE11 = lam * dlam
        P = run.nominal_stress[-1] + (S11 + lam**2 * modulus) * dlam
        S11 += modulus * dE11
        lat += ratio * dE11 / lat
        lam += dlam
        run.modulus.append(modulus)
        run.stretch.append(lam)
        run.nominal_stress.append(P)
        run.lateral_stretch.append(lat)
    return run


def _lateral_stress(params, stretch, lateral):
    return second_piola(params, _green(stretch, lateral))[1, 1]


def oracle_lateral_stretch(params, stretch):
    return brentq(lambda lt: _lateral_stress(params, stretch, lt), 1e-3, 10.0, xtol=1e-14, rtol=1e-14)


def oracle_nominal_stress(params, stretch):
    """First Piola-Kirchhoff P11 = stretch * S11 with zero lateral stress."""
    lateral = oracle_lateral_stretch(params, stretch)
    return stretch * second_piola(params, _green(stretch, lateral))[0, 0]


def convergence_study(params, target_stretch, counts=(1, 10, 100, 1000), tangent="full"):
    """Final nominal stress and relative error versus the oracle for each increment count."""
    oracle = oracle_nominal_stress(params, target_stretch)
    rows = []
    for N in counts:
        run = incremental_uniaxial(params, target_stretch, N, tangent)
        err = abs(run.final_stress - oracle) / abs(oracle)
        logger.info("N=%d: nominal stress %.6g vs oracle %.6g (relative error %.3e)", N, run.final_stress, oracle, err)
        rows.append({"N": N, "run": run, "nominal_stress": run.final_stress, "oracle": oracle, "error": err})
    return rows
