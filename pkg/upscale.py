# upscale.py
"""Effective poroelastic coefficients from cell averages, and the undrained tensor."""
import logging
from dataclasses import dataclass

import config
from utils import plane_strain_stiffness, square_symmetric

logger = logging.getLogger(__name__)


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True)
class EffectiveCoefficients:
    C11: float
    C12: float
    C44: float
    alpha_tilde: float
    biot_modulus: float
    K11: float

    @property
    def C_tilde(self):
        return square_symmetric(self.C11, self.C12, self.C44)


@dataclass(frozen=True)
class EffectiveModuli:
    E: float
    nu: float
    G: float


def effective_from_cell(cell, solid_E, solid_nu, phi, E_ref=config.CELL_REFERENCE_E):
    """
    C = (1 - phi) C_s + C_s <M>, alpha = phi - (M11 + M12),
    M = -1 / <Tr Q> with Q rescaled from E_ref to solid_E, K = <W11>.
    """
    if not solid_E > 0.0:
        raise CoefficientError(f"Solid Young's modulus must be positive, got {solid_E}")
    Q_cur = cell.Q11 * E_ref / solid_E
    if not Q_cur < 0.0:
        raise CoefficientError(
            f"Non-physical cell solution at phi={phi}, nu={solid_nu}: <Tr Q>_s = {2.0 * Q_cur:.6g} >= 0")
    Cs = plane_strain_stiffness(solid_E, solid_nu)
    C_tilde = (1.0 - phi) * Cs + Cs @ square_symmetric(cell.M11, cell.M12, cell.M44)
    alpha = phi - (cell.M11 + cell.M12)
    eff = EffectiveCoefficients(C11=float(C_tilde[0, 0]), C12=float(C_tilde[0, 1]), C44=float(C_tilde[2, 2]),
                                alpha_tilde=float(alpha), biot_modulus=float(-1.0 / (2.0 * Q_cur)),
                                K11=float(cell.K11))
    if not (eff.C11 > abs(eff.C12) and eff.C44 > 0.0):
        raise CoefficientError(f"Effective stiffness not positive definite at phi={phi}, nu={solid_nu}: "
                               f"C11={eff.C11:.6g}, C12={eff.C12:.6g}, C44={eff.C44:.6g}")
    if eff.K11 < 0.0 or (eff.K11 == 0.0 and phi > 0.0):
        raise CoefficientError(f"Non-positive hydraulic conductivity {eff.K11:.6g} at phi={phi}")
    if not phi - 1e-9 <= alpha <= 1.0 + 1e-9:
        logger.warning("Warning: Biot coefficient %.6g outside [phi, 1] at phi=%.4g, nu=%.4g", alpha, phi, solid_nu)
    return eff


def undrained_tensor(eff):
    """C + M alpha^2 in the 11 and 12 slots."""
    add = eff.biot_modulus * eff.alpha_tilde**2
    return square_symmetric(eff.C11 + add, eff.C12 + add, eff.C44)


def isotropic_moduli(C11, C12):
    """(E, nu) from the reduced tangent entries."""
    s = C11 + C12
    if s == 0.0:
        raise ZeroDivisionError("isotropic_moduli: C11 + C12 = 0")
    return (C11 * s - 2.0 * C12**2) / s, C12 / s


def effective_moduli(eff):
    E, nu = isotropic_moduli(eff.C11, eff.C12)
    return EffectiveModuli(E=E, nu=nu, G=eff.C44)


def bulk_modulus(E, nu):
    return E / (3.0 * (1.0 - 2.0 * nu))


def skempton_pressure(eff, load):
    """Instantaneous 1D pore pressure under an axial load step (uniaxial strain)."""
    return eff.biot_modulus * eff.alpha_tilde * load / (eff.C11 + eff.biot_modulus * eff.alpha_tilde**2)


def consolidation_coefficient(eff):
    M, a = eff.biot_modulus, eff.alpha_tilde
    return eff.K11 * M * eff.C11 / (eff.C11 + M * a**2)

