# remodel.py
"""
Per-quadrature-point remodelling.

One call of remodel_point runs, in order: localisation of the increment,
accumulation of the microscopic strain, the porosity update, the
neo-Hookean tangent and the isotropic solid moduli derived from it, and
finally fresh cell tensors and effective coefficients at (nu, phi).
"""
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

import config
from surrogate import ExtrapolationError
from upscale import CoefficientError, effective_from_cell, isotropic_moduli
from utils import square_symmetric, tensor_to_voigt, voigt_to_tensor

logger = logging.getLogger(__name__)

NU_CLAMP = (config.NU_TRAIN_MIN, config.NU_TRAIN_MAX)
PHI_CLAMP = (config.PHI_TRAIN_MIN, config.PHI_TRAIN_MAX)


class KinematicsError(ValueError):
    pass


class TangentError(ValueError):
    pass


class RemodelError(RuntimeError):
    def __init__(self, message, point_id=None, cause=None):
        super().__init__(message)
        self.point_id = point_id
        self.cause = cause

    @property
    def rejects_step(self):
        return isinstance(self.cause, KinematicsError)


class CellProvider(Protocol):
    def cell_tensors(self, nu, phi): ...


@dataclass(frozen=True)
class NeoHookeanParams:
    C10: float
    D1: float

    @classmethod
    def from_moduli(cls, E_i, nu_i):
        if not E_i > 0.0 or not -1.0 < nu_i < 0.5:
            raise TangentError(f"Neo-Hookean parameters need E_i > 0 and -1 < nu_i < 0.5, got ({E_i}, {nu_i})")
        return cls(C10=E_i / (4.0 * (1.0 + nu_i)), D1=6.0 * (1.0 - 2.0 * nu_i) / E_i)


@dataclass
class MaterialPointState:
    phi: float
    phi_i: float
    E: float
    nu: float
    E_i: float
    nu_i: float
    cell: object
    eff: object
    eps_micro: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    J: float = 1.0
    point_id: object = None

    @property
    def params(self):
        return NeoHookeanParams.from_moduli(self.E_i, self.nu_i)


def initial_state(phi_i, E_i, nu_i, provider, E_ref=config.CELL_REFERENCE_E, point_id=None):
    cell = provider.cell_tensors(nu_i, phi_i)
    eff = effective_from_cell(cell, E_i, nu_i, phi_i, E_ref)
    return MaterialPointState(phi=phi_i, phi_i=phi_i, E=E_i, nu=nu_i, E_i=E_i, nu_i=nu_i,
                              cell=cell, eff=eff, point_id=point_id)


def localise(M_avg, Q11, eps_macro, p):
    """<M> : eps + <Q> p for square-symmetric M = (M11, M12, M44) and isotropic Q = Q11 I."""
    M = square_symmetric(*M_avg)
    voigt = M @ tensor_to_voigt(eps_macro) + Q11 * p * np.array([1.0, 1.0, 0.0])
    return voigt_to_tensor(voigt)


def deformation(eps_micro, phi_i):
    F = np.asarray(eps_micro, dtype=float) / (1.0 - phi_i) + np.eye(2)
    E_green = 0.5 * (F.T @ F - np.eye(2))
    return F, E_green, float(np.linalg.det(F))


def update_kinematics(state, d_eps_micro):
    """Accumulates <eps1> and rebuilds F, Green strain and J from the total."""
    total = state.eps_micro + np.asarray(d_eps_micro, dtype=float)
    F, E_green, J = deformation(total, state.phi_i)
    if not J > 0.0:
        raise KinematicsError(f"det F = {J:.6g} <= 0 at point {state.point_id}; increment too large")
    state.eps_micro = total
    state.J = J
    return F, E_green, J


def update_porosity(state, J):
    phi = 1.0 - (1.0 - state.phi_i) * J
    lo, hi = PHI_CLAMP
    if phi < lo or phi > hi:
        clamped = min(max(phi, lo), hi)
        logger.warning("Warning: porosity %.6g clamped to %.6g at point %s", phi, clamped, state.point_id)
        phi = clamped
    state.phi = phi
    return phi


def _right_cauchy_green(E_green):
    E_green = np.asarray(E_green, dtype=float)
    C = np.eye(3)
    n = E_green.shape[0]
    C[:n, :n] += 2.0 * E_green
    return C


def neo_hookean_energy(params, E_green):
    """W = C10 (I1 - 3) - 2 C10 ln J + (ln J)^2 / D1, plane strain padded to 3D."""
    C = _right_cauchy_green(E_green)
    detC = np.linalg.det(C)
    if not detC > 0.0:
        raise TangentError(f"Right Cauchy-Green tensor not positive definite (det {detC:.6g})")
    lnJ = 0.5 * np.log(detC)
    return params.C10 * (np.trace(C) - 3.0) - 2.0 * params.C10 * lnJ + lnJ**2 / params.D1


def second_piola(params, E_green):
    C = _right_cauchy_green(E_green)
    Cinv = np.linalg.inv(C)
    lnJ = 0.5 * np.log(np.linalg.det(C))
    return 2.0 * params.C10 * (np.eye(3) - Cinv) + (2.0 / params.D1) * lnJ * Cinv


def neo_hookean_tangent_full(params, E_green):
    """d2W/dE dE as a (3, 3, 3, 3) array."""
    C = _right_cauchy_green(E_green)
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise TangentError(f"C = 2E + I is not positive definite for E = {np.asarray(E_green).tolist()}") from None
    Cinv = np.linalg.inv(C)
    lnJ = 0.5 * np.log(np.linalg.det(C))
    sym = np.einsum("ik,jl->ijkl", Cinv, Cinv) + np.einsum("il,jk->ijkl", Cinv, Cinv)
    tangent = (2.0 / params.D1) * np.einsum("ij,kl->ijkl", Cinv, Cinv) + 2.0 * (params.C10 - lnJ / params.D1) * sym
    return tangent


def neo_hookean_tangent(params, E_green):
    """In-plane reduction to (C11, C12, C44)."""
    t = neo_hookean_tangent_full(params, E_green)
    return 0.5 * (t[0, 0, 0, 0] + t[1, 1, 1, 1]), t[0, 0, 1, 1], t[0, 1, 0, 1]


def update_solid_moduli(state, tangent):
    """Tangent-consistent (E, nu); nu may leave the training interval here."""
    C11, C12, _ = tangent
    if not C11 + C12 > 0.0:
        raise TangentError(f"C11 + C12 = {C11 + C12:.6g} <= 0 at point {state.point_id}")
    E, nu = isotropic_moduli(C11, C12)
    if not E > 0.0:
        raise TangentError(f"Non-positive solid modulus {E:.6g} at point {state.point_id}")
    state.E, state.nu = E, nu
    return E, nu


def cell_poisson_ratio(nu, point_id=None):
    """Poisson ratio handed to the cell provider, clamped to the training interval."""
    lo, hi = NU_CLAMP
    if nu < lo or nu > hi:
        clamped = min(max(nu, lo), hi)
        logger.warning("Warning: Poisson ratio %.6g clamped to %.6g for the cell lookup at point %s",
                       nu, clamped, point_id)
        return clamped
    return nu


def remodel_point(state, d_eps_macro, d_p, provider, E_ref=config.CELL_REFERENCE_E, linear_mode=False):
    """Refreshes state in place from one macroscopic increment (d_eps_macro, d_p)."""
    if linear_mode:
        return state
    try:
        cell = state.cell
        Q_cur = cell.Q11 * E_ref / state.E
        d_eps_micro = localise((cell.M11, cell.M12, cell.M44), Q_cur, d_eps_macro, d_p)
        _, E_green, J = update_kinematics(state, d_eps_micro)
        phi = update_porosity(state, J)
        E, nu = update_solid_moduli(state, neo_hookean_tangent(state.params, E_green))
        state.cell = provider.cell_tensors(cell_poisson_ratio(nu, state.point_id), phi)
        state.eff = effective_from_cell(state.cell, E, nu, phi, E_ref)
    except (KinematicsError, TangentError, CoefficientError, ExtrapolationError) as e:
        raise RemodelError(f"Remodelling failed at point {state.point_id}: {e}", state.point_id, e) from e
    return state
