# macro1d.py
"""
Incremental u-p solver on a 1D column (x = 0 at the bottom).

Displacement is quadratic, pressure linear, two Gauss points per element.
Each increment solves the symmetric block system

    [ K     -G               ] [du]   [ df + r_u                          ]
    [ -G^T  -(S + dt (H + R)) ] [dp] = [ dt (H + R) p - dt R p_env + r_p   ]

with coefficients frozen at the start of the increment, then remodels
every quadrature point.  r_u and r_p are the residuals carried over from
the previous increment.
"""
import copy
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import bmat, diags
from scipy.sparse.linalg import splu

import config
import fem
from remodel import RemodelError, initial_state, remodel_point
from upscale import bulk_modulus, effective_moduli

logger = logging.getLogger(__name__)

GAUSS_POINTS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
MECHANICAL_KINDS = ("displacement", "traction")
HYDRAULIC_KINDS = ("pressure", "impermeable", "free_drainage")
ENDS = ("bottom", "top")


class AssemblyError(RuntimeError):
    pass


class StepRejected(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str
    end: str
    value: object = 0.0         # float or callable t -> float
    drainage_length: float = 0.0
    env_pressure: float = 0.0

    def __post_init__(self):
        if self.kind not in MECHANICAL_KINDS + HYDRAULIC_KINDS:
            raise AssemblyError(f"Unknown boundary condition kind '{self.kind}'")
        if self.end not in ENDS:
            raise AssemblyError(f"Boundary end must be 'bottom' or 'top', got '{self.end}'")
        if self.kind == "free_drainage" and not self.drainage_length > 0.0:
            raise AssemblyError(f"Free drainage needs a positive drainage length, got {self.drainage_length}")

    @property
    def mechanical(self):
        return self.kind in MECHANICAL_KINDS

    def value_at(self, t):
        return float(self.value(t)) if callable(self.value) else float(self.value)


def check_boundary_conditions(bcs):
    for end in ENDS:
        mech = [bc for bc in bcs if bc.end == end and bc.mechanical]
        hyd = [bc for bc in bcs if bc.end == end and not bc.mechanical]
        if len(mech) != 1 or len(hyd) != 1:
            raise AssemblyError(f"Exactly one mechanical and one hydraulic condition required at the {end}, "
                                f"got {len(mech)} and {len(hyd)}")
    if not any(bc.kind == "displacement" for bc in bcs):
        raise AssemblyError("Column is under-constrained: no displacement condition")


class Column:
    """Mesh, shape functions and the material points of a 1D column."""

    def __init__(self, length, n_elements, points=None):
        if n_elements < config.MIN_ELEMENTS:
            raise AssemblyError(f"Column needs at least {config.MIN_ELEMENTS} elements, got {n_elements}")
        if not length > 0.0:
            raise AssemblyError(f"Column length must be positive, got {length}")
        n = n_elements
        self.length = float(length)
        self.n_elements = n
        self.h = self.length / n
        self.vertices = np.linspace(0.0, self.length, n + 1)
        self.nodes = np.linspace(0.0, self.length, 2 * n + 1)
        self.u_dofs = 2 * np.arange(n)[:, None] + np.arange(3)[None, :]
        self.p_dofs = np.arange(n)[:, None] + np.arange(2)[None, :]
        centres = 0.5 * (self.vertices[:-1] + self.vertices[1:])
        self.qp_x = centres[:, None] + 0.5 * self.h * GAUSS_POINTS[None, :]
        self.jw = np.full((n, 2), 0.5 * self.h)

        xi = GAUSS_POINTS
        self.dN = np.column_stack([xi - 0.5, -2.0 * xi, xi + 0.5]) * (2.0 / self.h)
        self.psi = np.column_stack([0.5 * (1.0 - xi), 0.5 * (1.0 + xi)])
        self.dpsi = np.array([-1.0, 1.0]) / self.h
        self.points = points if points is not None else []

    @property
    def n_u(self):
        return self.nodes.size

    @property
    def n_p(self):
        return self.vertices.size

    @property
    def n_qp(self):
        return 2 * self.n_elements

    @classmethod
    def uniform(cls, length, n_elements, phi_i, E_i, nu_i, provider, E_ref=config.CELL_REFERENCE_E):
        column = cls(length, n_elements)
        template = initial_state(phi_i, E_i, nu_i, provider, E_ref)
        for q in range(column.n_qp):
            point = copy.deepcopy(template)
            point.point_id = q
            column.points.append(point)
        logger.info("Column of length %.4g with %d elements: C11=%.5g, alpha=%.4g, M=%.5g, K=%.4g",
                    length, n_elements, template.eff.C11, template.eff.alpha_tilde,
                    template.eff.biot_modulus, template.eff.K11)
        return column

    def coefficient_arrays(self):
        if len(self.points) != self.n_qp:
            raise AssemblyError(f"Column has {len(self.points)} material points, expected {self.n_qp}")
        shape = (self.n_elements, 2)
        return {
            "C11": np.array([pt.eff.C11 for pt in self.points]).reshape(shape),
            "alpha": np.array([pt.eff.alpha_tilde for pt in self.points]).reshape(shape),
            "M": np.array([pt.eff.biot_modulus for pt in self.points]).reshape(shape),
            "K": np.array([pt.eff.K11 for pt in self.points]).reshape(shape),
        }

    def end_nodes(self, end):
        """(displacement node, pressure node, quadrature point) at an end."""
        if end == "bottom":
            return 0, 0, 0
        return self.n_u - 1, self.n_p - 1, self.n_qp - 1


@dataclass
class MacroState:
    u: np.ndarray
    p: np.ndarray
    u_rate: np.ndarray
    p_rate: np.ndarray
    t: float
    sigma: np.ndarray           # (n, 2) total axial stress
    eps: np.ndarray             # (n, 2) macroscopic axial strain
    zeta: np.ndarray            # (n, 2) fluid content
    f_ext: np.ndarray
    carry_u: np.ndarray
    carry_p: np.ndarray
    drained: dict = field(default_factory=lambda: {"bottom": 0.0, "top": 0.0})
    last_flux: dict = field(default_factory=lambda: {"bottom": 0.0, "top": 0.0})
    increments: int = 0

    @classmethod
    def zero(cls, column, t=0.0):
        qp = np.zeros((column.n_elements, 2))
        return cls(u=np.zeros(column.n_u), p=np.zeros(column.n_p), u_rate=np.zeros(column.n_u),
                   p_rate=np.zeros(column.n_p), t=t, sigma=qp.copy(), eps=qp.copy(), zeta=qp.copy(),
                   f_ext=np.zeros(column.n_u), carry_u=np.zeros(column.n_u), carry_p=np.zeros(column.n_p))


@dataclass
class IncrementSystem:
    matrix: object
    rhs: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    blocks: dict
    df: np.ndarray
    robin: np.ndarray           # R diagonal
    robin_env: np.ndarray       # R p_env


def free_drainage_flux(eff, p_surface, env_pressure, dx):
    """Outward Robin flux K (p - p_env) / dx."""
    if not dx > 0.0:
        raise AssemblyError(f"Drainage length must be positive, got {dx}")
    return eff.K11 * (p_surface - env_pressure) / dx


def element_blocks(column, coeff=None):
    c = coeff or column.coefficient_arrays()
    jw = column.jw
    return {
        "K": np.einsum("eg,ga,gb->eab", c["C11"] * jw, column.dN, column.dN),
        "G": np.einsum("eg,ga,gc->eac", c["alpha"] * jw, column.dN, column.psi),
        "S": np.einsum("eg,gc,gd->ecd", jw / c["M"], column.psi, column.psi),
        "H": np.einsum("eg,c,d->ecd", c["K"] * jw, column.dpsi, column.dpsi),
    }


def assemble_increment(column, state, dt, bcs, coeff=None):
    """Linear system for (du, dp) over [state.t, state.t + dt]."""
    if not dt > 0.0:
        raise AssemblyError(f"Time increment must be positive, got {dt}")
    check_boundary_conditions(bcs)
    nu, npr = column.n_u, column.n_p
    t_new = state.t + dt
    el = element_blocks(column, coeff)
    K = fem.assemble_matrix(el["K"], column.u_dofs, column.u_dofs, (nu, nu))
    G = fem.assemble_matrix(el["G"], column.u_dofs, column.p_dofs, (nu, npr))
    S = fem.assemble_matrix(el["S"], column.p_dofs, column.p_dofs, (npr, npr))
    H = fem.assemble_matrix(el["H"], column.p_dofs, column.p_dofs, (npr, npr))

    df = np.zeros(nu)
    robin, robin_env = np.zeros(npr), np.zeros(npr)
    fixed, values = [], []
    for bc in bcs:
        iu, ip, iq = column.end_nodes(bc.end)
        if bc.kind == "traction":
            df[iu] += bc.value_at(t_new) - bc.value_at(state.t)
        elif bc.kind == "displacement":
            fixed.append(iu)
            values.append(bc.value_at(t_new) - state.u[iu])
        elif bc.kind == "pressure":
            fixed.append(nu + ip)
            values.append(bc.value_at(t_new) - state.p[ip])
        elif bc.kind == "free_drainage":
            coef = column.points[iq].eff.K11 / bc.drainage_length
            robin[ip] += coef
            robin_env[ip] += coef * bc.env_pressure

    R = diags(robin)
    flow = H + R
    matrix = bmat([[K, -G], [-G.T, -(S + dt * flow)]]).tocsr()
    rhs = np.concatenate([df + state.carry_u, dt * (flow @ state.p) - dt * robin_env + state.carry_p])
    return IncrementSystem(matrix=matrix, rhs=rhs, fixed=np.array(fixed, dtype=np.int64),
                           fixed_values=np.array(values, dtype=float),
                           blocks={"K": K, "G": G, "S": S, "H": H}, df=df, robin=robin, robin_env=robin_env)


def solve_increment(system, tolerance=1e-10):
    n = system.rhs.size
    free = np.setdiff1d(np.arange(n), system.fixed)
    x = np.zeros(n)
    x[system.fixed] = system.fixed_values
    A = system.matrix
    A_ff = A[free][:, free].tocsc()
    b = system.rhs[free] - A[free][:, system.fixed] @ system.fixed_values
    try:
        x[free] = splu(A_ff).solve(b)
    except RuntimeError as e:
        raise AssemblyError(f"Singular increment system (boundary conditions under-constrained?): {e}") from e
    res = np.linalg.norm(A_ff @ x[free] - b)
    scale = max(np.linalg.norm(b), 1e-300)
    if not np.all(np.isfinite(x)) or (res > tolerance * scale and res > 1e-13):
        raise AssemblyError(f"Increment solve inaccurate: residual {res:.3e} vs rhs {scale:.3e}")
    return x


def _advance(column, state, dt, bcs, provider, linear_mode, E_ref, tolerance):
    coeff = column.coefficient_arrays()
    system = assemble_increment(column, state, dt, bcs, coeff)
    x = solve_increment(system, tolerance)
    nu = column.n_u
    du, dp = x[:nu], x[nu:]
    u_new, p_new = state.u + du, state.p + dp

    d_eps = np.einsum("ga,ea->eg", column.dN, du[column.u_dofs])
    dp_q = np.einsum("gc,ec->eg", column.psi, dp[column.p_dofs])
    sigma = state.sigma + coeff["C11"] * d_eps - coeff["alpha"] * dp_q
    zeta = state.zeta + coeff["alpha"] * d_eps + dp_q / coeff["M"]
    eps = state.eps + d_eps

    blocks = system.blocks
    flow = blocks["H"] + diags(system.robin)
    mass = fem.assemble_vector(np.einsum("gc,eg,eg->ec", column.psi, zeta - state.zeta, column.jw),
                               column.p_dofs, column.n_p)
    r_mass = mass + dt * (flow @ p_new - system.robin_env)

    fluxes = {"bottom": 0.0, "top": 0.0}
    p_fixed = np.zeros(column.n_p, dtype=bool)
    u_fixed = np.zeros(nu, dtype=bool)
    for bc in bcs:
        iu, ip, iq = column.end_nodes(bc.end)
        if bc.kind == "pressure":
            p_fixed[ip] = True
            fluxes[bc.end] += -r_mass[ip] / dt
        elif bc.kind == "free_drainage":
            fluxes[bc.end] += free_drainage_flux(column.points[iq].eff, p_new[ip], bc.env_pressure,
                                                 bc.drainage_length)
        elif bc.kind == "displacement":
            u_fixed[iu] = True

    # sigma and zeta grow by exactly the solved increment, so both carries stay at the
    # linear-solve residual (round-off); they only matter when the solve is inexact
    f_ext = state.f_ext + system.df
    f_int =fem.assemble_vector(np.einsum("ga,eg,eg->ea", column.dN, sigma, column.jw), column.u_dofs, nu)
    carry_u = np.where(u_fixed, 0.0, f_ext - f_int)
    carry_p = np.where(p_fixed, 0.0, state.carry_p + r_mass)

    drained = {face: state.drained[face] + fluxes[face] * dt for face in fluxes}
    new_state = MacroState(u=u_new, p=p_new, u_rate=du / dt, p_rate=dp / dt, t=state.t + dt,
                           sigma=sigma, eps=eps, zeta=zeta, f_ext=f_ext, carry_u=carry_u, carry_p=carry_p,
                           drained=drained, last_flux=fluxes, increments=state.increments + 1)

    if not linear_mode:
        d_eps_flat, dp_flat = d_eps.ravel(), dp_q.ravel()
        for q, point in enumerate(column.points):
            remodel_point(point, np.array([[d_eps_flat[q], 0.0], [0.0, 0.0]]), dp_flat[q], provider, E_ref)
    return new_state


def step(column, state, dt, bcs, provider=None, linear_mode=False, E_ref=config.CELL_REFERENCE_E,
         tolerance=1e-10, max_halvings=config.MAX_HALVINGS, _depth=0):
    """
    Advances one increment.  When remodelling rejects it (det F <= 0) the
    increment is retried as two halves, at most max_halvings deep.
    """
    if not linear_mode and provider is None:
        raise AssemblyError("Remodelling needs a cell-tensor provider")
    saved_points = copy.deepcopy(column.points) if not linear_mode else None
    try:
        return _advance(column, state, dt, bcs, provider, linear_mode, E_ref, tolerance)
    except RemodelError as e:
        if not e.rejects_step:
            raise
        column.points[:] = saved_points
        if _depth >= max_halvings:
            raise StepRejected(f"Increment at t={state.t:.6g} still rejected after {max_halvings} halvings: {e}") from e
        logger.warning("Warning: increment dt=%.4g at t=%.6g rejected (%s); halving", dt, state.t, e)
        kwargs = dict(provider=provider, linear_mode=linear_mode, E_ref=E_ref, tolerance=tolerance,
                      max_halvings=max_halvings, _depth=_depth + 1)
        half = step(column, state, 0.5 * dt, bcs, **kwargs)
        second = step(column, half, 0.5 * dt, bcs, **kwargs)
        # fluxes of the full increment, averaged over both halves
        second.last_flux = {face: (second.drained[face] - state.drained[face]) / dt for face in second.drained}
        return second


# --- History and post-processing ---
@dataclass
class StepRecord:
    t: float
    dt: float
    u: np.ndarray
    p: np.ndarray
    fluxes: dict
    drained: dict
    storage: float
    carry_u: float
    carry_p: float
    qp: dict


def record_step(column, state, dt):
    coeff = column.coefficient_arrays()
    dpdx = (state.p[1:] - state.p[:-1]) / column.h
    qp = {
        "x": column.qp_x.ravel().copy(),
        "phi": np.array([pt.phi for pt in column.points]),
        "E": np.array([pt.E for pt in column.points]),
        "nu": np.array([pt.nu for pt in column.points]),
        "C11": coeff["C11"].ravel(),
        "alpha": coeff["alpha"].ravel(),
        "M": coeff["M"].ravel(),
        "K": coeff["K"].ravel(),
        "v_rf": (-coeff["K"] * dpdx[:, None]).ravel(),
        "E_eff": np.array([effective_moduli(pt.eff).E for pt in column.points]),
        "nu_eff": np.array([effective_moduli(pt.eff).nu for pt in column.points]),
        "G_eff": np.array([pt.eff.C44 for pt in column.points]),
        "K_bulk": np.array([bulk_modulus(pt.E, pt.nu) for pt in column.points]),
        "eps": state.eps.ravel().copy(),
        "sigma": state.sigma.ravel().copy(),
    }
    return StepRecord(t=state.t, dt=dt, u=state.u.copy(), p=state.p.copy(), fluxes=dict(state.last_flux),
                      drained=dict(state.drained), storage=float(np.sum(state.zeta * column.jw)),
                      carry_u=float(np.linalg.norm(state.carry_u)), carry_p=float(np.linalg.norm(state.carry_p)),
                      qp=qp)


def run_increments(column, state, bcs, times, provider=None, linear_mode=False, E_ref=config.CELL_REFERENCE_E,
                   tolerance=1e-10, max_halvings=config.MAX_HALVINGS, stop=None, progress_callback=None):
    """Steps through the increasing time list; returns (final state, list of StepRecord)."""
    history = []
    total = len(times)
    for i, t in enumerate(times):
        dt = t - state.t
        state = step(column, state, dt, bcs, provider, linear_mode, E_ref, tolerance, max_halvings)
        history.append(record_step(column, state, dt))
        logger.debug("Increment %d: t=%.6g, u_top=%.6g, carry %.2e / %.2e", state.increments, state.t,
                     state.u[-1], history[-1].carry_u, history[-1].carry_p)
        if progress_callback:
            progress_callback(current_row=i + 1, total_rows=total)
        if stop is not None and stop(history):
            break
    return state, history


def drainage_accounting(history):
    """Cumulative drained volume per face after each increment."""
    faces = ("bottom", "top")
    return {face: np.cumsum([rec.fluxes.get(face, 0.0) * rec.dt for rec in history]) for face in faces}


def mass_balance(history, initial_storage=0.0):
    if not history:
        return {"storage_change": 0.0, "drained": 0.0, "error": 0.0}
    storage_change = history[-1].storage - initial_storage
    drained = sum(acc[-1] for acc in drainage_accounting(history).values())
    scale = max(abs(drained), abs(storage_change), 1e-300)
    return {"storage_change": storage_change, "drained": drained,
            "error": abs(storage_change + drained) / scale}


def time_grid(ramp_time, ramp_increments, end_time, n_steps, growth=1.0):
    """Ramp increments of equal length, then n_steps geometrically growing up to end_time."""
    ramp = np.linspace(0.0, ramp_time, ramp_increments + 1)[1:]
    span = end_time - ramp_time
    if n_steps < 1 or span <= 0.0:
        return ramp
    if growth > 1.0:
        dts = growth ** np.arange(n_steps)
    else:
        dts = np.ones(n_steps)
    tail = ramp_time + span * np.cumsum(dts) / np.sum(dts)
    tail[-1] = end_time
    return np.concatenate([ramp, tail])


def ramp(t, ramp_time):
    return 1.0 if ramp_time <= 0.0 else min(max(t / ramp_time, 0.0), 1.0)


# --- Oracles ---
def terzaghi_pressure(x, t, p0, cv, height, terms=200):
    """Series solution with an impermeable base at x = 0 and a drained top at x = height."""
    x = np.asarray(x, dtype=float)
    k = np.arange(1, terms + 1)
    m = (2 * k - 1) * np.pi / 2.0
    coef = 4.0 / ((2 * k - 1) * np.pi) * (-1.0) ** (k - 1)
    decay = np.exp(-(m**2) * cv * t / height**2)
    return p0 * np.sum(coef * np.cos(np.multiply.outer(x, m) / height) * decay, axis=-1)


def drained_top_displacement(eff, load, length):
    return -load * length / eff.C11


def undrained_top_displacement(eff, load, length):
    return -load * length / (eff.C11 + eff.biot_modulus * eff.alpha_tilde**2)
