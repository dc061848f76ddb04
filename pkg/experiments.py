# experiments.py
"""Consolidation, Darcy-deviation and cyclic-loading drivers on the macro column."""
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

import config
from macro1d import (ENDS, BoundaryCondition, Column, MacroState, drainage_accounting, mass_balance, ramp,
                     run_increments, terzaghi_pressure, time_grid)
from microcell import DirectCellProvider
from scales import CharacteristicScales, derive_scales, from_dimensionless, to_dimensionless
from surrogate import load_bundle
from upscale import consolidation_coefficient, skempton_pressure

logger = logging.getLogger(__name__)


class SteadyStateError(RuntimeError):
    pass


# --- Shared set-up ---
def resolve_provider(cfg, linear_mode, provider=None):
    """Trained bundle if present; linear runs fall back to a direct cell solve."""
    if provider is not None:
        return provider
    if os.path.exists(cfg.paths.bundle):
        return load_bundle(cfg.paths.bundle)
    if linear_mode:
        logger.info("No surrogate bundle at '%s'; linear mode uses a direct cell solve", cfg.paths.bundle)
        return DirectCellProvider(cfg.cells.resolution, cfg.cells.reference_E)
    raise FileNotFoundError(f"Surrogate bundle '{cfg.paths.bundle}' is missing; remodelled runs need one "
                            f"(generate cells and train first)")


def build_column(cfg, provider, nu_i=None, scales=None):
    cs = scales or cfg.scales
    m = cfg.material
    length = to_dimensionless(cfg.geometry.length, "length", cs)
    E_i = to_dimensionless(m.E_i, "modulus", cs)
    return Column.uniform(length, cfg.geometry.n_elements, m.phi_i, E_i, m.nu_i if nu_i is None else nu_i,
                          provider, cfg.cells.reference_E)


def hydraulic_bcs(cfg, env=0.0, scales=None):
    cs = scales or cfg.scales
    ld = cfg.loading
    faces = ENDS if ld.drainage == "both" else (ld.drainage,)
    dx = to_dimensionless(ld.drainage_length, "length", cs)
    bcs = []
    for end in ENDS:
        if end not in faces:
            bcs.append(BoundaryCondition("impermeable", end))
        elif dx > 0.0:
            bcs.append(BoundaryCondition("free_drainage", end, drainage_length=dx, env_pressure=env))
        else:
            bcs.append(BoundaryCondition("pressure", end, value=env))
    return bcs


def undrained_modulus(eff):
    return eff.C11 + eff.biot_modulus * eff.alpha_tilde**2


def ramp_increments(requested, strain):
    """Raises the ramp count until the first increment strain is at most FIRST_INCREMENT_STRAIN."""
    needed = math.ceil(abs(strain) / config.FIRST_INCREMENT_STRAIN - 1e-12)
    if needed > requested:
        logger.info("Ramp raised from %d to %d increments to keep the first increment strain <= %.0e",
                    requested, needed, config.FIRST_INCREMENT_STRAIN)
    return max(requested, needed)


def consolidation_time(eff, length):
    return length**2 / consolidation_coefficient(eff)


def linear_profile_deviation(x, u):
    """Max deviation from a least-squares line, relative to max |u|."""
    umax = np.max(np.abs(u))
    if umax == 0.0:
        return 0.0
    coef = np.polyfit(x, u, 1)
    return float(np.max(np.abs(np.polyval(coef, x) - u)) / umax)


def property_uniformity(record, names=("phi", "E", "nu", "C11", "K")):
    """(max - min) / |mean| of each quadrature-point property."""
    out = {}
    for name in names:
        v = record.qp[name]
        mean = abs(np.mean(v))
        out[name] = float((np.max(v) - np.min(v)) / mean) if mean > 0.0 else 0.0
    return out


# --- Consolidation ---
@dataclass
class ConsolidationResult:
    mode: str
    column: Column
    history: list
    load: float
    p0: float
    cv: float
    consolidation_time: float
    ramp_time: float
    end_time: float
    eff0: object
    scales: CharacteristicScales

    @property
    def times(self):
        return np.array([rec.t for rec in self.history])

    @property
    def settlement(self):
        return np.array([-rec.u[-1] for rec in self.history])

    @property
    def drained(self):
        acc = drainage_accounting(self.history)
        return acc["bottom"] + acc["top"]

    def mass_balance(self):
        return mass_balance(self.history)


def consolidate(cfg, provider=None, linear_mode=None, progress_callback=None):
    """Column compressed by a ramped constant top load, drained per cfg.loading.drainage."""
    linear_mode = cfg.linear if linear_mode is None else linear_mode
    provider = resolve_provider(cfg, linear_mode, provider)
    cs, ld, sv = cfg.scales, cfg.loading, cfg.solver
    column = build_column(cfg, provider)
    eff0 = column.points[0].eff
    load = to_dimensionless(ld.magnitude, "stress", cs)
    env = to_dimensionless(ld.env_pressure, "pressure", cs)
    tc = consolidation_time(eff0, column.length)
    ramp_time = to_dimensionless(ld.ramp_duration, "time", cs) if ld.ramp_duration > 0.0 else 1e-4 * tc
    end_time = to_dimensionless(sv.end_time, "time", cs) if sv.end_time > 0.0 else sv.end_time_factor * tc
    n_ramp = ramp_increments(ld.ramp_increments, load / undrained_modulus(eff0))
    sign = -1.0 if ld.direction == "compression" else 1.0

    bcs = [BoundaryCondition("displacement", "bottom", 0.0),
           BoundaryCondition("traction", "top", lambda t: sign * load * ramp(t, ramp_time))]
    bcs += hydraulic_bcs(cfg, env)
    times = time_grid(ramp_time, n_ramp, end_time, sv.n_steps, sv.dt_growth)
    mode = "linear" if linear_mode else "remodelled"
    logger.info("Starting %s consolidation: load %.4g, c_v %.4g, consolidation time %.4g (%.4g s), %d increments",
                mode, load, consolidation_coefficient(eff0), tc, from_dimensionless(tc, "time", cs), len(times))
    _, history = run_increments(column, MacroState.zero(column), bcs, times, provider, linear_mode,
                                cfg.cells.reference_E, sv.tolerance, sv.max_halvings,
                                progress_callback=progress_callback)
    logger.info("Consolidation (%s) finished successfully: settlement %.6g", mode, -history[-1].u[-1])
    return ConsolidationResult(mode=mode, column=column, history=history, load=load,
                               p0=skempton_pressure(eff0, load), cv=consolidation_coefficient(eff0),
                               consolidation_time=tc, ramp_time=ramp_time, end_time=end_time, eff0=eff0, scales=cs)


def terzaghi_check(result, fractions=((0.0, 0.05), (0.25, 0.1), (0.5, 0.2), (0.75, 0.3), (0.0, 0.5))):
    """Compares nodal pressure with the series at (depth fraction from the base, time / t_c) pairs."""
    column = result.column
    rows = []
    times = result.times
    for x_frac, t_frac in fractions:
        target = t_frac * result.consolidation_time
        k = int(np.argmin(np.abs(times - target)))
        rec = result.history[k]
        x = x_frac * column.length
        p_num = float(np.interp(x, column.vertices, rec.p))
        t_eff = rec.t - 0.5 * result.ramp_time
        p_ref = float(terzaghi_pressure(x, t_eff, result.p0, result.cv, column.length))
        rows.append({"x": x, "t": rec.t, "p": p_num, "p_oracle": p_ref,
                     "error": abs(p_num - p_ref) / result.load})
    return rows


# --- Darcy deviation ---
@dataclass
class DarcyPoint:
    delta_p: float              # dimensionless
    v_rf: float                 # dimensionless steady outflow velocity
    K_i: float
    length: float
    steady_time: float
    history: list = field(default_factory=list, repr=False)

    @property
    def linear_velocity(self):
        return self.K_i * self.delta_p / self.length


def darcy_point(cfg, provider, delta_p, linear_mode=False, nu_i=None, scales=None):
    """Runs one pressure-driven column (both ends fixed) to steady flow."""
    cs = scales or cfg.scales
    sv = cfg.solver
    column = build_column(cfg, provider, nu_i=nu_i, scales=cs)
    eff0 = column.points[0].eff
    tc = consolidation_time(eff0, column.length)
    ramp_time = 1e-3 * tc
    n_ramp = ramp_increments(cfg.loading.ramp_increments, eff0.alpha_tilde * delta_p / eff0.C11)
    bcs = [BoundaryCondition("displacement", "bottom", 0.0),
           BoundaryCondition("pressure", "bottom", lambda t: delta_p * ramp(t, ramp_time)),
           BoundaryCondition("displacement", "top", 0.0),
           BoundaryCondition("pressure", "top", 0.0)]
    times = time_grid(ramp_time, n_ramp, sv.max_time_factor * tc, max(sv.n_steps, 200), sv.dt_growth)

    def steady(history):
        rec = history[-1]
        if rec.t <= ramp_time:
            return False
        q_in, q_out = -rec.fluxes["bottom"], rec.fluxes["top"]
        return q_in > 0.0 and abs(q_in - q_out) / q_in <= sv.steady_tol

    _, history = run_increments(column, MacroState.zero(column), bcs, times, provider, linear_mode,
                                cfg.cells.reference_E, sv.tolerance, sv.max_halvings, stop=steady)
    if not steady(history):
        raise SteadyStateError(f"No steady flow for delta_p={delta_p:.6g} within t={times[-1]:.6g} "
                               f"({sv.max_time_factor} consolidation times)")
    rec = history[-1]
    return DarcyPoint(delta_p=delta_p, v_rf=rec.fluxes["top"], K_i=eff0.K11, length=column.length,
                      steady_time=rec.t, history=history)


@dataclass
class DarcySweep:
    points: list
    delta_p_max: float
    scales: CharacteristicScales

    def deviations(self):
        """Normalised deviation y = (v - K_i dP / l) / (v_max - K_i dP_max / l)."""
        top = self.points[-1]
        denom = top.v_rf - top.linear_velocity
        if denom == 0.0:
            return np.zeros(len(self.points))
        return np.array([(pt.v_rf - pt.linear_velocity) / denom for pt in self.points])

    def fractions(self):
        return np.array([pt.delta_p / self.delta_p_max for pt in self.points])

    def dimensional_deviation(self):
        """v_rf - K_i dP / L in m/s."""
        return np.array([from_dimensionless(pt.v_rf - pt.linear_velocity, "velocity", self.scales)
                         for pt in self.points])


def darcy_sweep(cfg, provider=None, linear_mode=None, nu_i=None, scales=None):
    linear_mode = cfg.linear if linear_mode is None else linear_mode
    provider = resolve_provider(cfg, linear_mode, provider)
    cs = scales or cfg.scales
    dp_max = to_dimensionless(cfg.material.E_i / 4.0, "pressure", cs)
    points = []
    for frac in sorted(cfg.loading.delta_p_fractions):
        pt = darcy_point(cfg, provider, frac * dp_max, linear_mode, nu_i, cs)
        logger.info("Darcy dP/dP_max=%.3g: v_rf=%.6g, linear %.6g, ratio %.6f", frac, pt.v_rf,
                    pt.linear_velocity, pt.v_rf / pt.linear_velocity)
        points.append(pt)
    return DarcySweep(points=points, delta_p_max=dp_max, scales=cs)


def power_law_exponent(fractions, deviations):
    """Slope of log|y| against log(dP / dP_max) over the nonzero points."""
    fractions, deviations = np.asarray(fractions), np.abs(np.asarray(deviations))
    mask = (fractions > 0.0) & (deviations > 0.0)
    if mask.sum() < 2:
        raise ValueError("Need at least two nonzero deviations to fit a power law")
    slope, _ = np.polyfit(np.log(fractions[mask]), np.log(deviations[mask]), 1)
    return float(slope)


def cell_size_sweep(cfg, provider=None, linear_mode=None):
    """Top-load deviation for each cell size d at fixed physical pressures."""
    rows = []
    for d in cfg.loading.d_sweep:
        cs = replace(cfg.scales, d=d)
        sweep = darcy_sweep(cfg, provider, linear_mode, scales=cs)
        rows.append({"d": d, "y": sweep.deviations()[-1],
                     "deviation": float(sweep.dimensional_deviation()[-1]), "sweep": sweep})
        logger.info("Darcy cell size d=%.3g m: deviation %.6g m/s", d, rows[-1]["deviation"])
    return rows


def poisson_sweep(cfg, provider=None, linear_mode=None):
    rows = []
    for nu in cfg.loading.nu_sweep:
        sweep = darcy_sweep(cfg, provider, linear_mode, nu_i=nu)
        top = sweep.points[-1]
        rows.append({"nu_i": nu, "relative_deviation": (top.v_rf - top.linear_velocity) / top.linear_velocity,
                     "deviation": float(sweep.dimensional_deviation()[-1]), "sweep": sweep})
        logger.info("Darcy nu_i=%.3g: relative deviation %.6g", nu, rows[-1]["relative_deviation"])
    return rows


# --- Cyclic loading ---
def triangular_wave(t, period):
    phase = (t / period) % 1.0
    return 2.0 * phase if phase <= 0.5 else 2.0 * (1.0 - phase)


@dataclass
class CyclicResult:
    period: float               # s
    direction: str
    column: Column
    history: list
    load: np.ndarray            # Pa, positive in the loading direction
    stretch: np.ndarray
    cycle: np.ndarray
    steps_per_cycle: int
    scales: CharacteristicScales

    def cycle_slices(self):
        n = self.steps_per_cycle
        return [slice(c * n, (c + 1) * n) for c in range(len(self.load) // n)]

    def hysteresis(self):
        """Shoelace area of each closed (stretch, load) loop, Pa."""
        areas = []
        for sl in self.cycle_slices():
            x0 = 1.0 if sl.start == 0 else self.stretch[sl.start - 1]
            x = np.concatenate([[x0], self.stretch[sl]])
            y = np.concatenate([[0.0], self.load[sl]])
            areas.append(shoelace_area(x, y))
        return np.array(areas)

    def residual_strain(self):
        """|stretch - 1| at the end of each cycle (load back at zero)."""
        return np.array([abs(self.stretch[sl.stop - 1] - 1.0) for sl in self.cycle_slices()])

    def residual_increments(self):
        return np.diff(self.residual_strain(), prepend=0.0)


def shoelace_area(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def cyclic_run(cfg, provider=None, period=None, linear_mode=None, direction=None, cycles=None,
               monotonic=False):
    """
    Triangular top load between zero and the configured magnitude.  With
    monotonic=True only the first loading half-cycle is run, for the
    Mullins comparison.
    """
    linear_mode = cfg.linear if linear_mode is None else linear_mode
    provider = resolve_provider(cfg, linear_mode, provider)
    cs, ld, sv = cfg.scales, cfg.loading, cfg.solver
    period = ld.cycle_period if period is None else period
    direction = direction or ld.direction
    cycles = ld.cycle_count if cycles is None else cycles
    column = build_column(cfg, provider)
    eff0 = column.points[0].eff
    load = to_dimensionless(ld.magnitude, "stress", cs)
    T = to_dimensionless(period, "time", cs)
    sign = -1.0 if direction == "compression" else 1.0
    env = to_dimensionless(ld.env_pressure, "pressure", cs)

    # half a cycle must keep each increment below the strain limit in the stiffest (undrained) response
    n_half = ramp_increments(ld.steps_per_cycle // 2, load / undrained_modulus(eff0))
    steps = 2 * n_half
    bcs = [BoundaryCondition("displacement", "bottom", 0.0),
           BoundaryCondition("traction", "top", lambda t: sign * load * triangular_wave(t, T))]
    bcs += hydraulic_bcs(cfg, env)
    n_total = n_half if monotonic else cycles * steps
    times = T * np.arange(1, n_total + 1) / steps
    logger.info("Starting %s cyclic run: period %.4g s, %d cycles, %d increments per cycle, %s",
                direction, period, 0 if monotonic else cycles, steps, "linear" if linear_mode else "remodelled")
    _, history = run_increments(column, MacroState.zero(column), bcs, times, provider, linear_mode,
                                cfg.cells.reference_E, sv.tolerance, sv.max_halvings)
    load_pa = np.array([from_dimensionless(load * triangular_wave(rec.t, T), "stress", cs) for rec in history])
    stretch = np.array([1.0 + rec.u[-1] / column.length for rec in history])
    cycle = np.arange(len(history)) // steps
    return CyclicResult(period=period, direction=direction, column=column, history=history, load=load_pa,
                        stretch=stretch, cycle=cycle, steps_per_cycle=steps, scales=cs)


def mullins_check(cyclic, monotonic):
    """
    Mean load difference (post-cycling reload minus monotonic) at equal
    strain over the last cycle's loading branch; negative means softer.
    """
    last = cyclic.cycle_slices()[-1]
    half = cyclic.steps_per_cycle // 2
    strain_re = np.abs(cyclic.stretch[last.start:last.start + half] - 1.0)
    load_re = cyclic.load[last.start:last.start + half]
    strain_mono = np.concatenate([[0.0], np.abs(monotonic.stretch - 1.0)])
    load_mono = np.concatenate([[0.0], monotonic.load])
    order = np.argsort(strain_mono)
    inside = (strain_re >= strain_mono.min()) & (strain_re <= strain_mono.max())
    if not np.any(inside):
        return {"mean_difference": 0.0, "softer": False, "points": 0}
    ref = np.interp(strain_re[inside], strain_mono[order], load_mono[order])
    diff = float(np.mean(load_re[inside] - ref))
    return {"mean_difference": diff, "softer": diff < 0.0, "points": int(inside.sum())}


def fast_limit_stiffness(cyclic):
    """Secant stiffness of the first loading branch against the undrained modulus, both dimensionless."""
    half = cyclic.steps_per_cycle // 2
    rec = cyclic.history[half - 1]
    strain = abs(cyclic.stretch[half - 1] - 1.0)
    secant = to_dimensionless(cyclic.load[half - 1], "stress", cyclic.scales) / strain if strain > 0.0 else math.inf
    undrained = float(np.mean(rec.qp["C11"] + rec.qp["M"] * rec.qp["alpha"] ** 2))
    return {"secant": secant, "undrained": undrained, "relative_difference": abs(secant - undrained) / undrained}


def direction_asymmetry(cfg, provider=None, linear_mode=None):
    """Residual strain after the last cycle in compression and in tension."""
    out = {}
    for direction in ("compression", "tension"):
        res = cyclic_run(cfg, provider, linear_mode=linear_mode, direction=direction)
        out[direction] = float(res.residual_strain()[-1])
    return out


def period_sweep(cfg, provider=None, linear_mode=None):
    rows = []
    for period in cfg.loading.cycle_periods:
        res = cyclic_run(cfg, provider, period=period, linear_mode=linear_mode)
        area = res.hysteresis()
        rows.append({"period": period, "hysteresis": float(area[-1]), "min_stretch": float(res.stretch.min()),
                     "max_stretch": float(res.stretch.max()), "result": res})
        logger.info("Cycle period %.4g s: last-cycle hysteresis %.6g Pa", period, area[-1])
    return rows


def scales_summary(cs):
    d = derive_scales(cs)
    return {"L": cs.L, "d": cs.d, "mu_c": cs.mu_c, "f_c": cs.f_c, "epsilon": cs.epsilon,
            "velocity_scale": d.velocity_scale, "time_scale": d.time_scale, "stress_scale": d.stress_scale,
            "conductivity_scale": d.conductivity_scale}


# --- Oracle-equivalence spot check ---
class SwitchingProvider:
    """Surrogate everywhere except during the chosen increments, where cells are solved directly."""

    def __init__(self, surrogate, direct, increments):
        self.surrogate = surrogate
        self.direct = direct
        self.increments = set(increments)
        self.current = 0

    def cell_tensors(self, nu, phi):
        source = self.direct if self.current in self.increments else self.surrogate
        return source.cell_tensors(nu, phi)

    def advance(self, current_row=0, total_rows=0):
        self.current = current_row


def oracle_spot_check(cfg, bundle, direct=None, n_increments=3, seed=None):
    """
    Consolidation run twice: surrogate only, and with direct cell solves at
    n_increments random increments.  Returns the nodal changes next to
    three times the worst validation error.
    """
    seed = cfg.run.seed if seed is None else seed
    direct = direct or DirectCellProvider(cfg.cells.resolution, cfg.cells.reference_E, digits=4)
    baseline = consolidate(cfg, bundle, linear_mode=False)
    n = len(baseline.history)
    chosen = np.sort(np.random.default_rng(seed).choice(n, size=min(n_increments, n), replace=False))
    switching = SwitchingProvider(bundle, direct, chosen)
    logger.info("Starting oracle spot check with direct cell solves at increments %s", chosen.tolist())
    checked = consolidate(cfg, switching, linear_mode=False, progress_callback=switching.advance)
    u_ref = np.array([rec.u for rec in baseline.history])
    p_ref = np.array([rec.p for rec in baseline.history])
    u_new = np.array([rec.u for rec in checked.history])
    p_new = np.array([rec.p for rec in checked.history])
    du = float(np.max(np.abs(u_new - u_ref)) / max(np.max(np.abs(u_ref)), 1e-300))
    dp = float(np.max(np.abs(p_new - p_ref)) / baseline.load)
    limit = 3.0 * max(bundle.validation_errors.values(), default=0.0)
    return {"increments": chosen.tolist(), "u_change": du, "p_change": dp, "limit": limit,
            "passed": max(du, dp) < limit}
