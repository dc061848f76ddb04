# expcli.py
"""Command-line front end for cell generation, training, the column experiments and verification."""
import argparse
import logging
import os
import sys

import numpy as np

import config
import dataset
import experiments
import export
import hyperverify
import microcell
import surrogate
from remodel import NeoHookeanParams

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_GATE = 0, 1, 2

# Recorded in every manifest next to the resolved configuration
CONVENTIONS = {
    "darcy_linear_velocity": "K_i * delta_p / l with l the dimensionless column length",
    "column_axis": "x = 0 at the base, x = l at the loaded top",
    "stretch": "1 + u_top / l",
    "time_scale": "mu_c L^4 / (f_c d^2); stress scale f_c / L^2; velocity scale f_c d^2 / (mu_c L^3)",
    "cell_sections": "square pore section for elastic problems, plus-channel section for Stokes",
}


def setup_logging(verbose=False, log_file=None):
    """Installs the console handler once, plus an optional file handler."""
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    formatter = logging.Formatter(config.LOG_FORMAT)
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    root.addHandler(console)
    if log_file:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)


def log_progress(current_row=0, total_rows=0):
    step = max(1, total_rows // 10)
    if current_row == total_rows or current_row % step == 0:
        logger.info("Progress: %d / %d", current_row, total_rows)


def _run_dir(cfg, name):
    return export.run_directory(cfg.paths.output_dir, name)


def _manifest(cfg, run_dir, command, summary):
    conventions = dict(CONVENTIONS, scales=experiments.scales_summary(cfg.scales))
    export.write_manifest(run_dir, command, config.config_to_dict(cfg), summary, conventions)


# --- Commands ---
def cmd_gen_cells(cfg, args):
    c = cfg.cells
    phi_grid = np.linspace(c.phi_min, c.phi_max, c.n_phi)
    nu_grid = np.linspace(c.nu_min, c.nu_max, c.n_nu)
    records, failures = microcell.generate_dataset(phi_grid, nu_grid, c.resolution, cfg.run.workers,
                                                   c.reference_E, progress_callback=log_progress)
    dataset.write_dataset(records, cfg.paths.dataset, failures)
    logger.info("Cell dataset written to '%s' (%d rows, %d failures)", cfg.paths.dataset, len(records), len(failures))
    return EXIT_OK


def cmd_train(cfg, args):
    records = dataset.read_dataset(cfg.paths.dataset, progress_callback=log_progress)
    bundle = surrogate.train(records, cfg.surrogate, cfg.run.seed, workers=cfg.run.workers, enforce_gate=False)
    surrogate.save_bundle(bundle, cfg.paths.bundle)
    run_dir = _run_dir(cfg, "train")
    errors = bundle.metadata["errors"]
    export.write_rows(os.path.join(run_dir, "training.csv"),
                      ["output", "epochs", "best_epoch", "train_error", "validation_error"],
                      [(name, info["epochs"], info["best_epoch"], info["train_error"], info["validation_error"])
                       for name, info in errors.items()])
    _manifest(cfg, run_dir, "train", {"validation_errors": bundle.validation_errors})
    surrogate.check_gate(bundle, cfg.surrogate.gate)
    return EXIT_OK


def _write_consolidation(result, run_dir):
    export.write_timeseries(result.history, result.column, os.path.join(run_dir, f"{result.mode}_timeseries.csv"))
    export.write_quadrature(result.history, os.path.join(run_dir, f"{result.mode}_quadrature.csv"))
    balance = result.mass_balance()
    final = result.history[-1]
    summary = {
        "settlement": float(result.settlement[-1]),
        "drained": float(result.drained[-1]),
        "mass_balance_error": balance["error"],
        "consolidation_time": result.consolidation_time,
        "increments": len(result.history),
        "final_uniformity": experiments.property_uniformity(final),
    }
    if result.mode == "linear":
        rows = experiments.terzaghi_check(result)
        export.write_rows(os.path.join(run_dir, "terzaghi_check.csv"), ["x", "t", "p", "p_oracle", "error"],
                          [(r["x"], r["t"], r["p"], r["p_oracle"], r["error"]) for r in rows])
        summary["terzaghi_max_error"] = max(r["error"] for r in rows)
    return summary


def cmd_consolidate(cfg, args):
    modes = ("linear", "remodelled") if args.both else (cfg.run.mode,)
    run_dir = _run_dir(cfg, args.name or "consolidation")
    results, summary = {}, {}
    for mode in modes:
        results[mode] = experiments.consolidate(cfg, linear_mode=(mode == "linear"), progress_callback=log_progress)
        summary[mode] = _write_consolidation(results[mode], run_dir)
    if len(results) == 2:
        lin, rem = results["linear"], results["remodelled"]
        # the two runs share the ramp but not necessarily the step count
        t = rem.times
        settle_lin = np.interp(t, lin.times, lin.settlement)
        drained_lin = np.interp(t, lin.times, lin.drained)
        peak = float(np.max(np.abs(lin.drained))) or 1.0
        summary["comparison"] = {
            "settlement_smaller_throughout": bool(np.all(rem.settlement <= settle_lin)),
            "drainage_smaller_throughout": bool(np.all(rem.drained <= drained_lin)),
            "normalised_drainage_final": float(rem.drained[-1] / peak),
        }
        export.write_rows(os.path.join(run_dir, "drainage.csv"),
                          ["t", "settlement_linear", "settlement_remodelled", "drained_linear_normalised",
                           "drained_remodelled_normalised"],
                          zip(t, settle_lin, rem.settlement, drained_lin / peak, rem.drained / peak))
    _manifest(cfg, run_dir, "consolidate", summary)
    return EXIT_OK


def cmd_darcy(cfg, args):
    run_dir = _run_dir(cfg, args.name or "darcy")
    sweep = experiments.darcy_sweep(cfg)
    export.write_darcy(sweep, os.path.join(run_dir, "darcy_sweep.csv"))
    fractions, y = sweep.fractions(), sweep.deviations()
    small = [abs(pt.v_rf / pt.linear_velocity - 1.0) for pt, f in zip(sweep.points, fractions) if f <= 0.05]
    summary = {"power_law_exponent": experiments.power_law_exponent(fractions, y),
               "small_load_linear_mismatch": max(small) if small else None}
    if cfg.loading.d_sweep:
        rows = experiments.cell_size_sweep(cfg)
        export.write_rows(os.path.join(run_dir, "darcy_d_sweep.csv"), ["d", "y", "deviation"],
                          [(r["d"], r["y"], r["deviation"]) for r in rows])
        summary["d_sweep_deviation"] = [r["deviation"] for r in rows]
    if cfg.loading.nu_sweep:
        rows = experiments.poisson_sweep(cfg)
        export.write_rows(os.path.join(run_dir, "darcy_nu_sweep.csv"), ["nu_i", "relative_deviation", "deviation"],
                          [(r["nu_i"], r["relative_deviation"], r["deviation"]) for r in rows])
        summary["nu_sweep_relative_deviation"] = [r["relative_deviation"] for r in rows]
    _manifest(cfg, run_dir, "darcy", summary)
    return EXIT_OK


def cmd_cyclic(cfg, args):
    run_dir = _run_dir(cfg, args.name or "cyclic")
    provider = experiments.resolve_provider(cfg, cfg.linear)
    result = experiments.cyclic_run(cfg, provider)
    tag = f"{result.direction}_T{result.period:g}"
    export.write_cycles(result, os.path.join(run_dir, f"cycles_{tag}.csv"))
    export.write_cycle_summary(result, os.path.join(run_dir, f"cycle_summary_{tag}.csv"))
    monotonic = experiments.cyclic_run(cfg, provider, monotonic=True)
    export.write_cycles(monotonic, os.path.join(run_dir, f"monotonic_{result.direction}.csv"))
    summary = {
        "hysteresis": result.hysteresis().tolist(),
        "residual_strain": result.residual_strain().tolist(),
        "mullins": experiments.mullins_check(result, monotonic),
        "fast_limit": experiments.fast_limit_stiffness(result),
    }
    if args.sweep_periods:
        rows = experiments.period_sweep(cfg, provider)
        export.write_rows(os.path.join(run_dir, "period_sweep.csv"),
                          ["period", "hysteresis", "min_stretch", "max_stretch"],
                          [(r["period"], r["hysteresis"], r["min_stretch"], r["max_stretch"]) for r in rows])
        summary["period_sweep"] = {f"{r['period']:g}": r["hysteresis"] for r in rows}
    if args.mirror:
        summary["direction_residuals"] = experiments.direction_asymmetry(cfg, provider)
    _manifest(cfg, run_dir, "cyclic", summary)
    return EXIT_OK


def cmd_verify_hyper(cfg, args):
    params = NeoHookeanParams.from_moduli(cfg.cells.reference_E, cfg.material.nu_i)
    counts = tuple(args.counts)
    study = hyperverify.convergence_study(params, args.stretch, counts, args.tangent)
    run_dir = _run_dir(cfg, args.name or "verify_hyper")
    export.write_uniaxial(study, os.path.join(run_dir, "uniaxial.csv"))
    errors = [row["error"] for row in study]
    decaying = all(b <= a for a, b in zip(errors, errors[1:]))
    passed = errors[-1] <= args.tolerance and decaying
    verdict = f"N={counts[-1]} relative error {errors[-1]:.3%} (limit {args.tolerance:.1%})"
    details = {"target_stretch": args.stretch, "tangent": args.tangent, "oracle": study[0]["oracle"],
               "C10": params.C10, "D1": params.D1, "errors_decay": decaying}
    export.create_verification_pdf("Incremental hyperelastic verification", passed, verdict, details,
                                   ["N", "nominal stress", "oracle", "relative error"],
                                   [(r["N"], r["nominal_stress"], r["oracle"], r["error"]) for r in study],
                                   os.path.join(run_dir, "verify_hyper.pdf"))
    _manifest(cfg, run_dir, "verify-hyper", {"errors": dict(zip(map(str, counts), errors)), "passed": passed})
    if not passed:
        logger.error("Hyperelastic verification failed: %s", verdict)
        return EXIT_GATE
    return EXIT_OK


def cmd_verify_ann(cfg, args):
    bundle = surrogate.load_bundle(cfg.paths.bundle)
    records = dataset.read_dataset(cfg.paths.dataset)
    held_out = [records[i] for i in bundle.metadata.get("validation_indices", []) if i < len(records)]
    if not held_out:
        raise surrogate.TrainingError("Bundle metadata lists no held-out rows that exist in the dataset")
    errors = surrogate.evaluate_bundle(bundle, held_out)
    gate = cfg.surrogate.gate
    passed = all(err <= gate for err in errors.values())
    run_dir = _run_dir(cfg, args.name or "verify_ann")
    export.write_rows(os.path.join(run_dir, "held_out_errors.csv"), ["output", "relative_error", "gate"],
                      [(name, err, gate) for name, err in errors.items()])
    summary = {"held_out_rows": len(held_out), "errors": errors, "passed": passed}
    if args.spot_check:
        spot = experiments.oracle_spot_check(cfg, bundle)
        summary["spot_check"] = spot
        passed = passed and spot["passed"]
    verdict = f"worst held-out relative error {max(errors.values()):.3%} (gate {gate:.1%})"
    export.create_verification_pdf("Surrogate verification", passed, verdict,
                                   {k: v for k, v in summary.items() if k != "errors"},
                                   ["output", "relative error"], [(k, v) for k, v in errors.items()],
                                   os.path.join(run_dir, "verify_ann.pdf"))
    _manifest(cfg, run_dir, "verify-ann", summary)
    if not passed:
        logger.error("Surrogate verification failed: %s", verdict)
        return EXIT_GATE
    return EXIT_OK


COMMANDS = {
    "gen-cells": cmd_gen_cells,
    "train": cmd_train,
    "consolidate": cmd_consolidate,
    "darcy": cmd_darcy,
    "cyclic": cmd_cyclic,
    "verify-hyper": cmd_verify_hyper,
    "verify-ann": cmd_verify_ann,
}


def build_parser():
    parser = argparse.ArgumentParser(description="Multiscale finite-strain poroelastic column experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Experiment TOML file (defaults are used for missing keys).')
    common.add_argument('--linear', action='store_true', help='Skip remodelling (linear poroelasticity).')
    common.add_argument('--increments', type=int, help='Override loading.ramp_increments.')
    common.add_argument('--out', help='Override paths.output_dir.')
    common.add_argument('--workers', type=int, help='Override run.workers.')
    common.add_argument('--seed', type=int, help='Override run.seed.')
    common.add_argument('--name', help='Run directory name under the output dir.')
    common.add_argument('--verbose', action='store_true', help='Debug logging.')

    sub = parser.add_subparsers(dest='command', required=True)
    for name in ("gen-cells", "train", "darcy"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("consolidate", parents=[common])
    p.add_argument('--both', action='store_true', help='Run linear and remodelled modes and compare.')
    p = sub.add_parser("cyclic", parents=[common])
    p.add_argument('--sweep-periods', action='store_true', help='Also run every loading.cycle_periods entry.')
    p.add_argument('--mirror', action='store_true', help='Compare compression and tension residual strain.')
    p = sub.add_parser("verify-hyper", parents=[common])
    p.add_argument('--stretch', type=float, default=1.3)
    p.add_argument('--counts', type=int, nargs='+', default=[1, 10, 100, 1000])
    p.add_argument('--tangent', choices=hyperverify.TANGENT_MODES, default="full")
    p.add_argument('--tolerance', type=float, default=0.01)
    p = sub.add_parser("verify-ann", parents=[common])
    p.add_argument('--spot-check', action='store_true',
                   help='Also swap in direct cell solves at random consolidation increments.')
    return parser


def overrides_from_args(args):
    return {
        "run.mode": "linear" if args.linear else None,
        "loading.ramp_increments": args.increments,
        "paths.output_dir": args.out,
        "run.workers": args.workers,
        "run.seed": args.seed,
    }


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        cfg = config.load_experiment_config(args.config, overrides_from_args(args))
        os.makedirs(cfg.paths.output_dir, exist_ok=True)
        setup_logging(args.verbose, os.path.join(cfg.paths.output_dir, config.LOG_FILE_NAME))
        logger.info("Starting '%s' (mode %s, seed %d)", args.command, cfg.run.mode, cfg.run.seed)
        code = COMMANDS[args.command](cfg, args)
    except surrogate.GateError as e:
        logger.error("Gate failure: %s", e)
        return EXIT_GATE
    except Exception as e:
        logger.error("Command '%s' failed: %s", args.command, e)
        logger.debug("Traceback:", exc_info=True)
        return EXIT_ERROR
    if code == EXIT_OK:
        logger.info("Command '%s' finished successfully.", args.command)
    return code


if __name__ == "__main__":
    sys.exit(main())
