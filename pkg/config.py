# config.py
import logging
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields

from scales import CharacteristicScales, ScaleError

logger = logging.getLogger(__name__)

# --- Determine Base Directory ---
# If running as a bundled executable (frozen), use the directory of the executable.
# Otherwise (running as script), use the directory of this config file.
if getattr(sys, 'frozen', False):
    BASE_DIR = os.path.dirname(sys.executable)
else:
    BASE_DIR = os.path.abspath(os.path.dirname(__file__))

# --- Persistent File/Directory Paths (Relative to BASE_DIR) ---
DATA_DIR = os.path.join(BASE_DIR, "data")
EXPORT_DIR = os.path.join(BASE_DIR, "runs")
DATASET_NAME = "cells.csv"
BUNDLE_NAME = "surrogate.json"
DATASET_PATH = os.path.join(DATA_DIR, DATASET_NAME)
BUNDLE_PATH = os.path.join(DATA_DIR, BUNDLE_NAME)
MANIFEST_NAME = "run_manifest.json"
LOG_FILE_NAME = "run.log"

# --- Bundled Resource Paths ---
_SCRIPT_DIR = os.path.abspath(os.path.dirname(__file__))
CONFIG_DIR = os.path.join(_SCRIPT_DIR, "configs")
FONT_DIR = os.path.join(_SCRIPT_DIR, "fonts")
FONT_REGULAR_PATH = os.path.join(FONT_DIR, "DejaVuSans.ttf")
FONT_BOLD_PATH = os.path.join(FONT_DIR, "DejaVuSans-Bold.ttf")
FONT_ITALIC_PATH = os.path.join(FONT_DIR, "DejaVuSans-Oblique.ttf")
FONT_BOLD_ITALIC_PATH = os.path.join(FONT_DIR, "DejaVuSans-BoldOblique.ttf")

# --- Logging ---
LOG_FORMAT = '%(asctime)s :: %(levelname)s :: %(name)s :: %(message)s'

# --- Cell problems / dataset ---
CELL_REFERENCE_E = 15.0
CELL_RESOLUTION = 1.0 / 64.0
PHI_TRAIN_MIN, PHI_TRAIN_MAX = 0.082, 0.783
NU_TRAIN_MIN, NU_TRAIN_MAX = 0.1, 0.45
GRID_SIZE = 50
CSV_FLOAT_FORMAT = ".17g"
DATASET_COLUMNS = ["phi", "nu", "M11", "M12", "M44", "Q11", "K11"]

# --- Surrogate ---
SURROGATE_OUTPUTS = ["M11", "M12", "M44", "Q11", "K11"]
SURROGATE_ARCHITECTURES = {
    "M11": [50, 50, 50],
    "M12": [50, 50, 50],
    "M44": [20, 20, 20],
    "Q11": [50, 50, 50],
    "K11": [10, 10, 10],
}
BUNDLE_VERSION = 1
MIN_TRAINING_ROWS = 100
EXTRAPOLATION_MARGIN = 0.05
VALIDATION_GATE = 0.02

# --- Macro column ---
MIN_ELEMENTS = 4
FIRST_INCREMENT_STRAIN = 1e-3
MAX_HALVINGS = 5

# --- PDF Settings ---
PDF_FONT_FALLBACK = "Helvetica"
PDF_FONT_NAME_DEJAVU = "DejaVu"
PDF_FONT_SIZE_TITLE = 16
PDF_FONT_SIZE_HEADER = 12
PDF_FONT_SIZE_BODY = 10
PDF_LABEL_WIDTH = 70
PDF_LINE_HEIGHT = 6
PDF_DIVIDER_THICKNESS = 0.2
PDF_DIVIDER_MARGIN = 3


class ConfigError(ValueError):
    pass


# --- Experiment configuration tree ---
@dataclass(frozen=True)
class MaterialConfig:
    E_i: float = 15e6          # Pa
    nu_i: float = 0.3
    phi_i: float = 0.3


@dataclass(frozen=True)
class GeometryConfig:
    length: float = 7.5        # m
    n_elements: int = 60


@dataclass(frozen=True)
class LoadingConfig:
    kind: str = "consolidation"
    magnitude: float = 3e6     # Pa, P = 0.2 E_i
    ramp_increments: int = 10
    ramp_duration: float = 0.0  # s, 0 picks a small fraction of the consolidation time
    direction: str = "compression"
    drainage: str = "top"
    drainage_length: float = 0.0  # m, 0 means Dirichlet drainage
    env_pressure: float = 0.0   # Pa
    cycle_period: float = 108.0  # s
    cycle_count: int = 20
    steps_per_cycle: int = 80
    cycle_periods: list = field(default_factory=lambda: [3.0, 13.0, 27.0, 54.0, 108.0, 216.0,
                                                         1080.0, 10800.0, 108000.0])
    delta_p_fractions: list = field(default_factory=lambda: [0.01, 0.02, 0.05, 0.1, 0.2, 0.4,
                                                             0.6, 0.8, 1.0])
    d_sweep: list = field(default_factory=list)
    nu_sweep: list = field(default_factory=list)


@dataclass(frozen=True)
class SolverConfig:
    n_steps: int = 120
    dt_growth: float = 1.06
    end_time: float = 0.0       # s, 0 picks end_time_factor consolidation times
    end_time_factor: float = 2.0
    tolerance: float = 1e-10
    max_halvings: int = MAX_HALVINGS
    steady_tol: float = 1e-3
    max_time_factor: float = 40.0


@dataclass(frozen=True)
class RunConfig:
    mode: str = "remodelled"
    seed: int = 42
    workers: int = 1


@dataclass(frozen=True)
class PathsConfig:
    dataset: str = DATASET_PATH
    bundle: str = BUNDLE_PATH
    output_dir: str = EXPORT_DIR


@dataclass(frozen=True)
class CellsConfig:
    n_phi: int = GRID_SIZE
    n_nu: int = GRID_SIZE
    phi_min: float = PHI_TRAIN_MIN
    phi_max: float = PHI_TRAIN_MAX
    nu_min: float = NU_TRAIN_MIN
    nu_max: float = NU_TRAIN_MAX
    resolution: float = CELL_RESOLUTION
    reference_E: float = CELL_REFERENCE_E


@dataclass(frozen=True)
class SurrogateConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 50000
    patience: int = 2000
    validation_fraction: float = 0.1
    gate: float = VALIDATION_GATE
    log_every: int = 1000
    architectures: dict = field(default_factory=lambda: dict(SURROGATE_ARCHITECTURES))


DEFAULT_SCALES = {"L": 7.5, "d": 1e-5, "mu_c": 1e-3, "f_c": 1e6 * 7.5**2}

_SECTIONS = {
    "material": MaterialConfig,
    "geometry": GeometryConfig,
    "loading": LoadingConfig,
    "solver": SolverConfig,
    "run": RunConfig,
    "paths": PathsConfig,
    "cells": CellsConfig,
    "surrogate": SurrogateConfig,
}

LOADING_KINDS = ("consolidation", "darcy", "cyclic")
RUN_MODES = ("linear", "remodelled")
DIRECTIONS = ("compression", "tension")
DRAINAGE_FACES = ("top", "bottom", "both")


@dataclass(frozen=True)
class ExperimentConfig:
    scales: CharacteristicScales
    material: MaterialConfig = field(default_factory=MaterialConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    loading: LoadingConfig = field(default_factory=LoadingConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    run: RunConfig = field(default_factory=RunConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    cells: CellsConfig = field(default_factory=CellsConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)

    @property
    def linear(self):
        return self.run.mode == "linear"


def _resolve_path(value):
    if os.path.isabs(value):
        return value
    return os.path.join(BASE_DIR, value)


def _build_section(name, cls, table):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"Unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        section = cls(**table)
    except TypeError as e:
        raise ConfigError(f"Invalid [{name}] table: {e}") from e
    return section


def _apply_overrides(data, overrides):
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        try:
            section, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"Override '{dotted}' must look like 'section.key'") from None
        data.setdefault(section, {})[key] = value
    return data


def _validate(cfg):
    m, g, ld, s, c, sg = cfg.material, cfg.geometry, cfg.loading, cfg.solver, cfg.cells, cfg.surrogate
    if not m.E_i > 0.0:
        raise ConfigError(f"material.E_i must be positive, got {m.E_i}")
    if not -1.0 < m.nu_i < 0.5:
        raise ConfigError(f"material.nu_i must lie in (-1, 0.5), got {m.nu_i}")
    if not PHI_TRAIN_MIN <= m.phi_i <= PHI_TRAIN_MAX:
        raise ConfigError(f"material.phi_i must lie in [{PHI_TRAIN_MIN}, {PHI_TRAIN_MAX}], got {m.phi_i}")
    if not g.length > 0.0:
        raise ConfigError(f"geometry.length must be positive, got {g.length}")
    if g.n_elements < MIN_ELEMENTS:
        raise ConfigError(f"geometry.n_elements must be at least {MIN_ELEMENTS}, got {g.n_elements}")
    if ld.kind not in LOADING_KINDS:
        raise ConfigError(f"loading.kind must be one of {LOADING_KINDS}, got '{ld.kind}'")
    if ld.direction not in DIRECTIONS:
        raise ConfigError(f"loading.direction must be one of {DIRECTIONS}, got '{ld.direction}'")
    if ld.drainage not in DRAINAGE_FACES:
        raise ConfigError(f"loading.drainage must be one of {DRAINAGE_FACES}, got '{ld.drainage}'")
    if not ld.magnitude > 0.0:
        raise ConfigError(f"loading.magnitude must be positive, got {ld.magnitude}")
    if not ld.cycle_period > 0.0 or ld.cycle_count < 1 or ld.steps_per_cycle < 4:
        raise ConfigError("loading.cycle_period must be positive, cycle_count >= 1 and steps_per_cycle >= 4")
    if ld.ramp_increments < 1:
        raise ConfigError(f"loading.ramp_increments must be at least 1, got {ld.ramp_increments}")
    if ld.drainage_length < 0.0 or ld.ramp_duration < 0.0:
        raise ConfigError("loading.drainage_length and loading.ramp_duration must not be negative")
    if any(p <= 0.0 for p in ld.cycle_periods):
        raise ConfigError("loading.cycle_periods must all be positive")
    if ld.kind == "darcy":
        if not ld.delta_p_fractions:
            raise ConfigError("loading.delta_p_fractions must not be empty for a Darcy experiment")
        if any(not 0.0 < f <= 1.0 for f in ld.delta_p_fractions):
            raise ConfigError("loading.delta_p_fractions must lie in (0, 1]")
    if any(d <= 0.0 for d in ld.d_sweep):
        raise ConfigError("loading.d_sweep values must be positive")
    if any(not -1.0 < v < 0.5 for v in ld.nu_sweep):
        raise ConfigError("loading.nu_sweep values must lie in (-1, 0.5)")
    if s.n_steps < 1 or s.dt_growth < 1.0 or s.end_time < 0.0 or s.end_time_factor <= 0.0:
        raise ConfigError("solver: n_steps >= 1, dt_growth >= 1, end_time >= 0 and end_time_factor > 0 required")
    if s.max_halvings < 0 or not s.steady_tol > 0.0 or not s.tolerance > 0.0:
        raise ConfigError("solver: max_halvings >= 0, steady_tol > 0 and tolerance > 0 required")
    if cfg.run.mode not in RUN_MODES:
        raise ConfigError(f"run.mode must be one of {RUN_MODES}, got '{cfg.run.mode}'")
    if cfg.run.workers < 1:
        raise ConfigError(f"run.workers must be at least 1, got {cfg.run.workers}")
    if c.n_phi < 1 or c.n_nu < 1 or c.phi_min > c.phi_max or c.nu_min > c.nu_max:
        raise ConfigError("cells: grid sizes must be positive and bounds ordered")
    if not c.reference_E > 0.0:
        raise ConfigError(f"cells.reference_E must be positive, got {c.reference_E}")
    if not 0.0 < sg.validation_fraction < 1.0:
        raise ConfigError(f"surrogate.validation_fraction must lie in (0, 1), got {sg.validation_fraction}")
    if sg.max_epochs < 1 or sg.patience < 1 or not sg.learning_rate > 0.0:
        raise ConfigError("surrogate: max_epochs, patience and learning_rate must be positive")
    missing = set(SURROGATE_OUTPUTS) - set(sg.architectures)
    if missing:
        raise ConfigError(f"surrogate.architectures is missing {', '.join(sorted(missing))}")


def load_experiment_config(path=None, overrides=None):
    """
    Reads an experiment TOML file (optional), merges it over the defaults,
    applies 'section.key' overrides and returns a validated ExperimentConfig.
    """
    data = {}
    if path is not None:
        logger.info("Loading experiment configuration from '%s'", path)
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Configuration file '{path}' not found") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Configuration file '{path}' is not valid TOML: {e}") from e
    data = _apply_overrides(data, overrides)

    unknown = set(data) - set(_SECTIONS) - {"scales"}
    if unknown:
        raise ConfigError(f"Unknown table(s): {', '.join(sorted(unknown))}")
    scales_table = dict(DEFAULT_SCALES)
    scales_table.update(data.get("scales", {}))
    try:
        scales = CharacteristicScales(**scales_table)
    except (TypeError, ScaleError) as e:
        raise ConfigError(f"Invalid [scales] table: {e}") from e

    sections = {name: _build_section(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
    paths = sections["paths"]
    sections["paths"] = PathsConfig(dataset=_resolve_path(paths.dataset),
                                    bundle=_resolve_path(paths.bundle),
                                    output_dir=_resolve_path(paths.output_dir))
    cfg = ExperimentConfig(scales=scales, **sections)
    _validate(cfg)
    logger.debug("Resolved configuration: %s", config_to_dict(cfg))
    return cfg


def config_to_dict(cfg):
    return asdict(cfg)
