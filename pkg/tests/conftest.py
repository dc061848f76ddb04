# conftest.py
import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

import config  # noqa: E402
from microcell import CellSolution  # noqa: E402
from utils import plane_strain_stiffness  # noqa: E402

E_REF = config.CELL_REFERENCE_E


class AnalyticCellProvider:
    """
    Closed-form cell tensors with the physical signs: M = -phi (1 - phi) on
    the normal and shear slots, so C_eff = (1 - phi)^2 C_s and
    alpha = phi (2 - phi); Q follows from K_eff / K_s = 1 - alpha.
    """

    def __init__(self, E_ref=E_REF, conductivity=0.01):
        self.E_ref = E_ref
        self.conductivity = conductivity
        self.calls = 0

    def cell_tensors(self, nu, phi):
        self.calls += 1
        m = -phi * (1.0 - phi)
        alpha = phi * (2.0 - phi)
        C = plane_strain_stiffness(self.E_ref, nu)
        Q11 = -(alpha - phi) / (C[0, 0] + C[0, 1])
        K11 = self.conductivity * phi**3 / (1.0 - phi) ** 2
        return CellSolution(phi=float(phi), nu=float(nu), M11=m, M12=0.0, M44=m, Q11=Q11, K11=K11)


@pytest.fixture
def analytic_provider():
    return AnalyticCellProvider()


@pytest.fixture
def make_config(tmp_path):
    """Builds a validated config from 'section.key' overrides, writing into tmp_path."""
    def _make(path=None, **overrides):
        data = {
            "paths.output_dir": str(tmp_path / "runs"),
            "paths.dataset": str(tmp_path / "cells.csv"),
            "paths.bundle": str(tmp_path / "missing_bundle.json"),
        }
        data.update({key.replace("__", "."): value for key, value in overrides.items()})
        return config.load_experiment_config(path, data)
    return _make
