import csv
import json
import os

import numpy as np
import pytest

import export
import formatting
from experiments import consolidate
from hyperverify import convergence_study
from remodel import NeoHookeanParams


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


@pytest.fixture
def consolidation(make_config, analytic_provider):
    cfg = make_config(geometry__n_elements=4, solver__n_steps=3, loading__magnitude=1e5, run__mode="linear")
    return consolidate(cfg, analytic_provider)


class TestFormatting:
    @pytest.mark.parametrize("value, text", [
        (None, ""), (True, "yes"), (3, "3"), (np.int64(4), "4"), (float("nan"), "nan"),
        (float("-inf"), "-inf"), (0.1234567, "0.123457"),
    ])
    def test_format_number(self, value, text):
        assert formatting.format_number(value) == text

    def test_units(self):
        assert formatting.format_quantity("period", 108.0) == "108 s"
        assert formatting.format_quantity("unknown", 2.0) == "2"

    def test_percent(self):
        assert formatting.format_percent(0.0123) == "1.23 %"

    def test_summary_flattens(self):
        out = formatting.format_summary({"mullins": {"softer": True, "points": 3}, "errors": [0.5, 0.25],
                                         "tangent": "full"})
        assert out == {"mullins.softer": "yes", "mullins.points": "3", "errors": "0.5, 0.25", "tangent": "full"}


class TestCsv:
    def test_write_rows_full_precision(self, tmp_path):
        path = export.write_rows(str(tmp_path / "a.csv"), ["name", "n", "v"], [("M11", 3, 1.0 / 3.0)])
        rows = read_csv(path)
        assert rows[0] == ["name", "n", "v"]
        assert rows[1][:2] == ["M11", "3"]
        assert float(rows[1][2]) == 1.0 / 3.0

    def test_timeseries(self, consolidation, tmp_path):
        path = export.write_timeseries(consolidation.history, consolidation.column, str(tmp_path / "ts.csv"))
        rows = read_csv(path)
        assert rows[0] == export.TIMESERIES_COLUMNS
        n_vertices = consolidation.column.n_p
        assert len(rows) == 1 + n_vertices * len(consolidation.history)
        last = rows[-1]
        assert float(last[2]) == pytest.approx(consolidation.column.length)
        assert float(last[3]) == pytest.approx(consolidation.history[-1].u[-1])

    def test_quadrature(self, consolidation, tmp_path):
        rows = read_csv(export.write_quadrature(consolidation.history, str(tmp_path / "qp.csv")))
        assert rows[0] == export.QUADRATURE_COLUMNS
        assert len(rows) == 1 + consolidation.column.n_qp * len(consolidation.history)
        assert float(rows[1][export.QUADRATURE_COLUMNS.index("phi")]) == pytest.approx(0.3)

    def test_uniaxial(self, tmp_path):
        study = convergence_study(NeoHookeanParams.from_moduli(15.0, 0.3), 1.3, counts=(1, 10))
        rows = read_csv(export.write_uniaxial(study, str(tmp_path / "uni.csv")))
        assert rows[0] == export.UNIAXIAL_COLUMNS
        assert len(rows) == 1 + 2 + 11


class TestManifest:
    def test_contents(self, tmp_path):
        run_dir = export.run_directory(str(tmp_path), "my run/1")
        assert os.path.isdir(run_dir)
        path = export.write_manifest(run_dir, "darcy", {"material": {"E_i": 15e6}},
                                     {"exponent": np.float64(2.0), "flags": np.array([True, False])},
                                     {"stretch": "1 + u_top / l"})
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        assert doc["command"] == "darcy"
        assert doc["summary"] == {"exponent": 2.0, "flags": [True, False]}
        assert doc["conventions"]["stretch"] == "1 + u_top / l"
        assert "created" in doc


class TestPdf:
    def test_report_written(self, tmp_path):
        out = str(tmp_path / "report.pdf")
        ok = export.create_verification_pdf("Hyperelastic check", True, "N=1000 relative error 0.1%",
                                            {"tangent": "full", "errors_decay": True, "nested": {"C10": 2.88}},
                                            ["N", "error"], [(1, 0.2), (10, 0.02)], out)
        assert ok
        with open(out, "rb") as f:
            assert f.read(5) == b"%PDF-"

    def test_failure_reported_not_raised(self, tmp_path):
        out = str(tmp_path / "missing_dir" / "report.pdf")
        assert not export.create_verification_pdf("x", False, "failed", {}, [], [], out)
