import json
import os

import numpy as np
import pytest

import dataset
import expcli
import experiments
from conftest import AnalyticCellProvider
from microcell import CellSolution

ARCHITECTURES = "\n".join(f"{name} = [4]" for name in ("M11", "M12", "M44", "Q11", "K11"))


def write_config(tmp_path, gate=1e9, extra=""):
    text = f"""
[paths]
dataset = "{(tmp_path / 'cells.csv').as_posix()}"
bundle = "{(tmp_path / 'surrogate.json').as_posix()}"
output_dir = "{(tmp_path / 'runs').as_posix()}"

[geometry]
n_elements = 4

[loading]
magnitude = 1e5

[solver]
n_steps = 4

[surrogate]
max_epochs = 30
log_every = 0
gate = {gate}

[surrogate.architectures]
{ARCHITECTURES}
{extra}
"""
    path = tmp_path / "exp.toml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def write_cells(tmp_path):
    records = [CellSolution(phi=phi, nu=nu, M11=-phi * (1 - phi), M12=0.01 * nu, M44=-0.8 * phi,
                            Q11=-0.01 * (1 + phi), K11=1e-3 * phi**3)
               for phi in np.linspace(0.2, 0.6, 10) for nu in np.linspace(0.2, 0.4, 10)]
    dataset.write_dataset(records, str(tmp_path / "cells.csv"))


def read_manifest(run_dir):
    with open(os.path.join(run_dir, "run_manifest.json"), encoding="utf-8") as f:
        return json.load(f)


class TestParser:
    def test_common_options(self):
        args = expcli.build_parser().parse_args(["consolidate", "--both", "--linear", "--increments", "20"])
        assert args.command == "consolidate" and args.both
        overrides = expcli.overrides_from_args(args)
        assert overrides["run.mode"] == "linear"
        assert overrides["loading.ramp_increments"] == 20
        assert overrides["run.seed"] is None

    def test_verify_hyper_defaults(self):
        args = expcli.build_parser().parse_args(["verify-hyper"])
        assert args.stretch == 1.3
        assert args.counts == [1, 10, 100, 1000]
        assert args.tangent == "full"

    def test_command_required(self):
        with pytest.raises(SystemExit):
            expcli.build_parser().parse_args([])

    def test_every_command_has_a_handler(self):
        parser = expcli.build_parser()
        for name in expcli.COMMANDS:
            assert parser.parse_args([name]).command == name


class TestExitCodes:
    def test_bad_config_is_an_error(self, tmp_path):
        assert expcli.main(["darcy", "--config", str(tmp_path / "missing.toml")]) == expcli.EXIT_ERROR

    def test_remodelled_without_bundle_is_an_error(self, tmp_path, monkeypatch):
        monkeypatch.setattr(experiments, "DirectCellProvider", lambda *args, **kwargs: AnalyticCellProvider())
        assert expcli.main(["consolidate", "--both", "--config", write_config(tmp_path)]) == expcli.EXIT_ERROR

    def test_verify_hyper_passes(self, tmp_path):
        out = str(tmp_path / "runs")
        assert expcli.main(["verify-hyper", "--out", out]) == expcli.EXIT_OK
        run_dir = os.path.join(out, "verify_hyper")
        assert os.path.exists(os.path.join(run_dir, "uniaxial.csv"))
        assert os.path.exists(os.path.join(run_dir, "verify_hyper.pdf"))
        assert read_manifest(run_dir)["summary"]["passed"] is True

    def test_verify_hyper_gate(self, tmp_path):
        code = expcli.main(["verify-hyper", "--out", str(tmp_path), "--counts", "1", "10", "--tolerance", "1e-9"])
        assert code == expcli.EXIT_GATE


class TestCommands:
    def test_linear_consolidation(self, tmp_path, monkeypatch):
        monkeypatch.setattr(experiments, "DirectCellProvider", lambda *args, **kwargs: AnalyticCellProvider())
        assert expcli.main(["consolidate", "--linear", "--config", write_config(tmp_path)]) == expcli.EXIT_OK
        run_dir = tmp_path / "runs" / "consolidation"
        for name in ("linear_timeseries.csv", "linear_quadrature.csv", "terzaghi_check.csv"):
            assert (run_dir / name).exists()
        manifest = read_manifest(str(run_dir))
        assert manifest["command"] == "consolidate"
        assert manifest["config"]["run"]["mode"] == "linear"
        assert manifest["summary"]["linear"]["mass_balance_error"] < 1e-8
        assert manifest["conventions"]["scales"]["stress_scale"] == pytest.approx(1e6)
        assert (tmp_path / "runs" / "run.log").exists()

    def test_train_and_verify_surrogate(self, tmp_path):
        write_cells(tmp_path)
        cfg_path = write_config(tmp_path)
        assert expcli.main(["train", "--config", cfg_path]) == expcli.EXIT_OK
        assert (tmp_path / "surrogate.json").exists()
        assert (tmp_path / "runs" / "train" / "training.csv").exists()
        assert expcli.main(["verify-ann", "--config", cfg_path]) == expcli.EXIT_OK
        run_dir = tmp_path / "runs" / "verify_ann"
        assert (run_dir / "held_out_errors.csv").exists()
        assert read_manifest(str(run_dir))["summary"]["held_out_rows"] == 10

    def test_training_gate_failure(self, tmp_path):
        write_cells(tmp_path)
        code = expcli.main(["train", "--config", write_config(tmp_path, gate=1e-9)])
        assert code == expcli.EXIT_GATE
        assert (tmp_path / "surrogate.json").exists()
