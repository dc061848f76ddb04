import numpy as np
import pytest

from conftest import AnalyticCellProvider
from experiments import (CyclicResult, SwitchingProvider, consolidate, cyclic_run, darcy_point, darcy_sweep,
                         fast_limit_stiffness, hydraulic_bcs, linear_profile_deviation, mullins_check,
                         oracle_spot_check, power_law_exponent, property_uniformity, ramp_increments,
                         resolve_provider, scales_summary, shoelace_area, terzaghi_check, triangular_wave)
from microcell import DirectCellProvider


@pytest.fixture
def small(make_config):
    """Unit-length column (7.5 m over L = 7.5 m) with a light load."""
    def _small(**overrides):
        base = {"geometry__n_elements": 10, "loading__magnitude": 1e5, "run__mode": "linear"}
        base.update(overrides)
        return make_config(**base)
    return _small


class TestHelpers:
    def test_ramp_increments(self):
        assert ramp_increments(10, 0.036) == 36
        assert ramp_increments(10, 0.001) == 10
        assert ramp_increments(1, 0.0) == 1

    def test_linear_profile(self):
        x = np.linspace(0.0, 1.0, 11)
        assert linear_profile_deviation(x, -0.1 * x) == pytest.approx(0.0, abs=1e-12)
        assert linear_profile_deviation(x, np.zeros(11)) == 0.0
        assert linear_profile_deviation(x, x**2) > 0.05

    def test_triangular_wave(self):
        assert [triangular_wave(t, 4.0) for t in (0.0, 1.0, 2.0, 3.0, 4.0)] == pytest.approx([0, 0.5, 1, 0.5, 0])

    def test_shoelace(self):
        assert shoelace_area([0, 1, 1, 0], [0, 0, 1, 1]) == pytest.approx(1.0)
        assert shoelace_area([0, 1, 2], [0, 1, 2]) == pytest.approx(0.0)

    def test_power_law(self):
        f = np.array([0.1, 0.2, 0.5, 1.0])
        assert power_law_exponent(f, 3.0 * f**2) == pytest.approx(2.0)
        with pytest.raises(ValueError, match="two"):
            power_law_exponent([0.0, 1.0], [0.0, 1.0])

    def test_scales_summary(self, small):
        summary = scales_summary(small().scales)
        assert summary["stress_scale"] == pytest.approx(1e6)
        assert summary["time_scale"] == pytest.approx(562.5, rel=1e-3)

    def test_hydraulic_bcs(self, small):
        kinds = [(bc.end, bc.kind) for bc in hydraulic_bcs(small(loading__drainage="both"))]
        assert kinds == [("bottom", "pressure"), ("top", "pressure")]
        bcs = hydraulic_bcs(small(loading__drainage_length=0.75))
        assert bcs[0].kind == "impermeable"
        assert bcs[1].kind == "free_drainage" and bcs[1].drainage_length == pytest.approx(0.1)


class TestProviders:
    def test_explicit_provider_wins(self, small, analytic_provider):
        assert resolve_provider(small(), False, analytic_provider) is analytic_provider

    def test_linear_falls_back_to_direct_solves(self, small):
        assert isinstance(resolve_provider(small(), True), DirectCellProvider)

    def test_remodelled_needs_bundle(self, small):
        with pytest.raises(FileNotFoundError, match="bundle"):
            resolve_provider(small(), False)

    def test_switching_provider(self):
        a, b = AnalyticCellProvider(), AnalyticCellProvider()
        switching = SwitchingProvider(a, b, [2])
        switching.cell_tensors(0.3, 0.3)
        switching.advance(current_row=2, total_rows=5)
        switching.cell_tensors(0.3, 0.3)
        assert (a.calls, b.calls) == (1, 1)


class TestConsolidation:
    @pytest.fixture
    def linear(self, small, analytic_provider):
        cfg = small(geometry__n_elements=20)
        return consolidate(cfg, analytic_provider)

    def test_matches_terzaghi(self, linear):
        rows = terzaghi_check(linear)
        assert len(rows) == 5
        assert max(row["error"] for row in rows) < 0.02

    def test_settlement_grows(self, linear):
        s = linear.settlement
        assert s[-1] > 0.0
        assert np.all(np.diff(s) >= -1e-12)
        assert linear.mode == "linear"

    def test_mass_is_conserved(self, linear):
        assert linear.mass_balance()["error"] < 1e-8
        assert linear.drained[-1] > 0.0

    def test_linear_properties_stay_uniform(self, linear):
        assert all(v == 0.0 for v in property_uniformity(linear.history[-1]).values())

    def test_progress_callback(self, small, analytic_provider):
        seen = []
        result = consolidate(small(solver__n_steps=5), analytic_provider,
                             progress_callback=lambda current_row, total_rows: seen.append((current_row, total_rows)))
        assert seen[-1] == (len(result.history), len(result.history))

    def test_remodelled_run(self, small, analytic_provider):
        result = consolidate(small(solver__n_steps=10), analytic_provider, linear_mode=False)
        assert result.mode == "remodelled"
        phi = result.history[-1].qp["phi"]
        assert np.all(phi < 0.3)

    def test_steady_profile_is_linear(self, small, analytic_provider):
        result = consolidate(small(geometry__n_elements=20, solver__end_time_factor=4.0), analytic_provider)
        final = result.history[-1]
        assert linear_profile_deviation(result.column.nodes, final.u) <= 1e-3
        assert np.max(np.abs(final.p)) < 1e-3 * result.p0

    def test_remodelled_settles_less_than_linear(self, small, analytic_provider):
        cfg = small(solver__n_steps=10)
        linear = consolidate(cfg, analytic_provider, linear_mode=True)
        remodelled = consolidate(cfg, analytic_provider, linear_mode=False)
        np.testing.assert_allclose(remodelled.times, linear.times)
        assert np.all(remodelled.settlement <= linear.settlement + 1e-12)
        assert remodelled.settlement[-1] < linear.settlement[-1]

    def test_remodelled_steady_state_is_uniform(self, small, analytic_provider):
        cfg = small(loading__ramp_duration=0.01, loading__ramp_increments=40, solver__n_steps=80,
                    solver__dt_growth=1.08, solver__end_time_factor=4.0)
        result = consolidate(cfg, analytic_provider, linear_mode=False)
        final = result.history[-1]
        assert np.max(np.abs(final.p)) < 1e-3 * result.p0
        spread = property_uniformity(final)
        assert max(spread.values()) < 1e-3, spread
        assert final.qp["phi"].mean() < 0.3
        assert linear_profile_deviation(result.column.nodes, final.u) <= 1e-3

    @pytest.mark.slow
    def test_halving_time_steps_barely_moves_settlement(self, small, analytic_provider):
        coarse = consolidate(small(), analytic_provider, linear_mode=False)
        fine = consolidate(small(loading__ramp_increments=20, solver__n_steps=240, solver__dt_growth=1.06**0.5),
                           analytic_provider, linear_mode=False)
        assert fine.times[-1] == pytest.approx(coarse.times[-1])
        assert fine.settlement[-1] == pytest.approx(coarse.settlement[-1], rel=5e-3)


class TestDarcy:
    def test_linear_point_obeys_darcy(self, small, analytic_provider):
        pt = darcy_point(small(geometry__n_elements=8), analytic_provider, 0.1, linear_mode=True)
        assert pt.v_rf == pytest.approx(pt.linear_velocity, rel=2e-3)
        assert pt.steady_time > 0.0

    @pytest.mark.slow
    def test_remodelled_sweep(self, small, analytic_provider):
        cfg = small(geometry__n_elements=8, loading__delta_p_fractions=[0.1, 0.05, 0.2])
        sweep = darcy_sweep(cfg, analytic_provider, linear_mode=False)
        np.testing.assert_allclose(sweep.fractions(), [0.05, 0.1, 0.2])
        assert sweep.delta_p_max == pytest.approx(3.75)
        y = sweep.deviations()
        assert y[-1] == pytest.approx(1.0)
        assert np.all(np.isfinite(sweep.dimensional_deviation()))


def synthetic_cycles():
    stretch = np.array([0.99, 0.98, 0.985, 0.995, 0.985, 0.975, 0.98, 0.99])
    load = np.array([0.5, 1.0, 0.5, 0.0, 0.4, 0.9, 0.5, 0.0])
    return CyclicResult(period=1.0, direction="compression", column=None, history=[], load=load, stretch=stretch,
                        cycle=np.arange(8) // 4, steps_per_cycle=4, scales=None)


class TestCyclic:
    def test_synthetic_loops(self):
        cyc = synthetic_cycles()
        assert len(cyc.cycle_slices()) == 2
        assert np.all(cyc.hysteresis() > 0.0)
        np.testing.assert_allclose(cyc.residual_strain(), [0.005, 0.01])
        np.testing.assert_allclose(cyc.residual_increments(), [0.005, 0.005])

    def test_mullins_softening(self):
        mono = CyclicResult(period=1.0, direction="compression", column=None, history=[],
                            load=np.array([0.5, 1.0]), stretch=np.array([0.99, 0.98]), cycle=np.zeros(2),
                            steps_per_cycle=4, scales=None)
        out = mullins_check(synthetic_cycles(), mono)
        assert out["points"] == 1
        assert out["mean_difference"] == pytest.approx(-0.35)
        assert out["softer"]

    def test_linear_run(self, small, analytic_provider):
        cfg = small(loading__steps_per_cycle=8, loading__cycle_count=2, loading__cycle_period=1e4)
        res = cyclic_run(cfg, analytic_provider)
        assert len(res.history) == 16
        assert res.load.max() == pytest.approx(1e5)
        assert res.stretch.min() < 1.0
        assert len(res.hysteresis()) == 2
        assert np.all(res.hysteresis() >= 0.0)

    def test_monotonic_is_half_cycle(self, small, analytic_provider):
        cfg = small(loading__steps_per_cycle=8, loading__cycle_period=1e4)
        res = cyclic_run(cfg, analytic_provider, monotonic=True)
        assert len(res.history) == 4
        assert np.all(np.diff(res.load) > 0.0)

    def test_fast_cycling_is_undrained(self, small, analytic_provider):
        cfg = small(geometry__n_elements=20, loading__steps_per_cycle=8, loading__cycle_count=1,
                    loading__cycle_period=1e-3)
        out = fast_limit_stiffness(cyclic_run(cfg, analytic_provider))
        assert out["relative_difference"] < 0.1


class TestSpotCheck:
    def test_identical_providers_pass(self, small):
        bundle = AnalyticCellProvider()
        bundle.validation_errors = {"M11": 0.01, "K11": 0.02}
        out = oracle_spot_check(small(solver__n_steps=6), bundle, direct=AnalyticCellProvider(), n_increments=2,
                                seed=3)
        assert len(out["increments"]) == 2
        assert out["limit"] == pytest.approx(0.06)
        assert out["u_change"] == 0.0 and out["p_change"] == 0.0
        assert out["passed"]
