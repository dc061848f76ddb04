import numpy as np
import pytest

import fem
from microcell import (SECTION_CHANNEL, SECTION_PORE, ZERO_MEAN_TOL, CellGeometry, CellSolveError, ElasticCellSystem,
                       GeometryError, build_cell_mesh, generate_dataset, phase_percolates, solve_cell,
                       solve_elastic_A, solve_elastic_a, solve_stokes_W)

COARSE = 1.0 / 16.0


def phase_area(mesh, mask):
    _, det = fem.affine_geometry(mesh.nodes[mesh.triangles[mask][:, :3]])
    return 0.5 * det.sum()


class TestGeometry:
    def test_channel_width(self):
        geom = CellGeometry(0.36)
        np.testing.assert_allclose(geom.channel_width, 0.2)
        np.testing.assert_allclose(geom.channel_half_width, 0.1)
        np.testing.assert_allclose(geom.pore_side, 0.6)

    @pytest.mark.parametrize("phi", [0.01, 0.9])
    def test_porosity_outside_meshable_range(self, phi):
        with pytest.raises(GeometryError, match="meshable range"):
            CellGeometry(phi)

    def test_resolution_outside_range(self):
        with pytest.raises(GeometryError, match="Resolution"):
            build_cell_mesh(CellGeometry(0.3), 0.1)

    def test_too_coarse_for_thin_channel(self):
        # w = 1 - sqrt(0.95) ~ 0.025 needs resolution <= 0.0127
        with pytest.raises(GeometryError, match="too coarse"):
            build_cell_mesh(CellGeometry(0.05), COARSE, SECTION_CHANNEL)

    def test_unknown_section(self):
        with pytest.raises(GeometryError, match="Unknown cell section"):
            build_cell_mesh(CellGeometry(0.3), COARSE, "hexagon")


class TestMesh:
    @pytest.mark.parametrize("section", [SECTION_PORE, SECTION_CHANNEL])
    def test_fluid_area_equals_porosity(self, section):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE, section)
        np.testing.assert_allclose(phase_area(mesh, ~mesh.solid), 0.3, rtol=1e-12)
        np.testing.assert_allclose(phase_area(mesh, np.ones_like(mesh.solid)), 1.0, rtol=1e-12)

    def test_periodic_images_share_coordinates_modulo_one(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE)
        image, master = mesh.periodic_pairs.T
        np.testing.assert_allclose(np.mod(mesh.nodes[image], 1.0), np.mod(mesh.nodes[master], 1.0), atol=1e-12)

    def test_interface_present(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE)
        assert len(mesh.interface_edges) > 0

    def test_pore_section_solid_percolates(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE, SECTION_PORE)
        assert phase_percolates(mesh, mesh.solid)
        assert not phase_percolates(mesh, ~mesh.solid)

    def test_channel_section_fluid_percolates(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE, SECTION_CHANNEL)
        assert phase_percolates(mesh, ~mesh.solid)
        assert not phase_percolates(mesh, mesh.solid)

    def test_mesh_lines_graded_toward_walls(self):
        geom = CellGeometry(0.3)
        mesh = build_cell_mesh(geom, COARSE)
        xs = np.unique(mesh.nodes[:, 0])
        wall = int(np.argmin(np.abs(xs - 0.5 * (1.0 - geom.pore_side))))
        assert xs[wall] - xs[wall - 1] < 0.25 * (xs[1] - xs[0])
        np.testing.assert_allclose(np.sort(1.0 - xs), xs, atol=1e-12)

    def test_upper_training_porosity_meshes(self):
        geom = CellGeometry(0.783)
        assert geom.channel_width == pytest.approx(0.5342, abs=1e-4)
        for section in (SECTION_PORE, SECTION_CHANNEL):
            mesh = build_cell_mesh(geom, 1.0 / 64.0, section)
            np.testing.assert_allclose(phase_area(mesh, ~mesh.solid), 0.783, rtol=1e-12)
        pore = build_cell_mesh(geom, 1.0 / 64.0, SECTION_PORE)
        assert phase_percolates(pore, pore.solid)


class TestElasticProblems:
    def test_no_pore_cell_has_zero_localisation(self):
        mesh = build_cell_mesh(CellGeometry(0.0), COARSE)
        m = solve_elastic_A(mesh, 0.3)
        np.testing.assert_allclose(m.full, 0.0, atol=1e-10)

    def test_rigid_blocks_rejected(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE, SECTION_CHANNEL)
        with pytest.raises(CellSolveError, match="percolate"):
            ElasticCellSystem(mesh, 0.3)

    def test_signs_and_symmetry(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE)
        system = ElasticCellSystem(mesh, 0.3)
        m, q = system.solve_A(), system.solve_a()
        assert m.M11 < 0.0 and m.M44 < 0.0
        assert q.Q11 < 0.0
        np.testing.assert_allclose(m.full[0, 0], m.full[1, 1], rtol=1e-8)
        assert m.mean_residual <= ZERO_MEAN_TOL and q.mean_residual <= ZERO_MEAN_TOL
        alpha = 0.3 - (m.M11 + m.M12)
        assert 0.3 <= alpha <= 1.0

    def test_pressure_tensor_scales_inversely_with_modulus(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE)
        q15 = solve_elastic_a(mesh, 0.3, E=15.0).Q11
        q30 = solve_elastic_a(mesh, 0.3, E=30.0).Q11
        np.testing.assert_allclose(q30, 0.5 * q15, rtol=1e-9)

    def test_localisation_independent_of_modulus(self):
        mesh = build_cell_mesh(CellGeometry(0.3), COARSE)
        np.testing.assert_allclose(solve_elastic_A(mesh, 0.3, 15.0).full, solve_elastic_A(mesh, 0.3, 1.0).full,
                                   rtol=1e-8, atol=1e-12)

    def test_full_tensors_have_square_symmetry(self):
        system = ElasticCellSystem(build_cell_mesh(CellGeometry(0.3), COARSE), 0.3)
        M = system.solve_A().full
        q = system.solve_a().full
        tol = 1e-6 * abs(M[0, 0])
        assert abs(M[0, 0] - M[1, 1]) < tol
        assert abs(M[0, 1] - M[1, 0]) < tol
        assert np.max(np.abs(M[:2, 2])) < tol and np.max(np.abs(M[2, :2])) < tol
        assert abs(q[0] - q[1]) < 1e-6 * abs(q[0])
        assert abs(q[2]) < 1e-6 * abs(q[0])


class TestStokes:
    def test_conductivity_positive_and_isotropic(self):
        k = solve_stokes_W(build_cell_mesh(CellGeometry(0.3), COARSE, SECTION_CHANNEL))
        assert k.K11 > 0.0
        np.testing.assert_allclose(k.full[1, 1], k.K11, rtol=1e-8)
        assert abs(k.full[0, 1]) < 1e-10 * k.K11
        assert k.divergence < 1e-8

    def test_conductivity_grows_with_porosity(self):
        k = [solve_stokes_W(build_cell_mesh(CellGeometry(phi), COARSE, SECTION_CHANNEL)).K11 for phi in (0.3, 0.5)]
        assert k[1] > k[0]

    def test_isolated_pore_rejected(self):
        with pytest.raises(CellSolveError, match="disconnected"):
            solve_stokes_W(build_cell_mesh(CellGeometry(0.3), COARSE, SECTION_PORE))


class TestSolveCell:
    def test_record_is_physical(self):
        cell = solve_cell(0.3, 0.3, COARSE)
        assert cell.M11 < 0.0 and cell.Q11 < 0.0 and cell.K11 > 0.0
        assert cell.diagnostics["A_mean"] <= ZERO_MEAN_TOL

    def test_generate_dataset_sorted(self):
        calls = []
        records, failures = generate_dataset([0.3, 0.5], [0.25, 0.35], COARSE,
                                             progress_callback=lambda **kw: calls.append(kw))
        assert failures == []
        assert [(r.phi, r.nu) for r in records] == [(0.3, 0.25), (0.3, 0.35), (0.5, 0.25), (0.5, 0.35)]
        assert calls[-1] == {"current_row": 4, "total_rows": 4}

    def test_grid_outside_range(self):
        with pytest.raises(ValueError, match="phi grid"):
            generate_dataset([0.9], [0.3], COARSE)

    @pytest.mark.slow
    def test_default_mesh_matches_fine_reference(self):
        default = solve_cell(0.3, 0.3, 1.0 / 64.0)
        fine = solve_cell(0.3, 0.3, 1.0 / 256.0)
        for name in ("M11", "Q11", "K11"):
            np.testing.assert_allclose(getattr(default, name), getattr(fine, name), rtol=0.01)

    @pytest.mark.slow
    def test_observed_convergence_rate(self):
        # wall positions on these porosities are multiples of 1/32, so the three meshes are nested
        values = {"M11": [], "Q11": [], "K11": []}
        for resolution in (1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0):
            system = ElasticCellSystem(build_cell_mesh(CellGeometry(0.25), resolution), 0.3)
            values["M11"].append(system.solve_A().M11)
            values["Q11"].append(system.solve_a().Q11)
            channel = build_cell_mesh(CellGeometry(0.4375), resolution, SECTION_CHANNEL)
            values["K11"].append(solve_stokes_W(channel).K11)
        for name, (coarse, medium, fine) in values.items():
            rate = np.log2(abs(coarse - medium) / abs(medium - fine))
            assert rate >= 1.5, f"{name} converges at rate {rate:.2f}"

