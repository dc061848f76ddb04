import numpy as np
import pytest

import fem

TRIANGLE = np.array([[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]])


class TestShapeFunctions:
    def test_partition_of_unity(self):
        np.testing.assert_allclose(fem.p1_values().sum(axis=1), 1.0)
        np.testing.assert_allclose(fem.p2_values().sum(axis=1), 1.0)

    def test_p2_gradients_sum_to_zero(self):
        np.testing.assert_allclose(fem.p2_ref_gradients().sum(axis=1), 0.0, atol=1e-14)

    def test_quadrature_integrates_quadratics(self):
        # integral of x^2 over the reference triangle is 1/12
        x = fem.QUAD_POINTS[:, 0]
        np.testing.assert_allclose(np.sum(fem.QUAD_WEIGHTS * x**2), 1.0 / 12.0)


class TestGeometry:
    def test_determinant(self):
        _, det = fem.affine_geometry(TRIANGLE)
        np.testing.assert_allclose(det, [2.0])

    def test_clockwise_rejected(self):
        with pytest.raises(ValueError, match="clockwise"):
            fem.affine_geometry(TRIANGLE[:, ::-1])

    def test_linear_field_has_exact_gradient(self):
        grads, _ = fem.p2_physical_gradients(TRIANGLE)
        v = TRIANGLE[0]
        nodes = np.vstack([v, 0.5 * (v[0] + v[1]), 0.5 * (v[1] + v[2]), 0.5 * (v[2] + v[0])])
        field = 3.0 * nodes[:, 0] - 2.0 * nodes[:, 1]
        np.testing.assert_allclose(np.einsum("eqak,a->eqk", grads, field), np.broadcast_to([3.0, -2.0], (1, 3, 2)))

    def test_rigid_translation_has_no_strain(self):
        grads, _ = fem.p2_physical_gradients(TRIANGLE)
        B = fem.strain_operator(grads)
        u = np.tile([0.7, -0.3], 6)
        np.testing.assert_allclose(B @ u, 0.0, atol=1e-13)


class TestAssembly:
    def test_duplicate_entries_are_summed(self):
        local = np.ones((2, 2, 2))
        dofs = np.array([[0, 1], [1, 2]])
        K = fem.assemble_matrix(local, dofs, dofs, (3, 3)).toarray()
        np.testing.assert_allclose(K, [[1, 1, 0], [1, 2, 1], [0, 1, 1]])

    def test_vector_with_load_axis(self):
        local = np.ones((2, 2, 3))
        out = fem.assemble_vector(local, np.array([[0, 1], [1, 2]]), 3)
        assert out.shape == (3, 3)
        np.testing.assert_allclose(out[:, 0], [1, 2, 1])
