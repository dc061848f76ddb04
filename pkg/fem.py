# fem.py
"""Straight-sided P1/P2 triangle elements and vectorised sparse assembly."""
import numpy as np
from scipy.sparse import coo_matrix

# Degree-2 rule on the reference triangle (0,0)-(1,0)-(0,1); weights sum to 1/2.
QUAD_POINTS = np.array([[1.0 / 6.0, 1.0 / 6.0],
                        [2.0 / 3.0, 1.0 / 6.0],
                        [1.0 / 6.0, 2.0 / 3.0]])
QUAD_WEIGHTS = np.full(3, 1.0 / 6.0)


def _barycentric(xi, eta):
    return 1.0 - xi - eta, xi, eta


def p1_values(points=QUAD_POINTS):
    """(nq, 3) P1 basis values at reference points."""
    rows = []
    for xi, eta in points:
        rows.append(_barycentric(xi, eta))
    return np.array(rows)


def p2_values(points=QUAD_POINTS):
    """(nq, 6) P2 basis values; local order v1, v2, v3, m12, m23, m31."""
    rows = []
    for xi, eta in points:
        l1, l2, l3 = _barycentric(xi, eta)
        rows.append([l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
                     4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1])
    return np.array(rows)


def p2_ref_gradients(points=QUAD_POINTS):
    """(nq, 6, 2) P2 basis gradients with respect to (xi, eta)."""
    d1 = np.array([-1.0, -1.0])
    d2 = np.array([1.0, 0.0])
    d3 = np.array([0.0, 1.0])
    out = []
    for xi, eta in points:
        l1, l2, l3 = _barycentric(xi, eta)
        out.append([(4 * l1 - 1) * d1,
                    (4 * l2 - 1) * d2,
                    (4 * l3 - 1) * d3,
                    4 * (l1 * d2 + l2 * d1),
                    4 * (l2 * d3 + l3 * d2),
                    4 * (l3 * d1 + l1 * d3)])
    return np.array(out)


def affine_geometry(vertices):
    """Inverse Jacobians and determinants for (ne, 3, 2) vertex coordinates."""
    jac = np.empty((vertices.shape[0], 2, 2))
    jac[:, :, 0] = vertices[:, 1] - vertices[:, 0]
    jac[:, :, 1] = vertices[:, 2] - vertices[:, 0]
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(det <= 0.0):
        raise ValueError("Degenerate or clockwise triangle in mesh")
    return np.linalg.inv(jac), det


def p2_physical_gradients(vertices, points=QUAD_POINTS):
    """(ne, nq, 6, 2) physical gradients and (ne,) Jacobian determinants."""
    inv_jac, det = affine_geometry(vertices)
    ref = p2_ref_gradients(points)
    grads = np.einsum("qad,edk->eqak", ref, inv_jac)
    return grads, det


def strain_operator(grads):
    """Engineering-Voigt strain operator B, shape (ne, nq, 3, 12), dofs interleaved (x, y)."""
    ne, nq, nn, _ = grads.shape
    B = np.zeros((ne, nq, 3, 2 * nn))
    B[:, :, 0, 0::2] = grads[:, :, :, 0]
    B[:, :, 1, 1::2] = grads[:, :, :, 1]
    B[:, :, 2, 0::2] = grads[:, :, :, 1]
    B[:, :, 2, 1::2] = grads[:, :, :, 0]
    return B


def vector_dofs(node_dofs):
    """Interleaved vector dof indices (ne, 2*nn) from scalar node numbers (ne, nn)."""
    ne, nn = node_dofs.shape
    out = np.empty((ne, 2 * nn), dtype=np.int64)
    out[:, 0::2] = 2 * node_dofs
    out[:, 1::2] = 2 * node_dofs + 1
    return out


def assemble_matrix(local, row_dofs, col_dofs, shape):
    """Sums element blocks (ne, a, b) into a CSR matrix."""
    rows = np.repeat(row_dofs, col_dofs.shape[1], axis=1).ravel()
    cols = np.tile(col_dofs, (1, row_dofs.shape[1])).ravel()
    return coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()


def assemble_vector(local, dofs, size):
    out = np.zeros(size) if local.ndim == 2 else np.zeros((size, local.shape[2]))
    np.add.at(out, dofs.ravel(), local.reshape(dofs.size, *local.shape[2:]))
    return out
