# microcell.py
"""Periodic-cell auxiliary problems on the unit square.

The cell is represented by two sections of a cubic channel network sharing
the porosity phi:

* ``pore`` section: centred square pore of side sqrt(phi) in a connected
  solid frame.  The two elastic problems (A and a) are solved here.
* ``channel`` section: plus-shaped fluid channel of width
  w = 1 - sqrt(1 - phi) around four solid blocks.  The Stokes problem
  (W, P) is solved here.

Averages are taken over the whole cell (|Omega| = 1).  Elastic problems use
P2 triangles, Stokes uses P2 velocity / P1 pressure.  Zero-mean conditions
are imposed with Lagrange multipliers.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import bmat, coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

import config
import fem
from utils import plane_strain_stiffness

logger = logging.getLogger(__name__)

SECTION_PORE = "pore"
SECTION_CHANNEL = "channel"

PHI_MIN, PHI_MAX = 0.05, 0.80
RESOLUTION_MIN, RESOLUTION_MAX = 1.0 / 256.0, 1.0 / 16.0
ZERO_MEAN_TOL = 1e-8
SOLVE_RTOL = 1e-8


class GeometryError(ValueError):
    pass


class CellSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class CellGeometry:
    phi: float

    def __post_init__(self):
        if self.phi != 0.0 and not (PHI_MIN <= self.phi <= PHI_MAX):
            raise GeometryError(f"Porosity {self.phi} outside the meshable range [{PHI_MIN}, {PHI_MAX}]")

    @property
    def channel_width(self):
        return 1.0 - math.sqrt(1.0 - self.phi)

    @property
    def channel_half_width(self):
        return 0.5 * self.channel_width

    @property
    def pore_side(self):
        return math.sqrt(self.phi)


@dataclass
class CellMesh:
    geometry: CellGeometry
    section: str
    resolution: float
    nodes: np.ndarray            # (N, 2) P2 nodes, faces duplicated
    triangles: np.ndarray        # (ne, 6) node ids
    solid: np.ndarray            # (ne,) True for solid triangles
    master: np.ndarray           # (N,) periodic master node id
    periodic_pairs: np.ndarray   # (k, 2) [image, master]
    interface_edges: np.ndarray  # (m, 2) master vertex ids

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


@dataclass
class CellSolution:
    phi: float
    nu: float
    M11: float
    M12: float
    M44: float
    Q11: float
    K11: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    def as_row(self):
        return {"phi": self.phi, "nu": self.nu, "M11": self.M11, "M12": self.M12,
                "M44": self.M44, "Q11": self.Q11, "K11": self.K11}


@dataclass(frozen=True)
class MAverage:
    M11: float
    M12: float
    M44: float
    full: np.ndarray = field(compare=False)
    mean_residual: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class QAverage:
    Q11: float
    full: np.ndarray = field(compare=False)
    mean_residual: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class KAverage:
    K11: float
    full: np.ndarray = field(compare=False)
    divergence: float = field(default=0.0, compare=False)
    pressure_mean: float = field(default=0.0, compare=False)


# --- Mesh ---
def _subdivide(breaks, resolution, middle):
    """
    Mesh lines on [0, 1]. With a wall (middle >= 0) every segment is graded
    quadratically toward the wall lines so the re-entrant corners get
    element sizes of order resolution^2.
    """
    xs = [breaks[0]]
    for k in range(len(breaks) - 1):
        length = breaks[k + 1] - breaks[k]
        n = max(1, math.ceil(length / resolution - 1e-9))
        if k == middle and n % 2:
            n += 1
        s = np.linspace(0.0, 1.0, n + 1)[1:]
        if middle < 0:
            t = s
        elif k == middle:
            t = np.where(s <= 0.5, 2.0 * s**2, 1.0 - 2.0 * (1.0 - s) ** 2)
        elif k < middle:
            t = 1.0 - (1.0 - s) ** 2
        else:
            t = s**2
        xs.extend(breaks[k] + length * t[:-1])
        xs.append(breaks[k + 1])
    return np.array(xs)



def build_cell_mesh(geom, resolution, section=SECTION_PORE):
    """Structured, interface-conforming P2 mesh of one cell section."""
    if not (RESOLUTION_MIN - 1e-12 <= resolution <= RESOLUTION_MAX + 1e-12):
        raise GeometryError(f"Resolution {resolution} outside [1/256, 1/16]")
    if section == SECTION_PORE:
        width = geom.pore_side
        thinnest = min(width, 1.0 - width) if width > 0.0 else 1.0
    elif section == SECTION_CHANNEL:
        if geom.phi == 0.0:
            raise GeometryError("Channel section needs a positive porosity")
        width = geom.channel_width
        thinnest = min(width, 1.0 - width)
    else:
        raise GeometryError(f"Unknown cell section '{section}'")
    if thinnest < 2.0 * resolution:
        raise GeometryError(
            f"Resolution {resolution:.5g} too coarse for phi={geom.phi}: thinnest phase {thinnest:.5g} "
            f"needs at least two elements")

    if width > 0.0:
        a = 0.5 * (1.0 - width)
        xs = _subdivide([0.0, a, 1.0 - a, 1.0], resolution, middle=1)
    else:
        xs = _subdivide([0.0, 0.5, 1.0], resolution, middle=-1)
    nx = xs.size - 1
    xh = np.empty(2 * nx + 1)
    xh[0::2] = xs
    xh[1::2] = 0.5 * (xs[:-1] + xs[1:])
    H = xh.size

    II, JJ = np.meshgrid(np.arange(H), np.arange(H), indexing="xy")
    nodes = np.column_stack([xh[II.ravel()], xh[JJ.ravel()]])
    master = ((JJ % (H - 1)) * H + (II % (H - 1))).ravel()
    image = np.flatnonzero(master != np.arange(H * H))
    periodic_pairs = np.column_stack([image, master[image]])

    qi, qj = np.meshgrid(np.arange(nx), np.arange(nx), indexing="xy")
    qi, qj = qi.ravel(), qj.ravel()
    I0, J0 = 2 * qi, 2 * qj

    def nid(i, j):
        return j * H + i

    BL, BR, TR, TL = nid(I0, J0), nid(I0 + 2, J0), nid(I0 + 2, J0 + 2), nid(I0, J0 + 2)
    Bm, Rm, Tm, Lm, Cm = nid(I0 + 1, J0), nid(I0 + 2, J0 + 1), nid(I0 + 1, J0 + 2), nid(I0, J0 + 1), nid(I0 + 1, J0 + 1)
    xc = 0.5 * (xs[qi] + xs[qi + 1])
    yc = 0.5 * (xs[qj] + xs[qj + 1])
    slash = (xc - 0.5) * (yc - 0.5) > 0.0

    t1 = np.where(slash[:, None],
                  np.column_stack([BL, BR, TR, Bm, Rm, Cm]),
                  np.column_stack([BL, BR, TL, Bm, Cm, Lm]))
    t2 = np.where(slash[:, None],
                  np.column_stack([BL, TR, TL, Cm, Tm, Lm]),
                  np.column_stack([BR, TR, TL, Rm, Tm, Cm]))
    triangles = np.vstack([t1, t2])
    xc2, yc2 = np.concatenate([xc, xc]), np.concatenate([yc, yc])
    half = 0.5 * width
    if section == SECTION_PORE:
        fluid = (np.abs(xc2 - 0.5) < half) & (np.abs(yc2 - 0.5) < half)
    else:
        fluid = (np.abs(xc2 - 0.5) < half) | (np.abs(yc2 - 0.5) < half)
    solid = ~fluid

    mesh = CellMesh(geometry=geom, section=section, resolution=resolution, nodes=nodes,
                    triangles=triangles, solid=solid, master=master,
                    periodic_pairs=periodic_pairs, interface_edges=np.empty((0, 2), dtype=np.int64))
    mesh.interface_edges = _interface_edges(mesh)
    logger.debug("Built %s mesh for phi=%.4f: %d triangles, %d interface edges",
                 section, geom.phi, mesh.n_triangles, len(mesh.interface_edges))
    return mesh


def _interface_edges(mesh):
    verts = mesh.master[mesh.triangles[:, :3]]
    edges = np.concatenate([verts[:, [0, 1]], verts[:, [1, 2]], verts[:, [2, 0]]])
    edges.sort(axis=1)
    tags = np.tile(mesh.solid, 3)
    unique, inverse = np.unique(edges, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n_solid = np.bincount(inverse, weights=tags.astype(float), minlength=len(unique))
    n_fluid = np.bincount(inverse, weights=(~tags).astype(float), minlength=len(unique))
    return unique[(n_solid > 0) & (n_fluid > 0)]


def phase_percolates(mesh, mask):
    """True if the selected triangles form one cluster touching all four cell faces."""
    tris = mesh.triangles[mask][:, :3]
    if tris.size == 0:
        return False
    n = mesh.nodes.shape[0]
    rows = np.concatenate([tris[:, 0], tris[:, 1], tris[:, 2]])
    cols = np.concatenate([tris[:, 1], tris[:, 2], tris[:, 0]])
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    used = np.unique(tris)
    x, y = mesh.nodes[used, 0], mesh.nodes[used, 1]
    for label in np.unique(labels[used]):
        member = labels[used] == label
        if (np.any(np.isclose(x[member], 0.0)) and np.any(np.isclose(x[member], 1.0))
                and np.any(np.isclose(y[member], 0.0)) and np.any(np.isclose(y[member], 1.0))):
            return True
    return False


def _compress(ids):
    """Unique master ids and the compressed index of every entry."""
    unique, inverse = np.unique(ids, return_inverse=True)
    return unique, inverse.reshape(ids.shape)


def _check_solution(matrix, x, rhs, what):
    if not np.all(np.isfinite(x)):
        raise CellSolveError(f"{what}: non-finite solution")
    res = np.linalg.norm(matrix @ x - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if res > SOLVE_RTOL * scale and res > 1e-14:
        raise CellSolveError(f"{what}: linear solve did not converge (residual {res:.3e}, rhs {scale:.3e})")


# --- Elastic cell problems ---
class ElasticCellSystem:
    """Factorised saddle system shared by the A and a problems of one (mesh, nu, E)."""

    def __init__(self, mesh, nu, E=config.CELL_REFERENCE_E):
        if mesh.section != SECTION_PORE:
            logger.debug("Elastic cell problem requested on the %s section", mesh.section)
        if not np.any(mesh.solid):
            raise CellSolveError("Solid subdomain is empty")
        if not phase_percolates(mesh, mesh.solid):
            raise CellSolveError(
                "Solid phase does not percolate; rigid blocks leave the elastic cell problem singular")
        self.mesh, self.nu, self.E = mesh, nu, E
        tris = mesh.triangles[mesh.solid]
        self.node_ids, local = _compress(mesh.master[tris])
        ndof = 2 * self.node_ids.size
        self.ndof = ndof
        edofs = fem.vector_dofs(local)

        grads, det = fem.p2_physical_gradients(mesh.nodes[tris[:, :3]])
        B = fem.strain_operator(grads)
        wdet = fem.QUAD_WEIGHTS[None, :] * det[:, None]
        C = plane_strain_stiffness(E, nu)

        Ke = np.einsum("eqai,ab,eqbj,eq->eij", B, C, B, wdet)
        K = fem.assemble_matrix(Ke, edofs, edofs, (ndof, ndof))

        BtCw = np.einsum("eqai,ab,eq->eib", B, C, wdet)          # (ne, 12, 3)
        self.load_A = -fem.assemble_vector(BtCw, edofs, ndof)     # (ndof, 3)
        self.load_a = -fem.assemble_vector(
            np.einsum("eqai,a,eq->ei", B, np.array([1.0, 1.0, 0.0]), wdet), edofs, ndof)

        avg_local = np.einsum("eqai,eq->eia", B, wdet)            # (ne, 12, 3)
        self.average = fem.assemble_vector(avg_local, edofs, ndof).T   # (3, ndof)

        nvals = fem.p2_values()
        lw = np.einsum("qa,eq->ea", nvals, wdet)
        mean_local = np.zeros((tris.shape[0], 12, 2))
        mean_local[:, 0::2, 0] = lw
        mean_local[:, 1::2, 1] = lw
        self.mean = fem.assemble_vector(mean_local, edofs, ndof)  # (ndof, 2)

        self.matrix = bmat([[K, csr_matrix(self.mean)],
                            [csr_matrix(self.mean.T), None]]).tocsc()
        try:
            self.lu = splu(self.matrix)
        except RuntimeError as e:
            raise CellSolveError(f"Singular elastic cell system for nu={nu}: {e}") from e

    def _solve(self, load, what):
        rhs = np.zeros((self.ndof + 2,) + load.shape[1:])
        rhs[:self.ndof] = load
        x = self.lu.solve(rhs)
        _check_solution(self.matrix, x, rhs, what)
        u = x[:self.ndof]
        mean_res = float(np.max(np.abs(self.mean.T @ u))) if u.size else 0.0
        if mean_res > ZERO_MEAN_TOL:
            raise CellSolveError(f"{what}: zero-mean constraint violated ({mean_res:.3e})")
        return u, mean_res

    def solve_A(self):
        u, mean_res = self._solve(self.load_A, "elastic A problem")
        full = self.average @ u
        return MAverage(M11=float(full[0, 0]), M12=float(full[1, 0]), M44=float(full[2, 2]),
                        full=full, mean_residual=mean_res)

    def solve_a(self):
        u, mean_res = self._solve(self.load_a, "elastic a problem")
        full = self.average @ u
        return QAverage(Q11=float(full[0]), full=full, mean_residual=mean_res)


def solve_elastic_A(mesh, nu, E=config.CELL_REFERENCE_E):
    return ElasticCellSystem(mesh, nu, E).solve_A()


def solve_elastic_a(mesh, nu, E=config.CELL_REFERENCE_E):
    return ElasticCellSystem(mesh, nu, E).solve_a()


# --- Stokes cell problem ---
def solve_stokes_W(mesh, mu=1.0):
    """Taylor-Hood solve of the periodic Stokes cell problem; returns whole-cell <W>_f."""
    fluid = ~mesh.solid
    if not phase_percolates(mesh, fluid):
        raise CellSolveError(f"Fluid domain disconnected for phi={mesh.geometry.phi}; conductivity would vanish")
    tris = mesh.triangles[fluid]
    vel_ids, vlocal = _compress(mesh.master[tris])
    pre_ids, plocal = _compress(mesh.master[tris[:, :3]])
    nv, npr = 2 * vel_ids.size, pre_ids.size
    edofs = fem.vector_dofs(vlocal)

    grads, det = fem.p2_physical_gradients(mesh.nodes[tris[:, :3]])
    wdet = fem.QUAD_WEIGHTS[None, :] * det[:, None]
    lap = mu * np.einsum("eqak,eqbk,eq->eab", grads, grads, wdet)
    Ae = np.zeros((tris.shape[0], 12, 12))
    Ae[:, 0::2, 0::2] = lap
    Ae[:, 1::2, 1::2] = lap
    A = fem.assemble_matrix(Ae, edofs, edofs, (nv, nv))

    psi = fem.p1_values()
    Be = np.zeros((tris.shape[0], 3, 12))
    Be[:, :, 0::2] = -np.einsum("qc,eqa,eq->eca", psi, grads[..., 0], wdet)
    Be[:, :, 1::2] = -np.einsum("qc,eqa,eq->eca", psi, grads[..., 1], wdet)
    Bm = fem.assemble_matrix(Be, plocal, edofs, (npr, nv))

    nvals = fem.p2_values()
    nw = np.einsum("qa,eq->ea", nvals, wdet)
    body_local = np.zeros((tris.shape[0], 12, 2))
    body_local[:, 0::2, 0] = nw
    body_local[:, 1::2, 1] = nw
    body = fem.assemble_vector(body_local, edofs, nv)            # (nv, 2)
    pmean = fem.assemble_vector(np.einsum("qc,eq->ec", psi, wdet), plocal, npr)

    wall = np.intersect1d(vel_ids, np.unique(mesh.master[mesh.triangles[mesh.solid]]))
    on_wall = np.isin(vel_ids, wall)
    free = np.flatnonzero(~np.repeat(on_wall, 2))
    Aff = A[free][:, free]
    Bf = Bm[:, free]
    matrix = bmat([[Aff, Bf.T, None],
                   [Bf, None, csr_matrix(pmean[:, None])],
                   [None, csr_matrix(pmean[None, :]), None]]).tocsc()
    rhs = np.zeros((free.size + npr + 1, 2))
    rhs[:free.size] = body[free]
    try:
        x = splu(matrix).solve(rhs)
    except RuntimeError as e:
        raise CellSolveError(f"Singular Stokes cell system for phi={mesh.geometry.phi}: {e}") from e
    _check_solution(matrix, x, rhs, "Stokes W problem")

    W = x[:free.size]
    P = x[free.size:free.size + npr]
    full = body[free].T @ W                                      # <W_i> for load k, |Omega| = 1
    divergence = float(np.linalg.norm(Bf @ W))
    pressure_mean = float(np.max(np.abs(pmean @ P)))
    if pressure_mean > ZERO_MEAN_TOL:
        raise CellSolveError(f"Stokes W problem: pressure mean not pinned ({pressure_mean:.3e})")
    K11 = float(full[0, 0])
    if not K11 > 0.0:
        raise CellSolveError(f"Non-positive hydraulic conductivity {K11} for phi={mesh.geometry.phi}")
    return KAverage(K11=K11, full=full, divergence=divergence, pressure_mean=pressure_mean)


# --- Orchestration ---
def solve_cell(phi, nu, resolution=config.CELL_RESOLUTION, E=config.CELL_REFERENCE_E):
    geom = CellGeometry(phi)
    pore = build_cell_mesh(geom, resolution, SECTION_PORE)
    channel = build_cell_mesh(geom, resolution, SECTION_CHANNEL)
    k = solve_stokes_W(channel)
    return _elastic_record(pore, nu, E, k)


def _elastic_record(pore_mesh, nu, E, k):
    system = ElasticCellSystem(pore_mesh, nu, E)
    m = system.solve_A()
    q = system.solve_a()
    if not q.Q11 < 0.0:
        raise CellSolveError(f"Non-negative <Tr Q>_s ({2.0 * q.Q11:.3e}) for phi={pore_mesh.geometry.phi}, nu={nu}")
    diagnostics = {
        "A_mean": m.mean_residual, "a_mean": q.mean_residual,
        "P_mean": k.pressure_mean, "divergence": k.divergence,
        "M_symmetry": float(abs(m.full[0, 0] - m.full[1, 1])),
        "Q_offdiag": float(abs(q.full[2])),
        "K_offdiag": float(abs(k.full[0, 1])),
    }
    return CellSolution(phi=pore_mesh.geometry.phi, nu=nu, M11=m.M11, M12=m.M12, M44=m.M44,
                        Q11=q.Q11, K11=k.K11, diagnostics=diagnostics)


def _solve_porosity(phi, nu_grid, resolution, E):
    records, failures = [], []
    try:
        geom = CellGeometry(phi)
        pore = build_cell_mesh(geom, resolution, SECTION_PORE)
        k = solve_stokes_W(build_cell_mesh(geom, resolution, SECTION_CHANNEL))
    except (GeometryError, CellSolveError) as e:
        return records, [(phi, nu, str(e)) for nu in nu_grid]
    for nu in nu_grid:
        try:
            records.append(_elastic_record(pore, float(nu), E, k))
        except (CellSolveError, ValueError) as e:
            failures.append((phi, float(nu), str(e)))
    return records, failures


def _check_grid(values, name, lo, hi):
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError(f"{name} grid must be a non-empty 1D sequence")
    if np.any(np.diff(values) <= 0.0):
        raise ValueError(f"{name} grid must be strictly increasing")
    if values[0] < lo - 1e-12 or values[-1] > hi + 1e-12:
        raise ValueError(f"{name} grid must lie in [{lo}, {hi}]")
    return values


def generate_dataset(phi_grid, nu_grid, resolution=config.CELL_RESOLUTION, workers=1,
                     E=config.CELL_REFERENCE_E, progress_callback=None):
    """Solves every (phi, nu) cell; returns (records sorted by (phi, nu), failures)."""
    phi_grid = _check_grid(phi_grid, "phi", PHI_MIN, PHI_MAX)
    nu_grid = _check_grid(nu_grid, "nu", config.NU_TRAIN_MIN, config.NU_TRAIN_MAX)
    total = phi_grid.size * nu_grid.size
    logger.info("Starting cell dataset generation: %d porosities x %d Poisson ratios (%d cells), resolution %.5g",
                phi_grid.size, nu_grid.size, total, resolution)

    records, failures = [], []
    done = 0

    def collect(result):
        nonlocal done
        recs, fails = result
        records.extend(recs)
        failures.extend(fails)
        for phi, nu, msg in fails:
            logger.error("Cell solve failed for phi=%.6g, nu=%.6g: %s", phi, nu, msg)
        done += len(recs) + len(fails)
        if progress_callback:
            progress_callback(current_row=done, total_rows=total)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_solve_porosity, float(phi), nu_grid, resolution, E) for phi in phi_grid]
            for fut in futures:
                collect(fut.result())
    else:
        for phi in phi_grid:
            collect(_solve_porosity(float(phi), nu_grid, resolution, E))

    records.sort(key=lambda r: (r.phi, r.nu))
    failures.sort()
    logger.info("Cell dataset generation finished: %d records, %d failures", len(records), len(failures))
    return records, failures


class DirectCellProvider:
    """Cell tensors from direct solves, cached per (nu, phi); stands in for the surrogate."""

    def __init__(self, resolution=config.CELL_RESOLUTION, E=config.CELL_REFERENCE_E, digits=12):
        self.resolution = resolution
        self.digits = digits
        self.E_ref = E
        self._cache = {}

    def cell_tensors(self, nu, phi):
        key = (round(float(nu), self.digits), round(float(phi), self.digits))
        if key not in self._cache:
            self._cache[key] = solve_cell(key[1], key[0], self.resolution, self.E_ref)
        return self._cache[key]
